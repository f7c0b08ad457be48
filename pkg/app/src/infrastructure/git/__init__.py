from .code_version import CodeVersion

__all__ = ["CodeVersion"]
