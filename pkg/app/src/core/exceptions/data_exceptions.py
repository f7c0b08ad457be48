from app.src.core.exceptions.base_exceptions import EXIT_USAGE, BaseSevTrainException


class BaseDataException(BaseSevTrainException):
    pass


class DatasetFormatError(BaseDataException):
    def __init__(
        self,
        message: str | None = None,
        source: str | None = None,
        offset: int | None = None,
        original_error: Exception | None = None,
    ):
        if message is None and source and offset is not None:
            message = f"Malformed dataset {source} at byte {offset}"
        elif message is None and source:
            message = f"Malformed dataset: {source}"
        elif message is None:
            message = "Dataset stream is malformed"

        super().__init__(
            message,
            detail="Check that the file is an uncompressed CIFAR-format binary",
            original_error=original_error,
        )
        self.source = source
        self.offset = offset


class DatasetSpecError(BaseDataException):
    def __init__(
        self,
        message: str | None = None,
        field: str | None = None,
        value: object = None,
    ):
        if message is None and field:
            message = f"Invalid dataset parameter {field}={value!r}"
        elif message is None:
            message = "Dataset specification is degenerate"

        super().__init__(message, exit_code=EXIT_USAGE)
        self.field = field
        self.value = value


class CorruptionSpecError(BaseDataException):
    def __init__(
        self,
        message: str | None = None,
        kind: str | None = None,
        severity: int | None = None,
    ):
        if message is None and kind is not None and severity is not None:
            message = f"Invalid corruption {kind!r} at severity {severity}"
        elif message is None and kind is not None:
            message = f"Unknown corruption kind: {kind!r}"
        elif message is None:
            message = "Corruption specification is invalid"

        super().__init__(
            message,
            exit_code=EXIT_USAGE,
            detail="Severity must be an integer in 1..5 and kind a native kernel",
        )
        self.kind = kind
        self.severity = severity


class PrecomputedSetError(BaseDataException):
    def __init__(
        self,
        message: str | None = None,
        manifest: str | None = None,
        original_error: Exception | None = None,
    ):
        if message is None and manifest:
            message = f"Unreadable corrupted set: {manifest}"
        elif message is None:
            message = "Corrupted set does not match its manifest"

        super().__init__(
            message,
            detail="Manifest must declare kind, severity, count, dtype and label_file",
            original_error=original_error,
        )
        self.manifest = manifest
