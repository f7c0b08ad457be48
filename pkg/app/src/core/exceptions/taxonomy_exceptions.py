from app.src.core.exceptions.base_exceptions import EXIT_USAGE, BaseSevTrainException


class BaseTaxonomyException(BaseSevTrainException):
    pass


class TaxonomyFormatError(BaseTaxonomyException):
    def __init__(
        self,
        message: str | None = None,
        node_name: str | None = None,
        section: str | None = None,
        original_error: Exception | None = None,
    ):
        if message is None and section and node_name:
            message = f"Malformed entry in '{section}' near node '{node_name}'"
        elif message is None and section:
            message = f"Malformed or missing section '{section}' in hierarchy file"
        elif message is None:
            message = "Hierarchy file is malformed"

        super().__init__(
            message,
            exit_code=EXIT_USAGE,
            detail="Expected JSON with 'nodes', 'edges' and 'classes' sections",
            original_error=original_error,
        )
        self.node_name = node_name
        self.section = section


class TaxonomyStructureError(BaseTaxonomyException):
    def __init__(
        self,
        message: str | None = None,
        problem: str | None = None,
        node_name: str | None = None,
    ):
        if message is None and problem and node_name:
            message = f"Invalid taxonomy: {problem} at node '{node_name}'"
        elif message is None and problem:
            message = f"Invalid taxonomy: {problem}"
        elif message is None:
            message = "Taxonomy does not form a single rooted tree"

        super().__init__(
            message,
            exit_code=EXIT_USAGE,
            detail="The parent relation must form one rooted tree with unique names",
        )
        self.problem = problem
        self.node_name = node_name


class UnknownClassError(BaseTaxonomyException):
    def __init__(
        self,
        message: str | None = None,
        name: str | int | None = None,
    ):
        if message is None and name is not None:
            message = f"Unknown node or class: {name!r}"
        elif message is None:
            message = "Unknown node or class"

        super().__init__(message, exit_code=EXIT_USAGE)
        self.name = name


class TargetSetError(BaseTaxonomyException):
    def __init__(
        self,
        message: str | None = None,
        k: int | None = None,
        num_classes: int | None = None,
    ):
        if message is None and k is not None and num_classes is not None:
            message = f"Target set size k={k} must be smaller than {num_classes} classes"
        elif message is None:
            message = "Semantic target set is empty or invalid"

        super().__init__(message, exit_code=EXIT_USAGE)
        self.k = k
        self.num_classes = num_classes
