class AsmfsError(Exception):
    """Root of every error raised by the package; `provenance` names the module that raised it."""

    exit_code = 1

    def __init__(self, message, provenance="asmfs"):
        self.message = message
        self.provenance = provenance
        super().__init__(self.message)


class DatasetValidationError(AsmfsError):
    exit_code = 2

    def __init__(self, message, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        super().__init__(message, provenance="data_model")


class ConfigValidationError(AsmfsError):
    exit_code = 2

    def __init__(self, message):
        super().__init__(message, provenance="cli")


class NeighborCountError(AsmfsError):
    def __init__(self, subject, candidates, neighbor_count):
        self.subject = subject
        self.candidates = candidates
        self.neighbor_count = neighbor_count
        message = (
            f"subject {subject} has {candidates} within-class candidates, "
            f"K={neighbor_count} needs at least {neighbor_count + 1}"
        )
        super().__init__(message, provenance="similarity")


class KernelError(AsmfsError):
    def __init__(self, message):
        super().__init__(message, provenance="classify")


class OracleError(AsmfsError):
    def __init__(self, message):
        super().__init__(message, provenance="synthetic")
