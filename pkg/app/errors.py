"""
Memforge exceptions.

Every error raised on purpose by the pipeline derives from MemforgeError so that the CLI and the
HTTP layer can turn it into a stable error code and exit status without knowing the details.

Exit codes:  2 config,  3 data,  4 network,  5 internal invariant.
"""


class MemforgeError(Exception):
    """
    Parent class that keeps all memforge errors consistent
    """
    code = "memforge_error"
    exit_code = 5

    def __init__(self, message):
        self.message = f'{message}'
        super().__init__(self.message)

    def as_dict(self):
        return {"error": self.code, "message": self.message, "exit_code": self.exit_code}


###
### Config
###

class ConfigError(MemforgeError):
    code = "config_error"
    exit_code = 2


###
### Data
###

class DataError(MemforgeError):
    code = "data_error"
    exit_code = 3


class EmptyLTMError(DataError):
    """
    Raised when a memory bank is requested from a graph without edges
    """
    code = "empty_ltm"

    def __init__(self, message="empty LTM"):
        super().__init__(message)


class EntityRejectedError(DataError):
    """
    Raised when an entity surface form normalizes to the empty string
    """
    code = "entity_rejected"

    def __init__(self, surface):
        self.surface = surface
        super().__init__(f'Entity surface form {surface!r} is empty after normalization.')


class UnknownEntityError(DataError):
    code = "unknown_entity"

    def __init__(self, entity_id):
        self.entity_id = entity_id
        super().__init__(f'No entity {entity_id!r} in the graph.')


class EmptyEvidenceError(DataError):
    code = "empty_evidence"


class DimensionMismatchError(DataError):
    code = "dimension_mismatch"

    def __init__(self, expected, actual, what="vector"):
        self.expected = expected
        self.actual = actual
        super().__init__(f'{what} dimension {actual} mismatches expected dimension {expected}.')


class SnapshotNotFoundError(DataError):
    code = "file_not_found"

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f'No file found at {self.path}.')


class SnapshotCorruptError(DataError):
    code = "snapshot_corrupt"

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f'Snapshot {self.path} is corrupt: {reason}')


class SnapshotVersionError(DataError):
    code = "snapshot_version_mismatch"

    def __init__(self, path, found, supported):
        self.path = str(path)
        self.found = found
        self.supported = supported
        super().__init__(f'Snapshot {self.path} has format version {found}; this build reads version {supported}.')


class MemoryFullyMaskedError(DataError):
    code = "memory_fully_masked"

    def __init__(self, message="memory fully masked"):
        super().__init__(message)


class NoActivationError(DataError):
    code = "no_activation"

    def __init__(self, message="no activation"):
        super().__init__(message)


class ExtractorResponseError(DataError):
    """
    Raised when a remote extractor answers with a body that does not follow the response schema
    """
    code = "extractor_response"


###
### Network
###

class NetworkError(MemforgeError):
    code = "network_error"
    exit_code = 4


###
### Internal
###

class InvariantViolation(MemforgeError):
    code = "invariant_violation"
    exit_code = 5
