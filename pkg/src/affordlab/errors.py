"""Exception hierarchy shared across the package."""


class AffordLabError(Exception):
    """Base class for all package errors."""


class DataError(AffordLabError):
    """Malformed input data (manifests, predictions, config files)."""


class EmptyLabel(DataError):
    pass


class InvalidBox(DataError):
    pass


class TemplateError(AffordLabError):
    """A prompt template is malformed or leaves placeholders unresolved."""


class PromptTooLong(TemplateError):
    pass


class NoObjectsFound(AffordLabError):
    """An LLM reply contained no recognisable object names."""


class EmptySelection(AffordLabError):
    """No catalog dimension was selected by a property-relevance reply."""


class BackendUnavailable(AffordLabError):
    """Network, auth or protocol failure talking to a model backend."""


class ScriptGap(AffordLabError):
    """The scripted backend has no entry for the query it received."""


class UnknownImage(AffordLabError):
    pass


class NoGroundTruth(AffordLabError):
    pass


class AllUndefined(AffordLabError):
    pass


class InsufficientDistractors(AffordLabError):
    def __init__(self, message: str, achievable_max_n: int):
        super().__init__(message)
        self.achievable_max_n = achievable_max_n
