"""Error taxonomy shared above the tensor core."""


class InputError(ValueError):
    """Caller handed data that violates an operation's precondition."""


class VocabError(ValueError):
    """Token or word falls outside the vocabulary in use."""


class ParseError(ValueError):
    """A corpus or config file is malformed; message carries the line number."""


class ConfigError(ValueError):
    """Configuration is inconsistent or contains unknown keys."""


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; message carries epoch and term diagnostics."""


class StateError(RuntimeError):
    """Object is not in a state that allows the requested action."""
