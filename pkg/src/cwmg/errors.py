"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A precondition on an argument's value was violated."""


class ParameterError(ValueError):
    """A tuning parameter or configuration value is out of range."""


class TokenIndexError(IndexError):
    """A token id or class index is outside its table."""


class VocabLookupError(KeyError):
    """Unknown label or id for a token type."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class MidiParseError(ValueError):
    """Malformed Standard MIDI File data."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedMeterError(ValueError):
    """The file declares a time signature other than 4/4."""


class StructuralError(ValueError):
    """A token sequence violates the event grammar."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"word {index}: {message}"
        super().__init__(message)
        self.index = index


class CorpusFormatError(ValueError):
    """A corpus line could not be decoded."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorruptCheckpointError(ValueError):
    """Checkpoint header or payload does not match expectations."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class LengthError(ValueError):
    """Sequence is longer than the model's maximum length."""
