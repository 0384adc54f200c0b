class DimensionError(ValueError):
    """Operand shapes do not conform."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class ContractError(RuntimeError):
    """A call violated an operation's preconditions (e.g. train mode without full features)."""


class FormatError(ValueError):
    """On-disk file does not match the expected layout."""


class CorruptDatasetError(FormatError):
    pass


class ArchiveError(ValueError):
    """Model archive is missing a tensor or has a wrong shape."""


class TrainingDivergedError(FloatingPointError):
    pass
