"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class FormatError(ValueError):
    """A serialized file is malformed. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    """A dataset manifest entry is invalid. Names the offending entry."""
