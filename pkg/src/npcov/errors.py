"""Exception hierarchy shared by the library and the CLI.

Each leaf class maps onto one CLI exit code (see :mod:`npcov.cli`).
"""


class NpcError(Exception):
    """Base class for all errors raised by npcov."""


class ConfigError(NpcError):
    """Invalid hyperparameters or inconsistent options."""


class FormatError(NpcError):
    """A file does not follow the expected on-disk layout."""


class VersionMismatchError(FormatError):
    pass


class ShapeError(FormatError):
    """Declared shapes disagree with each other or with the data."""


class TruncatedBlobError(FormatError):
    pass


class InvariantError(NpcError):
    """A loaded or computed object violates one of its invariants."""


class MaskError(ConfigError):
    pass
