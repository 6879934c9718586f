"""Exception taxonomy shared across the package."""


class StainlabError(Exception):
    """Base class for all stainlab errors."""


class ConfigError(StainlabError):
    """Invalid configuration value or CLI argument."""


class DataError(StainlabError):
    """Input data violates a precondition.

    Covers unregistered slide pairs, slides smaller than the patch/tile
    size, missing or unreadable files, and missing checkpoints.
    """


class ContractError(StainlabError):
    """Shape, channel, or range contract violated between pipeline stages."""


class TrainingError(StainlabError):
    """Training aborted: non-finite loss, empty split, or split leakage."""
