"""Exception types shared across the package."""


class TGMZError(Exception):
    pass


class DimensionError(TGMZError, ValueError):
    pass


class ContractError(TGMZError, ValueError):
    pass


class FormatError(TGMZError, ValueError):
    pass


class ConfigError(TGMZError, ValueError):
    pass


class SamplingError(TGMZError, ValueError):
    pass


class CompatibilityError(TGMZError):
    pass


class TrainingDivergedError(TGMZError, FloatingPointError):
    pass
