"""Exception types shared across the engine."""


class OsaDasError(Exception):
    """Base class for engine errors."""


class ConfigError(OsaDasError, ValueError):
    pass


class DegenerateFeatureError(OsaDasError, ValueError):
    pass


class DegenerateSaliencyError(OsaDasError, ValueError):
    pass


class CapabilityError(OsaDasError):
    """Backend does not offer the requested capability."""


class ModelLoadError(OsaDasError):
    pass


class InferenceError(OsaDasError):
    pass
