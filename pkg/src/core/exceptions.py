"""
Exception types shared by the trajfactors modules.
"""


class TrajFactorsError(Exception):
    """Base class for all trajfactors errors"""


class DataError(TrajFactorsError, ValueError):
    """Raised for malformed input data, corrupt artifacts or violated data contracts"""


class ConfigError(TrajFactorsError, ValueError):
    """Raised for invalid settings, flags or sweep values"""
