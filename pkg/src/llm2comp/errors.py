"""Error kinds surfaced by the command line as distinct exit codes."""


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass
