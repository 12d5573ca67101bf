"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class HmAdaptError(Exception):
    exit_code = 1


class ConfigError(HmAdaptError):
    """Invalid configuration. ``problems`` lists ``(field_path, message)`` pairs."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("", problems)]
        self.problems = list(problems)
        lines = [f"{path}: {msg}" if path else msg for path, msg in self.problems]
        super().__init__("; ".join(lines))


class DataError(HmAdaptError):
    exit_code = 3


class ImageIOError(HmAdaptError):
    exit_code = 4


class MetricError(DataError):
    pass
