"""
Error hierarchy shared by every layer; each class maps to a CLI exit code
"""


class EocLabError(Exception):
    exit_code = 1

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        return {
            'error': type(self).__name__,
            'message': self.message,
            'details': {k: _plain(v) for k, v in self.details.items()},
        }


class ConfigurationError(EocLabError):
    """Unknown activation names, malformed grid specs, bad environment values"""
    exit_code = 2


class DomainError(EocLabError, ValueError):
    """An operation was called outside its mathematical domain"""
    exit_code = 2


class NumericError(EocLabError):
    """Non-finite values met during integration or simulation"""
    exit_code = 3


def _plain(value):
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)
