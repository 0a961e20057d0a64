"""Exception hierarchy shared across the package.

Two failure families matter to callers: problems with user input
(configuration, file formats, inconsistent domain descriptions) and
numerical failures during solves. The command-line front end maps the
former to exit code 2 and the latter to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, domain description, or input file."""


class MeshFormatError(ConfigError):
    """Malformed mesh or trace file; message carries a line number."""


class NumericalError(RuntimeError):
    """A solver failed (singular system, non-finite values, ...)."""


class SingularMatrixError(NumericalError):
    """Direct factorization hit a structural or numerical zero pivot."""
