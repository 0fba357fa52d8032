"""Exception types shared across the package, with CLI exit codes."""


class CamsError(Exception):
    """Base class; `exit_code` drives the CLI's process status."""

    exit_code = 1


class ConfigError(CamsError):
    """Malformed or inconsistent configuration document."""

    exit_code = 3


class NumericalDomainError(CamsError):
    """A numeric quantity left its valid domain (NaN/inf, bad shape)."""

    exit_code = 6


class IncompatibleBundleError(CamsError):
    """Model bundle does not match the requested game/kind/usage."""

    exit_code = 4


class SolverFailureError(CamsError):
    """All restarts of a stage solve aborted, or a run-level failure budget
    was exceeded."""

    exit_code = 5
