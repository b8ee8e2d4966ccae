"""Exception types shared across the package, with their CLI exit codes."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3
EXIT_NUMERICAL = 4


class HodError(Exception):
    """Base class for errors raised by this package."""

    exit_code = EXIT_DATA


class DataError(HodError):
    """Malformed or inconsistent input data (bad boxes, missing fields, empty corpora)."""

    exit_code = EXIT_DATA


class ShapeError(HodError):
    """Tensor or array shape inconsistent with the operation's contract."""

    exit_code = EXIT_DATA


class ConfigError(HodError):
    """Invalid configuration value or unknown configuration key."""

    exit_code = EXIT_USAGE


class TransportError(HodError):
    """Network-level failure talking to an external endpoint (after retries)."""

    exit_code = EXIT_TRANSPORT


class EndpointError(HodError):
    """External endpoint reachable but returned an error or an empty completion."""

    exit_code = EXIT_TRANSPORT


class CheckpointError(HodError):
    """Checkpoint container is corrupt or has an unsupported format version."""

    exit_code = EXIT_DATA


class NumericalError(HodError):
    """Numerical instability or a failed numerical verification."""

    exit_code = EXIT_NUMERICAL
