"""Exception types shared across the package.

The command line maps these onto process exit codes, so library code
should raise the most specific type that applies.
"""


class ValidationError(ValueError):
    """Invalid value, configuration, or geometry (CLI exit code 2)."""


class PluginError(RuntimeError):
    """External detector process failed to run or exited non-zero (CLI exit code 3)."""


class ProtocolError(PluginError):
    """External detector produced a malformed or incomplete response (CLI exit code 3)."""


class RasterIOError(OSError):
    """Raster file could not be read, decoded, or written (CLI exit code 4)."""
