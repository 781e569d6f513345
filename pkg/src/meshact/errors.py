"""Exception types shared across the package."""


class MeshError(ValueError):
    """Invalid mesh: non-manifold connectivity, bad indices, degenerate input."""


class FormatError(ValueError):
    """Malformed or incompatible file: bad magic, version, truncation, checksum."""


class ConfigError(ValueError):
    """Invalid configuration key, value, or missing prerequisite artifact."""


class NonFiniteError(ArithmeticError):
    """A forward operation or a training loss produced NaN/Inf."""
