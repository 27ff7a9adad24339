"""Exception types shared across the package.

Every contract failure raises something rooted at TinyvogueError so callers
can distinguish bugs-in-usage from numeric blowups and file corruption.
"""


class TinyvogueError(Exception):
    pass


class ContractError(TinyvogueError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Operand shapes do not conform to a primitive's rule."""

    def __init__(self, kind: str, *shapes):
        self.kind = kind
        self.shapes = shapes
        super().__init__(f"{kind}: incompatible operand shapes {list(shapes)}")


class NumericError(TinyvogueError):
    """A computation produced NaN/Inf or left its numeric domain."""


class TapeReuseError(TinyvogueError):
    """backward() was asked to replay an already-consumed tape."""


class OracleError(TinyvogueError):
    """A gradient-check probe function was not deterministic."""


class ConfigError(TinyvogueError):
    """Run configuration rejected during validation."""


class CheckpointError(TinyvogueError):
    """Checkpoint file failed magic/version/checksum/dtype validation."""
