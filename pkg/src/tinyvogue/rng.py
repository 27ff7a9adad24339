"""Splittable deterministic random streams.

A stream is keyed by (root seed, path of string labels).  Each label is
hashed with sha256 into a 64-bit word and the whole path feeds a numpy
SeedSequence, so sibling streams are statistically independent and deriving
or consuming a child never moves the parent.  The mixer identity is recorded
in run manifests as MIXER_NAME.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ContractError

MIXER_NAME = "sha256-seedseq-pcg64"

_MASK64 = (1 << 64) - 1


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


class RngStream:
    """One independent draw stream at a (seed, label-path) key."""

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        entropy = [self.seed] + [_label_key(p) for p in self.path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
        self.draws = 0

    def derive(self, label: str) -> "RngStream":
        """Child stream at path + (label,); does not consume from self."""
        if not isinstance(label, str) or not label:
            raise ContractError("derive: label must be a nonempty string")
        return RngStream(self.seed, self.path + (label,))

    # ------------------------------------------------------------- draws

    def uniform(self, size=None):
        """Uniform on [0, 1)."""
        self.draws += 1
        return self._gen.random(size)

    def normal(self, size=None):
        self.draws += 1
        return self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers on [low, high)."""
        if high <= low:
            raise ContractError(f"integers: empty range [{low}, {high})")
        self.draws += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    def bernoulli(self, p: float) -> int:
        if not (0.0 <= p <= 1.0) or not np.isfinite(p):
            raise ContractError(f"bernoulli: p={p} outside [0, 1]")
        self.draws += 1
        return int(self._gen.random() < p)

    def categorical(self, weights) -> int:
        """Inverse-CDF draw over normalized weights, ties toward the lower index."""
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ContractError("categorical: weights must be a nonempty 1-D array")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ContractError("categorical: weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ContractError("categorical: weights sum to zero")
        cum = np.cumsum(w / total)
        self.draws += 1
        u = self._gen.random()
        idx = int(np.searchsorted(cum, u, side="left"))
        idx = min(idx, w.size - 1)  # cum[-1] can round below 1.0
        while w[idx] == 0.0:  # measure-zero boundary hit, never select zero mass
            idx += 1
        return idx

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path) or '<root>'}, draws={self.draws})"


_DRAW_KINDS = {
    "uniform01": lambda s, kw: s.uniform(**kw),
    "standard_normal": lambda s, kw: s.normal(**kw),
    "bernoulli": lambda s, kw: s.bernoulli(**kw),
    "categorical": lambda s, kw: s.categorical(**kw),
    "integers": lambda s, kw: s.integers(**kw),
}


def draw(stream: RngStream, kind: str, **params):
    """Dispatch a draw by kind name; unknown kinds are contract errors."""
    if kind not in _DRAW_KINDS:
        raise ContractError(f"unknown draw kind {kind!r}")
    return _DRAW_KINDS[kind](stream, params)
