"""Branching-random-walk embedding of tree vertices into Z^d.

Each edge (parent -> v) carries an independent zero-mean lattice step, and
the position of ``v`` is the sum of the steps along its root path. The step
on the edge above ``v`` is drawn from the EMBED stream at counters
``v*d .. v*d + d - 1``, so it is a pure function of ``(key, v)``: embedding
when a vertex is created and embedding it later give the same point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng

FAMILIES = {"srw": 0, "cube_uniform": 1}


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class StepLaw:
    """Bounded-support, zero-mean step law.

    ``srw``: ``±e_i`` each with probability ``1/(2d)``.
    ``cube_uniform``: uniform on ``{-1, 0, 1}^d``.
    """

    family: str = "srw"
    d: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise EmbeddingError(
                f"unknown step-law family {self.family!r}; known: {', '.join(sorted(FAMILIES))}")
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise EmbeddingError(f"dimension must be a positive integer, got {self.d!r}")

    @property
    def family_code(self) -> int:
        return FAMILIES[self.family]

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.d)

    @property
    def covariance(self) -> np.ndarray:
        if self.family == "srw":
            return np.eye(self.d) / self.d
        return np.eye(self.d) * (2.0 / 3.0)

    @property
    def support_radius(self) -> int:
        return 1

    @classmethod
    def from_dict(cls, spec: dict) -> "StepLaw":
        params = spec.get("params") or {}
        if params:
            raise EmbeddingError(f"step-law families take no parameters, got {sorted(params)}")
        return cls(spec.get("family", "srw"), int(spec.get("d", 1)))

    def to_dict(self) -> dict:
        return {"family": self.family, "d": self.d, "params": {}}


def sample_step(law: StepLaw, key: int, v: int) -> np.ndarray:
    """The step on the edge above vertex ``v`` for embedding key ``key``."""
    d = law.d
    step = np.zeros(d, dtype=np.int64)
    if law.family == "srw":
        r = rng.below(key, v * d, 2 * d)
        step[r >> 1] = 1 if r % 2 == 0 else -1
    else:
        for i in range(d):
            step[i] = rng.below(key, v * d + i, 3) - 1
    return step


def sample_steps(law: StepLaw, key: int, vertices) -> np.ndarray:
    """Vectorised ``sample_step`` over many vertex ids; shape ``(len(vertices), d)``."""
    v = np.asarray(vertices, dtype=np.int64)
    d = law.d
    if law.family == "srw":
        r = rng.belows(key, v * d, 2 * d)
        out = np.zeros((v.size, d), dtype=np.int64)
        out[np.arange(v.size), r >> 1] = np.where(r % 2 == 0, 1, -1)
        return out
    ctr = v[:, None] * d + np.arange(d)[None, :]
    return rng.belows(key, ctr.ravel(), 3).reshape(v.size, d) - 1


def embed_on_demand(tree, v: int) -> tuple[int, ...]:
    """Position of ``v``; its parent must already be materialised (vertices are embedded on creation)."""
    if not 0 <= v < tree.n_vertices:
        raise EmbeddingError(f"vertex {v} is not materialised; expand its parent first")
    return tree.position(v)


def embed_path(law: StepLaw, key: int, length: int) -> np.ndarray:
    """Positions along a chain of ``length`` edges with vertex ids ``1..length``; row 0 is the root."""
    steps = sample_steps(law, key, np.arange(1, length + 1))
    return np.vstack([np.zeros((1, law.d), dtype=np.int64), np.cumsum(steps, axis=0)])
