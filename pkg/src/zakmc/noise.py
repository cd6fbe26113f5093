"""Deterministic Brownian increment streams and exact block coarsening.

Streams are keyed by ``(master_seed, sample_index, tag)`` through a
counter-based generator (Philox), so a sample's draws never depend on
thread scheduling or on which other samples were generated.  A path stores
the raw independent standard-normal pairs; correlation is applied by the
consumer, which keeps one canonical path per sample and makes coarsening
commute with correlation.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BrownianPath",
    "SeedSpec",
    "coarsen",
    "coarsen_increments",
    "read_path",
    "sample_increments",
    "sample_path",
    "write_path",
]

_HEADER = struct.Struct("<qd")  # step count, timestep


@dataclass(frozen=True)
class SeedSpec:
    """Identity of one random stream.

    Identical triples give bit-identical streams; distinct triples give
    statistically independent ones.
    """

    master_seed: int
    sample_index: int
    tag: str = "path"

    def seed_sequence(self) -> np.random.SeedSequence:
        tag_key = zlib.crc32(self.tag.encode("utf-8"))
        return np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(tag_key, self.sample_index)
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


@dataclass(frozen=True)
class BrownianPath:
    """Raw independent standard-normal pairs for one sample at timestep ``k``.

    ``steps`` has shape ``(N, 2)``; the Wiener increment over step ``n`` is
    ``sqrt(k) * steps[n]`` componentwise, before correlation.
    """

    k: float
    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float64)
        if steps.ndim != 2 or steps.shape[1] != 2:
            raise ValueError("steps must have shape (N, 2)")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)
        if self.k <= 0.0:
            raise ValueError("timestep k must be positive")

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0]


def sample_path(seed: SeedSpec, n_steps: int, k: float) -> BrownianPath:
    """Draw one path of ``n_steps`` i.i.d. standard-normal pairs."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    z = seed.generator().standard_normal((n_steps, 2))
    return BrownianPath(k=k, steps=z)


def sample_increments(master_seed: int, tag: str, start: int, count: int,
                      n_steps: int) -> np.ndarray:
    """Raw pairs for samples ``start .. start+count-1`` as ``(count, N, 2)``.

    Each sample comes from its own stream, so the result is independent of
    batching and of which samples were drawn before.
    """
    out = np.empty((count, n_steps, 2))
    for i in range(count):
        spec = SeedSpec(master_seed, start + i, tag)
        out[i] = spec.generator().standard_normal((n_steps, 2))
    return out


def coarsen_increments(z: np.ndarray, factor: int = 4) -> np.ndarray:
    """Block-sum coarsening of raw pairs; works on ``(..., N, 2)`` arrays.

    The coarse draw is the block sum divided by ``sqrt(factor)`` so that
    ``sqrt(factor * k) * z'`` equals the sum of the fine Wiener increments
    exactly.
    """
    n = z.shape[-2]
    if factor < 1 or n % factor:
        raise ValueError(
            f"incompatible refinement: {n} steps not divisible by {factor}"
        )
    shape = z.shape[:-2] + (n // factor, factor, 2)
    return z.reshape(shape).sum(axis=-2) / np.sqrt(factor)


def coarsen(path: BrownianPath, factor: int = 4) -> BrownianPath:
    """Coarsen a path to timestep ``factor * k`` preserving Wiener sums."""
    return BrownianPath(k=factor * path.k,
                        steps=coarsen_increments(path.steps, factor))


def write_path(path: BrownianPath, filename) -> None:
    """Binary dump: little-endian header (N, k) then float64 pairs."""
    with open(filename, "wb") as fh:
        fh.write(_HEADER.pack(path.n_steps, path.k))
        fh.write(np.ascontiguousarray(path.steps, dtype="<f8").tobytes())


def read_path(filename) -> BrownianPath:
    """Read a path written by :func:`write_path`."""
    with open(filename, "rb") as fh:
        n, k = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(8 * 2 * n), dtype="<f8").reshape(n, 2)
    return BrownianPath(k=k, steps=data.astype(np.float64))
