"""Counter-keyed random streams and the common-noise path.

Every random draw in the package is addressed by a key tuple
``(master_seed, stream tag, replication, step)``.  A fresh Philox generator is
built from that key, so a draw never depends on how many other draws happened
before it or on which worker produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    COMMON = 0
    IDIOSYNCRATIC = 1
    CLOCK = 2
    INITIAL = 3
    BRIDGE = 4
    PAIR = 5
    PROBE = 6


def generator(seed: int, stream: Stream, *words: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, stream, *words)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, words)))
    return np.random.Generator(np.random.Philox(ss))


def normals(seed: int, stream: Stream, *words: int, size: int) -> np.ndarray:
    return generator(seed, stream, *words).standard_normal(size)


def uniforms(seed: int, stream: Stream, *words: int, size: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    u = generator(seed, stream, *words).random(size)
    # random() is on [0, 1); reflect the (measure zero) endpoint away
    u[u == 0.0] = 0.5 * 2.0**-53
    return u


@dataclass(frozen=True)
class NoisePath:
    """Discretised common Brownian motion W0 on a uniform grid."""

    dt: float
    increments: np.ndarray
    master_seed: int
    replication: int = 0
    refinement: int = 0

    @classmethod
    def generate(cls, seed: int, T: float, dt: float, replication: int = 0) -> NoisePath:
        K = steps_for(T, dt)
        dw = np.sqrt(dt) * normals(seed, Stream.COMMON, replication, size=K)
        dw.setflags(write=False)
        return cls(dt=dt, increments=dw, master_seed=seed, replication=replication)

    @property
    def n_steps(self) -> int:
        return len(self.increments)

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def t_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def path(self) -> np.ndarray:
        """W0 at the grid times, starting from W0(0) = 0."""
        return np.concatenate(([0.0], np.cumsum(self.increments)))

    def refine(self) -> NoisePath:
        """Brownian-bridge midpoint refinement to step dt/2.

        Pairs of refined increments sum to the original increments, so runs at
        dt and dt/2 see the same Brownian path at the coarse times.
        """
        level = self.refinement + 1
        z = normals(self.master_seed, Stream.BRIDGE, self.replication, level, size=self.n_steps)
        half = 0.5 * self.increments
        wiggle = 0.5 * np.sqrt(self.dt) * z
        fine = np.empty(2 * self.n_steps)
        fine[0::2] = half + wiggle
        fine[1::2] = half - wiggle
        fine.setflags(write=False)
        return NoisePath(
            dt=0.5 * self.dt,
            increments=fine,
            master_seed=self.master_seed,
            replication=self.replication,
            refinement=level,
        )

    def split(self, m: int) -> NoisePath:
        """Brownian-bridge refinement to step dt/m for any integer m >= 2.

        Given an increment S over dt, the m sub-increments are
        S/m + sqrt(dt/m) (Z_i - mean Z), which is their exact conditional law.
        """
        if m < 2:
            raise ValueError(f"split factor must be >= 2, got {m}")
        level = self.refinement + 1
        z = normals(self.master_seed, Stream.BRIDGE, self.replication, level, m, size=self.n_steps * m)
        z = z.reshape(self.n_steps, m)
        fine = self.increments[:, None] / m + np.sqrt(self.dt / m) * (z - z.mean(axis=1, keepdims=True))
        fine = fine.ravel()
        fine.setflags(write=False)
        return NoisePath(
            dt=self.dt / m, increments=fine, master_seed=self.master_seed, replication=self.replication, refinement=level
        )

    def refined(self, factor: int) -> NoisePath:
        """Refine by an integer factor: repeated midpoint splits for powers of
        two (so dt/2 and dt/4 runs are nested), a single bridge split otherwise."""
        if factor < 1:
            raise ValueError(f"refinement factor must be >= 1, got {factor}")
        if factor & (factor - 1):
            return self.split(factor)
        out = self
        while factor > 1:
            out = out.refine()
            factor //= 2
        return out

    def coarse_increment(self, k: int, factor: int) -> float:
        return float(np.sum(self.increments[k * factor : (k + 1) * factor]))


def steps_for(T: float, dt: float) -> int:
    if dt <= 0 or T <= 0:
        raise ValueError(f"T and dt must be positive, got T={T}, dt={dt}")
    K = round(T / dt)
    if abs(K * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T/dt must be integral within 1e-9, got T={T}, dt={dt}")
    return K
