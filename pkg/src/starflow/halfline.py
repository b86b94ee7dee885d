"""One-dimensional building blocks.

Brownian grids, Lévy reflection with running local time, the reflected and
killed half-line heat kernels, and the Brownian-bridge zero-crossing
probability used to refine hitting detection between grid points.

Random numbers come from counter-based Philox streams: a stream is a
(master seed, index path) pair, distinct paths are statistically
independent, and the same pair always reproduces the same bytes. Parallel
work splits into chunks with one child stream per chunk, so results do not
depend on the number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream", "BrownianGrid", "ReflectedGrid",
    "sample_bm", "levy_reflect", "heat_kernels", "bridge_crossing_prob",
    "bridge_min", "reflected_increment",
]


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: master seed plus a spawn-index path."""

    seed: int
    index: tuple[int, ...] = ()

    def __post_init__(self):
        if isinstance(self.index, int):
            object.__setattr__(self, "index", (self.index,))
        else:
            object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.index)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.index + (int(k),))


@dataclass
class BrownianGrid:
    """Brownian path on a uniform grid; values[0] = 0, increments N(0, dt)."""

    dt: float
    values: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.values))

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


@dataclass
class ReflectedGrid:
    """Reflected path R >= 0 with its running local time L (nondecreasing)."""

    dt: float
    R: np.ndarray
    L: np.ndarray


def sample_bm(steps: int, dt: float, rng: RngStream | np.random.Generator) -> BrownianGrid:
    """Brownian grid with the given number of steps.

    Parameters
    ----------
    steps : number of increments (grid has steps+1 points).
    dt : time step, > 0.
    rng : stream or generator supplying the Gaussian increments.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    incr = gen.standard_normal(steps) * math.sqrt(dt)
    values = np.empty(steps + 1)
    values[0] = 0.0
    np.cumsum(incr, out=values[1:])
    return BrownianGrid(dt=float(dt), values=values)


def levy_reflect(b: BrownianGrid) -> ReflectedGrid:
    """Reflection by the running-minimum identity: R = B - min B, L = -min B.

    Exact at grid points; L increases exactly at indices where the driver
    attains a new running minimum (there R = 0).
    """
    m = np.minimum.accumulate(b.values)
    return ReflectedGrid(dt=b.dt, R=b.values - m, L=-m)


def heat_kernels(t: float, r, rho):
    """Half-line heat kernels at time t from r, evaluated at rho.

    Returns (q_plus, q_zero): the reflecting kernel phi_t(rho-r)+phi_t(rho+r)
    and the absorbing kernel phi_t(rho-r)-phi_t(rho+r), phi_t the centered
    Gaussian density of variance t. Satisfies 0 <= q_zero <= q_plus.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    r = np.asarray(r, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(r < 0) or np.any(rho < 0):
        raise ValueError("r and rho must be >= 0")
    c = 1.0 / math.sqrt(2.0 * math.pi * t)
    a = c * np.exp(-((rho - r) ** 2) / (2.0 * t))
    b = c * np.exp(-((rho + r) ** 2) / (2.0 * t))
    q_plus = a + b
    q_zero = a - b
    if q_plus.ndim == 0:
        return float(q_plus), float(q_zero)
    return q_plus, q_zero


def bridge_crossing_prob(a, b, dt):
    """Probability a Brownian bridge from a to b over dt hits 0 (a, b > 0)."""
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr <= 0) or np.any(b_arr <= 0) or np.any(np.asarray(dt) <= 0):
        raise ValueError("bridge_crossing_prob needs a, b, dt > 0")
    out = np.exp(-2.0 * a_arr * b_arr / dt)
    return float(out) if out.ndim == 0 else out


def bridge_min(a, b, dt, u):
    """Exact minimum of a Brownian bridge from a to b over dt.

    u is a uniform(0,1) variate; the inverse-CDF form is
    ((a+b) - sqrt((a-b)^2 - 2 dt log u)) / 2.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lu = np.log(np.maximum(u, 1e-320))
    out = 0.5 * (a + b - np.sqrt((a - b) ** 2 - 2.0 * dt * lu))
    return float(out) if out.ndim == 0 else out


def reflected_increment(y, h, z, u):
    """One exact step of reflected Brownian motion with its local time.

    From y >= 0, over time h, with driver increment sqrt(h) z: the free
    endpoint is w = y + sqrt(h) z, the bridge minimum m is sampled exactly
    from u, and the step returns (y_new, dL) = (w - min(m, 0), max(-m, 0)).
    Exact in continuous law jointly; the grid identity y_new = y + sqrt(h) z
    + dL holds by construction.
    """
    w = y + np.sqrt(h) * z
    m = bridge_min(y, w, h, u)
    dL = np.maximum(-m, 0.0) if np.ndim(m) else max(-m, 0.0)
    return w + dL, dL
