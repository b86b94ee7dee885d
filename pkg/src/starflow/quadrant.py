"""Obliquely reflected Brownian motion in the half-plane and the quadrant.

A leg of law P^theta_x starts at (x, 0), runs
    dX = dB1 - tan(theta) dL(Y),      dY = dB2 + dL(Y),
and stops at S, the first time X hits 0. Closed forms verified by the
Monte Carlo experiments here: Y_S^2/x^2 is Beta of the second kind with
parameters (1/2 - theta/pi, 1/2 + theta/pi); E[Y_S^b] =
x^b cos(theta)/cos(theta - b pi/2); E[log Y_S] = log x - (pi/2) tan(theta);
E[(log(Y_S/x))^2] = (pi^2/4)(1 + 2 tan^2 theta); and the sup/inf tail
bounds c_b (x/a)^b and c_b (a/x)^b.

Simulation scheme. Per step of size h the reflected coordinate and its
local-time increment are sampled exactly (Brownian-bridge minimum), so the
grid identities Y_k = B2_k + L_k and X_k = x + B1_k - tan(theta) L_k hold
exactly and the local time carries no grid bias. The step size adapts:
h = max(min(dt, (|Z|/12)^2), (X/12)^2) -- coarse far from the boundaries
(12 standard deviations of safety; boundary contact within a coarse step
has probability ~1e-9), refined below dt near the corner so that small
Y_S values are resolved (the x-scaling of the law makes the refined steps
exact replicas of coarser ones). dt remains the crossing resolution on
the X boundary. Leg durations have infinite mean for every theta, which is
why the far-field coarsening is not optional for batch work.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .halfline import RngStream
from .stats import reg_incomplete_beta

__all__ = [
    "LegOverflowError", "OrbmLeg", "LegSamples", "AngleSource", "FixedAngles",
    "AngleCallback", "UniformAngles", "QuadrantProcess",
    "orbm_leg", "sample_legs", "ys_cdf", "ys_moment", "ys_log_mean",
    "ys_log_square_moment", "tail_bound", "expected_boundary_local_time",
    "quadrant_process", "sample_quadrant_processes", "QuadrantBatch",
]

SAFETY = 12.0  # step stays this many standard deviations away from boundaries


class LegOverflowError(RuntimeError):
    """Raised when a leg exceeds its step cap (plumbing; S is a.s. finite)."""


@dataclass
class OrbmLeg:
    """One simulated half-plane leg with its recorded path."""

    theta: float
    x: float
    dt: float
    X: np.ndarray
    Y: np.ndarray
    L: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    step_sizes: np.ndarray
    S_index: int
    Y_S: float
    L_at_S: float
    sup_abs: float
    inf_abs: float

    @property
    def times(self) -> np.ndarray:
        t = np.empty(len(self.X))
        t[0] = 0.0
        np.cumsum(self.step_sizes, out=t[1:])
        return t

    def to_csv(self, path) -> None:
        t = self.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "X", "Y", "L"])
            for k in range(len(self.X)):
                w.writerow([repr(float(t[k])), repr(float(self.X[k])),
                            repr(float(self.Y[k])), repr(float(self.L[k]))])


@dataclass
class LegSamples:
    """Terminal summaries of a batch of legs (one entry per leg)."""

    theta: float
    x: float
    dt: float
    ys: np.ndarray
    local_times: np.ndarray
    sup_abs: np.ndarray
    inf_abs: np.ndarray
    durations: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ys)


def _leg_batch(theta, x, dt, n, gen, refine=True, accel=True,
               max_steps=10 ** 8, record=False):
    """Vectorized leg simulation; theta and x may be scalars or (n,) arrays."""
    tan_t = np.broadcast_to(np.tan(np.asarray(theta, dtype=float)), (n,)).copy()
    X = np.broadcast_to(np.asarray(x, dtype=float), (n,)).astype(float).copy()
    if np.any(X <= 0):
        raise ValueError("start x must be > 0")
    Y = np.zeros(n)
    L = np.zeros(n)
    sup = X.copy()
    inf = X.copy()
    elapsed = np.zeros(n)
    idx = np.arange(n)
    ys = np.zeros(n)
    ls = np.zeros(n)
    sups = np.zeros(n)
    infs = np.zeros(n)
    durs = np.zeros(n)
    rec = [] if record else None
    if record:
        rec.append((X.copy(), Y.copy(), L.copy(), np.zeros(n), np.zeros(n), np.zeros(n)))
    s2 = SAFETY * SAFETY
    steps = 0
    while idx.size:
        steps += 1
        if steps > max_steps:
            raise LegOverflowError(f"leg exceeded {max_steps} steps")
        m = idx.size
        if accel:
            h = np.maximum(np.minimum(dt, (X * X + Y * Y) / s2), X * X / s2)
        else:
            h = np.full(m, float(dt))
        sq = np.sqrt(h)
        z1 = gen.standard_normal(m)
        z2 = gen.standard_normal(m)
        um = gen.random(m)
        ub = gen.random(m)
        w = Y + sq * z2
        mn = 0.5 * (Y + w - np.sqrt((Y - w) ** 2 - 2.0 * h * np.log(np.maximum(um, 1e-320))))
        dL = np.where(mn < 0.0, -mn, 0.0)
        Ynew = w + dL
        Xnew = X + sq * z1 - tan_t * dL
        cross = Xnew <= 0.0
        if refine:
            pb = np.exp(-2.0 * X * np.maximum(Xnew, 0.0) / h)
            done = cross | ((dL == 0.0) & (ub < pb))
        else:
            done = cross
        az = np.sqrt(np.maximum(Xnew, 0.0) ** 2 + Ynew * Ynew)
        sup = np.maximum(sup, az)
        inf = np.minimum(inf, np.where(done, Ynew, az))
        elapsed = elapsed + h
        if record:
            rec.append((Xnew.copy(), Ynew.copy(), (L + dL).copy(),
                        sq * z1, sq * z2, h.copy()))
        if done.any():
            d_ids = idx[done]
            ys[d_ids] = Ynew[done]
            ls[d_ids] = (L + dL)[done]
            sups[d_ids] = sup[done]
            infs[d_ids] = inf[done]
            durs[d_ids] = elapsed[done]
            keep = ~done
            idx = idx[keep]
            X = Xnew[keep]
            Y = Ynew[keep]
            L = (L + dL)[keep]
            sup = sup[keep]
            inf = inf[keep]
            elapsed = elapsed[keep]
            tan_t = tan_t[keep]
        else:
            X = Xnew
            Y = Ynew
            L = L + dL
    return ys, ls, sups, infs, durs, rec, steps


def orbm_leg(theta: float, x: float, dt: float, rng: RngStream,
             refine: bool = True, accel: bool = False,
             max_steps: int = 10 ** 8) -> OrbmLeg:
    """Simulate one leg of law P^theta_x, recording the full path.

    The recorded grid is uniform at dt unless ``accel`` is set, in which
    case far-field steps coarsen and corner steps refine (step sizes are
    recorded). Termination: first grid index with X <= 0, plus (with
    ``refine``) bridge-sampled crossings inside steps where L is flat.
    """
    _check_theta(theta)
    if x <= 0:
        raise ValueError("x must be > 0")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    ys, ls, sups, infs, durs, rec, _ = _leg_batch(
        theta, x, dt, 1, rng.generator(), refine=refine, accel=accel,
        max_steps=max_steps, record=True)
    X = np.array([r[0][0] for r in rec])
    Y = np.array([r[1][0] for r in rec])
    L = np.array([r[2][0] for r in rec])
    dB1 = np.array([r[3][0] for r in rec])[1:]
    dB2 = np.array([r[4][0] for r in rec])[1:]
    hs = np.array([r[5][0] for r in rec])[1:]
    B1 = np.concatenate([[0.0], np.cumsum(dB1)])
    B2 = np.concatenate([[0.0], np.cumsum(dB2)])
    k = len(X) - 1
    return OrbmLeg(theta=theta, x=x, dt=dt, X=X, Y=Y, L=L, B1=B1, B2=B2,
                   step_sizes=hs, S_index=k, Y_S=float(ys[0]), L_at_S=float(ls[0]),
                   sup_abs=float(sups[0]), inf_abs=float(infs[0]))


def sample_legs(theta, x: float, dt: float, n: int, rng: RngStream,
                refine: bool = True, accel: bool = True,
                max_steps: int = 10 ** 8, chunk: int = 65536,
                threads: int = 1) -> LegSamples:
    """Terminal summaries of n independent legs.

    Work is split into fixed-size chunks, one child stream per chunk, and
    merged in chunk order: results are identical for any thread count.
    ``theta`` may be a scalar or an (n,) array of per-leg angles.
    """
    _check_theta(np.min(theta))
    _check_theta(np.max(theta))
    if x <= 0 or dt <= 0 or n < 1:
        raise ValueError("need x > 0, dt > 0, n >= 1")
    theta_arr = np.broadcast_to(np.asarray(theta, dtype=float), (n,))
    ranges = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    def run(ci):
        lo, hi = ranges[ci]
        gen = rng.child(ci).generator()
        ys, ls, sups, infs, durs, _, _ = _leg_batch(
            theta_arr[lo:hi], x, dt, hi - lo, gen, refine=refine,
            accel=accel, max_steps=max_steps)
        return ys, ls, sups, infs, durs

    results = _run_chunks(run, len(ranges), threads)
    cat = [np.concatenate([r[j] for r in results]) for j in range(5)]
    return LegSamples(theta=float(np.min(theta_arr)), x=x, dt=dt, ys=cat[0],
                      local_times=cat[1], sup_abs=cat[2], inf_abs=cat[3],
                      durations=cat[4])


def _run_chunks(fn: Callable, n_chunks: int, threads: int) -> list:
    if threads <= 1 or n_chunks <= 1:
        return [fn(i) for i in range(n_chunks)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n_chunks)))


def _check_theta(theta: float) -> None:
    if not (0.0 < theta < math.pi / 2):
        raise ValueError(f"theta must lie in (0, pi/2), got {theta}")


# -- closed-form laws ---------------------------------------------------------

def ys_cdf(theta: float, x: float, y) -> float | np.ndarray:
    """P(Y_S <= y) for a leg of law P^theta_x: the regularized incomplete
    beta I_w(1/2 - theta/pi, 1/2 + theta/pi) at w = (y/x)^2/(1+(y/x)^2)."""
    _check_theta(theta)
    if x <= 0:
        raise ValueError("x must be > 0")
    a = 0.5 - theta / math.pi
    b = 0.5 + theta / math.pi
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("y must be >= 0")
    z = (y_arr / x) ** 2
    with np.errstate(invalid="ignore"):
        w = np.where(np.isinf(z), 1.0, z / (1.0 + z))
    if y_arr.ndim == 0:
        return reg_incomplete_beta(a, b, float(w))
    return np.array([reg_incomplete_beta(a, b, wi) for wi in w])


def ys_moment(theta: float, b: float, x: float = 1.0) -> float:
    """E[Y_S^b] = x^b cos(theta)/cos(theta - b pi/2), for
    b in (-1 + 2 theta/pi, 1 + 2 theta/pi)."""
    _check_theta(theta)
    if not (-1.0 + 2.0 * theta / math.pi < b < 1.0 + 2.0 * theta / math.pi):
        raise ValueError(f"moment order {b} outside validity interval")
    return x ** b * math.cos(theta) / math.cos(theta - b * math.pi / 2.0)


def ys_log_mean(theta: float, x: float = 1.0) -> float:
    """E[log Y_S] = log x - (pi/2) tan(theta)."""
    _check_theta(theta)
    return math.log(x) - math.pi / 2.0 * math.tan(theta)


def ys_log_square_moment(theta: float) -> float:
    """E[(log(Y_S/x))^2] = (pi^2/4)(1 + 2 tan^2 theta)."""
    _check_theta(theta)
    return math.pi ** 2 / 4.0 * (1.0 + 2.0 * math.tan(theta) ** 2)


def tail_bound(theta: float, x: float, a: float, b: float, side: str) -> float:
    """Closed-form tail bound for sup or inf of |Z| over a leg.

    side "up": P(sup |Z| > a) <= c_b (x/a)^b for a > x, 0 < b < 1+2theta/pi,
    with c_b = 1 when b <= 4 theta/pi and cos(theta)/cos(b pi/2 - theta)
    otherwise. side "down": P(inf |Z| < a) <= c_b (a/x)^b for a < x,
    0 < b < 1-2theta/pi, with c_b = cos(theta)/cos(b pi/2 + theta).
    """
    _check_theta(theta)
    if x <= 0:
        raise ValueError("x must be > 0")
    if side == "up":
        if not a > x:
            raise ValueError("up-side needs a > x")
        if not (0.0 < b < 1.0 + 2.0 * theta / math.pi):
            raise ValueError("b outside (0, 1 + 2 theta/pi)")
        c_b = 1.0 if b <= 4.0 * theta / math.pi else \
            math.cos(theta) / math.cos(b * math.pi / 2.0 - theta)
        return c_b * (x / a) ** b
    if side == "down":
        if not 0 < a < x:
            raise ValueError("down-side needs 0 < a < x")
        if not (0.0 < b < 1.0 - 2.0 * theta / math.pi):
            raise ValueError("b outside (0, 1 - 2 theta/pi)")
        c_b = math.cos(theta) / math.cos(b * math.pi / 2.0 + theta)
        return c_b * (a / x) ** b
    raise ValueError("side must be 'up' or 'down'")


def expected_boundary_local_time(theta1: float, theta2: float, x: float = 1.0) -> float:
    """E[L at the corner time] for alternating angles theta1, theta2 from
    (x, 0): x (tan theta2 + 1)/(tan theta1 tan theta2 - 1) when the tan
    product exceeds 1, else infinity."""
    _check_theta(theta1)
    _check_theta(theta2)
    if x <= 0:
        raise ValueError("x must be > 0")
    t1, t2 = math.tan(theta1), math.tan(theta2)
    if t1 * t2 <= 1.0:
        return math.inf
    return x * (t2 + 1.0) / (t1 * t2 - 1.0)


# -- quadrant process with per-leg angles ------------------------------------

class AngleSource:
    """Supplies the reflection angle for each leg, within declared bounds."""

    lo: float
    hi: float

    def angle(self, n: int, thetas: Sequence[float], us: Sequence[float],
              gen: np.random.Generator) -> float:
        raise NotImplementedError

    def angles_batch(self, n: int, m: int, gen: np.random.Generator) -> np.ndarray:
        """Vector of leg-n angles for m paths (for batch experiments)."""
        raise NotImplementedError


@dataclass
class FixedAngles(AngleSource):
    """theta1 on even legs, theta2 on odd legs."""

    theta1: float
    theta2: float

    def __post_init__(self):
        _check_theta(self.theta1)
        _check_theta(self.theta2)
        self.lo = min(self.theta1, self.theta2)
        self.hi = max(self.theta1, self.theta2)

    def angle(self, n, thetas, us, gen):
        return self.theta1 if n % 2 == 0 else self.theta2

    def angles_batch(self, n, m, gen):
        return np.full(m, self.theta1 if n % 2 == 0 else self.theta2)


@dataclass
class UniformAngles(AngleSource):
    """Independent uniform draws from [lo, hi] for every leg."""

    lo: float
    hi: float

    def __post_init__(self):
        _check_theta(self.lo)
        _check_theta(self.hi)
        if self.lo > self.hi:
            raise ValueError("lo > hi")

    def angle(self, n, thetas, us, gen):
        return float(gen.uniform(self.lo, self.hi))

    def angles_batch(self, n, m, gen):
        return gen.uniform(self.lo, self.hi, size=m)


@dataclass
class AngleCallback(AngleSource):
    """History-measurable choice: fn(n, thetas, us) -> angle in [lo, hi]."""

    fn: Callable[[int, Sequence[float], Sequence[float]], float]
    lo: float
    hi: float

    def __post_init__(self):
        _check_theta(self.lo)
        _check_theta(self.hi)

    def angle(self, n, thetas, us, gen):
        th = float(self.fn(n, thetas, us))
        if not (self.lo <= th <= self.hi):
            raise ValueError(f"callback angle {th} outside [{self.lo}, {self.hi}]")
        return th


@dataclass
class QuadrantProcess:
    """Concatenated legs with alternating reflected coordinate.

    Leg n is simulated at unit scale and rescaled by the entry radius U_n
    (the x-scaling of the leg law); its absolute grid spacing is U_n^2 dt.
    ``status`` is "corner" when the endpoint dropped below eps_stop and
    "leg_cap" when max_legs ran out first.
    """

    x: float
    dt: float
    eps_stop: float
    thetas: list[float]
    us: list[float]                  # U_0 = x, then leg endpoints
    legs: list[OrbmLeg]
    sigma0_time: float
    L_total: float
    status: str

    @property
    def terminated(self) -> bool:
        return self.status == "corner"

    def to_csv(self, path) -> None:
        """Assembled quadrant path (coordinates swapped on odd legs)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "X", "Y", "L"])
            t0, l0 = 0.0, 0.0
            for n, leg in enumerate(self.legs):
                t = leg.times
                for k in range(1 if n else 0, len(leg.X)):
                    xk, yk = float(leg.X[k]), float(leg.Y[k])
                    if n % 2 == 1:
                        xk, yk = yk, xk
                    w.writerow([repr(t0 + float(t[k])), repr(max(xk, 0.0)),
                                repr(yk), repr(l0 + float(leg.L[k]))])
                t0 += float(t[-1])
                l0 += float(leg.L[-1])


def quadrant_process(source: AngleSource, x: float, dt: float, eps_stop: float,
                     max_legs: int, rng: RngStream,
                     keep_paths: bool = False) -> QuadrantProcess:
    """Simulate the quadrant process until the leg endpoint drops below
    eps_stop (corner proxy) or max_legs is exhausted."""
    if not (0.0 < eps_stop < x):
        raise ValueError("need 0 < eps_stop < x")
    if dt <= 0 or max_legs < 1:
        raise ValueError("need dt > 0 and max_legs >= 1")
    gen = rng.generator()
    thetas: list[float] = []
    us: list[float] = [float(x)]
    legs: list[OrbmLeg] = []
    t_total = 0.0
    l_total = 0.0
    u = float(x)
    status = "leg_cap"
    for n in range(max_legs):
        th = source.angle(n, thetas, us, gen)
        _check_theta(th)
        thetas.append(th)
        leg = orbm_leg(th, 1.0, dt, rng.child(n), refine=True, accel=True)
        ratio = leg.Y_S
        l_total += u * leg.L_at_S
        t_total += u * u * float(np.sum(leg.step_sizes))
        if keep_paths:
            legs.append(OrbmLeg(
                theta=th, x=u, dt=u * u * dt, X=u * leg.X, Y=u * leg.Y,
                L=u * leg.L, B1=u * leg.B1, B2=u * leg.B2,
                step_sizes=u * u * leg.step_sizes, S_index=leg.S_index,
                Y_S=u * leg.Y_S, L_at_S=u * leg.L_at_S,
                sup_abs=u * leg.sup_abs, inf_abs=u * leg.inf_abs))
        u = u * ratio
        us.append(u)
        if u < eps_stop:
            status = "corner"
            break
    return QuadrantProcess(x=x, dt=dt, eps_stop=eps_stop, thetas=thetas,
                           us=us, legs=legs, sigma0_time=t_total,
                           L_total=l_total, status=status)


@dataclass
class QuadrantBatch:
    """Summaries of a batch of quadrant processes."""

    l_totals: np.ndarray
    n_legs: np.ndarray
    terminated: np.ndarray
    sigma0_times: np.ndarray

    @property
    def n(self) -> int:
        return len(self.l_totals)


def sample_quadrant_processes(source: AngleSource, x: float, dt: float,
                              eps_stop: float, max_legs: int, n: int,
                              rng: RngStream, chunk: int = 65536,
                              threads: int = 1) -> QuadrantBatch:
    """Batch quadrant processes (unit legs per round, vectorized over paths).

    Requires an AngleSource with a batch rule (fixed pair or uniform draws).
    """
    if not (0.0 < eps_stop < x):
        raise ValueError("need 0 < eps_stop < x")
    ranges = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    def run(ci):
        lo, hi = ranges[ci]
        m = hi - lo
        stream = rng.child(ci)
        gen = stream.generator()
        u = np.full(m, float(x))
        l_tot = np.zeros(m)
        t_tot = np.zeros(m)
        n_legs = np.zeros(m, dtype=np.int64)
        active = np.arange(m)
        for leg_i in range(max_legs):
            ma = active.size
            if ma == 0:
                break
            th = source.angles_batch(leg_i, ma, gen)
            ls = _leg_batch(th, 1.0, dt, ma, stream.child(leg_i).generator(),
                            refine=True, accel=True)
            ys, lleg, _, _, durs = ls[0], ls[1], ls[2], ls[3], ls[4]
            l_tot[active] += u[active] * lleg
            t_tot[active] += u[active] ** 2 * durs
            u[active] = u[active] * ys
            n_legs[active] += 1
            active = active[u[active] >= eps_stop]
        return l_tot, n_legs, u < eps_stop, t_tot

    results = _run_chunks(run, len(ranges), threads)
    return QuadrantBatch(
        l_totals=np.concatenate([r[0] for r in results]),
        n_legs=np.concatenate([r[1] for r in results]),
        terminated=np.concatenate([r[2] for r in results]),
        sigma0_times=np.concatenate([r[3] for r in results]),
    )
