"""Interface-SDE solutions and flow machinery on star graphs.

Forward construction: a coupled Walsh path X provides the driver B, fresh
auxiliary noises V^i are drawn, and the edge noises are assembled as
dW^i = 1{X on ray i} dB + 1{X off ray i} dV^i (left-point indicators), so
W is an N-dimensional Brownian family and X follows W^i on ray i exactly.

n-point motions share one W: between transfer times exactly one point (the
pivot) sits at the origin and evolves as a fresh coupled Walsh path that
generates W for the stretch; every other point rides its own ray's noise
rigidly. A point hitting the origin becomes the next pivot. Points
coalesce when both sit at the origin within tolerance; coalescence is
absorbing.

Two-point motions map to obliquely reflected quadrant legs by excising the
time the pair spends on a common ray; the reflection angle of a leg whose
moving point sits on ray i is arctan(p_i / (1 - p_i)).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .graphs import GraphPoint, StarGraph
from .halfline import BrownianGrid, RngStream
from .quadrant import SAFETY, _run_chunks
from .walsh import WalshPath, wbm_coupled_path, _point_state

__all__ = [
    "IsdeSolution", "N2NoisePath", "NPointPath", "TimeChangedPair",
    "FilteredKernelEstimate", "FirstLegSamples", "CoalescenceSamples",
    "isde_forward", "sample_isde_terminals", "isde_n2_from_noise",
    "npoint_motion", "coalescence_time", "two_point_to_quadrant",
    "sample_first_legs", "sample_coalescence_times",
    "filtered_kernel", "sample_kernel_dispersions", "default_coalescence_tol",
]

PIVOT_DIV = 48.0  # extra refinement of shared-noise steps near the pivot boundary


def default_coalescence_tol(dt: float) -> float:
    """Detection tolerance for origin coincidence: one-step noise scale."""
    return 2.0 * math.sqrt(dt)


# -- forward construction -----------------------------------------------------

@dataclass
class IsdeSolution:
    """A solution path with its assembled edge noises.

    W increments satisfy dW^i = 1{ray==i} dB + 1{ray!=i} dV^i exactly at
    every grid index (left-point ray)."""

    path: WalshPath
    W: np.ndarray   # (N, K+1) cumulative edge noises
    V: np.ndarray   # (N, K+1) cumulative auxiliary noises

    @property
    def dt(self) -> float:
        return self.path.dt

    def w_grids(self) -> list[BrownianGrid]:
        return [BrownianGrid(dt=self.path.dt, values=self.W[i])
                for i in range(self.W.shape[0])]


def isde_forward(g: StarGraph, x0: GraphPoint, T: float, dt: float,
                 rng: RngStream) -> IsdeSolution:
    """Forward solution: coupled Walsh path plus assembled edge noises."""
    path = wbm_coupled_path(g, x0, T, dt, rng.child(0))
    K = path.n_steps
    gen = rng.child(1).generator()
    dV = gen.standard_normal((g.n_rays, K)) * math.sqrt(dt)
    dB = np.diff(path.driver)
    on_ray = path.rays[:-1][None, :] == np.arange(g.n_rays)[:, None]
    dW = np.where(on_ray, dB[None, :], dV)
    W = np.zeros((g.n_rays, K + 1))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    V = np.zeros((g.n_rays, K + 1))
    np.cumsum(dV, axis=1, out=V[:, 1:])
    return IsdeSolution(path=path, W=W, V=V)


def sample_isde_terminals(g: StarGraph, T: float, dt: float, n: int,
                          rng: RngStream, x0: GraphPoint | None = None,
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Terminal (rays, radials, W_T) over n forward solutions; W_T is (n, N)."""
    if x0 is None:
        x0 = g.origin()
    K = int(round(T / dt))
    gen = rng.generator()
    cum = np.cumsum(g.probs_array)
    ray0, r0 = _point_state(g, x0)
    sq = math.sqrt(dt)
    rad = np.full(n, r0)
    rays = (np.searchsorted(cum, gen.random(n)) if x0.is_vertex
            else np.full(n, ray0, dtype=np.int64))
    WT = np.zeros((n, g.n_rays))
    rows = np.arange(n)
    for _ in range(K):
        xi = sq * gen.standard_normal(n)
        dV = sq * gen.standard_normal((n, g.n_rays))
        coins = np.searchsorted(cum, gen.random(n))
        WT += dV
        WT[rows, rays] += xi - dV[rows, rays]
        y = rad + xi
        neg = y < 0.0
        rays = np.where(neg, coins, rays)
        rad = np.abs(y)
    return rays, rad, WT


# -- N = 2 strong solver ------------------------------------------------------

@dataclass
class N2NoisePath:
    """Deterministic image of a noise pair under the two-ray Euler scheme.

    Ray 0 is embedded as the positive half-line (driven by the first
    noise), ray 1 as the negative one. The scheme runs on the transformed
    variable beta*x on the positive side, x on the negative side, with
    beta = (1-p)/p and p the weight of ray 0.
    """

    graph: StarGraph
    dt: float
    signed: np.ndarray

    @property
    def rays(self) -> np.ndarray:
        return np.where(self.signed > 0.0, 0, 1).astype(np.int64)

    @property
    def radials(self) -> np.ndarray:
        return np.abs(self.signed)

    def point(self, k: int) -> GraphPoint:
        return self.graph.point(int(self.rays[k]), float(self.radials[k]))


def isde_n2_from_noise(g2: StarGraph, x0: GraphPoint,
                       w_pair: tuple[np.ndarray, np.ndarray] | list,
                       dt: float) -> N2NoisePath:
    """Euler scheme for the two-ray interface equation driven by the given
    noise increments; deterministic given (w_pair, x0, dt)."""
    if g2.n_rays != 2:
        raise ValueError("two-ray graph required")
    d0 = np.asarray(w_pair[0], dtype=float)
    d1 = np.asarray(w_pair[1], dtype=float)
    if d0.shape != d1.shape:
        raise ValueError("noise grids must have equal length")
    p = g2.probs[0]
    beta = (1.0 - p) / p
    ray0, r0 = _point_state(g2, x0)
    x_signed = r0 if ray0 == 0 else -r0
    y = beta * x_signed if x_signed >= 0 else x_signed
    K = d0.size
    out = np.empty(K + 1)
    out[0] = x_signed
    for k in range(K):
        if y > 0.0:
            y += beta * d0[k]
        else:
            y += d1[k]
        out[k + 1] = y / beta if y > 0 else y
    return N2NoisePath(graph=g2, dt=dt, signed=out)


# -- n-point motion -----------------------------------------------------------

@dataclass
class NPointPath:
    """Joint trajectory of n solutions sharing W, with pivot bookkeeping."""

    graph: StarGraph
    dt: float
    rays: np.ndarray          # (K+1, n)
    radials: np.ndarray       # (K+1, n)
    pivot_index: np.ndarray   # (K+1,) current pivot, -1 while no point is at 0
    tau_events: list[int]
    coalesced_pairs: dict[tuple[int, int], int]
    tol_c: float

    @property
    def n_points(self) -> int:
        return self.rays.shape[1]

    def point(self, k: int, j: int) -> GraphPoint:
        return self.graph.point(int(self.rays[k, j]), float(self.radials[k, j]))

    def to_csv(self, path) -> None:
        taus = set(self.tau_events)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["t"]
            for j in range(self.n_points):
                header += [f"point_{j+1}_edge", f"point_{j+1}_coord"]
            header += ["pivot_index", "tau_flag"]
            w.writerow(header)
            for k in range(self.rays.shape[0]):
                row = [repr(k * self.dt)]
                for j in range(self.n_points):
                    row += [int(self.rays[k, j]), repr(float(self.radials[k, j]))]
                row += [int(self.pivot_index[k]), int(k in taus)]
                w.writerow(row)


def npoint_motion(g: StarGraph, starts: list[GraphPoint], T: float, dt: float,
                  rng: RngStream, tol_c: float | None = None) -> NPointPath:
    """n-point motion on a fixed grid up to time T (grid semantics above)."""
    if not starts:
        raise ValueError("need at least one start")
    n = len(starts)
    if tol_c is None:
        tol_c = default_coalescence_tol(dt)
    K = int(round(T / dt))
    gen = rng.generator()
    cum = np.cumsum(g.probs_array)
    sq = math.sqrt(dt)

    rays = np.zeros(n, dtype=np.int64)
    rad = np.zeros(n)
    for j, s in enumerate(starts):
        rays[j], rad[j] = _point_state(g, s)
    rep = np.arange(n)  # coalescence representative (union by smaller index)
    at_zero = [j for j in range(n) if rad[j] == 0.0]
    pivot = at_zero[0] if at_zero else -1
    for j in at_zero[1:]:
        rep[j] = at_zero[0]
    phantom_ray = int(np.searchsorted(cum, gen.random()))
    phantom_rad = 0.0
    if pivot >= 0:
        rays[pivot] = phantom_ray

    out_rays = np.empty((K + 1, n), dtype=np.int64)
    out_rad = np.empty((K + 1, n))
    out_piv = np.empty(K + 1, dtype=np.int64)
    out_rays[0], out_rad[0], out_piv[0] = rays, rad, pivot
    tau_events: list[int] = []
    coalesced: dict[tuple[int, int], int] = {
        (int(a), int(b)): 0 for ai, a in enumerate(at_zero)
        for b in at_zero[ai + 1:]}

    for k in range(K):
        xi = sq * gen.standard_normal()
        dV = sq * gen.standard_normal(g.n_rays)
        coin = int(np.searchsorted(cum, gen.random()))
        coin2 = int(np.searchsorted(cum, gen.random()))
        piv_ray = rays[pivot] if pivot >= 0 else phantom_ray
        dW = dV.copy()
        dW[piv_ray] = xi
        movers = [j for j in range(n) if rep[j] == j and j != pivot]
        # pivot (or phantom) reflects and redraws at zero touches
        if pivot >= 0:
            y = rad[pivot] + xi
            if y < 0.0:
                rad[pivot] = -y
                rays[pivot] = coin
            else:
                rad[pivot] = y
        else:
            y = phantom_rad + xi
            if y < 0.0:
                phantom_rad, phantom_ray = -y, coin
            else:
                phantom_rad = y
        hits = []
        for j in movers:
            nr = rad[j] + dW[rays[j]]
            rad[j] = nr
            if nr <= 0.0:
                hits.append(j)
        if hits:
            new_pivot = min(hits, key=lambda j: rad[j])
            tau_events.append(k + 1)
            for j in hits:
                rad[j] = -rad[j]
                if j == new_pivot:
                    rays[j] = coin2
            pivot = new_pivot
        # coalescence at the origin, absorbing
        alive = [j for j in range(n) if rep[j] == j]
        near = [j for j in alive if rad[j] < tol_c]
        for ai, a in enumerate(near):
            for b in near[ai + 1:]:
                lo, hi = min(a, b), max(a, b)
                if rep[hi] == hi:
                    coalesced.setdefault((lo, hi), k + 1)
                    rep[rep == hi] = lo
                    if pivot == hi:
                        pivot = lo
        rays = rays[rep]
        rad = rad[rep]
        out_rays[k + 1], out_rad[k + 1] = rays, rad
        out_piv[k + 1] = pivot
    return NPointPath(graph=g, dt=dt, rays=out_rays, radials=out_rad,
                      pivot_index=out_piv, tau_events=tau_events,
                      coalesced_pairs=coalesced, tol_c=tol_c)


def coalescence_time(g: StarGraph, x: GraphPoint, y: GraphPoint, dt: float,
                     rng: RngStream, t_max: float,
                     tol_c: float | None = None) -> float | None:
    """First grid time x and y are both origin-coincident, or None on timeout."""
    from .graphs import distance
    if distance(g, x, y) == 0.0:
        return 0.0
    if tol_c is None:
        tol_c = default_coalescence_tol(dt)
    times = sample_coalescence_times(g, x, y, dt, 1, rng, t_max,
                                     tol_factors=(tol_c / math.sqrt(dt),),
                                     target_fraction=2.0, t_cap=t_max)
    t = times.times[0, 0]
    return None if math.isnan(t) else float(t)


# -- two-point <-> quadrant correspondence ------------------------------------

@dataclass
class TimeChangedPair:
    """Time-changed two-point motion: the common-ray time is excised."""

    Ur: np.ndarray
    Vr: np.ndarray
    A: np.ndarray              # grid-index clock: counted steps before k
    gamma: np.ndarray          # original grid indices realizing the r-clock
    leg_bounds: np.ndarray     # r-clock indices of the transfer times
    thetas: np.ndarray         # reflection angle in force on each leg
    ray_chain: np.ndarray      # moving-point ray per leg


def two_point_to_quadrant(path: NPointPath) -> TimeChangedPair:
    """Build (U^r, V^r) from a two-point path started at (x, 0), x != 0."""
    if path.n_points != 2:
        raise ValueError("two-point path required")
    if path.pivot_index[0] < 0 or path.radials[0].max() == 0.0:
        raise ValueError("start must be one point away from the origin, one at it")
    probs = path.graph.probs_array
    K1 = path.rays.shape[0]
    piv = path.pivot_index
    mover = 1 - piv  # two points: the non-pivot index
    mover_ray = path.rays[np.arange(K1), mover]
    U = path.radials[np.arange(K1), mover]
    pv_ray = path.rays[np.arange(K1), piv]
    pv_rad = path.radials[np.arange(K1), piv]
    V = np.where((pv_ray == mover_ray) & (pv_rad > 0.0), -pv_rad, pv_rad)
    counted = V >= 0.0
    A = np.concatenate([[0], np.cumsum(counted[:-1])])
    gamma = np.flatnonzero(counted)
    taus = np.asarray(path.tau_events, dtype=np.int64)
    leg_bounds = A[taus] if taus.size else np.empty(0, dtype=np.int64)
    chain_idx = np.concatenate([[0], taus[taus < K1 - 1]])
    ray_chain = mover_ray[chain_idx]
    thetas = np.arctan(probs[ray_chain] / (1.0 - probs[ray_chain]))
    return TimeChangedPair(Ur=U[counted], Vr=V[counted], A=A, gamma=gamma,
                           leg_bounds=leg_bounds, thetas=thetas,
                           ray_chain=ray_chain)


# -- batch two-point engines ---------------------------------------------------

def _h_shared(dt: float, o_rad: np.ndarray, p_rad: np.ndarray) -> np.ndarray:
    """Adaptive step for the shared-noise pair: coarse when the moving point
    is far, corner-refined when both are small, extra-refined (PIVOT_DIV)
    while the pivot is near its boundary."""
    s2 = SAFETY * SAFETY
    z2 = o_rad * o_rad + p_rad * p_rad
    far = np.minimum(o_rad / SAFETY,
                     np.maximum(p_rad / SAFETY, o_rad / PIVOT_DIV)) ** 2
    return np.maximum(np.minimum(dt, z2 / s2), far)


def _cond_redraw(probs: np.ndarray, banned: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized draw from probs conditioned to differ from banned."""
    n = banned.size
    w = np.broadcast_to(probs, (n, probs.size)).copy()
    w[np.arange(n), banned] = 0.0
    cw = np.cumsum(w, axis=1)
    target = u * cw[:, -1]
    return (target[:, None] >= cw).sum(axis=1).astype(np.int64)


@dataclass
class FirstLegSamples:
    """Per-path leg endpoints and ray chains from repeated unit legs."""

    theta0: float
    ratios: np.ndarray      # (n, legs) V^r at leg end over leg entry radius
    chains: np.ndarray      # (n, legs+1) moving-point ray per leg

    @property
    def first_leg_vs(self) -> np.ndarray:
        return self.ratios[:, 0]


def sample_first_legs(g: StarGraph, start_ray: int, dt: float, n: int,
                      rng: RngStream, n_legs: int = 1, chunk: int = 65536,
                      threads: int = 1) -> FirstLegSamples:
    """Simulate two-point legs from (e_i(1), 0), restarting at unit scale
    after each transfer (the x-scaling of the leg law makes the ratios and
    the ray chain scale-free)."""
    probs = g.probs_array
    cum = np.cumsum(probs)
    theta0 = math.atan2(probs[start_ray], 1.0 - probs[start_ray])
    ranges = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    def run(ci):
        lo, hi = ranges[ci]
        m = hi - lo
        gen = rng.child(ci).generator()
        ratios = np.empty((m, n_legs))
        chains = np.empty((m, n_legs + 1), dtype=np.int64)
        chains[:, 0] = start_ray
        cur_ray = np.full(m, start_ray, dtype=np.int64)
        for leg in range(n_legs):
            o_rad = np.ones(m)
            o_ray = cur_ray.copy()
            p_rad = np.zeros(m)
            p_ray = np.searchsorted(cum, gen.random(m))
            idx = np.arange(m)
            vs = np.zeros(m)
            nxt = np.zeros(m, dtype=np.int64)
            while idx.size:
                ma = idx.size
                h = _h_shared(dt, o_rad, p_rad)
                sq = np.sqrt(h)
                zp = gen.standard_normal(ma)
                zo = gen.standard_normal(ma)
                um = gen.random(ma)
                ub = gen.random(ma)
                uc = gen.random(ma)
                ud = gen.random(ma)
                w = p_rad + sq * zp
                mn = 0.5 * (p_rad + w - np.sqrt(
                    (p_rad - w) ** 2 - 2.0 * h * np.log(np.maximum(um, 1e-320))))
                dL = np.where(mn < 0.0, -mn, 0.0)
                p_new = w + dL
                p_ray_new = np.where(dL > 0.0, np.searchsorted(cum, uc), p_ray)
                same = o_ray == p_ray
                o_new = o_rad + sq * np.where(same, zp, zo)
                cross = o_new <= 0.0
                pb = np.exp(-2.0 * o_rad * np.maximum(o_new, 0.0) / h)
                done = cross | ((~cross) & (ub < pb))
                if done.any():
                    d_ids = idx[done]
                    vs[d_ids] = p_new[done]
                    # next moving ray: the pivot's label, never the current one
                    lab = p_ray_new[done]
                    bad = lab == o_ray[done]
                    if bad.any():
                        lab = lab.copy()
                        lab[bad] = _cond_redraw(probs, o_ray[done][bad], ud[done][bad])
                    nxt[d_ids] = lab
                    keep = ~done
                    idx = idx[keep]
                    o_rad, o_ray = o_new[keep], o_ray[keep]
                    p_rad, p_ray = p_new[keep], p_ray_new[keep]
                else:
                    o_rad, p_rad, p_ray = o_new, p_new, p_ray_new
            ratios[:, leg] = vs
            chains[:, leg + 1] = nxt
            cur_ray = nxt
        return ratios, chains

    results = _run_chunks(run, len(ranges), threads)
    return FirstLegSamples(theta0=theta0,
                           ratios=np.concatenate([r[0] for r in results]),
                           chains=np.concatenate([r[1] for r in results]))


@dataclass
class CoalescenceSamples:
    """First origin-coincidence times at several detection tolerances."""

    tols: np.ndarray
    times: np.ndarray        # (n, n_tols); NaN where not reached by t_max
    t_max: float

    def fraction_coalesced(self, level: int = -1) -> float:
        return float(np.mean(~np.isnan(self.times[:, level])))

    def median_time(self, level: int = -1) -> float:
        t = self.times[:, level]
        return float(np.nanmedian(t))


def sample_coalescence_times(g: StarGraph, x: GraphPoint, y: GraphPoint,
                             dt: float, n: int, rng: RngStream,
                             t_max: float, tol_factors=(1.0, 2.0, 4.0),
                             target_fraction: float = 0.99,
                             t_cap: float | None = None,
                             chunk: int = 65536, threads: int = 1,
                             ) -> CoalescenceSamples:
    """Two-point coalescence times with multi-tolerance detection.

    Detection level j fires at the first step where both radials are below
    tol_factors[j] * sqrt(dt); the finest level is absorbing. The time
    budget doubles from t_max until the finest level reaches
    target_fraction or t_cap is hit. The coalescence-time tail is heavy
    (the pair's scale is a log random walk, so P(tau > T) decays like a
    small power of T) and the far-field step coarsening makes the cost of
    each budget doubling logarithmic, which keeps huge caps affordable.
    """
    probs = g.probs_array
    cum = np.cumsum(probs)
    tols = np.asarray(sorted(tol_factors, reverse=True), dtype=float) * math.sqrt(dt)
    n_tol = len(tols)
    if t_cap is None:
        t_cap = 2.0 ** 24 * t_max
    rx, ry = _point_state(g, x), _point_state(g, y)
    if rx[1] == 0.0 and ry[1] == 0.0:
        return CoalescenceSamples(tols=tols, times=np.zeros((n, n_tol)), t_max=t_max)
    if ry[1] == 0.0:
        start_ray, start_rad = rx
    elif rx[1] == 0.0:
        start_ray, start_rad = ry
    else:
        raise ValueError("one of the two starts must be the origin")
    ranges = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    def run(ci):
        lo, hi = ranges[ci]
        m = hi - lo
        gen = rng.child(ci).generator()
        o_rad = np.full(m, float(start_rad))
        o_ray = np.full(m, start_ray, dtype=np.int64)
        p_rad = np.zeros(m)
        p_ray = np.searchsorted(cum, gen.random(m))
        t = np.zeros(m)
        times = np.full((m, n_tol), np.nan)
        budget = t_max
        while True:
            sub = np.flatnonzero(np.isnan(times[:, -1]) & (t < budget))
            if sub.size == 0:
                frac = float(np.mean(~np.isnan(times[:, -1])))
                if frac >= target_fraction or budget >= t_cap:
                    break
                budget *= 2.0
                continue
            while sub.size:
                orad, oray = o_rad[sub], o_ray[sub]
                prad, pray = p_rad[sub], p_ray[sub]
                ma = sub.size
                h = _h_shared(dt, orad, prad)
                sq = np.sqrt(h)
                zp = gen.standard_normal(ma)
                zo = gen.standard_normal(ma)
                um = gen.random(ma)
                ub = gen.random(ma)
                uc = gen.random(ma)
                ud = gen.random(ma)
                ue = gen.random(ma)
                w = prad + sq * zp
                mn = 0.5 * (prad + w - np.sqrt(
                    (prad - w) ** 2 - 2.0 * h * np.log(np.maximum(um, 1e-320))))
                dL = np.where(mn < 0.0, -mn, 0.0)
                p_new = w + dL
                p_ray_new = np.where(dL > 0.0, np.searchsorted(cum, uc), pray)
                same = oray == pray
                o_new = orad + sq * np.where(same, zp, zo)
                crossed = o_new <= 0.0
                pb = np.exp(-2.0 * orad * np.maximum(o_new, 0.0) / h)
                transfer = crossed | (ub < pb)
                oray_new = oray.copy()
                if transfer.any():
                    lab = p_ray_new[transfer]
                    bad = lab == oray[transfer]
                    if bad.any():
                        lab = lab.copy()
                        lab[bad] = _cond_redraw(probs, oray[transfer][bad],
                                                ud[transfer][bad])
                    oray_new[transfer] = lab
                    new_pivot_rad = np.where(crossed, -o_new, 0.0)
                    o_new = np.where(transfer, p_new, o_new)
                    p_new = np.where(transfer, new_pivot_rad, p_new)
                    p_ray_new = np.where(transfer, np.searchsorted(cum, ue),
                                         p_ray_new)
                tn = t[sub] + h
                o_rad[sub], o_ray[sub] = o_new, oray_new
                p_rad[sub], p_ray[sub] = p_new, p_ray_new
                t[sub] = tn
                mx = np.maximum(o_new, p_new)
                for j in range(n_tol):
                    hitj = (mx < tols[j]) & np.isnan(times[sub, j])
                    if hitj.any():
                        times[sub[hitj], j] = tn[hitj]
                done = (~np.isnan(times[sub, -1])) | (tn >= budget)
                sub = sub[~done]
        return times

    results = _run_chunks(run, len(ranges), threads)
    return CoalescenceSamples(tols=tols,
                              times=np.concatenate(results),
                              t_max=t_max)


# -- filtered kernel -----------------------------------------------------------

@dataclass
class FilteredKernelEstimate:
    """Endpoint cloud of same-noise replicas at time T."""

    rays: np.ndarray
    radials: np.ndarray
    dispersion: float
    bin_edges: np.ndarray
    histogram: np.ndarray    # (N, bins) counts per (ray, radial bin)
    seed_info: tuple

    @property
    def m(self) -> int:
        return len(self.rays)


def _replica_endpoints(g: StarGraph, x0, dW: np.ndarray, m: int,
                       gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """m conditional re-solves given the edge-noise increments dW (N, K)."""
    N, K = dW.shape
    ray0, r0 = _point_state(g, x0)
    if N == 2:
        p = g.probs[0]
        beta = (1.0 - p) / p
        x_signed = r0 if ray0 == 0 else -r0
        y = beta * x_signed if x_signed >= 0 else x_signed
        for k in range(K):
            y += beta * dW[0, k] if y > 0.0 else dW[1, k]
        x = y / beta if y > 0 else y
        rays = np.full(m, 0 if x > 0 else 1, dtype=np.int64)
        rads = np.full(m, abs(x))
        return rays, rads
    cum = np.cumsum(g.probs_array)
    coins = np.searchsorted(cum, gen.random((m, K)))
    rad = np.full(m, r0)
    rays = (coins[:, 0].copy() if r0 == 0.0 else np.full(m, ray0, dtype=np.int64))
    rows = np.arange(m)
    for k in range(K):
        y = rad + dW[rays, k]
        neg = y < 0.0
        rad = np.abs(y)
        rays = np.where(neg, coins[:, k], rays)
    return rays, rad


def filtered_kernel(g: StarGraph, x0: GraphPoint, T: float, dt: float, m: int,
                    rng: RngStream, bins: int = 20) -> FilteredKernelEstimate:
    """Endpoint cloud of m re-solves sharing one assembled W."""
    if m < 2:
        raise ValueError("need m >= 2 replicas")
    sol = isde_forward(g, x0, T, dt, rng.child(0))
    dW = np.diff(sol.W, axis=1)
    rays, rads = _replica_endpoints(g, x0, dW, m, rng.child(1).generator())
    same = rays[:, None] == rays[None, :]
    dmat = np.where(same, np.abs(rads[:, None] - rads[None, :]),
                    rads[:, None] + rads[None, :])
    hi = max(1e-9, float(rads.max()))
    edges = np.linspace(0.0, hi, bins + 1)
    hist = np.stack([np.histogram(rads[rays == i], bins=edges)[0]
                     for i in range(g.n_rays)])
    return FilteredKernelEstimate(rays=rays, radials=rads,
                                  dispersion=float(dmat.max()),
                                  bin_edges=edges, histogram=hist,
                                  seed_info=(rng.seed, rng.index))


def sample_kernel_dispersions(g: StarGraph, T: float, dts, n_runs: int, m: int,
                              rng: RngStream, x0: GraphPoint | None = None,
                              ) -> dict[float, np.ndarray]:
    """Replica-cloud dispersions per grid resolution (criterion engine)."""
    if x0 is None:
        x0 = g.origin()
    out = {}
    for di, dt in enumerate(dts):
        disps = np.empty(n_runs)
        for run in range(n_runs):
            est = filtered_kernel(g, x0, T, dt, m, rng.child(di).child(run))
            disps[run] = est.dispersion
        out[float(dt)] = disps
    return out
