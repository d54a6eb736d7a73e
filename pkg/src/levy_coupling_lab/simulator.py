"""Thinning simulation of the jump process and of the coupled pair.

Jumps with ``|z| >= eps_sim`` are proposed at the envelope rate
``Lambda = c^* nu(|z| >= eps_sim)``; smaller compensated jumps are replaced by
the compensator drift, integrated with Euler steps of size ``drift_step``.

All randomness comes from :class:`CounterRNG` addressed by
``(path index, event index, slot)``; slot 0 gives the waiting time, slot 1 the
jump radius, slot 2 the thinning/branch uniform and the remaining slots the
jump direction.  Paths are advanced in lockstep chunks and results do not
depend on the chunk size or on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import integrate

from .kernels import KernelError, NEGATIVITY_SLACK, _branch_densities, _norm
from .rng import CounterRNG

BRANCH_NAMES = ("1", "2", "3", "4", "5", "phantom")


class SimulationBudgetError(RuntimeError):
    """The expected number of proposed events is beyond the configured budget."""


@dataclass(frozen=True)
class SimParams:
    eps_sim: float = 1e-2
    drift_step: float = 1e-3
    t_end: float = 1.0
    kappa: float = 1.0
    master_seed: int = 0
    stream: int = 0
    max_events_per_path: float = 1e6
    chunk_size: int = 4096

    def __post_init__(self):
        if not 0 < self.eps_sim < 1:
            raise ValueError("eps_sim must lie in (0, 1)")
        if self.drift_step <= 0:
            raise ValueError("drift_step must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")


def event_rate(spec, field, eps_sim):
    """Envelope rate ``c^* nu(|z| >= eps_sim)``."""
    if eps_sim >= spec.radius:
        raise ValueError("eps_sim must be below the support radius of the measure")
    return field.c_upper * spec.radial_moment(0.0, eps_sim, math.inf)


def bias_proxy(spec, field, eps_sim):
    """``c^* ∫_{|z| < eps_sim} |z|^2 q(z) dz``, the size of the discarded small jumps."""
    return field.c_upper * spec.small_ball_second_moment(eps_sim)


# -- compensator drift ------------------------------------------------------------


@dataclass
class CompensatorDrift:
    """``b(x) = -∫_{eps <= |z| <= 1} z c(x, z) q(z) dz`` as a callable on batches.

    With ``c(x, z) = c(x, |z|)`` the integral factorises into the direction
    mean of the measure times a radial integral.  For separable fields the
    radial integral is ``c(x) ∫ rho^-alpha``; for tables it is linear in the
    table values and hence exactly piecewise linear in ``x1`` between nodes.
    """

    spec: object
    field: object
    eps_sim: float
    _vec: np.ndarray = dc_field(init=False, repr=False)
    _nodes: tuple = dc_field(init=False, repr=False, default=None)
    _const: float = dc_field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        spec, fld = self.spec, self.field
        self._vec = -spec.amplitude * spec.direction_mean
        hi = min(1.0, spec.radius)
        lo = self.eps_sim
        a = spec.alpha
        if hi <= lo:
            self._vec = np.zeros(spec.dimension)
            return
        if fld.z_independent:
            self._const = (hi ** (1 - a) - lo ** (1 - a)) / (1 - a) if a != 1 else math.log(hi / lo)
            return
        xs, rs, _ = fld._table
        pts = [r for r in rs if lo < r < hi]
        vals = []
        for x1 in xs:
            xx = np.zeros((1, spec.dimension))
            xx[0, 0] = x1

            def g(rho, xx=xx):
                z = np.zeros((1, spec.dimension))
                z[0, 0] = rho
                return rho ** (-a) * float(fld._value(xx, z)[0])

            v, _ = integrate.quad(g, lo, hi, points=pts or None, limit=200, epsabs=0, epsrel=1e-12)
            vals.append(v)
        self._nodes = (np.asarray(xs), np.asarray(vals))

    @property
    def is_zero(self):
        return not np.any(self._vec)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.is_zero:
            return np.zeros_like(x)
        if self._nodes is None:
            c = np.broadcast_to(self.field._value(x, np.zeros_like(x)), x.shape[:1])
            return (c * self._const)[:, None] * self._vec
        xs, vals = self._nodes
        return np.interp(x[:, 0], xs, vals)[:, None] * self._vec


def compensator_drift(spec, field, x, eps_sim):
    """Drift vector at x (or an (n, d) array of drifts for a batch of points)."""
    if not 0 < eps_sim < 1:
        raise ValueError("eps_sim must lie in (0, 1)")
    xa = np.asarray(x, dtype=float)
    out = CompensatorDrift(spec, field, eps_sim)(xa.reshape(-1, spec.dimension))
    return out[0] if xa.ndim <= 1 else out


def _advance(drift, x, dt, h):
    """Euler integration of the drift over per-path times ``dt``, substeps at most h."""
    if drift.is_zero or x.size == 0:
        return x
    n_sub = np.maximum(np.ceil(dt / h), 1).astype(np.int64)
    sub = dt / n_sub
    x = x.copy()
    for s in range(int(n_sub.max())):
        live = n_sub > s
        x[live] += drift(x[live]) * sub[live, None]
    return x


# -- results ----------------------------------------------------------------------


@dataclass
class Event:
    time: float
    branch: str
    z: np.ndarray
    x_pre: np.ndarray
    y_pre: np.ndarray | None
    x_post: np.ndarray
    y_post: np.ndarray | None


@dataclass
class SinglePath:
    endpoint: np.ndarray
    events: list
    stream_id: int
    n_events: int


@dataclass
class CoupledPath:
    events: list
    coupling_time: float  # inf if not coupled by t_end
    endpoint: tuple
    stream_id: int
    n_events: int

    @property
    def coupled(self):
        return math.isfinite(self.coupling_time)


@dataclass
class BatchResult:
    """States at the grid times for paths ``first_path .. first_path + n - 1``.

    ``x`` (and ``y`` for coupled runs) has shape ``(len(t_grid), n, d)``.  For
    coupled runs with ``follow_merged=False`` states after the coupling time
    are NaN.
    """

    t_grid: np.ndarray
    x: np.ndarray
    n_events: np.ndarray
    rate: float
    bias: float
    y: np.ndarray | None = None
    coupling_time: np.ndarray | None = None


# -- the lockstep engine ------------------------------------------------------------


def _check_budget(spec, field, params, t_end):
    lam = event_rate(spec, field, params.eps_sim)
    expected = lam * t_end
    if expected > params.max_events_per_path:
        raise SimulationBudgetError(
            f"expected {expected:.3g} proposals per path exceeds the budget "
            f"{params.max_events_per_path:.3g}; raise eps_sim (now {params.eps_sim:g})"
        )
    return lam


def _grid(params, t_grid):
    if t_grid is None:
        return np.array([float(params.t_end)])
    g = np.asarray(t_grid, dtype=float).reshape(-1)
    if g.size == 0 or np.any(g < 0) or np.any(np.diff(g) <= 0):
        raise ValueError("t_grid must be nonempty, nonnegative and strictly increasing")
    return g


def _run_chunk(spec, field, params, drift, lam, paths, x0, y0, grid, follow_merged, log):
    n = paths.size
    d = spec.dimension
    h = params.drift_step
    eps = params.eps_sim
    cu = field.c_upper
    rng = CounterRNG(params.master_seed, params.stream)
    coupled = y0 is not None
    n_slots = 3 + spec.n_direction_uniforms()
    t_end = grid[-1]
    ng = grid.size

    x = np.tile(x0, (n, 1))
    y = np.tile(y0, (n, 1)) if coupled else None
    t = np.zeros(n)
    k = np.zeros(n, dtype=np.int64)
    gi = np.zeros(n, dtype=np.int64)
    rec_x = np.full((ng, n, d), np.nan)
    rec_y = np.full((ng, n, d), np.nan) if coupled else None
    tau = np.full(n, np.inf)
    merged = np.zeros(n, dtype=bool)
    if coupled and np.array_equal(x0, y0):
        tau[:] = 0.0
        merged[:] = True
    events = []
    active = np.ones(n, dtype=bool)

    def move(j, dt):
        x[j] = _advance(drift, x[j], dt, h)
        if coupled:
            free = j[~merged[j]]
            y[free] = _advance(drift, y[free], dt[~merged[j]], h)
            y[j[merged[j]]] = x[j[merged[j]]]

    while True:
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        u = rng.uniforms(paths[idx], k[idx], n_slots)
        with np.errstate(divide="ignore"):
            t_next = t[idx] + (-np.log1p(-u[:, 0]) / lam if lam > 0 else np.inf)
        stop = np.minimum(t_next, t_end)
        # record grid states that fall before this event
        while True:
            gpos = np.minimum(gi[idx], ng - 1)
            due = (gi[idx] < ng) & (grid[gpos] <= stop)
            if not np.any(due):
                break
            j = idx[due]
            g = grid[gpos[due]]
            move(j, g - t[j])
            t[j] = g
            rec_x[gi[j], j] = x[j]
            if coupled:
                rec_y[gi[j], j] = y[j]
            gi[j] += 1
        fin = t_next > t_end
        active[idx[fin]] = False
        live = ~fin
        j = idx[live]
        if j.size == 0:
            continue
        u = u[live]
        move(j, t_next[live] - t[j])
        t[j] = t_next[live]
        k[j] += 1
        z = spec.sample_jumps(u[:, 1], u[:, 3:], eps)
        xp = x[j].copy()
        yp = y[j].copy() if coupled else None
        if not coupled:
            acc = u[:, 2] * cu < field._value(xp, z)
            x[j[acc]] += z[acc]
            branch = np.where(acc, 2, 5)
        else:
            branch = _couple_step(spec, field, params, x, y, j, z, u[:, 2], merged, tau, t)
            if not follow_merged:
                active[j[merged[j]]] = False
        if log:
            for i, p in enumerate(j):
                name = ("jump" if branch[i] == 2 else "phantom") if not coupled else BRANCH_NAMES[branch[i]]
                events.append((int(p), Event(float(t[p]), name, z[i].copy(), xp[i], None if yp is None else yp[i],
                                             x[p].copy(), None if y is None else y[p].copy())))
    return rec_x, rec_y, tau, k, events


def _couple_step(spec, field, params, x, y, j, z, w, merged, tau, t):
    """Apply one proposed jump z to the pairs ``j``; returns the chosen branch (0..5)."""
    branch = np.full(j.size, 5)
    m = merged[j]
    if np.any(m):
        jm = j[m]
        acc = w[m] * field.c_upper < field._value(x[jm], z[m])
        x[jm[acc]] += z[m][acc]
        y[jm] = x[jm]
        branch[np.nonzero(m)[0][acc]] = 2
    f = ~m
    if not np.any(f):
        return branch
    jf = j[f]
    zf = z[f]
    xs, ys = x[jf], y[jf]
    dens = _branch_densities(spec, field, xs, ys, zf, params.kappa)
    env = field.c_upper * spec._q(zf)
    if np.any(dens[2] < -NEGATIVITY_SLACK * np.maximum(env, 1.0)):
        raise KernelError("synchronous branch density is negative")
    dens[2] = np.maximum(dens[2], 0.0)
    cum = np.cumsum(dens, axis=0) / env
    if np.any(cum[-1] > 1 + 1e-12):
        raise KernelError("branch intensities exceed the envelope c^* q(z)")
    b = np.sum(w[f][None, :] >= cum, axis=0)
    diff = xs - ys
    r = _norm(diff)
    v = diff * np.minimum(1.0, params.kappa / np.where(r > 0, r, 1.0))[:, None]
    dx = np.where((b <= 3)[:, None], zf, 0.0)
    dy = np.select([(b == 0)[:, None], (b == 1)[:, None], ((b == 2) | (b == 4))[:, None]],
                   [zf + v, zf - v, zf], 0.0)
    x[jf] = xs + dx
    y[jf] = ys + dy
    meet = (b == 0) & (r <= params.kappa)
    if np.any(meet):
        jm = jf[meet]
        y[jm] = x[jm]
        merged[jm] = True
        tau[jm] = t[jm]
    branch[np.nonzero(f)[0]] = b
    return branch


def _run(spec, field, params, x0, y0, n_paths, t_grid, workers, first_path, follow_merged, log):
    if spec.dimension != np.size(x0) or (y0 is not None and spec.dimension != np.size(y0)):
        raise ValueError("starting point has the wrong dimension")
    if field.dimension != spec.dimension:
        raise ValueError("dimension mismatch between measure and coefficient")
    grid = _grid(params, t_grid)
    lam = _check_budget(spec, field, params, grid[-1])
    drift = CompensatorDrift(spec, field, params.eps_sim)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    y0 = None if y0 is None else np.asarray(y0, dtype=float).reshape(-1)
    ids = np.arange(first_path, first_path + n_paths, dtype=np.uint64)
    chunks = [ids[i : i + params.chunk_size] for i in range(0, n_paths, params.chunk_size)]

    def work(p):
        return _run_chunk(spec, field, params, drift, lam, p, x0, y0, grid, follow_merged, log)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(p) for p in chunks]
    xs = np.concatenate([p[0] for p in parts], axis=1) if parts else np.empty((grid.size, 0, spec.dimension))
    ys = None
    taus = None
    if y0 is not None:
        ys = np.concatenate([p[1] for p in parts], axis=1) if parts else xs.copy()
        taus = np.concatenate([p[2] for p in parts]) if parts else np.empty(0)
    nev = np.concatenate([p[3] for p in parts]) if parts else np.empty(0, dtype=np.int64)
    events = [e for p in parts for e in p[4]]
    res = BatchResult(grid, xs, nev, lam, bias_proxy(spec, field, params.eps_sim), ys, taus)
    return res, events


def simulate_single_batch(spec, field, x0, params, n_paths, t_grid=None, workers=1, first_path=0):
    """Endpoints (at the grid times) of ``n_paths`` independent trajectories."""
    res, _ = _run(spec, field, params, x0, None, n_paths, t_grid, workers, first_path, True, False)
    return res


def simulate_coupled_batch(spec, field, x0, y0, params, n_paths, t_grid=None, workers=1, first_path=0,
                           follow_merged=True):
    """Coupled pairs at the grid times plus their coupling times."""
    res, _ = _run(spec, field, params, x0, y0, n_paths, t_grid, workers, first_path, follow_merged, False)
    return res


def simulate_single(spec, field, x0, params, path=0, log_events=False):
    """One trajectory on ``[0, t_end]``; ``path`` selects its random stream."""
    res, ev = _run(spec, field, params, x0, None, 1, None, 1, path, True, log_events)
    return SinglePath(res.x[-1, 0].copy(), [e for _, e in ev], path, int(res.n_events[0]))


def simulate_coupled(spec, field, x0, y0, params, path=0, log_events=False):
    """One coupled trajectory on ``[0, t_end]`` with its coupling time."""
    res, ev = _run(spec, field, params, x0, y0, 1, None, 1, path, True, log_events)
    return CoupledPath([e for _, e in ev], float(res.coupling_time[0]),
                       (res.x[-1, 0].copy(), res.y[-1, 0].copy()), path, int(res.n_events[0]))


def event_log_rows(path):
    """Flatten an event log into CSV-ready rows ``time, branch, z..., x..., y...``."""
    rows = []
    for e in path.events:
        y = e.y_post if e.y_post is not None else []
        rows.append([e.time, e.branch, *e.z, *e.x_post, *y])
    return rows
