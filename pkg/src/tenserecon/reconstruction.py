"""Geometric state reconstruction: 30 distance residuals, damped least squares.

Node positions are recovered from the 24 tendon lengths plus the 6 fixed
strut lengths, with the three anchored base nodes pinned to their known
coordinates.  That leaves 27 unknowns (9 free nodes x 3) constrained by 30
equations solved in the least-squares sense.

A caveat worth knowing: at the canonical rest shape the structure is
infinitesimally flexible (one internal flex preserves every member length
to first order), so the Jacobian is rank-deficient exactly at nominal and
the inverse problem is two-valued near it: a deformed shape and its fold
conjugate produce identical member lengths.  Damped steps keep the solver
well behaved there, and frame-to-frame tracking stays on the physical
branch by continuity; a cold start from rest cannot always distinguish the
two branches because the data genuinely does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import OrderingError, SingularGeometryError, TopologyError
from .topology import Topology

COINCIDENCE_LIMIT = 1e-9  # connected nodes closer than this are corrupt input


@dataclass(frozen=True)
class StateFrame:
    """Timestamped 12x3 node positions in meters, with anchored flags."""

    timestamp_ms: int
    coords: np.ndarray
    anchored: frozenset[int] = frozenset()

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3:
            raise TopologyError(f"coords must be Nx3, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise TopologyError("coords contain non-finite values")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True)
class SolveOptions:
    """Termination and damping controls for the least-squares solver.

    residual_tolerance is on the objective 0.5 * ||r||^2 (m^2units);
    step_tolerance is on the proposed update norm (m).  prior_weight > 0
    adds 0.5 * w^2 * ||x - x_initial||^2 to the objective, which bounds the
    data-blind flex direction; use it for noisy tracking, leave 0 for exact
    data.  gauss_newton=True disables damping entirely (pure Gauss-Newton).
    """

    max_iterations: int = 100
    residual_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    damping_init: float = 1e-3
    prior_weight: float = 0.0
    gauss_newton: bool = False

    def __post_init__(self):
        if (self.max_iterations < 0 or self.residual_tolerance < 0
                or self.step_tolerance <= 0 or self.damping_init <= 0
                or self.prior_weight < 0):
            raise ValueError(f"invalid solver options: {self}")


@dataclass(frozen=True)
class SolveResult:
    """Solver output: final state plus convergence diagnostics."""

    state: StateFrame
    converged: bool
    iterations: int
    residual_norm: float
    residuals: np.ndarray = field(repr=False)
    cost_history: tuple[float, ...] = field(default=(), repr=False)
    mirrored: bool = False
    error: str | None = None


def _member_rows(t: Topology):
    """Fixed residual row order: anchor-triangle tendons, struts, remaining tendons."""
    anchored = t.anchored
    anchor_rows = [(td.i, td.j, td.k) for td in t.tendons
                   if td.i in anchored and td.j in anchored]
    other_rows = [(td.i, td.j, td.k) for td in t.tendons
                  if not (td.i in anchored and td.j in anchored)]
    rows = [(i, j, ("tendon", k)) for i, j, k in anchor_rows]
    rows += [(i, j, ("strut", s)) for s, (i, j) in enumerate(t.struts)]
    rows += [(i, j, ("tendon", k)) for i, j, k in other_rows]
    return rows


def residuals(coords: np.ndarray, tendon_lengths: np.ndarray, t: Topology) -> np.ndarray:
    """Signed distance residuals |Ni - Nj| - target, shape (30,).

    Row order: the anchored-triangle tendon equations first, then the six
    strut equations, then the remaining 21 tendon equations in tendon-index
    order.
    """
    coords = np.asarray(coords, dtype=float)
    lengths = np.asarray(tendon_lengths, dtype=float)
    if lengths.shape != (len(t.tendons),):
        raise TopologyError(f"expected {len(t.tendons)} tendon lengths, got {lengths.shape}")
    if np.any(~np.isfinite(lengths)) or np.any(lengths <= 0):
        raise TopologyError("tendon target lengths must be finite and > 0")
    out = np.empty(len(t.tendons) + len(t.struts))
    for n, (i, j, (kind, idx)) in enumerate(_member_rows(t)):
        target = t.strut_length if kind == "strut" else lengths[idx]
        out[n] = np.linalg.norm(coords[i] - coords[j]) - target
    return out


def jacobian(coords: np.ndarray, t: Topology) -> np.ndarray:
    """Analytic residual Jacobian w.r.t. free-node coordinates, shape (30, 27).

    d|Ni - Nj|/dNi = (Ni - Nj)/|Ni - Nj|; anchored nodes contribute no
    columns.  Free-node columns are grouped by ascending node id, xyz within.
    """
    coords = np.asarray(coords, dtype=float)
    free = [n for n in range(len(coords)) if n not in t.anchored]
    col = {n: 3 * k for k, n in enumerate(free)}
    rows = _member_rows(t)
    jac = np.zeros((len(rows), 3 * len(free)))
    for n, (i, j, _) in enumerate(rows):
        e = coords[i] - coords[j]
        d = np.linalg.norm(e)
        if d < COINCIDENCE_LIMIT:
            raise SingularGeometryError(
                f"nodes {i} and {j} coincide (distance {d:.2e} m)")
        u = e / d
        if i in col:
            jac[n, col[i]:col[i] + 3] = u
        if j in col:
            jac[n, col[j]:col[j] + 3] = -u
    return jac


def _assemble(t: Topology, initial_coords: np.ndarray, free: list[int], x: np.ndarray):
    coords = initial_coords.copy()
    coords[free] = x.reshape(-1, 3)
    return coords


def solve(initial: StateFrame, tendon_lengths: np.ndarray, t: Topology,
          opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Levenberg-damped Gauss-Newton for the 27 free coordinates.

    Accepted steps never increase the objective; the damping parameter is
    multiplied by 10 on a rejected step and divided by 10 on acceptance.
    Convergence means a residual-tolerance or step-tolerance stop; hitting
    the iteration cap reports converged=False.  Anchored coordinates are
    never touched.  A final state whose free-node centroid sits below the
    anchor plane is flagged mirrored (the structure lives above z = 0).
    """
    coords0 = np.asarray(initial.coords, dtype=float)
    anchor_ref = t.nominal_coords[sorted(t.anchored)]
    if not np.array_equal(coords0[sorted(t.anchored)], anchor_ref):
        raise TopologyError("initial state does not satisfy anchor constraints")

    free = [n for n in range(len(coords0)) if n not in t.anchored]
    x = coords0[free].reshape(-1).copy()
    x_prior = x.copy()
    w2 = opts.prior_weight ** 2

    def cost_of(res: np.ndarray, xv: np.ndarray) -> float:
        c = 0.5 * float(res @ res)
        if w2 > 0.0:
            d = xv - x_prior
            c += 0.5 * w2 * float(d @ d)
        return c

    coords = _assemble(t, coords0, free, x)
    res = residuals(coords, tendon_lengths, t)
    if not np.all(np.isfinite(res)):
        raise SingularGeometryError("non-finite residual at initial state")
    cost = cost_of(res, x)
    history = [cost]
    lam = opts.damping_init
    n_unknowns = len(x)
    converged = cost < opts.residual_tolerance  # already at tolerance: fixed point
    iterations = 0

    for iterations in range(1, (0 if converged else opts.max_iterations) + 1):
        jac_m = jacobian(coords, t)
        grad = jac_m.T @ res
        normal = jac_m.T @ jac_m
        if w2 > 0.0:
            grad = grad + w2 * (x - x_prior)
            normal = normal + w2 * np.eye(n_unknowns)

        accepted = False
        while not accepted:
            damp = 0.0 if opts.gauss_newton else lam
            try:
                step = np.linalg.solve(normal + damp * np.eye(n_unknowns), -grad)
            except np.linalg.LinAlgError:
                if opts.gauss_newton:
                    raise SingularGeometryError("singular normal matrix (pure Gauss-Newton)")
                lam *= 10.0
                continue
            if np.linalg.norm(step) < opts.step_tolerance:
                converged = True
                break
            x_new = x + step
            coords_new = _assemble(t, coords0, free, x_new)
            res_new = residuals(coords_new, tendon_lengths, t)
            cost_new = cost_of(res_new, x_new) if np.all(np.isfinite(res_new)) else np.inf
            if cost_new < cost:
                x, coords, res, cost = x_new, coords_new, res_new, cost_new
                history.append(cost)
                lam = max(lam / 10.0, 1e-15)
                accepted = True
            elif opts.gauss_newton:
                break  # undamped step rejected; nothing else to try
            else:
                lam *= 10.0
                if lam > 1e12:
                    break
        if converged:
            break
        if not accepted and not converged:
            break  # damping exhausted or pure-GN stall
        if cost < opts.residual_tolerance:
            converged = True
            break

    mirrored = bool(np.mean(coords[free, 2]) < 0.0)
    state = StateFrame(timestamp_ms=initial.timestamp_ms, coords=coords,
                       anchored=t.anchored)
    return SolveResult(
        state=state, converged=converged and not mirrored,
        iterations=iterations, residual_norm=float(np.linalg.norm(res)),
        residuals=res, cost_history=tuple(history), mirrored=mirrored,
    )


def nominal_state(t: Topology, timestamp_ms: int = 0) -> StateFrame:
    return StateFrame(timestamp_ms=timestamp_ms, coords=t.nominal_coords.copy(),
                      anchored=t.anchored)


class Tracker:
    """Frame-to-frame tracking with warm starts.

    Frame 0 solves from the topology's nominal coordinates; every later
    frame starts from the previous good solution.  Solver failures are
    emitted in-stream (converged=False, error set) and tracking continues
    from the last good state.  ``drop_to_latest`` implements the
    latest-wins backpressure policy: superseded frames are counted in
    ``skipped`` rather than processed.
    """

    def __init__(self, t: Topology, opts: SolveOptions = SolveOptions()):
        self.topology = t
        self.opts = opts
        self.skipped = 0
        self._last_good = nominal_state(t)
        self._last_ts: int | None = None

    def drop_to_latest(self, pending: list) -> list:
        """Keep only the newest pending frame; count the rest as skipped."""
        if len(pending) > 1:
            self.skipped += len(pending) - 1
            return [pending[-1]]
        return pending

    def process(self, timestamp_ms: int, tendon_lengths: np.ndarray) -> SolveResult:
        if self._last_ts is not None and timestamp_ms <= self._last_ts:
            raise OrderingError(
                f"timestamp {timestamp_ms} not after previous {self._last_ts}")
        self._last_ts = timestamp_ms
        warm = replace(self._last_good, timestamp_ms=timestamp_ms)
        try:
            result = solve(warm, tendon_lengths, self.topology, self.opts)
            if result.mirrored:
                # one retry from the last good state; keep it if still mirrored
                retry = solve(warm, tendon_lengths, self.topology,
                              replace(self.opts, damping_init=self.opts.damping_init * 100))
                result = retry if not retry.mirrored else replace(
                    result, state=warm, converged=False)
        except (SingularGeometryError, TopologyError) as exc:
            return SolveResult(state=warm, converged=False, iterations=0,
                               residual_norm=float("nan"),
                               residuals=np.full(len(self.topology.tendons)
                                                 + len(self.topology.struts), np.nan),
                               error=str(exc))
        if result.converged:
            self._last_good = result.state
        return result


def track(length_frames, t: Topology, opts: SolveOptions = SolveOptions()):
    """Run the tracker over an iterable of (timestamp_ms, 24 lengths) pairs.

    Yields one SolveResult per consumed frame, in order.
    """
    tracker = Tracker(t, opts)
    for timestamp_ms, lengths in length_frames:
        yield tracker.process(int(timestamp_ms), np.asarray(lengths, dtype=float))
