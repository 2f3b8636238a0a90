"""Generalized conditional gradient iteration over an atomic set.

Each step works at the current iterate x: take z = -gradient(x), ask the
(mask-restricted) linear maximization oracle for the best atom and its
score sigma, solve the scalar subproblem xi = xi_step(sigma), and move to
the convex combination x <- (1 - theta) x + theta * xi * atom under a
pre-set schedule theta. A primal-form duality gap is evaluated every
iteration; optional gap-safe screening shrinks the active mask as atoms
are certified out of the optimal support.

The conic coefficient ledger is kept as raw weights plus one global decay
multiplier, so the (1 - theta) rescale of every step is O(1).
"""

import hashlib
import math
import time

import numpy as np

from . import atoms as _atoms
from . import screening as _screening
from .errors import (
    ContractViolationError,
    DivergenceError,
    UnboundedConjugateError,
    UnboundedStepError,
)

_SCHEDULES = ("2t1", "4t2")
_SCREEN_MODES = ("prune-lmo", "report-only")


def theta_schedule(schedule, t):
    """Step size at iteration t (1-based). "2t1" is 2/(t+1), "4t2" is
    4/(t+2) capped at 1 so the first steps stay convex combinations."""
    if schedule == "2t1":
        return 2.0 / (t + 1.0)
    if schedule == "4t2":
        return min(1.0, 4.0 / (t + 2.0))
    raise ContractViolationError(f"unknown step schedule {schedule!r}")


class SolverConfig:
    """Knobs for a single run."""

    def __init__(
        self,
        max_iters=1000,
        gap_tolerance=0.0,
        step_schedule="2t1",
        screening_enabled=False,
        screening_mode="prune-lmo",
        screen_every=1,
        screen_full_recheck=False,
        trace_every=1,
        keep_snapshots=False,
        divergence_limit=1e12,
    ):
        if max_iters != int(max_iters) or max_iters < 1:
            raise ContractViolationError("max_iters must be an integer >= 1")
        if math.isnan(gap_tolerance) or gap_tolerance < 0:
            raise ContractViolationError("gap_tolerance must be >= 0")
        if step_schedule not in _SCHEDULES:
            raise ContractViolationError(
                f"step_schedule must be one of {_SCHEDULES}, got {step_schedule!r}"
            )
        if screening_mode not in _SCREEN_MODES:
            raise ContractViolationError(
                f"screening_mode must be one of {_SCREEN_MODES}, got {screening_mode!r}"
            )
        if screen_every != int(screen_every) or screen_every < 1:
            raise ContractViolationError("screen_every must be an integer >= 1")
        if trace_every != int(trace_every) or trace_every < 1:
            raise ContractViolationError("trace_every must be an integer >= 1")
        if not divergence_limit > 0:
            raise ContractViolationError("divergence_limit must be positive")
        self.max_iters = int(max_iters)
        self.gap_tolerance = float(gap_tolerance)
        self.step_schedule = step_schedule
        self.screening_enabled = bool(screening_enabled)
        self.screening_mode = screening_mode
        self.screen_every = int(screen_every)
        self.screen_full_recheck = bool(screen_full_recheck)
        self.trace_every = int(trace_every)
        self.keep_snapshots = bool(keep_snapshots)
        self.divergence_limit = float(divergence_limit)


class TraceRecord:
    """One monitored iteration; attribute names match the CSV columns."""

    __slots__ = (
        "t",
        "objective",
        "gap",
        "min_gap",
        "sigma",
        "active_atoms",
        "nonzeros",
        "xi",
        "elapsed_s",
    )

    def __init__(self, t, objective, gap, min_gap, sigma, active_atoms, nonzeros, xi, elapsed_s):
        self.t = t
        self.objective = objective
        self.gap = gap
        self.min_gap = min_gap
        self.sigma = sigma
        self.active_atoms = active_atoms
        self.nonzeros = nonzeros
        self.xi = xi
        self.elapsed_s = elapsed_s

    def __repr__(self):
        return (
            f"TraceRecord(t={self.t}, objective={self.objective:.6g}, "
            f"gap={self.gap:.6g}, min_gap={self.min_gap:.6g}, "
            f"active={self.active_atoms}, nonzeros={self.nonzeros})"
        )


class Snapshot:
    """Iterate-level data kept when config.keep_snapshots is on."""

    __slots__ = ("t", "x", "grad", "active_ids")

    def __init__(self, t, x, grad, active_ids):
        self.t = t
        self.x = x
        self.grad = grad
        self.active_ids = active_ids


class SolverState:
    """Mutable run state; t is the 1-based index of the current iterate."""

    def __init__(self, atomic_set, x0=None):
        d = atomic_set.dimension
        if x0 is None:
            x = np.zeros(d)
        else:
            x = np.array(x0, dtype=float)
            if x.shape != (d,):
                raise ContractViolationError(f"x0 must have shape ({d},)")
            if not np.all(np.isfinite(x)):
                raise ContractViolationError("x0 must be finite")
        self.x = x
        self.t = 1
        self.mask = atomic_set.full_mask()
        self.min_gap = math.inf
        self.trace = []
        self.screen_events = []
        self.snapshots = []
        # diagnostics from the most recent gap evaluation
        self.last_atom_id = None
        self.last_sigma = None
        self.last_xi = None
        self.last_gap = None
        self._aset = atomic_set
        self._ledger = {}
        self._ledger_scale = 1.0
        if np.any(x):
            # a nonzero start needs a conic witness so the ledger invariant
            # x == sum(coeffs * atoms) holds from the first record on
            _, witness = atomic_set.gauge_decomposition(x)
            self._ledger = {
                int(i): float(w) for i, w in enumerate(witness) if w > 0.0
            }
        self._smoothness = None
        self._started = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self._started

    @property
    def coeffs(self):
        """Conic ledger as {atom_id: weight}, zero entries dropped."""
        scale = self._ledger_scale
        return {i: scale * w for i, w in self._ledger.items() if w > 0.0}

    @property
    def kappa_bound(self):
        """Upper bound on the gauge of x: the ledger sum, tightened to the
        exact closed form for the signed basis."""
        if self._aset.kind == _atoms.SIGNED_BASIS:
            return float(np.abs(self.x).sum()) / self._aset.scale
        return self._ledger_scale * math.fsum(self._ledger.values())

    def reconstruct(self):
        """Rebuild x from the ledger (test hook for the state invariant)."""
        out = np.zeros(self._aset.dimension)
        for atom_id, weight in self.coeffs.items():
            out += weight * self._aset.atom_vector(atom_id)
        return out

    def _ledger_decay(self, theta):
        if theta == 1.0:
            self._ledger.clear()
            self._ledger_scale = 1.0
            return
        self._ledger_scale *= 1.0 - theta
        if self._ledger_scale < 1e-250:
            for key in self._ledger:
                self._ledger[key] *= self._ledger_scale
            self._ledger_scale = 1.0

    def _ledger_add(self, atom_id, amount):
        if amount != 0.0:
            raw = amount / self._ledger_scale
            self._ledger[atom_id] = self._ledger.get(atom_id, 0.0) + raw


class RunResult:
    """Final state plus everything recorded along the way.

    Iterating unpacks to (state, trace) for callers that only want those.
    """

    def __init__(self, loss, penalty, atomic_set, config, state):
        self.loss = loss
        self.penalty = penalty
        self.atomic_set = atomic_set
        self.config = config
        self.state = state
        self.trace = state.trace
        self.screen_events = state.screen_events
        self.snapshots = state.snapshots
        self.fingerprint = problem_fingerprint(loss, penalty, atomic_set)

    def __iter__(self):
        return iter((self.state, self.trace))


def problem_fingerprint(loss, penalty, atomic_set):
    """Stable hash of the problem triplet, for pairing runs with references."""
    digest = hashlib.sha256()
    digest.update(loss.fingerprint_bytes())
    digest.update(penalty.fingerprint_bytes())
    digest.update(atomic_set.fingerprint_bytes())
    return digest.hexdigest()


def gap_primal(state, s, grad, h_x, h_s):
    """Duality gap in primal form: -grad'(s - x) + h(x) - h(s).

    s must be the exact minimizer produced by lmo + xi_step; h_x may be the
    +inf sentinel when the iterate left the penalty domain.
    """
    if math.isinf(h_x):
        return math.inf
    return float(-(grad @ (s - state.x)) + h_x - h_s)


def _record(state, config, t, objective, gap, sigma, xi, force=False):
    traced = force or t == 1 or t % config.trace_every == 0
    if not traced:
        return False
    nonzeros = len(_screening.support_of(state.coeffs))
    state.trace.append(
        TraceRecord(
            t=t,
            objective=objective,
            gap=gap,
            min_gap=state.min_gap,
            sigma=sigma,
            active_atoms=state.mask.active_count,
            nonzeros=nonzeros,
            xi=xi,
            elapsed_s=state.elapsed,
        )
    )
    return True


def _snapshot(state, t, grad):
    ids = frozenset(int(i) for i in state.mask.active_ids())
    state.snapshots.append(Snapshot(t, state.x.copy(), grad, ids))


def _abort(state, loss, penalty, atomic_set, config, t, exc, sigma, xi, gap):
    """Append a diagnostic row for the failing iteration, then raise."""
    try:
        objective = loss.value(state.x) + penalty.value(state.kappa_bound)
    except (ContractViolationError, OverflowError):
        objective = math.nan
    _record(state, config, t, objective, gap, sigma, xi, force=True)
    exc.t = t
    exc.result = RunResult(loss, penalty, atomic_set, config, state)
    raise exc


def step(state, loss, penalty, atomic_set, config):
    """Advance one iteration in place; returns the same state."""
    t = state.t
    x = state.x
    grad = loss.gradient(x)
    z = -grad
    atom_id, sigma = atomic_set.lmo(z, state.mask)
    if not math.isfinite(sigma):
        _abort(
            state, loss, penalty, atomic_set, config, t,
            DivergenceError(f"support value {sigma!r} at iteration {t}"),
            sigma=sigma, xi=math.inf, gap=math.inf,
        )
    try:
        xi = penalty.xi_step(sigma)
    except UnboundedStepError as err:
        _abort(
            state, loss, penalty, atomic_set, config, t,
            err, sigma=sigma, xi=math.inf, gap=math.inf,
        )
    s = xi * atomic_set.atom_vector(atom_id)
    h_x = penalty.value(state.kappa_bound)
    gap = gap_primal(state, s, grad, h_x, penalty.value(xi))
    if math.isnan(gap):
        _abort(
            state, loss, penalty, atomic_set, config, t,
            DivergenceError(f"gap is NaN at iteration {t}"),
            sigma=sigma, xi=xi, gap=math.nan,
        )
    state.last_atom_id = atom_id
    state.last_sigma = sigma
    state.last_xi = xi
    state.last_gap = gap
    if gap < state.min_gap:
        state.min_gap = gap

    if config.screening_enabled and t % config.screen_every == 0:
        if state._smoothness is None:
            sym = atomic_set if atomic_set.symmetric else atomic_set.symmetrize()
            state._smoothness = loss.smoothness_wrt(sym)
        sigma_rule, gap_rule = sigma, gap
        if config.screen_full_recheck:
            sigma_rule = atomic_set.support_value(z)
            try:
                gap_rule = (
                    penalty.conjugate(max(sigma_rule, 0.0)) - float(z @ x) + h_x
                )
            except UnboundedConjugateError:
                gap_rule = math.inf
        new_mask, report = _screening.apply_rule(
            state.mask, atomic_set, grad, sigma_rule, gap_rule,
            state._smoothness, t=t,
        )
        if report.removed_ids:
            state.screen_events.append(report)
            if config.screening_mode == "prune-lmo":
                state.mask = new_mask

    recorded = _record(
        state, config, t,
        objective=loss.value(x) + h_x,
        gap=gap, sigma=sigma, xi=xi,
    )
    if recorded and config.keep_snapshots:
        _snapshot(state, t, grad)

    theta = theta_schedule(config.step_schedule, t)
    state.x = (1.0 - theta) * x + theta * s
    state._ledger_decay(theta)
    state._ledger_add(atom_id, theta * xi)
    state.t = t + 1

    new_inf = float(np.max(np.abs(state.x))) if state.x.size else 0.0
    if not math.isfinite(new_inf) or new_inf > config.divergence_limit:
        _abort(
            state, loss, penalty, atomic_set, config, t,
            DivergenceError(
                f"iterate magnitude {new_inf!r} exceeded "
                f"{config.divergence_limit:g} at iteration {t}"
            ),
            sigma=sigma, xi=xi, gap=gap,
        )
    return state


def _final_diagnostic(state, loss, penalty, atomic_set, config):
    """Evaluate the terminal iterate and append one last trace row."""
    t = state.t
    grad = loss.gradient(state.x)
    atom_id, sigma = atomic_set.lmo(-grad, state.mask)
    h_x = penalty.value(state.kappa_bound)
    xi = math.inf
    gap = math.inf
    if math.isfinite(sigma):
        try:
            xi = penalty.xi_step(sigma)
            s = xi * atomic_set.atom_vector(atom_id)
            gap = gap_primal(state, s, grad, h_x, penalty.value(xi))
        except UnboundedStepError:
            pass
    state.last_atom_id = atom_id
    state.last_sigma = sigma
    state.last_xi = xi
    state.last_gap = gap
    if gap < state.min_gap:
        state.min_gap = gap
    _record(
        state, config, t,
        objective=loss.value(state.x) + h_x,
        gap=gap, sigma=sigma, xi=xi,
        force=True,
    )
    if config.keep_snapshots:
        _snapshot(state, t, grad)


def run(loss, penalty, atomic_set, config, x0=None):
    """Iterate until max_iters or min_gap <= gap_tolerance.

    The trace gets a row at t = 1, every trace_every-th iteration, and one
    final row for the terminal iterate (an extra gap evaluation, no update).
    Unbounded-step and divergence errors carry .t and a partial .result.
    """
    state = SolverState(atomic_set, x0=x0)
    while state.t <= config.max_iters:
        step(state, loss, penalty, atomic_set, config)
        if state.min_gap <= config.gap_tolerance:
            break
    _final_diagnostic(state, loss, penalty, atomic_set, config)
    return RunResult(loss, penalty, atomic_set, config, state)
