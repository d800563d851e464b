"""Nonlinear solution methods and the shared machinery they build on.

The methods split into fixed-point root finders (Picard, Newton, two Broyden
variants), first-order optimizers on the least-squares objective (Adam,
Adagrad, BFGS, L-BFGS) and trust-region hybrids (Powell dogleg and a
truncated-CG method). All of them drive the same reduced residual from
:mod:`czbench.fem` and report through a common :class:`SolveReport`.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .linalg import GmresPolicy, condition_number, gmres_solve, lu_solve

METHODS = (
    "picard",
    "newton",
    "broyden",
    "broyden_inv",
    "adam",
    "adagrad",
    "bfgs",
    "lbfgs",
    "dogleg",
    "steihaug",
)

# Terminal statuses.
CONVERGED = "converged"
MAX_ITERS = "max_iters"
STALLED = "stalled"
DIVERGED = "diverged"
NUMERICAL_FAILURE = "numerical_failure"

# Residual-trend verdicts.
IMPROVING = "improving"
TREND_STALLED = "stalled"
TREND_DIVERGING = "diverging"

BROYDEN_INITS = ("jacobian", "scaled_identity", "identity")


class NumericalFailure(RuntimeError):
    """A step could not be completed (singular solve, guard trip, overflow)."""


@dataclass
class SolverConfig:
    """Method selector plus every tolerance and hyperparameter left open.

    Defaults follow the benchmark conventions: residual tolerance 1e-6,
    full-memory GMRES at relative tolerance 1e-5 for inner solves, and the
    trust-region radius schedule with periodic reset.
    """

    method: str = "newton"
    tol: float = 1e-6
    max_iters: int = 2000
    # trust region
    delta_0: float = 1.0
    delta_max: float = 100.0
    tr_reset_every: int = 5
    # backtracking line search
    ls_tau: float = 0.5
    ls_c1: float = 1e-4
    ls_c2: float = 0.9
    ls_alpha0: float = 1.0
    ls_max_backtracks: int = 40
    # first-order optimizers
    adam_alpha: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adagrad_alpha: float = 0.1
    adagrad_eps: float = 1e-8
    lbfgs_memory: int = 10
    # convergence monitoring
    stall_window: int = 10
    stall_slope_tol: float = 1e-3
    broyden_denom_eps: float = 1e-14
    # method-specific knobs
    picard_omega: float = 1.0
    broyden_init: str = "jacobian"
    steihaug_exact_cg: bool = False
    steihaug_inner_iters: int | None = None
    steihaug_cg_tol: float = 1e-10
    # inner linear solves
    gmres_tol: float = 1e-5
    gmres_max_iter: int | None = None
    # diagnostics
    record_condition_numbers: bool = False
    record_iterates: bool = False

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (0.0 < self.ls_c1 < self.ls_c2 < 1.0):
            raise ValueError("need 0 < ls_c1 < ls_c2 < 1")
        if not (0.0 < self.ls_tau < 1.0):
            raise ValueError("ls_tau must lie in (0, 1)")
        if self.delta_0 > self.delta_max:
            raise ValueError("delta_0 must not exceed delta_max")
        for name in ("tol", "delta_0", "delta_max", "ls_alpha0", "adam_alpha",
                     "adagrad_alpha", "stall_slope_tol", "broyden_denom_eps",
                     "gmres_tol", "picard_omega"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1 or self.stall_window < 2 or self.lbfgs_memory < 1:
            raise ValueError("max_iters, stall_window and lbfgs_memory must be sensible")
        if self.broyden_init not in BROYDEN_INITS:
            raise ValueError(f"broyden_init must be one of {BROYDEN_INITS}")

    def gmres_policy(self) -> GmresPolicy:
        return GmresPolicy(tol=self.gmres_tol, max_iter=self.gmres_max_iter)


@dataclass
class Counters:
    """Work counters accumulated over one solve."""

    residual_evals: int = 0
    jacobian_evals: int = 0
    linear_solves: int = 0

    def as_dict(self) -> dict:
        return {
            "residual_evals": self.residual_evals,
            "jacobian_evals": self.jacobian_evals,
            "linear_solves": self.linear_solves,
        }


@dataclass
class SolveReport:
    """Outcome of one solver run."""

    status: str
    iterations: int
    residual_history: list[float]
    counters: Counters
    final_u: np.ndarray
    cond_history: list[tuple[float, float]] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def final_residual_norm(self) -> float:
        return self.residual_history[-1]


@dataclass(frozen=True)
class TrustRegionState:
    """Current radius plus the bookkeeping for the periodic reset."""

    delta: float
    adjust_count: int
    delta_0: float
    delta_max: float
    reset_every: int

    @classmethod
    def from_config(cls, cfg: SolverConfig) -> "TrustRegionState":
        return cls(
            delta=cfg.delta_0,
            adjust_count=0,
            delta_0=cfg.delta_0,
            delta_max=cfg.delta_max,
            reset_every=cfg.tr_reset_every,
        )


@dataclass(frozen=True)
class LineSearchResult:
    alpha: float
    phi0: float
    phi_new: float | None
    grad_new: np.ndarray | None
    slope0: float
    backtracks: int
    descent: bool
    armijo_ok: bool
    curvature_ok: bool
    exhausted: bool

    @property
    def accepted(self) -> bool:
        return self.descent and self.armijo_ok and self.curvature_ok


# ---------------------------------------------------------------------------
# objective transforms


def phi(r: np.ndarray) -> float:
    """Least-squares merit value, half the squared residual norm."""
    r = np.asarray(r, dtype=float)
    return 0.5 * float(r @ r)


def grad_phi(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gradient of the merit function via the chain rule."""
    J = np.asarray(J, dtype=float)
    r = np.asarray(r, dtype=float)
    if J.shape[0] != r.shape[0]:
        raise ValueError("Jacobian and residual dimensions disagree")
    return J.T @ r


def gn_hessian(J: np.ndarray) -> np.ndarray:
    """Gauss-Newton approximation of the merit Hessian (drops second
    derivatives of the residual)."""
    J = np.asarray(J, dtype=float)
    return J.T @ J


def quad_model(phi_val: float, g: np.ndarray, H: np.ndarray, p: np.ndarray) -> float:
    """Local quadratic model value at step p."""
    return float(phi_val + g @ p + 0.5 * (p @ (H @ p)))


# ---------------------------------------------------------------------------
# shared algorithms


def line_search(phi_fn, grad_fn, u, p, cfg: SolverConfig) -> LineSearchResult:
    """Backtracking line search enforcing the Armijo and curvature conditions.

    ``phi_fn`` and ``grad_fn`` evaluate the objective and its gradient at a
    point. Non-descent directions are flagged and returned with the smallest
    step the backtracking schedule can produce; an exhausted backtrack budget
    is likewise flagged so the caller can decide what to do with the step.
    """
    phi0 = phi_fn(u)
    g0 = grad_fn(u)
    slope0 = float(g0 @ p)
    if not slope0 < 0.0:
        alpha = cfg.ls_alpha0 * cfg.ls_tau ** cfg.ls_max_backtracks
        return LineSearchResult(alpha, phi0, None, None, slope0, 0,
                                descent=False, armijo_ok=False,
                                curvature_ok=False, exhausted=False)

    alpha = cfg.ls_alpha0
    phi_t = None
    for j in range(cfg.ls_max_backtracks + 1):
        u_t = u + alpha * p
        phi_t = phi_fn(u_t)
        if np.isfinite(phi_t) and phi_t <= phi0 + cfg.ls_c1 * alpha * slope0:
            g_t = grad_fn(u_t)
            if -float(p @ g_t) <= -cfg.ls_c2 * slope0:
                return LineSearchResult(alpha, phi0, float(phi_t), g_t, slope0, j,
                                        descent=True, armijo_ok=True,
                                        curvature_ok=True, exhausted=False)
        if j < cfg.ls_max_backtracks:
            alpha *= cfg.ls_tau
    return LineSearchResult(alpha, phi0, float(phi_t), None, slope0,
                            cfg.ls_max_backtracks,
                            descent=True, armijo_ok=False,
                            curvature_ok=False, exhausted=True)


def adjust_delta(
    state: TrustRegionState,
    phi_prev: float,
    phi_curr: float,
    model_pred: float,
) -> TrustRegionState:
    """Shrink or grow the trust radius from the actual/predicted reduction
    ratio, resetting to the initial radius every ``reset_every`` adjustments."""
    denom = phi_prev - model_pred
    rho = 1.0 if denom == 0.0 else (phi_prev - phi_curr) / denom
    delta = state.delta
    if rho < 0.25:
        delta = 0.25 * delta
    if rho > 0.75:
        delta = min(2.0 * delta, state.delta_max)
    count = state.adjust_count + 1
    if count >= state.reset_every:
        delta = state.delta_0
        count = 0
    return replace(state, delta=delta, adjust_count=count)


def detect_trend(history, window: int, slope_tol: float) -> str:
    """Classify the recent residual history by the slope of a linear fit to
    its base-10 logarithm."""
    recent = np.asarray(history[-window:], dtype=float)
    if not np.all(np.isfinite(recent)):
        return TREND_DIVERGING
    if len(history) < window:
        return IMPROVING
    y = np.log10(np.clip(recent, 1e-300, None))
    x = np.arange(window, dtype=float)
    x -= x.mean()
    slope = float((x @ (y - y.mean())) / (x @ x))
    if slope < -slope_tol:
        return IMPROVING
    if slope > slope_tol:
        return TREND_DIVERGING
    return TREND_STALLED


# ---------------------------------------------------------------------------
# single-step building blocks (pure, unit-testable)


def step_picard(u: np.ndarray, r: np.ndarray, omega: float) -> np.ndarray:
    """Relaxed residual iteration."""
    return u - omega * r


def broyden_update(J_est, du, dr, eps: float) -> np.ndarray:
    """Rank-1 secant update of a Jacobian estimate; J' du = dr exactly."""
    den = float(du @ du)
    if den <= eps:
        raise NumericalFailure("Broyden update denominator vanished")
    return J_est + np.outer(dr - J_est @ du, du) / den


def broyden_inv_update(B_est, du, dr, eps: float) -> np.ndarray:
    """Sherman-Morrison form updating an inverse-Jacobian estimate;
    B' dr = du exactly."""
    uB = du @ B_est
    den = float(uB @ dr)
    if abs(den) <= eps:
        raise NumericalFailure("inverse Broyden update denominator vanished")
    return B_est + np.outer(du - B_est @ dr, uB) / den


def step_adam(u, m1, m2, g, t: int, cfg: SolverConfig):
    """One Adam update with bias correction; t counts from 1."""
    if t < 1:
        raise ValueError("step index must start at 1")
    m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * g
    m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * g * g
    m1_hat = m1 / (1.0 - cfg.adam_beta1 ** t)
    m2_hat = m2 / (1.0 - cfg.adam_beta2 ** t)
    u_new = u - cfg.adam_alpha * m1_hat / (np.sqrt(m2_hat) + cfg.adam_eps)
    return u_new, m1, m2


def step_adagrad(u, G, g, cfg: SolverConfig):
    """One Adagrad update with accumulated squared gradients."""
    G = G + g * g
    u_new = u - cfg.adagrad_alpha * g / (np.sqrt(G) + cfg.adagrad_eps)
    return u_new, G


def bfgs_update(H_inv, du, dg) -> np.ndarray:
    """Standard BFGS update of an inverse-Hessian estimate; skipped by the
    caller when the curvature condition du.dg > 0 fails."""
    rho = 1.0 / float(du @ dg)
    n = du.shape[0]
    I = np.eye(n)
    V = I - rho * np.outer(du, dg)
    return V @ H_inv @ V.T + rho * np.outer(du, du)


def lbfgs_direction(g: np.ndarray, history) -> np.ndarray:
    """Two-loop recursion over stored (du, dg) pairs.

    Pairs with non-positive curvature are skipped; with no usable pair the
    direction falls back to steepest descent, so the result is always a
    descent direction for a nonzero gradient.
    """
    kept = [(du, dg) for du, dg in history if float(du @ dg) > 0.0]
    if not kept:
        return -g
    q = g.copy()
    stack = []
    for du, dg in reversed(kept):
        rho = 1.0 / float(du @ dg)
        a = rho * float(du @ q)
        q -= a * dg
        stack.append((rho, a, du, dg))
    du_last, dg_last = kept[-1]
    gamma = float(du_last @ dg_last) / float(dg_last @ dg_last)
    z = gamma * q
    for rho, a, du, dg in reversed(stack):
        b = rho * float(dg @ z)
        z += (a - b) * du
    p = -z
    if float(g @ p) >= 0.0:
        return -g
    return p


def _boundary_tau(z: np.ndarray, d: np.ndarray, delta: float) -> float:
    """Positive tau with ||z + tau d|| = delta (exists when ||z|| < delta)."""
    d2 = float(d @ d)
    zd = float(z @ d)
    z2 = float(z @ z)
    disc = zd * zd + d2 * (delta * delta - z2)
    return (-zd + np.sqrt(max(disc, 0.0))) / d2


# ---------------------------------------------------------------------------
# evaluation bookkeeping


class _Eval:
    """Counted access to the residual and Jacobian with a tiny memo so that a
    point revisited by the driver right after a line search is not billed
    twice."""

    _CACHE = 8

    def __init__(self, problem: fem.Problem, counters: Counters):
        self.problem = problem
        self.counters = counters
        self._r: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._J: OrderedDict[bytes, np.ndarray] = OrderedDict()

    def _lookup(self, cache, u, builder, counter_name):
        key = u.tobytes()
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        value = builder(u, self.problem)
        setattr(self.counters, counter_name, getattr(self.counters, counter_name) + 1)
        cache[key] = value
        if len(cache) > self._CACHE:
            cache.popitem(last=False)
        return value

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self._lookup(self._r, u, fem.assemble_residual, "residual_evals")

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        return self._lookup(self._J, u, fem.assemble_jacobian, "jacobian_evals")

    def phi(self, u: np.ndarray) -> float:
        return phi(self.residual(u))

    def grad(self, u: np.ndarray) -> np.ndarray:
        return grad_phi(self.jacobian(u), self.residual(u))


# ---------------------------------------------------------------------------
# trust-region steps


def step_dogleg(u, r, ev: _Eval, tr: TrustRegionState, cfg: SolverConfig):
    """One modified-dogleg step.

    Takes the pure Newton step when it fits in the region; otherwise the
    line-searched gradient step, clipped to the boundary when it leaves the
    region, or the boundary point of the segment from the scaled gradient
    step toward the Newton point.
    """
    J = ev.jacobian(u)
    g = grad_phi(J, r)
    p_g = -g
    ls = line_search(ev.phi, ev.grad, u, p_g, cfg)
    p_gs = ls.alpha * p_g

    p_n, _ = gmres_solve(J, -r, cfg.gmres_policy())
    ev.counters.linear_solves += 1
    if not np.all(np.isfinite(p_n)):
        raise NumericalFailure("dogleg inner solve produced non-finite step")

    delta = tr.delta
    kind = "dogleg"
    if np.linalg.norm(p_n) <= delta:
        step = p_n
        kind = "newton"
    elif np.linalg.norm(p_gs) >= delta:
        step = p_gs * (delta / np.linalg.norm(p_gs))
        kind = "gradient"
    else:
        dp = p_n - p_gs
        a = float(dp @ dp)
        b = 2.0 * float(p_gs @ dp)
        c = float(p_gs @ p_gs) - delta * delta
        disc = b * b - 4.0 * a * c
        if a <= 1e-30 or disc < 0.0:
            # Degenerate segment: fall back to the gradient direction on the
            # boundary.
            step = p_g * (delta / np.linalg.norm(p_g))
            kind = "gradient_fallback"
        else:
            tau = (-b + np.sqrt(disc)) / (2.0 * a)
            step = p_gs + tau * dp

    u_new = u + step
    r_new = ev.residual(u_new)
    phi_prev = phi(r)
    pred = quad_model(phi_prev, g, gn_hessian(J), step)
    tr_new = adjust_delta(tr, phi_prev, phi(r_new), pred)
    info = {"kind": kind, "step_norm": float(np.linalg.norm(step)),
            "delta_used": delta, "ls": ls}
    return u_new, r_new, tr_new, info


def step_steihaug(u, r, ev: _Eval, tr: TrustRegionState, cfg: SolverConfig):
    """One trust-region step built from a truncated conjugate-gradient pass
    on the Gauss-Newton model.

    The default variant takes a single line-searched step along the steepest
    descent direction of the actual objective, clipped to the region. With
    ``steihaug_exact_cg`` the inner loop runs textbook CG on the quadratic
    model, exiting at the boundary, on negative curvature, or on a small
    model residual; if the sub-iteration budget runs out the radius resets to
    its initial value and the accumulated step is taken as is.
    """
    J = ev.jacobian(u)
    g = grad_phi(J, r)
    H = gn_hessian(J)
    delta = tr.delta
    n = u.shape[0]
    kind = "interior"
    reset_delta = False

    if cfg.steihaug_exact_cg:
        cap = cfg.steihaug_inner_iters or max(n - 1, 1)
        z = np.zeros(n)
        cg_r = g.copy()
        d = -g
        g_norm = np.linalg.norm(g)
        step = None
        inner = 0
        for _ in range(cap):
            inner += 1
            Hd = H @ d
            curv = float(d @ Hd)
            if curv <= 0.0:
                step = z + _boundary_tau(z, d, delta) * d
                kind = "negative_curvature"
                break
            alpha = float(cg_r @ cg_r) / curv
            z_try = z + alpha * d
            if np.linalg.norm(z_try) >= delta:
                step = z + _boundary_tau(z, d, delta) * d
                kind = "boundary"
                break
            z = z_try
            cg_r_new = cg_r + alpha * Hd
            if np.linalg.norm(cg_r_new) <= cfg.steihaug_cg_tol * max(g_norm, 1e-300):
                step = z
                break
            beta = float(cg_r_new @ cg_r_new) / float(cg_r @ cg_r)
            d = -cg_r_new + beta * d
            cg_r = cg_r_new
        if step is None:
            # Budget exhausted: reset the region and keep the accumulated step.
            step = z
            kind = "exhausted"
            reset_delta = True
        info_extra = {"inner_iterations": inner}
        ls = None
    else:
        d = -g
        curv = float(d @ (H @ d))
        ls = None
        if curv <= 0.0:
            nd = np.linalg.norm(d)
            if nd == 0.0:
                raise NumericalFailure("zero gradient with non-convergent residual")
            step = d * (delta / nd)
            kind = "negative_curvature"
        else:
            ls = line_search(ev.phi, ev.grad, u, d, cfg)
            s = ls.alpha * d
            ns = np.linalg.norm(s)
            if ns >= delta:
                step = s * (delta / ns)
                kind = "boundary"
            else:
                step = s
        info_extra = {"inner_iterations": 1}

    u_new = u + step
    r_new = ev.residual(u_new)
    phi_prev = phi(r)
    pred = quad_model(phi_prev, g, H, step)
    tr_after = replace(tr, delta=tr.delta_0) if reset_delta else tr
    tr_new = adjust_delta(tr_after, phi_prev, phi(r_new), pred)
    info = {"kind": kind, "step_norm": float(np.linalg.norm(step)),
            "delta_used": delta, "ls": ls}
    info.update(info_extra)
    return u_new, r_new, tr_new, info


# ---------------------------------------------------------------------------
# per-method steppers used by the driver


class _Stepper:
    estimate = None  # Jacobian (or inverse) estimate, for condition traces

    def __init__(self, problem, ev: _Eval, cfg: SolverConfig, u0: np.ndarray):
        self.problem = problem
        self.ev = ev
        self.cfg = cfg

    def step(self, u, r):
        raise NotImplementedError


class _PicardStepper(_Stepper):
    def step(self, u, r):
        u_new = step_picard(u, r, self.cfg.picard_omega)
        return u_new, self.ev.residual(u_new), {}


class _NewtonStepper(_Stepper):
    def step(self, u, r):
        J = self.ev.jacobian(u)
        p, _ = gmres_solve(J, -r, self.cfg.gmres_policy())
        self.ev.counters.linear_solves += 1
        if not np.all(np.isfinite(p)):
            raise NumericalFailure("Newton inner solve produced non-finite step")
        u_new = u + p
        return u_new, self.ev.residual(u_new), {}


def _initial_estimate(problem, ev, cfg, u0):
    if cfg.broyden_init == "jacobian":
        return ev.jacobian(u0).copy()
    if cfg.broyden_init == "scaled_identity":
        mesh, mat = problem.mesh, problem.material
        h = mesh.length / mesh.n_elements
        return (mat.E * mat.A / h) * np.eye(problem.n_free)
    return np.eye(problem.n_free)


class _BroydenStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        self.estimate = _initial_estimate(problem, ev, cfg, u0)

    def step(self, u, r):
        du, _ = gmres_solve(self.estimate, -r, self.cfg.gmres_policy())
        self.ev.counters.linear_solves += 1
        if not np.all(np.isfinite(du)):
            raise NumericalFailure("Broyden inner solve produced non-finite step")
        u_new = u + du
        r_new = self.ev.residual(u_new)
        self.estimate = broyden_update(self.estimate, du, r_new - r,
                                       self.cfg.broyden_denom_eps)
        return u_new, r_new, {}


class _BroydenInvStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        J0 = _initial_estimate(problem, ev, cfg, u0)
        if cfg.broyden_init == "jacobian":
            self.estimate = np.linalg.inv(J0)
        else:
            # The scaled identity inverts in closed form.
            self.estimate = np.eye(problem.n_free) / J0[0, 0]

    def step(self, u, r):
        du = -self.estimate @ r
        u_new = u + du
        r_new = self.ev.residual(u_new)
        self.estimate = broyden_inv_update(self.estimate, du, r_new - r,
                                           self.cfg.broyden_denom_eps)
        return u_new, r_new, {}


class _AdamStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        self.m1 = np.zeros(problem.n_free)
        self.m2 = np.zeros(problem.n_free)
        self.t = 0

    def step(self, u, r):
        g = grad_phi(self.ev.jacobian(u), r)
        self.t += 1
        u_new, self.m1, self.m2 = step_adam(u, self.m1, self.m2, g, self.t, self.cfg)
        return u_new, self.ev.residual(u_new), {}


class _AdagradStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        self.G = np.zeros(problem.n_free)

    def step(self, u, r):
        g = grad_phi(self.ev.jacobian(u), r)
        u_new, self.G = step_adagrad(u, self.G, g, self.cfg)
        return u_new, self.ev.residual(u_new), {}


class _BfgsStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        self.H_inv = np.eye(problem.n_free)

    def step(self, u, r):
        g = grad_phi(self.ev.jacobian(u), r)
        p = -self.H_inv @ g
        if float(g @ p) >= 0.0:
            p = -g
        ls = line_search(self.ev.phi, self.ev.grad, u, p, self.cfg)
        u_new = u + ls.alpha * p
        r_new = self.ev.residual(u_new)
        g_new = ls.grad_new if ls.grad_new is not None else self.ev.grad(u_new)
        du = ls.alpha * p
        dg = g_new - g
        if float(du @ dg) > 0.0:
            self.H_inv = bfgs_update(self.H_inv, du, dg)
        return u_new, r_new, {"ls": ls}


class _LbfgsStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        self.history: deque = deque(maxlen=cfg.lbfgs_memory)

    def step(self, u, r):
        g = grad_phi(self.ev.jacobian(u), r)
        p = lbfgs_direction(g, self.history)
        ls = line_search(self.ev.phi, self.ev.grad, u, p, self.cfg)
        u_new = u + ls.alpha * p
        r_new = self.ev.residual(u_new)
        g_new = ls.grad_new if ls.grad_new is not None else self.ev.grad(u_new)
        du = ls.alpha * p
        dg = g_new - g
        if float(du @ dg) > 0.0:
            self.history.append((du, dg))
        return u_new, r_new, {"ls": ls}


class _TrustRegionStepper(_Stepper):
    def __init__(self, problem, ev, cfg, u0):
        super().__init__(problem, ev, cfg, u0)
        self.tr = TrustRegionState.from_config(cfg)
        self._step_fn = step_dogleg if cfg.method == "dogleg" else step_steihaug

    def step(self, u, r):
        u_new, r_new, self.tr, info = self._step_fn(u, r, self.ev, self.tr, self.cfg)
        return u_new, r_new, info


_STEPPERS = {
    "picard": _PicardStepper,
    "newton": _NewtonStepper,
    "broyden": _BroydenStepper,
    "broyden_inv": _BroydenInvStepper,
    "adam": _AdamStepper,
    "adagrad": _AdagradStepper,
    "bfgs": _BfgsStepper,
    "lbfgs": _LbfgsStepper,
    "dogleg": _TrustRegionStepper,
    "steihaug": _TrustRegionStepper,
}


# ---------------------------------------------------------------------------
# driver


def solve(problem: fem.Problem, cfg: SolverConfig, u0: np.ndarray | None = None) -> SolveReport:
    """Iterate the selected method from u0 (zero unless overridden).

    Terminates on convergence of the residual 2-norm below ``cfg.tol``, on
    the iteration cap, on a stalled or diverging residual trend, or on a
    numerical failure (non-finite iterate, failed solve, update guard).
    """
    cfg.validate()
    counters = Counters()
    ev = _Eval(problem, counters)
    u = np.zeros(problem.n_free) if u0 is None else np.asarray(u0, dtype=float).copy()

    stepper = _STEPPERS[cfg.method](problem, ev, cfg, u)
    record_cond = cfg.record_condition_numbers and stepper.estimate is not None
    cond_history: list[tuple[float, float]] | None = [] if record_cond else None

    def log_condition(u_k):
        if cond_history is not None:
            exact = condition_number(fem.assemble_jacobian(u_k, problem))
            est = condition_number(stepper.estimate)
            cond_history.append((exact, est))

    r = ev.residual(u)
    history = [float(np.linalg.norm(r))]
    log_condition(u)
    diag = {"ls": [], "tr": []}
    if cfg.record_iterates:
        diag["iterates"] = [u.copy()]

    if history[0] < cfg.tol:
        return SolveReport(CONVERGED, 0, history, counters, u, cond_history, diag)

    status = MAX_ITERS
    for _ in range(cfg.max_iters):
        try:
            u_new, r_new, info = stepper.step(u, r)
        except NumericalFailure as exc:
            status = NUMERICAL_FAILURE
            diag["failure"] = str(exc)
            break
        ls = info.get("ls")
        if ls is not None:
            diag["ls"].append(ls)
        if "step_norm" in info:
            diag["tr"].append({
                "step_norm": info["step_norm"],
                "delta": info["delta_used"],
                "kind": info["kind"],
                "inner": info.get("inner_iterations"),
            })
        u, r = u_new, r_new
        history.append(float(np.linalg.norm(r)))
        log_condition(u)
        if cfg.record_iterates:
            diag["iterates"].append(u.copy())
        if not (np.all(np.isfinite(u)) and np.isfinite(history[-1])):
            status = NUMERICAL_FAILURE
            break
        if history[-1] < cfg.tol:
            status = CONVERGED
            break
        trend = detect_trend(history, cfg.stall_window, cfg.stall_slope_tol)
        if trend == TREND_DIVERGING:
            status = DIVERGED
            break
        if trend == TREND_STALLED:
            status = STALLED
            break

    return SolveReport(status, len(history) - 1, history, counters, u,
                       cond_history, diag)
