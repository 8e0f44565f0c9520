"""Non-neural multilinear unmixing: FCLS, per-pixel supervised fits, and
block coordinate descent for the joint problem.

All solvers run vectorized over pixels.  Abundance steps are projected
gradient with exact sort-based simplex projection, Barzilai-Borwein step
seeding, and halving Armijo backtracking; updates are only accepted when
they decrease the objective, which makes every reported objective trace
non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hsi import HsiCube, validate_endmembers

_ARMIJO = 1e-4
_P_MAX_SUPERVISED = 1.0 - 1e-6
_DEN_FLOOR = 1e-12


@dataclass
class SolverConfig:
    max_outer: int = 60
    max_inner: int = 300
    tol: float = 1e-10          # relative objective decrease across outer cycles
    p_min: float = 0.0          # negative values are allowed by the model
    multi_start: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("objective tolerance must be positive")
        if self.p_min >= 1.0:
            raise ValueError("the transition-probability lower bound must be below 1")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be positive")


# ---------------------------------------------------------------------------
# simplex projection


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of one vector onto the probability simplex."""
    return project_simplex_rows(np.asarray(v, dtype=np.float64)[None])[0]


def project_simplex_rows(V: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection via the sort-based exact algorithm."""
    V = np.asarray(V, dtype=np.float64)
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = (np.cumsum(U, axis=1) - 1.0) / np.arange(1, n + 1)
    k = n - 1 - np.argmax((U > css)[:, ::-1], axis=1)
    tau = css[np.arange(V.shape[0]), k]
    return np.maximum(V - tau[:, None], 0.0)


# ---------------------------------------------------------------------------
# fully constrained least squares


@dataclass
class FclsResult:
    a: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool


def _pg_descent(A0, objective, gradient, max_inner, kkt_tol=1e-8):
    """Monotone projected gradient over rows of the simplex.

    ``objective(A_rows, idx)`` and ``gradient(A_rows, idx)`` evaluate the
    per-pixel objective / gradient for the given pixel indices (``idx``
    None means all pixels, in order).  Steps are seeded Barzilai-Borwein
    and backtracked by halving under an Armijo test, so the per-pixel
    objective never increases.  Returns the final iterate, its per-pixel
    objective, and the unit-step fixed-point residual
    ``max |A - proj(A - grad)|``.
    """
    A = A0.copy()
    f = objective(A, None)
    g = gradient(A, None)
    step = np.full(A.shape[0], 1.0)
    prev_A = prev_g = None
    iterations = 0
    for _ in range(max_inner):
        residual = np.abs(A - project_simplex_rows(A - g)).max()
        if residual <= kkt_tol:
            break
        iterations += 1
        if prev_A is not None:
            dA = A - prev_A
            dg = g - prev_g
            num = (dA * dA).sum(1)
            den = (dA * dg).sum(1)
            with np.errstate(divide="ignore", invalid="ignore"):
                bb = np.where(den > 0, num / np.maximum(den, 1e-300), 1.0)
            step = np.clip(bb, 1e-12, 1e12)
        prev_A, prev_g = A, g.copy()
        accepted = np.zeros(A.shape[0], dtype=bool)
        A_new = A.copy()
        f_new = f.copy()
        trial_step = step.copy()
        for _ in range(40):  # halving line search
            live = np.flatnonzero(~accepted)
            if live.size == 0:
                break
            cand = project_simplex_rows(A[live] - trial_step[live, None] * g[live])
            fc = objective(cand, live)
            slope = (g[live] * (cand - A[live])).sum(1)
            ok = fc <= f[live] + _ARMIJO * slope
            hit = live[ok]
            A_new[hit] = cand[ok]
            f_new[hit] = fc[ok]
            accepted[hit] = True
            trial_step[~accepted] *= 0.5
        if not accepted.any():
            break  # stationary for every pixel at line-search resolution
        A, f = A_new, f_new
        g = gradient(A, None)
    residual = np.abs(A - project_simplex_rows(A - g)).max()
    return A, f, residual, iterations


def _fcls_polish(X, E, A):
    """Exact solve on each pixel's active face, accepted only when KKT holds."""
    G = E.T @ E
    n, r = A.shape
    supports = {}
    for j in range(n):
        supports.setdefault(tuple(np.flatnonzero(A[j] > 1e-10)), []).append(j)
    out = A.copy()
    for sup, pixels in supports.items():
        if not sup:
            continue
        s = list(sup)
        k = len(s)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = G[np.ix_(s, s)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        try:
            inv = np.linalg.inv(kkt)
        except np.linalg.LinAlgError:
            continue
        rhs = np.zeros((k + 1, len(pixels)))
        rhs[:k] = E[:, s].T @ X[pixels].T
        rhs[k] = 1.0
        sol = inv @ rhs
        a_s = sol[:k].T           # (npix, k)
        mu = sol[k]               # (npix,)
        feasible = a_s.min(axis=1) >= -1e-12
        full = np.zeros((len(pixels), r))
        full[:, s] = np.maximum(a_s, 0.0)
        grad = (full @ G - X[pixels] @ E)          # gradient of 0.5||Ea-x||^2 is E^T(Ea-x)
        dual_ok = np.ones(len(pixels), dtype=bool)
        off = [i for i in range(r) if i not in sup]
        if off:
            dual_ok = (grad[:, off] + mu[:, None] >= -1e-9).all(axis=1)
        accept = feasible & dual_ok
        rows = np.asarray(pixels)[accept]
        out[rows] = full[accept] / full[accept].sum(axis=1, keepdims=True)
    return out


def fcls_all(X: np.ndarray, E: np.ndarray, cfg: SolverConfig | None = None):
    """Simplex-constrained least squares for every pixel row of X (N, B)."""
    cfg = cfg or SolverConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    E = np.asarray(E, dtype=np.float64)
    n, r = X.shape[0], E.shape[1]

    def objective(A_, idx):
        Xs = X if idx is None else X[idx]
        resid = A_ @ E.T - Xs
        return 0.5 * (resid * resid).sum(1)

    def gradient(A_, idx):
        Xs = X if idx is None else X[idx]
        return (A_ @ E.T - Xs) @ E

    A0 = np.full((n, r), 1.0 / r)
    A, f, residual, iters = _pg_descent(A0, objective, gradient, cfg.max_inner)
    if residual > 1e-8:
        # exact solve on the active face identified by projected gradient
        polished = _fcls_polish(X, E, A)
        f_pol = objective(polished, None)
        better = f_pol <= f + 1e-15
        A[better] = polished[better]
        residual = np.abs(A - project_simplex_rows(A - gradient(A, None))).max()
    return A, residual, residual <= 1e-8


def fcls(x: np.ndarray, E: np.ndarray, cfg: SolverConfig | None = None) -> FclsResult:
    """Abundance fit of one pixel; flagged non-converged past the cap."""
    A, residual, converged = fcls_all(np.asarray(x)[None], E, cfg)
    return FclsResult(A[0], residual, (cfg or SolverConfig()).max_inner, converged)


# ---------------------------------------------------------------------------
# supervised per-pixel fit of (a, P)


@dataclass
class SupervisedResult:
    a: np.ndarray
    p: float
    objective: float
    converged: bool


def _supervised_objective(X, Y, P):
    den = np.maximum(1.0 - P[:, None] * Y, _DEN_FLOOR)
    resid = X - (1.0 - P)[:, None] * Y / den
    return (resid * resid).sum(1)


def _golden_p_step(X, Y, lo, hi, tol=1e-8):
    """Vectorized golden-section minimization of the pixel objective in P."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a = np.full(X.shape[0], lo)
    b = np.full(X.shape[0], hi)
    steps = int(np.ceil(np.log(tol / (hi - lo)) / np.log(invphi))) + 1
    for _ in range(max(steps, 1)):
        h = b - a
        x1 = b - invphi * h
        x2 = a + invphi * h
        f1 = _supervised_objective(X, Y, x1)
        f2 = _supervised_objective(X, Y, x2)
        take_left = f1 <= f2
        b = np.where(take_left, x2, b)
        a = np.where(take_left, a, x1)
    mid = 0.5 * (a + b)
    return mid


def supervised_unmix_all(X: np.ndarray, E: np.ndarray, cfg: SolverConfig | None = None):
    """Joint (abundance, P) fit per pixel with known endmembers.

    Alternates a projected-gradient abundance step on the exact objective
    with a golden-section transition-probability step, from a multi-start
    set seeded by the FCLS solution at P = 0.
    """
    cfg = cfg or SolverConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    E = np.asarray(E, dtype=np.float64)
    n, r = X.shape[0], E.shape[1]
    rng = np.random.default_rng(cfg.seed)

    A_fcls, _, _ = fcls_all(X, E, cfg)
    starts = [A_fcls]
    for _ in range(cfg.multi_start):
        starts.append(rng.dirichlet(np.ones(r), size=n))

    best_A = None
    best_P = None
    best_f = np.full(n, np.inf)
    inner_cap = min(cfg.max_inner, 80)
    for A0 in starts:
        A = A0.copy()
        P = np.zeros(n)

        def objective(A_, idx):
            Xs = X if idx is None else X[idx]
            Ps = P if idx is None else P[idx]
            return _supervised_objective(Xs, A_ @ E.T, Ps)

        def gradient(A_, idx):
            Xs = X if idx is None else X[idx]
            Ps = P if idx is None else P[idx]
            Y = A_ @ E.T
            den = np.maximum(1.0 - Ps[:, None] * Y, _DEN_FLOOR)
            resid = Xs - (1.0 - Ps)[:, None] * Y / den
            dfdy = -2.0 * resid * (1.0 - Ps)[:, None] / (den * den)
            return dfdy @ E

        f = objective(A, None)
        for _ in range(cfg.max_outer):
            A, f, _, _ = _pg_descent(A, objective, gradient, inner_cap)
            P_new = _golden_p_step(X, A @ E.T, cfg.p_min, _P_MAX_SUPERVISED)
            f_new = _supervised_objective(X, A @ E.T, P_new)
            improve = f_new <= f
            P = np.where(improve, P_new, P)
            f_prev, f = f, np.where(improve, f_new, f)
            if np.max(f_prev - f) <= cfg.tol * max(float(f_prev.max()), 1.0):
                break
        better = f < best_f
        if best_A is None:
            best_A, best_P, best_f = A.copy(), P.copy(), f.copy()
        else:
            best_A[better] = A[better]
            best_P[better] = P[better]
            best_f[better] = f[better]
    return best_A, best_P, best_f


def solve_pixel_supervised(x: np.ndarray, E: np.ndarray,
                           cfg: SolverConfig | None = None) -> SupervisedResult:
    A, P, f = supervised_unmix_all(np.asarray(x)[None], E, cfg)
    return SupervisedResult(A[0], float(P[0]), float(f[0]), True)


# ---------------------------------------------------------------------------
# unsupervised block coordinate descent


def mlmp_p_step(x: np.ndarray, y: np.ndarray, p_min: float = 0.0) -> float:
    """Closed-form minimizer of the linear-in-P pixel residual, clipped.

    P = <x - y, y*x - y> / ||y*x - y||^2 over [p_min, 1]; a vanishing
    denominator returns 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = y * x - y
    den = float(d @ d)
    if den == 0.0:
        return 0.0
    p = float((x - y) @ d) / den
    return float(np.clip(p, p_min, 1.0))


def _p_step_all(X, Y, p_min):
    D = Y * X - Y
    den = (D * D).sum(1)
    num = ((X - Y) * D).sum(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return np.clip(P, p_min, 1.0)


def _mlmp_objective(X, Y, P):
    resid = (1.0 - P)[:, None] * Y + P[:, None] * Y * X - X
    return float((resid * resid).sum())


@dataclass
class MlmpResult:
    endmembers: np.ndarray
    abundance: np.ndarray     # (N, R)
    p: np.ndarray             # (N,)
    trace: list = field(default_factory=list)
    converged: bool = False


def mlmp_unmix(X: np.ndarray, r: int, E_init: np.ndarray | None = None,
               cfg: SolverConfig | None = None, update_endmembers: bool = True) -> MlmpResult:
    """Block coordinate descent on the denominator-free joint objective.

    Cycles per-pixel abundance steps, closed-form P steps, and a projected
    gradient endmember step with an entrywise [0, 1] clamp.  Every block
    accepts an update only if the objective does not increase, so the
    recorded trace is non-increasing.  ``X`` is the (N, B) pixel matrix.
    """
    cfg = cfg or SolverConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if E_init is None:
        from .vca import VcaConfig, vca_extract
        E = vca_extract(X.T, VcaConfig(endmembers=r, seed=cfg.seed))
    else:
        E = validate_endmembers(E_init).copy()
        if E.shape[1] != r:
            raise ValueError(f"initial endmembers have {E.shape[1]} columns, expected {r}")

    A = np.full((n, r), 1.0 / r)
    P = np.zeros(n)
    trace = [_mlmp_objective(X, A @ E.T, P)]
    converged = False

    for _ in range(cfg.max_outer):
        f_cycle_start = trace[-1]

        # abundance block: weighted linear least squares per pixel
        W = (1.0 - P)[:, None] + P[:, None] * X

        def objective(A_, idx):
            Ws = W if idx is None else W[idx]
            Xs = X if idx is None else X[idx]
            resid = Ws * (A_ @ E.T) - Xs
            return (resid * resid).sum(1)

        def gradient(A_, idx):
            Ws = W if idx is None else W[idx]
            Xs = X if idx is None else X[idx]
            return 2.0 * (Ws * (Ws * (A_ @ E.T) - Xs)) @ E

        A_new, f_new, _, _ = _pg_descent(A, objective, gradient, min(cfg.max_inner, 80))
        if f_new.sum() <= objective(A, None).sum():
            A = A_new
        trace.append(_mlmp_objective(X, A @ E.T, P))

        # transition probability block: exact per-pixel minimizer
        Y = A @ E.T
        P_new = _p_step_all(X, Y, cfg.p_min)
        if _mlmp_objective(X, Y, P_new) <= trace[-1]:
            P = P_new
        trace.append(_mlmp_objective(X, Y, P))

        # endmember block: projected gradient with [0, 1] clamp
        if update_endmembers:
            Wp = (1.0 - P)[:, None] + P[:, None] * X
            f_cur = trace[-1]
            step = 1.0
            resid = Wp * (A @ E.T) - X
            grad = 2.0 * (Wp * resid).T @ A
            gnorm2 = float((grad * grad).sum())
            for _ in range(60):
                E_try = np.clip(E - step * grad, 0.0, 1.0)
                f_try = _mlmp_objective(X, A @ E_try.T, P)
                if f_try <= f_cur - _ARMIJO * step * gnorm2 or f_try < f_cur:
                    E = E_try
                    break
                step *= 0.5
            trace.append(_mlmp_objective(X, A @ E.T, P))

        drop = f_cycle_start - trace[-1]
        if drop <= cfg.tol * max(f_cycle_start, 1e-300):
            converged = True
            break

    return MlmpResult(E, A, P, trace, converged)
