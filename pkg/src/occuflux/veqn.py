"""One-particle Laplace exponent v_Psi on a space-time grid (d = 1).

For a fixed end time E = r + t write g(a) = v(., E - a, a).  Then

    g(a) = int_0^a T^Q_{a-s} [Psi(., E - s)(1 - g(s)) - Vq g(s)^2] ds,

which is the integral equation with the linear -Q v term absorbed into
the killed semigroup.  One solve on a in [0, t] therefore yields v at every
(offset, horizon) pair on the diagonal r + t = E, which is exactly what the
Laplace functional of the immigration system needs.

The killed semigroup over one time step is a sparse matrix (Gaussian
kernel times dx, truncated at 8 standard deviations), and the time
integral is the trapezoid rule, carried by the recursion
B_k = K B_{k-1} + F_k.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .model import ParameterError, SpaceTimeTest, SystemParams, validate_params
from .motion import BROWNIAN, OU, evolve_gaussian
from .quadrature import QuadratureError, integrate, integrate_breaks

__all__ = [
    "VGrid",
    "ConvergenceError",
    "GridResolutionError",
    "ConsistencyError",
    "LaplaceResult",
    "solve_v",
    "v_tilde",
    "defect_u",
    "laplace_K",
    "killed_kernel",
    "write_vgrid_csv",
]

MAX_CELLS = 40_000_000


class ConvergenceError(RuntimeError):
    """Picard iteration stopped contracting."""

    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


class GridResolutionError(RuntimeError):
    pass


class ConsistencyError(RuntimeError):
    pass


@dataclass
class VGrid:
    """Solution on x_j (space) by a_k (remaining horizon), end time ``E``.

    Row k of ``v`` holds v(x, E - a_k, a_k); ``v_tilde`` and ``u`` likewise.
    """

    x: np.ndarray
    a: np.ndarray
    E: float
    v: np.ndarray
    v_tilde: np.ndarray
    u: np.ndarray | None
    iterations: int
    residual: float
    residuals: list = field(default_factory=list, repr=False)
    refinement_change: float | None = None
    dtau: float = 0.0
    dx: float = 0.0

    @property
    def r(self) -> np.ndarray:
        return self.E - self.a

    def final(self) -> np.ndarray:
        """v(x, E - t, t) at the full horizon."""
        return self.v[-1]

    def at(self, x, k: int = -1, which: str = "v") -> np.ndarray:
        arr = getattr(self, which)
        return np.interp(x, self.x, arr[k], left=0.0, right=0.0)


def _default_grid(params: SystemParams, psi: SpaceTimeTest, horizon: float, dtau, dx, R):
    spec = params.motion
    sigma = spec.sigma
    w = psi.spatial.width
    if dtau is None:
        dtau = 0.005
    steps = max(1, int(math.ceil(horizon / dtau - 1e-9)))
    dtau = horizon / steps
    if dx is None:
        dx = 0.05 * w
        if sigma != 0:
            dx = min(dx, abs(sigma) * math.sqrt(dtau))
    if R is None:
        extent = float(np.max(np.abs(psi.spatial.mu)))
        R = extent + 10.0 * w + 20.0 * abs(sigma) / math.sqrt(2.0 * params.Q)
    n = 2 * int(math.ceil(R / dx)) + 1
    x = np.linspace(-dx * (n // 2), dx * (n // 2), n)
    return steps, dtau, x


def killed_kernel(params: SystemParams, x: np.ndarray, h: float) -> sparse.csr_matrix:
    """Matrix of T^Q_h on the grid: row i approximates E_{x_i}[f(eta_h)] e^{-Qh}."""
    spec = params.motion
    dx = x[1] - x[0]
    n = x.size
    if spec.kind == BROWNIAN:
        centers = x
        sd = spec.sigma * math.sqrt(h)
    elif spec.kind == OU:
        centers = x * math.exp(-spec.theta * h)
        sd = abs(spec.sigma) * math.sqrt(float(spec.ou(h)))
    else:
        raise ParameterError("grid solver supports Brownian and Ornstein-Uhlenbeck motion only")
    if sd == 0.0:
        raise ParameterError("grid solver needs sigma != 0")
    half = int(math.ceil(8.0 * sd / dx)) + 1
    lo = np.clip(np.floor((centers - x[0]) / dx).astype(np.int64) - half, 0, n - 1)
    offs = np.arange(2 * half + 2)
    cols = lo[:, None] + offs[None, :]
    valid = cols < n
    cols = np.where(valid, cols, n - 1)
    z = (x[cols] - centers[:, None]) / sd
    keep = valid & (np.abs(z) <= 8.0)
    weights = np.exp(-0.5 * z * z) * (dx / (sd * math.sqrt(2.0 * math.pi))) * math.exp(-params.Q * h)
    rows = np.broadcast_to(np.arange(n)[:, None], cols.shape)
    K = sparse.csr_matrix((weights[keep], (rows[keep], cols[keep])), shape=(n, n))
    K.sum_duplicates()
    return K


def _duhamel(K, F: np.ndarray, dtau: float) -> np.ndarray:
    """out_k = trapezoid of int_0^{a_k} T^Q_{a_k - s} F(s) ds on the grid."""
    out = np.empty_like(F)
    out[0] = 0.0
    B = 0.5 * F[0]
    for k in range(1, F.shape[0]):
        B = K @ B + F[k]
        out[k] = dtau * (B - 0.5 * F[k])
    return out


def _psi_table(psi: SpaceTimeTest, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    return np.outer(psi.time_weight(times), psi.spatial(x))


def _picard(params, psi_tab, K, dtau, tol, max_iter):
    Vq = params.V * params.q
    g = np.zeros_like(psi_tab)
    residuals = []
    growth = 0
    for it in range(1, max_iter + 1):
        F = psi_tab * (1.0 - g) - Vq * g * g
        g_new = _duhamel(K, F, dtau)
        res = float(np.max(np.abs(g_new - g)))
        residuals.append(res)
        g = g_new
        if res < tol:
            return g, it, residuals
        if len(residuals) > 1 and res > residuals[-2]:
            growth += 1
            if growth >= 5:
                raise ConvergenceError(
                    f"Picard iteration not contracting: residual grew 5 times in a row "
                    f"(last {res:.3e} after {it} iterations)", residuals)
        else:
            growth = 0
    raise ConvergenceError(f"Picard iteration did not reach {tol:g} in {max_iter} iterations "
                           f"(residual {residuals[-1]:.3e})", residuals)


def solve_v(params: SystemParams, psi: SpaceTimeTest, r: float, t: float, *, dtau: float | None = None,
            dx: float | None = None, R: float | None = None, tol: float = 1e-10, max_iter: int = 200,
            refine_check: bool = True, refine_tol: float = 1e-4, check_sign: bool = True,
            max_cells: int = MAX_CELLS) -> VGrid:
    """Picard solution of the one-particle equation for horizons a in [0, t].

    Row k of the result is v(., r + t - a_k, a_k); the last row is v(., r, t).
    With ``refine_check`` the solve is repeated with doubled dtau and dx and
    the two solutions must agree to ``refine_tol`` on the common nodes.
    """
    params = validate_params(params)
    if params.d != 1:
        raise ParameterError("grid solver is one-dimensional (d = 1)")
    if not t > 0 or r < 0:
        raise ParameterError("need t > 0 and r >= 0")
    if check_sign and (psi.factor < 0 or psi.spatial.amplitude < 0):
        raise ParameterError("Psi must be nonnegative")
    steps, dtau_, x = _default_grid(params, psi, t, dtau, dx, R)
    if (steps + 1) * x.size > max_cells:
        raise ParameterError(f"grid of {(steps + 1) * x.size} cells exceeds the memory guard {max_cells}")
    E = r + t
    a = np.linspace(0.0, t, steps + 1)
    psi_tab = _psi_table(psi, x, E - a)
    K = killed_kernel(params, x, dtau_)
    g, iters, residuals = _picard(params, psi_tab, K, dtau_, tol, max_iter)
    vt = _duhamel(K, psi_tab, dtau_)

    change = None
    if refine_check and steps % 2 == 0 and steps >= 2:
        dxc = 2.0 * (x[1] - x[0])
        coarse = solve_v(params, psi, r, t, dtau=2.0 * dtau_, dx=dxc, R=-x[0], tol=tol, max_iter=max_iter,
                         refine_check=False, check_sign=check_sign, max_cells=max_cells)
        fine_on_coarse = np.array([np.interp(coarse.x, x, row) for row in g[::2]])
        change = float(np.max(np.abs(fine_on_coarse - coarse.v)))
        if change > refine_tol:
            raise GridResolutionError(
                f"grid too coarse: halving the resolution changes v by {change:.3e} > {refine_tol:g}")
    grid = VGrid(x=x, a=a, E=E, v=g, v_tilde=vt, u=None, iterations=iters, residual=residuals[-1],
                 residuals=residuals, refinement_change=change, dtau=dtau_, dx=float(x[1] - x[0]))
    grid._kernel = K
    grid._psi_tab = psi_tab
    return grid


@dataclass(frozen=True)
class DefectReport:
    u: np.ndarray
    u_direct: np.ndarray
    discrepancy: float
    sup_u: float
    constant: float


def defect_u(params: SystemParams, psi: SpaceTimeTest, grid: VGrid, *, F_T: float | None = None,
             tol: float = 1e-6) -> DefectReport:
    """u = v_tilde - v, also computed directly as int T^Q[Psi v + Vq v^2].

    ``constant`` is sup u * F_T^2 (F_T defaults to sqrt(params.T)).
    """
    params = validate_params(params)
    K = getattr(grid, "_kernel", None)
    psi_tab = getattr(grid, "_psi_tab", None)
    if K is None:
        K = killed_kernel(params, grid.x, grid.dtau)
        psi_tab = _psi_table(psi, grid.x, grid.E - grid.a)
    Vq = params.V * params.q
    direct = _duhamel(K, psi_tab * grid.v + Vq * grid.v * grid.v, grid.dtau)
    diff = grid.v_tilde - grid.v
    gap = float(np.max(np.abs(diff - direct)))
    if gap > tol:
        raise ConsistencyError(f"u representations disagree by {gap:.3e} (> {tol:g})")
    grid.u = direct
    sup_u = float(np.max(direct))
    F_T = params.F_T if F_T is None else F_T
    return DefectReport(u=diff, u_direct=direct, discrepancy=gap, sup_u=sup_u, constant=sup_u * F_T ** 2)


def _semigroup_vec(params: SystemParams, phi, s: np.ndarray, x: float) -> np.ndarray:
    """(T_s phi)(x) for an array of times s (closed form)."""
    out = np.empty(s.shape)
    for i, si in enumerate(s):
        A, M, W = evolve_gaussian(params.motion, float(si), phi.amplitude, phi.mu, phi.width ** 2)
        out[i] = A * math.exp(-float(np.sum((x - M) ** 2)) / (2.0 * W))
    return out


def _brownian_vec(params, phi, s, x):
    var = phi.width ** 2 + params.motion.sigma ** 2 * s
    return phi.amplitude * np.sqrt(phi.width ** 2 / var) * np.exp(-(x - phi.center[0]) ** 2 / (2.0 * var))


def _tv_integrand(params, psi, x, r):
    Q = params.Q
    phi = psi.spatial
    Tphi = _brownian_vec if params.motion.kind == BROWNIAN else _semigroup_vec

    def f(s):
        s = np.asarray(s, dtype=float)
        return np.exp(-Q * s) * psi.time_weight(r + s) * Tphi(params, phi, s, x)

    return f


def v_tilde(params: SystemParams, psi: SpaceTimeTest, x: float, r: float, t: float, *,
            tol: float = 1e-10, check_residual: bool = True, residual_tol: float = 1e-8) -> float:
    """int_0^t T^Q_s Psi(., r + s)(x) ds by adaptive quadrature.

    With ``check_residual`` the value is substituted into the linear
    equation v = int_0^t T_{t-s}[Psi(., r+t-s) - Q v(., r+t-s, s)] ds and
    the residual must stay below ``residual_tol``.
    """
    params = validate_params(params)
    if params.motion.kind not in (BROWNIAN, OU):
        raise ParameterError("v_tilde supports Brownian and Ornstein-Uhlenbeck motion only")
    if psi.is_zero or t == 0.0:
        return 0.0
    x = float(x)
    scale = abs(psi.factor) * psi.spatial.amplitude
    f = _tv_integrand(params, psi, x, r)
    kinks = [k - r for k in psi.time_knots() if 0.0 < k - r < t]
    breaks = [0.0] + kinks + [t]
    res = integrate_breaks(f, breaks, abs_tol=tol * scale, rel_tol=tol)
    value = res.value
    if check_residual:
        resid = _tilde_residual(params, psi, x, r, t, value, tol * scale)
        if abs(resid) > residual_tol * max(1.0, abs(value)):
            raise QuadratureError("linear equation residual too large", value, abs(resid))
    return value


def _tilde_residual(params, psi, x, r, t, value, abs_tol):
    # int_0^t T_s Psi(r+s) ds - Q int_0^t T_s v~(., r+s, t-s) ds, with
    # T_s v~(., r+s, t-s)(x) = int_0^{t-s} e^{-Q u} w(r+s+u) T_{s+u} phi(x) du
    phi = psi.spatial
    Tphi = _brownian_vec if params.motion.kind == BROWNIAN else _semigroup_vec
    Q = params.Q
    knots = psi.time_knots()

    def first(s):
        return psi.time_weight(r + s) * Tphi(params, phi, s, x)

    def inner(s_arr):
        out = np.empty(len(s_arr))
        for i, s in enumerate(s_arr):
            top = t - s
            if top <= 0:
                out[i] = 0.0
                continue
            br = [0.0] + [k - r - s for k in knots if 0.0 < k - r - s < top] + [top]
            out[i] = integrate_breaks(
                lambda u: np.exp(-Q * u) * psi.time_weight(r + s + u) * Tphi(params, phi, s + u, x),
                br, abs_tol=abs_tol * 1e-2, rel_tol=1e-11).value
        return out

    br = [0.0] + [k - r for k in knots if 0.0 < k - r < t] + [t]
    a = integrate_breaks(first, br, abs_tol=abs_tol, rel_tol=1e-11).value
    b = integrate_breaks(inner, br, abs_tol=abs_tol, rel_tol=1e-10).value
    return value - (a - Q * b)


@dataclass(frozen=True)
class LaplaceResult:
    K: float
    log_K: float
    L: float
    log_L: float
    grid: VGrid


def laplace_K(params: SystemParams, phi_test: SpaceTimeTest, T: float, **solve_kw) -> LaplaceResult:
    """K_T(Phi) = E exp{-int_0^T <N_s, Psi_T(., s)> ds} and the centred L_T(Phi).

    Psi_T = ``phi_test.scaled(T)``.  Uses one solve with end time T, so
    row k of the grid is v(., T - a_k, a_k).
    """
    params = validate_params(params)
    psi_T = phi_test.scaled(T)
    if phi_test.is_zero or (params.H == 0.0 and params.L == 0.0):
        zero = np.zeros((1, 1))
        g = VGrid(x=np.zeros(1), a=np.zeros(1), E=T, v=zero, v_tilde=zero, u=zero, iterations=0, residual=0.0)
        return LaplaceResult(1.0, 0.0, 1.0, 0.0, g)
    grid = solve_v(params, psi_T, 0.0, T, **solve_kw)
    rep = defect_u(params, psi_T, grid)
    dx = grid.dx

    def space_time(arr):
        per_time = arr.sum(axis=1) * dx
        return float(np.trapezoid(per_time, grid.a))

    log_K = -params.H * space_time(grid.v) - params.L * float(grid.v[-1].sum() * dx)
    log_L = params.H * space_time(rep.u_direct) + params.L * float(rep.u_direct[-1].sum() * dx)
    return LaplaceResult(math.exp(log_K), log_K, math.exp(log_L), log_L, grid)


def write_vgrid_csv(grid: VGrid, path) -> None:
    """Columns x, tau, v, v_tilde, u (tau is the remaining horizon a)."""
    u = grid.u if grid.u is not None else grid.v_tilde - grid.v
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "tau", "v", "v_tilde", "u"])
        for k, a in enumerate(grid.a):
            for j, xv in enumerate(grid.x):
                w.writerow([repr(float(xv)), repr(float(a)), repr(float(grid.v[k, j])),
                            repr(float(grid.v_tilde[k, j])), repr(float(u[k, j]))])
