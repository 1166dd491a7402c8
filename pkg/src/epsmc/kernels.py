"""Real-valued short-time transition kernels for polynomial potentials.

The kernel is the regularized cosine transform

    K(y, u) = lim_{eta->0} (1/2pi) Integral cos(y w + phi(u, w)) e^{-eta w^2} dw

where phi is the odd series 2 * sum_{k>=1} w^(2k+1)/(2k+1)! * U^(2k+1)(u),
which truncates exactly for polynomial U.  The normalization is chosen so a
vanishing phase gives a unit-mass delta in y (rows integrate to 1).

Evaluation strategies:
  * delta      -- phase identically zero (degree <= 2): no pointwise density,
                  rows place unit mass at y = 0 split between grid neighbours.
  * airy       -- only the cubic term survives (degree 3 or 4):
                  K(y) = s * Ai(sign(a) * y * s), s = (3|a|)^(-1/3), a = U'''(u)/3.
  * quadrature -- general case: finite-window quadrature on a phase-adapted
                  grid, analytic integration-by-parts tail corrections, a
                  sweep of Gaussian dampings eta, and Richardson extrapolation
                  to eta = 0.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .accel import HAS_NUMBA, njit, prange, resolve_backend
from .potential import Potential


class KernelConvergenceError(RuntimeError):
    """Quadrature failed to converge; carries the achieved residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class KernelMassWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Evaluation policy for kernel values and rows.

    damping is the largest Gaussian regulator eta; the sweep divides it by
    damping_ratio damping_levels-1 times and Richardson-extrapolates to 0.
    w_cutoff is the envelope floor that bounds the integration window,
    phase_step the accumulated-phase spacing (radians) between quadrature
    nodes.  tail_tolerance is the row-mass leakage warning threshold.
    """

    strategy: str = "auto"
    damping: float = 0.2
    damping_ratio: float = 2.0
    damping_levels: int = 9
    richardson_tol: float = 1e-8
    phase_step: float = 0.1
    w_cutoff: float = 1e-15
    max_points: int = 30_000_000
    tail_tolerance: float = 0.02
    backend: str = "auto"

    def __post_init__(self):
        if self.strategy not in ("auto", "delta", "airy", "quadrature"):
            raise ValueError("unknown kernel strategy %r" % (self.strategy,))
        if self.damping <= 0 or self.damping_ratio <= 1 or self.damping_levels < 3:
            raise ValueError("damping sweep needs damping > 0, ratio > 1, levels >= 3")


@dataclass(frozen=True)
class DiscreteKernel:
    """One row of kernel weights over a uniform y grid.

    weights are K(y_j, u) * spacing (or the split delta mass); mass is their
    stored sum.  Every |weight| must be <= 1 so it can act as an EPS factor.
    """

    weights: np.ndarray
    mass: float
    strategy: str


# ---------------------------------------------------------------------------
# phase series
# ---------------------------------------------------------------------------


def phase_orders(potential: Potential):
    """Odd derivative orders >= 3 with nonvanishing coefficient polynomials."""
    orders = []
    for order in range(3, potential.degree + 1, 2):
        if np.any(potential.derivative_coefficients(order) != 0.0):
            orders.append(order)
    return orders


def phase_coefficients(u, potential: Potential):
    """(orders, coefficients) of phi(u, w) = sum b_o(u) w^o, b_o = 2 U^(o)(u)/o!."""
    orders = phase_orders(potential)
    coefs = np.array([2.0 * potential.derivative(o, u) / math.factorial(o) for o in orders])
    return np.array(orders, dtype=np.int64), coefs


def phase_series(u, w, potential: Potential):
    """The odd phase series; exact (finite) for polynomial potentials."""
    orders, coefs = phase_coefficients(u, potential)
    w = np.asarray(w, dtype=float)
    total = np.zeros_like(w, dtype=float)
    for o, b in zip(orders, coefs):
        total = total + b * w**int(o)
    if total.ndim == 0:
        return float(total)
    return total


def resolve_strategy(potential: Potential, spec: KernelSpec):
    """auto -> delta/airy/quadrature from which odd derivatives survive."""
    orders = phase_orders(potential)
    if spec.strategy == "auto":
        if not orders:
            return "delta"
        if orders == [3]:
            return "airy"
        return "quadrature"
    if spec.strategy == "delta" and orders:
        raise ValueError("delta strategy requires all odd derivatives of order >= 3 to vanish")
    if spec.strategy == "airy" and any(o > 3 for o in orders):
        raise ValueError("airy strategy requires derivatives of order >= 5 to vanish")
    return spec.strategy


# ---------------------------------------------------------------------------
# Airy function of the first kind
# ---------------------------------------------------------------------------

_AI0 = 0.3550280538878172392600632  # Ai(0)  = 3**(-2/3) / Gamma(2/3)
_AIP0 = -0.2588194037928067984051836  # Ai'(0) = -3**(-1/3) / Gamma(1/3)
_AIRY_SWITCH = 6.8
_SQRT_PI = math.sqrt(math.pi)


def _airy_u_coefficients(n):
    u = np.empty(n)
    u[0] = 1.0
    for k in range(1, n):
        u[k] = u[k - 1] * (6 * k - 5) * (6 * k - 3) * (6 * k - 1) / (216.0 * k * (2 * k - 1))
    return u


_AIRY_U = _airy_u_coefficients(24)


def _airy_series(z):
    """Maclaurin series in extended precision; fine for |z| <= ~7."""
    z = np.asarray(z, dtype=np.longdouble)
    z3 = z * z * z
    f_term = np.ones_like(z)
    g_term = z.copy()
    f_sum = f_term.copy()
    g_sum = g_term.copy()
    for k in range(0, 120):
        f_term = f_term * z3 / ((3 * k + 2) * (3 * k + 3))
        g_term = g_term * z3 / ((3 * k + 3) * (3 * k + 4))
        f_sum += f_term
        g_sum += g_term
        if np.all(np.abs(f_term) + np.abs(g_term) < 1e-25 * (np.abs(f_sum) + np.abs(g_sum) + 1.0)):
            break
    return (np.longdouble(_AI0) * f_sum + np.longdouble(_AIP0) * g_sum).astype(float)


def _airy_asymptotic_pos(z):
    zeta = (2.0 / 3.0) * z**1.5
    s = np.zeros_like(z)
    term = np.ones_like(z)
    prev = np.full_like(z, np.inf)
    for k in range(_AIRY_U.size):
        t = term * _AIRY_U[k] * (-1.0) ** k
        grow = np.abs(t) > prev
        t = np.where(grow, 0.0, t)
        s += t
        prev = np.where(grow, prev, np.abs(t))
        term = term / zeta
    return np.exp(-zeta) * s / (2.0 * _SQRT_PI * z**0.25)


def _airy_asymptotic_neg(z):
    x = -z
    zeta = (2.0 / 3.0) * x**1.5
    inv = 1.0 / zeta
    even = np.zeros_like(x)
    odd = np.zeros_like(x)
    for k in range(_AIRY_U.size // 2):
        even += (-1.0) ** k * _AIRY_U[2 * k] * inv ** (2 * k)
        odd += (-1.0) ** k * _AIRY_U[2 * k + 1] * inv ** (2 * k + 1)
    arg = zeta - 0.25 * math.pi
    return (np.cos(arg) * even + np.sin(arg) * odd) / (_SQRT_PI * x**0.25)


def airy_ai(z):
    """Airy function Ai(z): Maclaurin series for small |z|, asymptotics beyond.

    Absolute error below 1e-10 for |z| <= 10 (and decreasing outside).
    """
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty_like(z_arr)
    small = np.abs(z_arr) <= _AIRY_SWITCH
    if np.any(small):
        out[small] = _airy_series(z_arr[small])
    pos = (~small) & (z_arr > 0)
    if np.any(pos):
        out[pos] = _airy_asymptotic_pos(z_arr[pos])
    neg = (~small) & (z_arr < 0)
    if np.any(neg):
        out[neg] = _airy_asymptotic_neg(z_arr[neg])
    if np.ndim(z) == 0:
        return float(out[0])
    return out


def _airy_kernel(y, a):
    """Closed form for a pure cubic phase a*w^3 in the unit-mass convention."""
    s = (3.0 * abs(a)) ** (-1.0 / 3.0)
    return s * airy_ai(np.sign(a) * np.asarray(y, dtype=float) * s)


# ---------------------------------------------------------------------------
# regularized oscillatory quadrature
# ---------------------------------------------------------------------------


def _poly_eval(w, orders, coefs):
    total = np.zeros_like(w)
    for o, b in zip(orders, coefs):
        total += b * w ** int(o)
    return total


def _poly_deriv_eval(w, orders, coefs, deriv):
    total = np.zeros_like(np.asarray(w, dtype=float))
    for o, b in zip(orders, coefs):
        o = int(o)
        if o >= deriv:
            fac = 1.0
            for i in range(deriv):
                fac *= o - i
            total += b * fac * w ** (o - deriv)
    return total


def _tail_next_term(W, eta, ymax, orders, coefs):
    """Magnitude estimate of the first neglected integration-by-parts term."""
    ap = abs(float(_poly_deriv_eval(np.array(W), orders, coefs, 1))) - ymax
    if ap <= 0.0:
        return np.inf
    pp2 = abs(float(_poly_deriv_eval(np.array(W), orders, coefs, 2)))
    pp3 = abs(float(_poly_deriv_eval(np.array(W), orders, coefs, 3)))
    f = math.exp(-eta * W * W)
    fp = 2.0 * eta * W * f
    fpp = abs(4.0 * eta * eta * W * W - 2.0 * eta) * f
    return fpp / ap**3 + 4.0 * fp * pp2 / ap**4 + f * pp3 / ap**4 + 3.0 * f * pp2**2 / ap**5


def _phase_window(orders, coefs, ymax, eta_min, spec):
    """Integration endpoint W: beyond stationary structure, tail terms small."""
    w_env = math.sqrt(-math.log(spec.w_cutoff) / eta_min)
    if len(orders) == 0:
        return w_env
    # beyond the last extremum of phi' so |phi'| is increasing afterwards
    dd = npoly.polyder(npoly.polyder(_phase_poly_coefs(orders, coefs)))
    roots = np.roots(dd[::-1]) if np.any(dd != 0.0) else np.array([])
    real = roots[np.abs(roots.imag) < 1e-9].real if roots.size else np.array([])
    W = max(2.0, 1.25 * float(np.max(np.abs(real))) if real.size else 2.0)
    target = 2.0 * max(ymax, 1.0)
    while abs(float(_poly_deriv_eval(np.array(W), orders, coefs, 1))) < target and W < w_env:
        W *= 1.25
    while _tail_next_term(W, eta_min, ymax, orders, coefs) > 0.05 * spec.richardson_tol and W < w_env:
        W *= 1.2
    return min(W, w_env)


def _phase_poly_coefs(orders, coefs):
    c = np.zeros(int(max(orders)) + 1)
    for o, b in zip(orders, coefs):
        c[int(o)] = b
    return c


def _phase_nodes(orders, coefs, ymax, W, spec):
    """Nodes w_i with roughly spec.phase_step radians of phase per step.

    Uses the smooth monotone map tau(w) = A w + sum |b| w^o (an upper envelope
    of the local phase rate), inverted per uniform tau target by Newton from
    an upper bound; tau is convex so the iteration is monotone.
    """
    A = max(ymax, 1.0)
    abs_coefs = np.abs(coefs)
    tau_W = A * W + float(_poly_eval(np.array(W), orders, abs_coefs))
    n_nodes = int(math.ceil(tau_W / spec.phase_step)) + 1
    if n_nodes > spec.max_points:
        raise KernelConvergenceError(
            "quadrature needs %d nodes, above the %d budget; widen spacing or relax the spec"
            % (n_nodes, spec.max_points)
        )
    targets = np.arange(n_nodes, dtype=float) * spec.phase_step
    ub = targets / A
    for o, b in zip(orders, abs_coefs):
        if b > 0.0:
            ub = np.minimum(ub, (targets / b) ** (1.0 / int(o)))
    w = ub
    for _ in range(60):
        t = A * w + _poly_eval(w, orders, abs_coefs)
        tp = A + _poly_deriv_eval(w, orders, abs_coefs, 1)
        step = (t - targets) / tp
        w = w - step
        if np.max(np.abs(step)) < 1e-13 * (1.0 + np.max(w)):
            break
    w[0] = 0.0
    dtau = A + _poly_deriv_eval(w, orders, abs_coefs, 1)
    return w, 1.0 / dtau


if HAS_NUMBA:

    @njit(cache=True, parallel=True, nogil=True)
    def _cosine_rows_numba(y, w, phi, G, out):
        ny = y.shape[0]
        n = w.shape[0]
        levels = G.shape[0]
        for i in prange(ny):
            yi = y[i]
            acc = np.zeros(levels)
            for j in range(n):
                c = np.cos(yi * w[j] + phi[j])
                for e in range(levels):
                    acc[e] += c * G[e, j]
            for e in range(levels):
                out[i, e] = acc[e]


def _cosine_rows_numpy(y, w, phi, G, out):
    chunk = max(1, int(8_000_000 // (w.size + 1)))
    for s in range(0, y.size, chunk):
        ph = np.outer(y[s : s + chunk], w)
        ph += phi
        np.cos(ph, out=ph)
        out[s : s + chunk] = ph @ G.T


def _quadrature_values(y, orders, coefs, spec: KernelSpec):
    """Kernel values by damped quadrature + Richardson extrapolation to eta = 0."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ymax = float(np.max(np.abs(y))) if y.size else 0.0
    ratio = spec.damping_ratio
    etas = spec.damping / ratio ** np.arange(spec.damping_levels)
    W = _phase_window(orders, coefs, ymax, etas[-1], spec)
    w, dwdtau = _phase_nodes(orders, coefs, ymax, W, spec)
    W = float(w[-1])
    phi = _poly_eval(w, orders, coefs)
    # trapezoid in the tau variable (uniform grid; smooth map keeps the
    # Euler-Maclaurin error confined to the negligible endpoints)
    trap = spec.phase_step * dwdtau
    trap[0] *= 0.5
    trap[-1] *= 0.5
    w2 = w * w
    G = np.exp(-np.outer(etas, w2)) * trap
    out = np.empty((y.size, etas.size))
    if resolve_backend(spec.backend) == "numba":
        _cosine_rows_numba(y, w, phi, G, out)
    else:
        _cosine_rows_numpy(y, w, phi, G, out)
    # integration-by-parts tail corrections at the endpoint
    pp = float(_poly_deriv_eval(np.array(W), orders, coefs, 1))
    ppp = float(_poly_deriv_eval(np.array(W), orders, coefs, 2))
    psi_end = y * W + float(_poly_eval(np.array(W), orders, coefs))
    psip = y + pp
    safe = np.abs(psip) > 1e-9
    f = np.exp(-etas * W * W)
    fp = -2.0 * etas * W * f
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = -np.sin(psi_end)[:, None] * f[None, :] / psip[:, None]
        t2 = (
            -np.cos(psi_end)[:, None]
            * (fp[None, :] * psip[:, None] - f[None, :] * ppp)
            / psip[:, None] ** 3
        )
    tails = np.where(safe[:, None], t1 + t2, 0.0)
    table = (out + tails) / math.pi
    # geometric Richardson to eta = 0
    prev_final = None
    for m in range(1, etas.size):
        fac = ratio**m
        table = (fac * table[:, 1:] - table[:, :-1]) / (fac - 1.0)
        if table.shape[1] == 1:
            break
        prev_final = table[:, -1].copy()
    values = table[:, -1]
    residual = float(np.max(np.abs(values - prev_final))) if prev_final is not None else np.inf
    if not np.isfinite(residual) or residual > spec.richardson_tol:
        raise KernelConvergenceError(
            "damping extrapolation residual %.3g above tolerance %.3g" % (residual, spec.richardson_tol),
            residual=residual,
        )
    return values, residual


# ---------------------------------------------------------------------------
# public evaluation
# ---------------------------------------------------------------------------

_DELTA_COEF_TOL = 1e-13


def kernel_value(y, u, potential: Potential, spec: KernelSpec = KernelSpec()):
    """Pointwise K(y, u).  The delta case has no density; use kernel_row."""
    strategy = resolve_strategy(potential, spec)
    if strategy == "delta":
        raise ValueError("delta kernel has no pointwise density; build a row instead")
    orders, coefs = phase_coefficients(u, potential)
    live = np.abs(coefs) > _DELTA_COEF_TOL
    orders, coefs = orders[live], coefs[live]
    scalar = np.ndim(y) == 0
    if orders.size == 0:
        raise ValueError("phase vanishes at u = %g; the kernel degenerates to a delta there" % u)
    if strategy == "airy":
        vals = _airy_kernel(y, coefs[0])
        return float(vals) if scalar else vals
    vals, _ = _quadrature_values(y, orders, coefs, spec)
    return float(vals[0]) if scalar else vals


def _delta_row(y_grid, spacing):
    weights = np.zeros_like(y_grid)
    pos = -y_grid[0] / spacing  # grid index where y = 0 falls
    j = int(math.floor(pos))
    frac = pos - j
    if 0 <= j < y_grid.size:
        weights[j] = 1.0 - frac
    if frac > 0.0 and 0 <= j + 1 < y_grid.size:
        weights[j + 1] = frac
    return weights


def kernel_row(u, potential: Potential, y_grid, spacing, spec: KernelSpec = KernelSpec()) -> DiscreteKernel:
    """Weights K(y_j, u) * spacing over a uniform y grid (delta mass split linearly).

    Raises when any |weight| exceeds 1 (the EPS factor bound); warns when the
    row mass leaks past spec.tail_tolerance.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid.size >= 2:
        steps = np.diff(y_grid)
        if not np.allclose(steps, spacing, rtol=1e-9, atol=1e-12 * max(1.0, abs(spacing))):
            raise ValueError("y grid must be uniform with the given spacing")
    strategy = resolve_strategy(potential, spec)
    orders, coefs = phase_coefficients(u, potential)
    live = np.abs(coefs) > _DELTA_COEF_TOL
    orders, coefs = orders[live], coefs[live]
    if strategy == "delta" or orders.size == 0:
        weights = _delta_row(y_grid, spacing)
        used = "delta"
    elif strategy == "airy":
        weights = _airy_kernel(y_grid, coefs[0]) * spacing
        used = "airy"
    else:
        values, _ = _quadrature_values(y_grid, orders, coefs, spec)
        weights = values * spacing
        used = "quadrature"
    peak = float(np.max(np.abs(weights))) if weights.size else 0.0
    if peak > 1.0:
        raise ValueError(
            "kernel weight %.3g exceeds 1 at u = %g; use a finer spatial spacing" % (peak, u)
        )
    mass = float(weights.sum())
    if abs(mass - 1.0) > spec.tail_tolerance:
        warnings.warn(
            "kernel row mass %.6f at u = %g leaks %.3g past the window"
            % (mass, u, abs(mass - 1.0)),
            KernelMassWarning,
            stacklevel=2,
        )
    return DiscreteKernel(weights=weights, mass=mass, strategy=used)
