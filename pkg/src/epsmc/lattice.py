"""Spatiotemporal lattice, nondimensional units, and the initial quasiprobability table.

The discrete dynamics lives on a uniform nondimensional grid u_i.  Time is
sliced into n steps; positions scale as x = u * sqrt(hbar * epsilon / mass)
and potential energies as U_nondim = (epsilon / hbar) * U_phys, so one slice
is one unit of nondimensional time.

Consecutive slices are linked by the noise-driven second-difference map

    u_next = 2 u_now - u_prev - U'(u_now) + y

whose exact inverse recovers the noise for any successor; successors are
restricted to grid points, which makes noise values and positions share one
spacing (unit Jacobian) between the sampler and the exact path sum.

The initial condition is the discrete Wigner transform of the slice-zero
phase-modified wave function Phi = psi0 * exp(-i U0), tabulated over ordered
pairs (u0, u1) at discrete velocity u1 - u0, then offset and scaled into an
initial-state probability lambda = v + c * W * du^2 in [0, 1].
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import czt

from .potential import Potential


@dataclass(frozen=True)
class LatticeSpec:
    """Grid and time-slicing parameters (positions in nondimensional units)."""

    n_slices: int
    u_min: float
    u_max: float
    n_points: int
    epsilon: float = 1.0
    mass: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.n_slices < 2:
            raise ValueError("n_slices must be >= 2")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if not self.u_max > self.u_min:
            raise ValueError("u_max must exceed u_min")
        for name in ("epsilon", "mass", "hbar"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)

    @property
    def spacing(self):
        return (self.u_max - self.u_min) / (self.n_points - 1)

    @property
    def position_scale(self):
        """sqrt(hbar * epsilon / mass): physical length of one nondimensional unit."""
        return math.sqrt(self.hbar * self.epsilon / self.mass)

    def grid(self):
        return self.u_min + self.spacing * np.arange(self.n_points)


def nondim_position(x, spec: LatticeSpec):
    """Physical position -> nondimensional u (divide by sqrt(hbar eps / m))."""
    return np.asarray(x, dtype=float) / spec.position_scale


def nondim_energy(value, spec: LatticeSpec):
    """Physical energy -> nondimensional (multiply by eps / hbar)."""
    return np.asarray(value, dtype=float) * (spec.epsilon / spec.hbar)


def nondim_potential(phys_coefficients, spec: LatticeSpec) -> Potential:
    """Rescale a physical polynomial potential into lattice units.

    U_nd(u) = (eps/hbar) * U_phys(u * position_scale), coefficient by coefficient.
    """
    ell = spec.position_scale
    scale = spec.epsilon / spec.hbar
    coeffs = [scale * c * ell**j for j, c in enumerate(phys_coefficients)]
    return Potential(tuple(coeffs))


def langevin_step(u_now, u_prev, y, potential: Potential):
    """Successor position: 2 u_now - u_prev - U'(u_now) + y."""
    return 2.0 * np.asarray(u_now, dtype=float) - u_prev - potential.derivative(1, u_now) + y


def noise_for_target(u_target, u_now, u_prev, potential: Potential):
    """Exact inverse of langevin_step: the noise reaching u_target."""
    return np.asarray(u_target, dtype=float) + u_prev - 2.0 * np.asarray(u_now, dtype=float) + potential.derivative(1, u_now)


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------


def _grid_normalize(psi, du):
    norm = math.sqrt(float(np.sum(np.abs(psi) ** 2).real) * du)
    if norm == 0.0:
        raise ValueError("initial state is identically zero")
    return psi / norm


def gaussian_state(spec: LatticeSpec, center=0.0, width=1.0, momentum=0.0):
    """Normalized Gaussian wave packet exp(-(u-c)^2/4w^2 + i p u) on the grid."""
    if width <= 0:
        raise ValueError("width must be positive")
    u = spec.grid()
    psi = np.exp(-((u - center) ** 2) / (4.0 * width**2) + 1j * momentum * u)
    return _grid_normalize(psi, spec.spacing)


def ho_eigenstate(spec: LatticeSpec, n=0, center=0.0, scale=1.0):
    """n-th harmonic-oscillator eigenstate (Hermite recurrence), grid-normalized."""
    if n < 0:
        raise ValueError("eigenstate index must be >= 0")
    u = (spec.grid() - center) / scale
    h_prev = np.ones_like(u)
    h = 2.0 * u if n >= 1 else h_prev
    for k in range(2, n + 1):
        h, h_prev = 2.0 * u * h - 2.0 * (k - 1) * h_prev, h
    psi = (h if n >= 1 else h_prev) * np.exp(-0.5 * u**2)
    return _grid_normalize(psi.astype(complex), spec.spacing)


def load_state_csv(path, spec: LatticeSpec):
    """Two-column CSV (re, im) sampled on the grid; renormalization not applied."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape != (spec.n_points, 2):
        raise ValueError(
            "state file must have %d rows of (re, im), got shape %s" % (spec.n_points, data.shape)
        )
    return data[:, 0] + 1j * data[:, 1]


# ---------------------------------------------------------------------------
# modified Wigner table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WignerTable:
    """Initial quasiprobability over ordered grid pairs (u0, u1).

    values[i0, i1] is the discrete Wigner transform of psi0 * exp(-i U0) at
    position u0 and velocity u1 - u0.  lambda = v + c * values * du^2 is the
    initial-state probability; c is chosen so lambda stays in [0, 1].
    """

    values: np.ndarray
    c: float
    v: float
    spacing: float

    def signed_mass(self):
        """values * du^2: the per-pair initial quasiprobability mass."""
        return self.values * self.spacing**2

    def lambda_table(self):
        lam = self.v + self.c * self.signed_mass()
        return np.clip(lam, 0.0, 1.0)


def _half_grid_interp(psi):
    """psi on half-grid offsets q*du/2: nodes at even q, midpoints averaged."""
    n = psi.size
    half = np.empty(2 * n - 1, dtype=complex)
    half[0::2] = psi
    half[1::2] = 0.5 * (psi[:-1] + psi[1:])
    return half


def wigner_init(
    psi0,
    potential: Potential,
    spec: LatticeSpec,
    v=0.5,
    norm_tol=1e-6,
    imag_tol=1e-6,
    mass_defect_tol=1e-3,
):
    """Build the initial table from psi0 samples and the slice-zero potential.

    The transform sums over relative offsets w = m * du (grid-limited), with
    psi evaluated at u0 +/- w/2 by linear interpolation and the slice-zero
    potential phase applied exactly at those points.

    The table mass sum must stay within mass_defect_tol of 1.  The default
    1e-3 needs roughly spacing <= width/5; coarse desk grids carry an
    intrinsic percent-level defect and must raise the tolerance explicitly
    (the defect is shared exactly by the sampler and the path-sum oracle).
    """
    psi0 = np.asarray(psi0, dtype=complex)
    n = spec.n_points
    if psi0.shape != (n,):
        raise ValueError("psi0 must be sampled on the %d-point grid" % n)
    du = spec.spacing
    norm = float(np.sum(np.abs(psi0) ** 2).real) * du
    if abs(norm - 1.0) > norm_tol:
        raise ValueError("psi0 is not normalized on the grid: sum |psi|^2 du = %.8f" % norm)
    if not 0.0 < v < 1.0:
        raise ValueError("reference level v must lie strictly inside (0, 1)")

    u_half = spec.u_min + 0.5 * du * np.arange(2 * n - 1)
    phi_half = _half_grid_interp(psi0) * np.exp(-1j * np.asarray(potential.value(u_half), dtype=float))

    # F[i0, m] = Phi(u0 + m du/2) * conj(Phi(u0 - m du/2)), zero outside the grid
    i0 = np.arange(n)
    m = np.arange(-(n - 1), n)
    qp = 2 * i0[:, None] + m[None, :]
    qm = 2 * i0[:, None] - m[None, :]
    valid = (qp >= 0) & (qp <= 2 * n - 2) & (qm >= 0) & (qm <= 2 * n - 2)
    qp = np.clip(qp, 0, 2 * n - 2)
    qm = np.clip(qm, 0, 2 * n - 2)
    F = np.where(valid, phi_half[qp] * np.conj(phi_half[qm]), 0.0)

    # sum_m exp(-i j m du^2) F[m] for j = i1 - i0 via one batched chirp-z transform
    theta = du * du
    n_out = 2 * n - 1
    shift = np.exp(1j * theta * (n - 1) * np.arange(2 * n - 1))
    x = F * shift[None, :]
    out = czt(x, m=n_out, w=np.exp(-1j * theta), a=1.0 + 0.0j, axis=-1)
    out *= np.exp(1j * theta * (n - 1) * np.arange(n_out) - 1j * theta * (n - 1) ** 2)[None, :]

    peak = float(np.max(np.abs(out.real))) or 1.0
    resid = float(np.max(np.abs(out.imag)))
    if resid > imag_tol * peak:
        raise ValueError(
            "imaginary residue %.3g of peak in the Wigner construction signals a grid problem"
            % (resid / peak)
        )
    # gather j = i1 - i0 into the (i0, i1) table
    j_index = (np.arange(n)[None, :] - i0[:, None]) + (n - 1)
    values = (du / (2.0 * math.pi)) * np.take_along_axis(out.real, j_index, axis=1)

    total = float(values.sum() * du**2)
    if abs(total - 1.0) > mass_defect_tol:
        raise ValueError(
            "quasiprobability normalization defect %.3g exceeds %g; refine the grid "
            "(or raise mass_defect_tol for a deliberately coarse lattice)"
            % (abs(total - 1.0), mass_defect_tol)
        )
    peak_mass = float(np.max(np.abs(values))) * du**2
    c = min(v, 1.0 - v) / peak_mass
    return WignerTable(values=values, c=c, v=v, spacing=du)
