"""First-principles Monte Carlo engine.

Each history runs a forward lattice walk and the two-state swap process at the
same time, driven by one splittable random stream per (seed, history):

  1. draw the initial pair (u0, u1) uniformly over the grid;
  2. set the internal state to 0 with probability lambda(u0, u1) from the
     initial quasiprobability table;
  3. for every chained slice draw a successor grid point, look up the kernel
     weight k of the implied noise, and apply one stochastic swap with
     g = 1 - k (uniform strategy), or draw the successor proportional to |k|
     and fold the sign and row mass into the swap (importance strategy);
  4. record the final bin and final state.

The quantum probability mass per bin is the scaled excess of state-0 counts
over the reference level:  Q(x) = N_scale * (h0 - v*(h0+h1)) / H,
with N_scale = N_u^(n+1) / c for the uniform strategy (the deterministic
amplification factor: N_u^2 initial pairs, N_u^(n-1) successor draws, and the
table scale c); its expectation equals the exact transfer path sum bin by bin
on the same discretization.
"""

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .accel import HAS_NUMBA, njit, resolve_backend, resolve_workers
from .kernels import KernelMassWarning, KernelSpec, kernel_row
from .lattice import LatticeSpec, WignerTable, wigner_init
from .potential import Potential

_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# discretization objects shared with the exact oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelTables:
    """Kernel rows for every (slice, site): rows[t, b, a + c] is the weight of
    stepping (u_a, u_b) -> (u_b, u_c), with the noise offset of site b baked in.
    """

    rows: np.ndarray  # (T, N, 2N-1)
    masses: np.ndarray  # (T, N)
    slice_map: np.ndarray  # (n-1,) table index per chained step
    delta_rows: bool  # every row is a two-point delta split
    prefix: np.ndarray  # (T, N, 2N) cumulative |k| for importance draws
    seg_max: np.ndarray  # (T,) largest |k| mass of any length-N row segment
    min_weight: float
    max_abs_weight: float
    worst_leakage: float

    @property
    def n_tables(self):
        return self.rows.shape[0]


def build_kernel_tables(lattice: LatticeSpec, potentials, spec: KernelSpec) -> KernelTables:
    """Build one row table per distinct chained-slice potential.

    Mass-leakage warnings from individual rows are aggregated into a single
    summary warning; per-row masses stay available on the result.
    """
    n = lattice.n_slices
    potentials = normalize_potentials(potentials, n)
    grid = lattice.grid()
    du = lattice.spacing
    npts = lattice.n_points
    unique = []
    table_of = {}
    for l in range(1, n):
        pot = potentials[l]
        if pot not in table_of:
            table_of[pot] = len(unique)
            unique.append(pot)
    slice_map = np.array([table_of[potentials[l]] for l in range(1, n)], dtype=np.int64)

    m_offsets = du * np.arange(2 * npts - 1)
    rows = np.empty((len(unique), npts, 2 * npts - 1))
    masses = np.empty((len(unique), npts))
    all_delta = True
    leaks = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", KernelMassWarning)
        for t, pot in enumerate(unique):
            dU = pot.derivative(1, grid)
            for b in range(npts):
                beta = 2.0 * lattice.u_min - 2.0 * grid[b] + float(dU[b])
                row = kernel_row(grid[b], pot, m_offsets + beta, du, spec)
                rows[t, b] = row.weights
                masses[t, b] = row.mass
                if row.strategy != "delta":
                    all_delta = False
    for w in caught:
        if issubclass(w.category, KernelMassWarning):
            leaks.append(str(w.message))
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    worst = float(np.max(np.abs(masses - 1.0))) if masses.size else 0.0
    if leaks:
        warnings.warn(
            "%d kernel rows leak mass past the window (worst |mass-1| = %.3g); "
            "widen the grid if this exceeds the intended tolerance" % (len(leaks), worst),
            KernelMassWarning,
            stacklevel=2,
        )
    absrows = np.abs(rows)
    prefix = np.zeros((len(unique), npts, 2 * npts))
    np.cumsum(absrows, axis=2, out=prefix[:, :, 1:])
    # largest |k| mass over any successor window [a, a + N)
    seg = prefix[:, :, npts:] - prefix[:, :, :npts]
    seg_max = seg.max(axis=(1, 2))
    return KernelTables(
        rows=rows,
        masses=masses,
        slice_map=slice_map,
        delta_rows=all_delta,
        prefix=prefix,
        seg_max=seg_max,
        min_weight=float(rows.min()),
        max_abs_weight=float(absrows.max()),
        worst_leakage=worst,
    )


def normalize_potentials(potentials, n_slices):
    """Accept one Potential or a per-slice sequence of length n_slices."""
    if isinstance(potentials, Potential):
        return (potentials,) * n_slices
    potentials = tuple(potentials)
    if len(potentials) == 1:
        return potentials * n_slices
    if len(potentials) != n_slices:
        raise ValueError("need 1 or %d per-slice potentials, got %d" % (n_slices, len(potentials)))
    return potentials


def check_reference_level(v, tables: KernelTables, strategy="uniform"):
    """Reference level must keep every swap matrix of the run nonnegative."""
    if strategy == "importance":
        has_neg = np.zeros(tables.rows.shape[0], dtype=bool)
        f_min = 0.0
        npts = tables.rows.shape[1]
        for t in range(tables.rows.shape[0]):
            neg = tables.rows[t] < 0.0
            if not neg.any():
                continue
            pref_neg = np.zeros((npts, 2 * npts))
            np.cumsum(np.abs(np.where(neg, tables.rows[t], 0.0)), axis=1, out=pref_neg[:, 1:])
            seg_neg = pref_neg[:, npts:] - pref_neg[:, :npts]
            seg_all = tables.prefix[t, :, npts:] - tables.prefix[t, :, :npts]
            mask = seg_neg > 0.0
            if mask.any():
                f_min = min(f_min, -float((seg_all[mask] / tables.seg_max[t]).max()))
        k_min = f_min
    else:
        k_min = min(0.0, tables.min_weight)
    if k_min < 0.0:
        g = 1.0 - k_min
        lo, hi = (g - 1.0) / g, 1.0 / g
        if not lo <= v <= hi:
            raise ValueError(
                "reference level v = %g outside [%g, %g] required by the most negative "
                "kernel factor %g" % (v, lo, hi, k_min)
            )


# ---------------------------------------------------------------------------
# run configuration / result
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    lattice: LatticeSpec
    potentials: tuple
    psi0: np.ndarray
    histories: int
    seed: int = 0
    v: float = 0.5
    strategy: str = "uniform"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    backend: str = "auto"
    workers: int = None
    wigner_mass_tol: float = 1e-3

    def __post_init__(self):
        if self.histories < 1:
            raise ValueError("histories must be >= 1")
        if not 0 <= self.seed < 2**63:
            raise ValueError("seed must lie in [0, 2^63)")
        if self.strategy not in ("uniform", "importance"):
            raise ValueError("strategy must be uniform or importance")
        if not 0.0 < self.v < 1.0:
            raise ValueError("v must lie strictly inside (0, 1)")
        object.__setattr__(self, "potentials", normalize_potentials(self.potentials, self.lattice.n_slices))
        object.__setattr__(self, "psi0", np.asarray(self.psi0, dtype=complex))


@dataclass(frozen=True)
class RunResult:
    bin_centers: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    q_hat: np.ndarray
    stderr: np.ndarray
    n_scale: float
    histories: int
    v: float
    seed: int
    strategy: str
    diagnostics: dict


@dataclass(frozen=True)
class Tables:
    """Discretization bundle shared by the sampler and the exact oracle."""

    wigner: WignerTable
    kernels: KernelTables
    lam: np.ndarray


def build_tables(config: RunConfig) -> Tables:
    wig = wigner_init(
        config.psi0,
        config.potentials[0],
        config.lattice,
        v=config.v,
        mass_defect_tol=config.wigner_mass_tol,
    )
    ktab = build_kernel_tables(config.lattice, config.potentials, config.kernel)
    check_reference_level(config.v, ktab, config.strategy)
    return Tables(wigner=wig, kernels=ktab, lam=wig.lambda_table())


# ---------------------------------------------------------------------------
# history engines (numba + numpy, bit-identical)
# ---------------------------------------------------------------------------

_GOLDEN = rng.GOLDEN
_SPLIT = rng.SPLIT
_MIX1 = rng.MIX1
_MIX2 = rng.MIX2
_ONE = rng.ONE
_R30 = rng.R30
_R27 = rng.R27
_R31 = rng.R31
_R11 = rng.R11
_INV53 = rng.INV53


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _uniform_histories_numba(start, stop, seed, lam, rows, slice_map, v, h0, h1):
        npts = lam.shape[0]
        nsteps = slice_map.shape[0]
        swaps = 0
        base = (seed * _GOLDEN + _ONE)
        base = (base ^ (base >> _R30)) * _MIX1
        base = (base ^ (base >> _R27)) * _MIX2
        base = base ^ (base >> _R31)
        for h in range(start, stop):
            s = base + np.uint64(h) * _SPLIT
            s = (s ^ (s >> _R30)) * _MIX1
            s = (s ^ (s >> _R27)) * _MIX2
            s = s ^ (s >> _R31)
            s = s + _GOLDEN
            z = (s ^ (s >> _R30)) * _MIX1
            z = (z ^ (z >> _R27)) * _MIX2
            z = z ^ (z >> _R31)
            a = int(float(z >> _R11) * _INV53 * npts)
            s = s + _GOLDEN
            z = (s ^ (s >> _R30)) * _MIX1
            z = (z ^ (z >> _R27)) * _MIX2
            z = z ^ (z >> _R31)
            b = int(float(z >> _R11) * _INV53 * npts)
            s = s + _GOLDEN
            z = (s ^ (s >> _R30)) * _MIX1
            z = (z ^ (z >> _R27)) * _MIX2
            z = z ^ (z >> _R31)
            state = 0 if float(z >> _R11) * _INV53 < lam[a, b] else 1
            for l in range(nsteps):
                s = s + _GOLDEN
                z = (s ^ (s >> _R30)) * _MIX1
                z = (z ^ (z >> _R27)) * _MIX2
                z = z ^ (z >> _R31)
                c = int(float(z >> _R11) * _INV53 * npts)
                k = rows[slice_map[l], b, a + c]
                g = 1.0 - k
                p = g * (1.0 - v) if state == 0 else g * v
                s = s + _GOLDEN
                z = (s ^ (s >> _R30)) * _MIX1
                z = (z ^ (z >> _R27)) * _MIX2
                z = z ^ (z >> _R31)
                if float(z >> _R11) * _INV53 < p:
                    state = 1 - state
                    swaps += 1
                a = b
                b = c
            if state == 0:
                h0[b] += 1
            else:
                h1[b] += 1
        return swaps

    @njit(cache=True, nogil=True)
    def _importance_histories_numba(start, stop, seed, lam, rows, prefix, inv_seg_max, slice_map, v, h0, h1):
        npts = lam.shape[0]
        nsteps = slice_map.shape[0]
        swaps = 0
        base = (seed * _GOLDEN + _ONE)
        base = (base ^ (base >> _R30)) * _MIX1
        base = (base ^ (base >> _R27)) * _MIX2
        base = base ^ (base >> _R31)
        for h in range(start, stop):
            s = base + np.uint64(h) * _SPLIT
            s = (s ^ (s >> _R30)) * _MIX1
            s = (s ^ (s >> _R27)) * _MIX2
            s = s ^ (s >> _R31)
            s = s + _GOLDEN
            z = (s ^ (s >> _R30)) * _MIX1
            z = (z ^ (z >> _R27)) * _MIX2
            z = z ^ (z >> _R31)
            a = int(float(z >> _R11) * _INV53 * npts)
            s = s + _GOLDEN
            z = (s ^ (s >> _R30)) * _MIX1
            z = (z ^ (z >> _R27)) * _MIX2
            z = z ^ (z >> _R31)
            b = int(float(z >> _R11) * _INV53 * npts)
            s = s + _GOLDEN
            z = (s ^ (s >> _R30)) * _MIX1
            z = (z ^ (z >> _R27)) * _MIX2
            z = z ^ (z >> _R31)
            state = 0 if float(z >> _R11) * _INV53 < lam[a, b] else 1
            for l in range(nsteps):
                t = slice_map[l]
                s = s + _GOLDEN
                z = (s ^ (s >> _R30)) * _MIX1
                z = (z ^ (z >> _R27)) * _MIX2
                z = z ^ (z >> _R31)
                u = float(z >> _R11) * _INV53
                lo = prefix[t, b, a]
                seg = prefix[t, b, a + npts] - lo
                if seg > 0.0:
                    target = lo + u * seg
                    m = np.searchsorted(prefix[t, b], target, side="right") - 1
                    if m < a:
                        m = a
                    elif m > a + npts - 1:
                        m = a + npts - 1
                    c = m - a
                    f = seg * inv_seg_max[t]
                    if rows[t, b, m] < 0.0:
                        f = -f
                else:
                    c = int(u * npts)
                    f = 0.0
                g = 1.0 - f
                p = g * (1.0 - v) if state == 0 else g * v
                s = s + _GOLDEN
                z = (s ^ (s >> _R30)) * _MIX1
                z = (z ^ (z >> _R27)) * _MIX2
                z = z ^ (z >> _R31)
                if float(z >> _R11) * _INV53 < p:
                    state = 1 - state
                    swaps += 1
                a = b
                b = c
            if state == 0:
                h0[b] += 1
            else:
                h1[b] += 1
        return swaps


def _uniform_histories_numpy(start, stop, seed, lam, rows, slice_map, v, h0, h1):
    npts = lam.shape[0]
    swaps = 0
    for lo_h in range(start, stop, _CHUNK):
        hi_h = min(stop, lo_h + _CHUNK)
        idx = np.arange(lo_h, hi_h, dtype=np.uint64)
        s = rng.stream_state(seed, idx)
        s, u = rng.uniforms(s)
        a = (u * npts).astype(np.int64)
        s, u = rng.uniforms(s)
        b = (u * npts).astype(np.int64)
        s, u = rng.uniforms(s)
        state = (u >= lam[a, b]).astype(np.int8)
        for l in range(slice_map.shape[0]):
            s, u = rng.uniforms(s)
            c = (u * npts).astype(np.int64)
            k = rows[slice_map[l], b, a + c]
            g = 1.0 - k
            p = np.where(state == 0, g * (1.0 - v), g * v)
            s, u = rng.uniforms(s)
            flips = u < p
            state ^= flips.astype(np.int8)
            swaps += int(np.count_nonzero(flips))
            a, b = b, c
        np.add.at(h0, b[state == 0], 1)
        np.add.at(h1, b[state == 1], 1)
    return swaps


def _importance_histories_numpy(start, stop, seed, lam, rows, prefix, inv_seg_max, slice_map, v, h0, h1):
    npts = lam.shape[0]
    swaps = 0
    for lo_h in range(start, stop, _CHUNK):
        hi_h = min(stop, lo_h + _CHUNK)
        idx = np.arange(lo_h, hi_h, dtype=np.uint64)
        s = rng.stream_state(seed, idx)
        s, u = rng.uniforms(s)
        a = (u * npts).astype(np.int64)
        s, u = rng.uniforms(s)
        b = (u * npts).astype(np.int64)
        s, u = rng.uniforms(s)
        state = (u >= lam[a, b]).astype(np.int8)
        for l in range(slice_map.shape[0]):
            t = int(slice_map[l])
            s, u = rng.uniforms(s)
            pf = prefix[t, b]  # (chunk, 2N)
            lo = pf[np.arange(b.size), a]
            seg = pf[np.arange(b.size), a + npts] - lo
            positive = seg > 0.0
            target = lo + u * seg
            m = np.sum(pf <= target[:, None], axis=1) - 1
            m = np.clip(m, a, a + npts - 1)
            c_imp = m - a
            f = seg * inv_seg_max[t]
            f = np.where(rows[t, b, m] < 0.0, -f, f)
            c = np.where(positive, c_imp, (u * npts).astype(np.int64))
            f = np.where(positive, f, 0.0)
            g = 1.0 - f
            p = np.where(state == 0, g * (1.0 - v), g * v)
            s, u = rng.uniforms(s)
            flips = u < p
            state ^= flips.astype(np.int8)
            swaps += int(np.count_nonzero(flips))
            a, b = b, c
        np.add.at(h0, b[state == 0], 1)
        np.add.at(h1, b[state == 1], 1)
    return swaps


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


def excess(h0, h1, v, n_scale, histories):
    """Per-bin scaled excess over the reference level and its standard error.

    The per-history contribution to a bin is (1-v) for state 0 and -v for
    state 1; the standard error is the binomial (plug-in) deviation of that
    sum, scaled by N_scale.  Empty bins report 0 +/- 0.
    """
    h0 = np.asarray(h0, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    raw = h0 - v * (h0 + h1)
    q = n_scale * raw / histories
    var = ((1.0 - v) ** 2 * h0 + v**2 * h1) / histories - (raw / histories) ** 2
    var = np.maximum(var, 0.0)
    se = n_scale * np.sqrt(var / histories)
    return q, se


def scale_factor(config: RunConfig, tables: Tables):
    """Deterministic amplification N_scale making E[q_hat] the exact path sum."""
    npts = config.lattice.n_points
    n = config.lattice.n_slices
    if config.strategy == "uniform":
        return npts ** (n + 1) / tables.wigner.c
    seg = tables.kernels.seg_max[tables.kernels.slice_map]
    return npts**2 * float(np.prod(seg)) / tables.wigner.c


@dataclass(frozen=True)
class CostEstimate:
    n_scale: float
    predicted_rel_stderr: float
    feasible: bool
    max_abs_weight: float


def estimate_cost(config: RunConfig, tables: Tables = None) -> CostEstimate:
    """Predicted relative standard error of the total normalization sum.

    stderr(sum_x q_hat) = N_scale * sqrt(v(1-v)/H) against a total of ~1;
    configurations above 100% are flagged infeasible (the sign-problem
    amplification N_scale has outrun the history budget).
    """
    if tables is None:
        tables = build_tables(config)
    n_scale = scale_factor(config, tables)
    rel = n_scale * np.sqrt(config.v * (1.0 - config.v) / config.histories)
    return CostEstimate(
        n_scale=float(n_scale),
        predicted_rel_stderr=float(rel),
        feasible=bool(rel <= 1.0),
        max_abs_weight=tables.kernels.max_abs_weight,
    )


def _shard_bounds(histories, workers):
    cuts = np.linspace(0, histories, workers + 1).astype(np.int64)
    return [(int(cuts[i]), int(cuts[i + 1])) for i in range(workers) if cuts[i + 1] > cuts[i]]


def run(config: RunConfig, tables: Tables = None) -> RunResult:
    """Run the full two-process simulation and extract excess probabilities."""
    t_start = time.perf_counter()
    if tables is None:
        tables = build_tables(config)
    backend = resolve_backend(config.backend)
    workers = resolve_workers(config.workers)
    npts = config.lattice.n_points
    seed = np.uint64(config.seed)
    lam = tables.lam
    ktab = tables.kernels
    inv_seg_max = np.where(ktab.seg_max > 0.0, 1.0 / ktab.seg_max, 0.0)

    def shard_worker(bounds):
        lo, hi = bounds
        h0 = np.zeros(npts, dtype=np.int64)
        h1 = np.zeros(npts, dtype=np.int64)
        if config.strategy == "uniform":
            if backend == "numba":
                swaps = _uniform_histories_numba(lo, hi, seed, lam, ktab.rows, ktab.slice_map, config.v, h0, h1)
            else:
                swaps = _uniform_histories_numpy(lo, hi, seed, lam, ktab.rows, ktab.slice_map, config.v, h0, h1)
        else:
            if backend == "numba":
                swaps = _importance_histories_numba(
                    lo, hi, seed, lam, ktab.rows, ktab.prefix, inv_seg_max, ktab.slice_map, config.v, h0, h1
                )
            else:
                swaps = _importance_histories_numpy(
                    lo, hi, seed, lam, ktab.rows, ktab.prefix, inv_seg_max, ktab.slice_map, config.v, h0, h1
                )
        return h0, h1, swaps

    shards = _shard_bounds(config.histories, workers)
    if len(shards) > 1:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            parts = list(pool.map(shard_worker, shards))
    else:
        parts = [shard_worker(s) for s in shards]
    h0 = np.sum([p[0] for p in parts], axis=0)
    h1 = np.sum([p[1] for p in parts], axis=0)
    swaps = int(sum(p[2] for p in parts))

    n_scale = scale_factor(config, tables)
    q, se = excess(h0, h1, config.v, n_scale, config.histories)
    lam_min, lam_max = float(lam.min()), float(lam.max())
    diagnostics = {
        "kernel_mass_worst_leakage": ktab.worst_leakage,
        "kernel_min_weight": ktab.min_weight,
        "kernel_max_abs_weight": ktab.max_abs_weight,
        "lambda_range": [lam_min, lam_max],
        "wigner_mass_defect": float(abs(tables.wigner.signed_mass().sum() - 1.0)),
        "wigner_scale_c": tables.wigner.c,
        "swap_count": swaps,
        "backend": backend,
        "workers": workers,
        "wall_clock_seconds": time.perf_counter() - t_start,
    }
    return RunResult(
        bin_centers=config.lattice.grid(),
        h0=h0,
        h1=h1,
        q_hat=q,
        stderr=se,
        n_scale=float(n_scale),
        histories=config.histories,
        v=config.v,
        seed=config.seed,
        strategy=config.strategy,
        diagnostics=diagnostics,
    )
