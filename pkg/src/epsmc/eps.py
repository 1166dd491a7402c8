"""Extended-probability-space (EPS) algebra and its Monte Carlo simulation.

A signed number s = k*w with k, w in [-1, 1] is represented in a two-state
space: w is the excess of a probability vector Po = (lam, 1-lam) over a fixed
reference vector V = (v, 1-v), i.e. lam = w + v, and multiplying the excess by
k is performed by a positive stochastic 2x2 swap matrix M(g, v) with g = 1-k.
M leaves V invariant, so after a chain of swaps the state-0 probability is
v + (prod k_l) * w, and the product is recovered as the excess of state-0
counts over the reference level v.

Cancellations of the form 0 = s + (-s) are simulated by choosing the branch
(+s with lam = v + w, -s with lam = v - w) with probability 1/2 each: the two
branch histograms average to the reference level exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng

ALGEBRA_TOL = 1e-12  # double-precision headroom on 2x2 products


@dataclass(frozen=True)
class EpsPair:
    """Two-component state: a probability vector or a signed excess.

    flavor "probability": components nonnegative, summing to 1.
    flavor "quasiprobability": components summing to 0 (the forms (w, -w)).
    """

    p0: float
    p1: float
    flavor: str = "probability"

    def __post_init__(self):
        if self.flavor == "probability":
            if self.p0 < -ALGEBRA_TOL or self.p1 < -ALGEBRA_TOL:
                raise ValueError("probability pair needs nonnegative components, got (%g, %g)" % (self.p0, self.p1))
            if abs(self.p0 + self.p1 - 1.0) > ALGEBRA_TOL:
                raise ValueError("probability pair must sum to 1, got %r" % (self.p0 + self.p1,))
        elif self.flavor == "quasiprobability":
            if abs(self.p0 + self.p1) > ALGEBRA_TOL:
                raise ValueError("quasiprobability pair must sum to 0, got %r" % (self.p0 + self.p1,))
        else:
            raise ValueError("flavor must be probability or quasiprobability")

    def as_array(self):
        return np.array([self.p0, self.p1])


def valid_v_interval(g):
    """Closed interval of reference levels v keeping all entries of M(g, v) nonnegative.

    For g <= 1 every v in [0, 1] works; for 1 < g <= 2 nonnegativity of
    1 - g(1-v) and 1 - gv forces [(g-1)/g, 1/g].
    """
    if g < 0.0 or g > 2.0:
        raise ValueError("g must lie in [0, 2], got %g" % g)
    if g <= 1.0:
        return (0.0, 1.0)
    return ((g - 1.0) / g, 1.0 / g)


@dataclass(frozen=True)
class SwapMatrix:
    """Stochastic matrix ((1-g(1-v), gv), (g(1-v), 1-gv)).

    Columns sum to one by construction; entries are nonnegative iff
    g(1-v) <= 1 and gv <= 1.  Acting on a probability pair it multiplies the
    excess over V = (v, 1-v) by k = 1 - g and leaves V itself fixed.
    """

    g: float
    v: float

    def __post_init__(self):
        if not 0.0 <= self.g <= 2.0:
            raise ValueError("g must lie in [0, 2], got %g" % self.g)
        if not 0.0 <= self.v <= 1.0:
            raise ValueError("v must lie in [0, 1], got %g" % self.v)
        if self.g * (1.0 - self.v) > 1.0:
            raise ValueError(
                "swap matrix entries would be negative: g(1-v) = %g > 1" % (self.g * (1.0 - self.v))
            )
        if self.g * self.v > 1.0:
            raise ValueError("swap matrix entries would be negative: gv = %g > 1" % (self.g * self.v))

    @property
    def k(self):
        return 1.0 - self.g

    def as_array(self):
        g, v = self.g, self.v
        return np.array([[1.0 - g * (1.0 - v), g * v], [g * (1.0 - v), 1.0 - g * v]])

    def apply(self, p: EpsPair) -> EpsPair:
        """Matrix-vector product; defined on probability pairs."""
        if p.flavor != "probability":
            raise ValueError("swap matrices act on probability pairs")
        m = self.as_array()
        q = m @ p.as_array()
        return EpsPair(q[0], q[1])


def swap_matrix(g, v) -> SwapMatrix:
    return SwapMatrix(g, v)


def _check_product_args(k, w, v):
    if abs(k) > 1.0:
        raise ValueError("k must lie in [-1, 1], got %g" % k)
    if abs(w) > 1.0:
        raise ValueError("w must lie in [-1, 1], got %g" % w)
    lo, hi = valid_v_interval(1.0 - k)
    if not lo <= v <= hi:
        raise ValueError("v = %g outside valid interval [%g, %g] for k = %g" % (v, lo, hi, k))
    if not 0.0 <= w + v <= 1.0:
        raise ValueError("w + v = %g must be a probability in [0, 1]" % (w + v))


@dataclass(frozen=True)
class ChainSpec:
    """A chain of EPS factors k_l applied to the excess w over reference v."""

    ks: tuple
    w: float
    v: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "ks", tuple(float(k) for k in self.ks))
        for k in self.ks:
            _check_product_args(k, self.w, self.v)
        if not self.ks:
            raise ValueError("chain needs at least one factor")


@dataclass(frozen=True)
class SimEstimate:
    """Sampled product estimate: excess of state-0 counts over the reference level.

    Counts are exposed so callers can apply their own significance rules.
    """

    value: float
    stderr: float
    count0: int
    histories: int
    v: float


@dataclass(frozen=True)
class CancellationEstimate(SimEstimate):
    plus_histories: int = 0
    plus_count0: int = 0
    minus_histories: int = 0
    minus_count0: int = 0


_CHUNK = 1 << 18


def _sim_chain_counts(ks, w, v, histories, seed, branch_draw=False):
    """Shared engine: per-history splitmix64 streams, vectorized in chunks.

    Draw order per history: [branch,] initial state, then one draw per swap.
    Returns (count0, plus_histories, plus_count0) where the branch fields are
    meaningful only when branch_draw is set.
    """
    if histories < 1:
        raise ValueError("histories must be >= 1")
    count0 = 0
    plus_n = 0
    plus_count0 = 0
    for start in range(0, histories, _CHUNK):
        n = min(_CHUNK, histories - start)
        idx = np.arange(start, start + n, dtype=np.uint64)
        states = rng.stream_state(seed, idx)
        if branch_draw:
            states, u = rng.uniforms(states)
            plus = u < 0.5
            lam = np.where(plus, v + w, v - w)
        else:
            plus = None
            lam = v + w
        states, u = rng.uniforms(states)
        state = (u >= lam).astype(np.int8)  # 0 means EPS state 0
        for k in ks:
            g = 1.0 - k
            p_swap = np.where(state == 0, g * (1.0 - v), g * v)
            states, u = rng.uniforms(states)
            state ^= (u < p_swap).astype(np.int8)
        ended0 = state == 0
        count0 += int(np.count_nonzero(ended0))
        if branch_draw:
            plus_n += int(np.count_nonzero(plus))
            plus_count0 += int(np.count_nonzero(ended0 & plus))
    return count0, plus_n, plus_count0


def _binomial_stderr(count, histories):
    p = count / histories
    return float(np.sqrt(p * (1.0 - p) / histories))


def simulate_product(k, w, v=0.5, histories=100_000, seed=0) -> SimEstimate:
    """Estimate s = k*w as the excess of state-0 frequency over v.

    The initial state is 0 with probability lam = w + v; one stochastic swap
    with M(1-k, v) multiplies the excess by k, so the estimator expectation
    is exactly k*w.
    """
    _check_product_args(k, w, v)
    count0, _, _ = _sim_chain_counts((k,), w, v, histories, seed)
    return SimEstimate(
        value=count0 / histories - v,
        stderr=_binomial_stderr(count0, histories),
        count0=count0,
        histories=histories,
        v=v,
    )


def simulate_chain(spec: ChainSpec, histories=100_000, seed=0) -> SimEstimate:
    """Estimate (prod k_l) * w by chaining one swap per factor."""
    count0, _, _ = _sim_chain_counts(spec.ks, spec.w, spec.v, histories, seed)
    return SimEstimate(
        value=count0 / histories - spec.v,
        stderr=_binomial_stderr(count0, histories),
        count0=count0,
        histories=histories,
        v=spec.v,
    )


def simulate_cancellation(k, w, v=0.5, histories=100_000, seed=0) -> CancellationEstimate:
    """Simulate s + (-s): each history picks the +s or -s branch with
    probability 1/2 and runs the product simulation with w or -w.  The excess
    over v estimates 0; branch counts are returned for inspection."""
    _check_product_args(k, w, v)
    _check_product_args(k, -w, v)
    count0, plus_n, plus_count0 = _sim_chain_counts((k,), w, v, histories, seed, branch_draw=True)
    return CancellationEstimate(
        value=count0 / histories - v,
        stderr=_binomial_stderr(count0, histories),
        count0=count0,
        histories=histories,
        v=v,
        plus_histories=plus_n,
        plus_count0=plus_count0,
        minus_histories=histories - plus_n,
        minus_count0=count0 - plus_count0,
    )


def chain_expectation(ks, w, v=0.5, lam=None):
    """Exact state-0 excess after the chain, by 2x2 matrix products (no sampling).

    Equals (prod k_l) * w up to roundoff; used as the sampling-free reference.
    """
    if lam is None:
        lam = w + v
    p = np.array([lam, 1.0 - lam])
    for k in ks:
        p = swap_matrix(1.0 - k, v).as_array() @ p
    return float(p[0] - v)
