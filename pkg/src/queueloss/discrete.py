"""Bounded single-server queue in discrete time: exact loss statistics and paths.

The queue length walks on {0, ..., L}: up one unit with probability p (an
arriving packet is enqueued), down one unit otherwise (a service unit
leaves). At the walls the blocked move is a hold: an arrival into a full
buffer is dropped (that step is a loss event) and a service slot on an empty
buffer idles. Detailed balance holds with weights q^l, q = p/(1-p), so the
transition matrix is similar to a symmetric tridiagonal matrix; all exact
evaluators below run off that spectral decomposition, which turns the
time sums appearing in window variances and correlators into closed
geometric sums.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics

__all__ = [
    "DiscreteQueueParams",
    "TransitionKernel",
    "DiscretePath",
    "DegenerateParamsError",
    "build_kernel",
    "stationary_distribution",
    "green_function",
    "mean_loss_rate_exact",
    "loss_variance_exact",
    "compressibility",
    "critical_coefficient",
    "correlator_r2",
    "crossover_window",
    "simulate_path",
]


class DegenerateParamsError(ValueError):
    """Raised when a statistic is undefined at degenerate parameters."""


@dataclass(frozen=True)
class DiscreteQueueParams:
    """Arrival probability per slot and buffer capacity in service units."""

    p: float
    L: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"arrival probability must be in [0, 1], got {self.p}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"capacity must be an integer >= 1, got {self.L}")
        object.__setattr__(self, "L", int(self.L))

    @property
    def q(self) -> float:
        """Up/down odds ratio p/(1-p); only defined for p < 1."""
        if self.p >= 1.0:
            raise DegenerateParamsError("q is undefined at p = 1; take limits explicitly")
        return self.p / (1.0 - self.p)

    @property
    def is_degenerate(self) -> bool:
        return self.p in (0.0, 1.0)


@dataclass(frozen=True)
class _Spectrum:
    """Eigendecomposition of the symmetrized kernel.

    ``eigvals`` are sorted descending (the first is 1 up to round-off);
    ``boundary_weights[j]`` is the squared top-row component of eigenvector j,
    so that the n-step return probability to the full state is
    sum_j boundary_weights[j] * eigvals[j]**n.
    """

    eigvals: np.ndarray
    eigvecs: np.ndarray
    pi: np.ndarray
    boundary_weights: np.ndarray

    @property
    def transient_eigvals(self) -> np.ndarray:
        return self.eigvals[1:]

    @property
    def transient_boundary_weights(self) -> np.ndarray:
        return self.boundary_weights[1:]


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic one-step transition matrix with lazy spectral data."""

    params: DiscreteQueueParams
    matrix: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.params.L + 1

    @property
    def spectrum(self) -> _Spectrum:
        return _spectrum(self.params)


def build_kernel(params: DiscreteQueueParams) -> TransitionKernel:
    """One-step transition matrix of the bounded walk.

    Interior states move up with p and down with 1-p; state 0 holds with
    1-p; state L holds with p. Rows sum to one exactly.
    """
    L, p = params.L, params.p
    m = np.zeros((L + 1, L + 1))
    for ell in range(L + 1):
        if ell < L:
            m[ell, ell + 1] = p
        else:
            m[L, L] = p
        if ell > 0:
            m[ell, ell - 1] = 1.0 - p
        else:
            m[0, 0] = 1.0 - p
    return TransitionKernel(params=params, matrix=m)


def stationary_distribution(params: DiscreteQueueParams) -> np.ndarray:
    """Stationary law over queue lengths 0..L, proportional to q^l.

    Degenerate arrival probabilities give the point masses at the empty and
    full states. Evaluated in log space so large capacities cannot overflow.
    """
    L = params.L
    if params.p == 0.0:
        out = np.zeros(L + 1)
        out[0] = 1.0
        return out
    if params.p == 1.0:
        out = np.zeros(L + 1)
        out[L] = 1.0
        return out
    logq = math.log(params.q)
    logw = np.arange(L + 1) * logq
    w = np.exp(logw - logw.max())
    return w / w.sum()


@functools.lru_cache(maxsize=128)
def _spectrum(params: DiscreteQueueParams) -> _Spectrum:
    """Eigendecomposition of D^{1/2} K D^{-1/2}, D = diag(stationary law).

    The similarity transform makes the kernel symmetric tridiagonal with
    off-diagonal sqrt(p(1-p)) and diagonal (1-p, 0, ..., 0, p).
    """
    if params.is_degenerate:
        raise DegenerateParamsError("spectral form requires 0 < p < 1")
    L, p = params.L, params.p
    diag = np.zeros(L + 1)
    diag[0] = 1.0 - p
    diag[L] = p
    off = np.full(L, math.sqrt(p * (1.0 - p)))
    vals, vecs = numerics.tridiag_eigen(diag, off)
    pi = stationary_distribution(params)
    weights = vecs[L, :] ** 2
    return _Spectrum(eigvals=vals, eigvecs=vecs, pi=pi, boundary_weights=weights)


def green_function(
    params: DiscreteQueueParams,
    n: int,
    frm: int,
    to: int,
    method: str = "auto",
) -> float:
    """n-step transition probability from state ``frm`` to state ``to``.

    Small step counts use the exact matrix power; large ones the spectral
    sum. The two agree to 1e-9 where they overlap.
    """
    if n < 0:
        raise ValueError("step count must be non-negative")
    L = params.L
    if not (0 <= frm <= L and 0 <= to <= L):
        raise ValueError("states must lie in 0..L")
    if method not in ("auto", "power", "spectral"):
        raise ValueError(f"unknown method {method!r}")
    if method == "power" or (method == "auto" and (n <= 64 or params.is_degenerate)):
        kernel = build_kernel(params)
        return float(np.linalg.matrix_power(kernel.matrix, n)[frm, to])
    spec = _spectrum(params)
    # K^n = D^{-1/2} (V Lam^n V^T) D^{1/2} with D = diag(pi).
    lam_n = _int_power(spec.eigvals, n)
    amp = float(np.dot(spec.eigvecs[frm, :] * spec.eigvecs[to, :], lam_n))
    ratio = math.exp(0.5 * (to - frm) * math.log(params.q))
    return ratio * amp


def mean_loss_rate_exact(params: DiscreteQueueParams) -> float:
    """Mean packets discarded per step in the stationary regime.

    Equals the stationary weight of the full state times the arrival
    probability; the closed form p (q^{L+1} - q^L)/(q^{L+1} - 1) is evaluated
    in the overflow-free rearrangement p (q-1)/(q - q^{-L}), with the limit
    value p/(L+1) at p = 1/2.
    """
    p, L = params.p, params.L
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    q = params.q
    if q == 1.0:
        return p / (L + 1.0)
    logq = math.log(q)
    rate = p * math.expm1(logq) / (q - math.exp(-L * logq))
    return max(rate, 0.0)


def _int_power(lam: np.ndarray, n: int) -> np.ndarray:
    """lam**n for integer n, valid for negative eigenvalues."""
    return np.power(lam, int(n))


def _window_weight_sum(lam: np.ndarray, N: int) -> np.ndarray:
    """sum_{k=0}^{N-2} (N-1-k) lam^k, stable through lam -> 1.

    Direct form [(N-1)(1-lam) - lam(1 - lam^{N-1})] / (1-lam)^2 cancels badly
    when (N-1)(1-lam) is small; a 4-term Taylor expansion in (1-lam) covers
    that corner.
    """
    lam = np.asarray(lam, dtype=float)
    x = 1.0 - lam
    nm1 = float(N - 1)
    out = np.empty_like(lam)
    small = nm1 * np.abs(x) < 1e-3
    if np.any(small):
        xs = x[small]
        c2 = nm1 * (N - 2.0) / 2.0
        c3 = c2 * (N - 3.0) / 3.0
        c4 = c3 * (N - 4.0) / 4.0
        c5 = c4 * (N - 5.0) / 5.0
        out[small] = (c2 + nm1) - (c3 + c2) * xs + (c4 + c3) * xs**2 - (c5 + c4) * xs**3
    big = ~small
    if np.any(big):
        lb = lam[big]
        xb = x[big]
        lam_pow = _int_power(lb, N - 1)
        out[big] = (nm1 * xb - lb * (1.0 - lam_pow)) / (xb * xb)
    return out


def loss_variance_exact(params: DiscreteQueueParams, N: int) -> float:
    """Variance of the per-window loss count over a window of N steps.

    The double time sum over pairs of loss events collapses to
    sum_k (N-1-k) G_k(L, L), evaluated mode by mode as a geometric window
    sum; the stationary mode's quadratic-in-N contribution cancels against
    the squared mean analytically, leaving

        Var = N m (1 - m) + 2 pi(L) p^2 sum_{j>=1} w_j T(lam_j, N)

    with m the per-step loss probability and w_j the boundary weights.
    """
    if N < 1:
        raise ValueError("window length must be >= 1")
    if params.is_degenerate:
        return 0.0
    spec = _spectrum(params)
    p = params.p
    pi_L = float(spec.pi[-1])
    m = pi_L * p
    lam = spec.transient_eigvals
    w = spec.transient_boundary_weights
    tail = float(np.dot(w, _window_weight_sum(lam, N)))
    return N * m * (1.0 - m) + 2.0 * pi_L * p * p * tail


def compressibility(params: DiscreteQueueParams, N: int) -> float:
    """Variance-to-mean ratio of the window loss count (chi in the glossary)."""
    rate = mean_loss_rate_exact(params)
    if rate == 0.0:
        raise DegenerateParamsError("compressibility undefined at zero mean loss")
    return loss_variance_exact(params, N) / (N * rate)


def crossover_window(params: DiscreteQueueParams) -> float:
    """Window length [(2p-1)^2 + (pi/L)^2]^{-1} separating growth and saturation."""
    b = 2.0 * params.p - 1.0
    return 1.0 / (b * b + (math.pi / params.L) ** 2)


def _growth_integrand(x: float) -> float:
    """(x^2 - 1 + exp(-x^2)) / x^4, continuously extended to 1/2 at 0."""
    if x < 0.05:
        u = x * x
        return 0.5 - u / 6.0 + u * u / 24.0 - u**3 / 120.0
    return (x * x - 1.0 + math.exp(-x * x)) / x**4


@functools.lru_cache(maxsize=1)
def critical_coefficient(tol: float = 1e-12) -> float:
    """Amplitude c of the critical square-root growth of the compressibility.

    c = (2 sqrt(2)/pi) * integral_0^inf dx/x^2 (1 - (1 - e^{-x^2})/x^2),
    by adaptive quadrature split at x = 2 for uniform error control.
    """
    head = numerics.integrate(_growth_integrand, 0.0, 2.0, tol=tol)
    tail = numerics.integrate(_growth_integrand, 2.0, np.inf, tol=tol)
    total_err = head.error + tail.error
    value = head.value + tail.value
    if total_err > 1e-8 * abs(value):
        raise numerics.QuadratureError(
            f"growth-coefficient quadrature error {total_err:.3g} too large"
        )
    return (2.0 * math.sqrt(2.0) / math.pi) * value


def _geometric_window_factor(lam: np.ndarray, N: int) -> np.ndarray:
    """(1 - lam^N) / (1 - lam), stable at lam -> 1."""
    lam = np.asarray(lam, dtype=float)
    x = 1.0 - lam
    out = np.empty_like(lam)
    small = N * np.abs(x) < 1e-6
    if np.any(small):
        xs = x[small]
        out[small] = N * (1.0 - (N - 1.0) * xs / 2.0)
    big = ~small
    if np.any(big):
        out[big] = (1.0 - _int_power(lam[big], N)) / x[big]
    return out


def correlator_r2(
    params: DiscreteQueueParams,
    N: int,
    M: int,
    branch: str = "exact",
) -> float:
    """Normalized covariance of loss counts in two windows of N steps
    whose starts are M > N steps apart.

    ``branch="exact"`` evaluates the spectral double sum
    Cov = pi(L) p^2 sum_{j>=1} w_j lam_j^{M-N} [(1-lam_j^N)/(1-lam_j)]^2
    normalized by the exact window variance. ``branch="analytic"`` evaluates
    the closed half-line asymptote

        (p N / chi_N) [exp(-M (2p-1)^2 / 2) sqrt(2/(pi M))
                       - |2p-1| erfc(|2p-1| sqrt(M/2))],

    valid deep in the growth regime (window and separation both far below
    the crossover window and far above 1); outside it the exact branch is
    authoritative.
    """
    if N < 1 or M <= N:
        raise ValueError("need separation M > window N >= 1")
    if branch == "analytic":
        p = params.p
        b = abs(2.0 * p - 1.0)
        chi = compressibility(params, N)
        bracket = math.exp(-M * b * b / 2.0) * math.sqrt(2.0 / (math.pi * M))
        bracket -= b * float(numerics.erfc(b * math.sqrt(M / 2.0)))
        return (p * N / chi) * bracket
    if branch != "exact":
        raise ValueError(f"unknown branch {branch!r}")
    if params.is_degenerate:
        raise DegenerateParamsError("correlator undefined at degenerate p")
    spec = _spectrum(params)
    p = params.p
    pi_L = float(spec.pi[-1])
    lam = spec.transient_eigvals
    w = spec.transient_boundary_weights
    geom = _geometric_window_factor(lam, N)
    cov = pi_L * p * p * float(np.dot(w, _int_power(lam, M - N) * geom * geom))
    return cov / loss_variance_exact(params, N)


def critical_r2(N: int, M: int) -> float:
    """Critical-point closed form of the window correlator, c^{-1} sqrt(N/(2 pi M))."""
    return math.sqrt(N / (2.0 * math.pi * M)) / critical_coefficient()


# ---------------------------------------------------------------------------
# Path sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscretePath:
    """A sampled queue trajectory with its per-step loss indicators."""

    params: DiscreteQueueParams
    seed: int
    lengths: np.ndarray = field(repr=False)
    loss_events: np.ndarray = field(repr=False)

    @property
    def n_steps(self) -> int:
        return self.loss_events.size

    def loss_count(self) -> int:
        return int(self.loss_events.sum())

    def window_counts(self, N: int) -> np.ndarray:
        """Loss counts over consecutive non-overlapping windows of N steps."""
        if N < 1:
            raise ValueError("window length must be >= 1")
        n_windows = self.n_steps // N
        if n_windows == 0:
            return np.zeros(0, dtype=np.int64)
        trimmed = self.loss_events[: n_windows * N]
        return trimmed.reshape(n_windows, N).sum(axis=1).astype(np.int64)


def _walk_chunk_py(l0, L, p, u, lengths, losses):
    ell = l0
    for i in range(u.size):
        if u[i] < p:
            if ell == L:
                losses[i] = True
            else:
                ell += 1
        elif ell > 0:
            ell -= 1
        lengths[i + 1] = ell
    return ell


try:  # pragma: no cover - exercised indirectly
    import numba as _numba

    _walk_chunk = _numba.njit(cache=True)(_walk_chunk_py)
except Exception:  # pragma: no cover - numba is a hard dependency in practice
    _walk_chunk = _walk_chunk_py


def simulate_path(
    params: DiscreteQueueParams,
    n_steps: int,
    burn_in: int = 0,
    seed: int = 0,
) -> DiscretePath:
    """Sample a trajectory of the bounded walk.

    With ``burn_in == 0`` the initial state is drawn from the exact
    stationary law, so window statistics are stationary from the first step;
    with ``burn_in > 0`` the walk starts empty and the first ``burn_in``
    steps are discarded. Identical seeds give identical paths (the generator
    is the counter-based PCG64 behind a 64-bit seed).
    """
    if n_steps < 1:
        raise ValueError("need at least one step")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    L = params.L
    if burn_in > 0:
        ell = 0
        u = rng.random(burn_in)
        scratch_len = np.zeros(burn_in + 1, dtype=np.int64)
        scratch_loss = np.zeros(burn_in, dtype=np.bool_)
        scratch_len[0] = ell
        ell = int(_walk_chunk(ell, L, params.p, u, scratch_len, scratch_loss))
    else:
        pi = stationary_distribution(params)
        ell = int(rng.choice(L + 1, p=pi))
    lengths = np.zeros(n_steps + 1, dtype=np.int64)
    losses = np.zeros(n_steps, dtype=np.bool_)
    lengths[0] = ell
    u = rng.random(n_steps)
    _walk_chunk(ell, L, params.p, u, lengths, losses)
    return DiscretePath(params=params, seed=seed, lengths=lengths, loss_events=losses)
