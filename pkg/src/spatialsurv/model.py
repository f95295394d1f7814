"""Competing-risks model core.

Subjects carry an observed time T_i and an event code delta_i in {0, 1, ..,
m} (0 = censored). Each risk j has a cause-specific hazard

    lambda_j(t | i) = lambda_{0j}(t) exp(eta_ij),
    eta_ij = x_i' beta_j + theta_{0j}(d_i) + (theta_{1j}(d_i) + beta_wj) w_i,

with a piecewise-constant baseline lambda_{0j} on a shared knot grid and
optional spatial intercept/slope surfaces theta realized from a reduced-rank
basis (see `spatial`). The baseline rates follow a multiplicative gamma
process: lambda_{jl} = prod_{r<=l} psi_{jr} with psi_{j0} ~ Ga(a0, b0) and
psi_{jr} ~ Ga(kappa/Delta_r, kappa/Delta_r) for r >= 1, which ties adjacent
rates together with prior correlation controlled by kappa.

The pointwise log likelihood is

    l_i = sum_j 1(delta_i = j) (log lambda_{0j}(T_i) + eta_ij)
          - sum_j exp(eta_ij) Lambda_{0j}(T_i),

where Lambda_{0j} is the cumulative baseline hazard; censored subjects keep
only the survival term.

Sampling runs on an unconstrained vector: log transforms for psi, kappa,
sigma2 and tau, a scaled logit onto (0, ell_max) for lengthscales, identity
for everything else. `LogPosterior` wires the likelihood, priors and
transform Jacobian into a single differentiable function evaluated in
float64 via jax.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.special

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
from jax.scipy.special import gammaln

from .errors import InvalidArgumentError, OutOfRangeError
from .spatial import HsgpBasis, HsgpConfig, MaternParams, surface_from_weights

SPATIAL_MODES = ("none", "intercept", "intercept+slope")


@dataclass(frozen=True)
class Dataset:
    """Validated subject-level data on normalized coordinates.

    Covariates are expected pre-standardized (continuous z-scored, binary
    centered); ingestion in `dataio` produces datasets in this form.
    """

    times: np.ndarray
    events: np.ndarray
    X: np.ndarray
    w: np.ndarray
    coords: np.ndarray
    m_risks: int = 0

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "events", np.asarray(self.events, dtype=int))
        object.__setattr__(self, "X", np.atleast_2d(np.asarray(self.X, dtype=float)))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        object.__setattr__(self, "coords", np.atleast_2d(np.asarray(self.coords, dtype=float)))
        if self.m_risks == 0:
            object.__setattr__(self, "m_risks", max(1, int(self.events.max(initial=1))))
        self.validate()

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def validate(self):
        n = self.n
        if self.X.shape[0] != n or self.w.shape[0] != n or self.coords.shape[0] != n:
            raise InvalidArgumentError("times, events, X, w, coords must share length")
        if np.any(self.times <= 0) or not np.all(np.isfinite(self.times)):
            raise InvalidArgumentError("times must be positive and finite")
        if np.any(self.events < 0) or np.any(self.events > self.m_risks):
            raise InvalidArgumentError(
                f"event codes must lie in 0..{self.m_risks}"
            )
        for name, arr in (("X", self.X), ("w", self.w), ("coords", self.coords)):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} contains non-finite entries")

    def event_matrix(self) -> np.ndarray:
        """Indicator matrix (n, m_risks): entry (i, j-1) = 1(delta_i = j)."""
        return (self.events[:, None] == np.arange(1, self.m_risks + 1)).astype(float)


@dataclass(frozen=True)
class TimeGrid:
    """Knots 0 = s_0 < s_1 < ... < s_k covering all observed times."""

    knots: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        if self.knots.ndim != 1 or self.knots.shape[0] < 2:
            raise InvalidArgumentError("need at least two knots")
        if self.knots[0] != 0.0:
            raise InvalidArgumentError("first knot must be 0")
        if np.any(np.diff(self.knots) <= 0):
            raise InvalidArgumentError("knots must be strictly increasing")

    @property
    def k(self) -> int:
        return self.knots.shape[0] - 1

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.knots)

    def interval_index(self, times) -> np.ndarray:
        """0-based index of the interval (s_l, s_{l+1}] containing each time.

        A time equal to an interior knot s_l belongs to the interval ending
        there, consistent with the half-open interval notation; this makes
        the maximum observed time (which sits exactly on s_k) valid.
        """
        t = np.asarray(times, dtype=float)
        if np.any(t <= 0):
            raise InvalidArgumentError("times must be positive")
        if np.any(t > self.knots[-1]):
            raise OutOfRangeError("time beyond the final knot")
        return np.searchsorted(self.knots, t, side="left") - 1

    def exposures(self, times) -> np.ndarray:
        """Overlap of [0, t_i] with every interval; shape (n, k)."""
        t = np.asarray(times, dtype=float)[:, None]
        lo = self.knots[:-1][None, :]
        hi = self.knots[1:][None, :]
        return np.clip(np.minimum(t, hi) - lo, 0.0, None)


def build_time_grid(max_time: float, k: int) -> TimeGrid:
    """Equally spaced grid of k intervals on [0, max_time]."""
    if not max_time > 0:
        raise InvalidArgumentError(f"max_time must be positive, got {max_time}")
    if not k >= 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    return TimeGrid(np.linspace(0.0, float(max_time), int(k) + 1))


def piecewise_cum_hazard(grid: TimeGrid, rates, t: float) -> float:
    """Integral of the step hazard from 0 to t."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape[0] != grid.k:
        raise InvalidArgumentError(f"need {grid.k} rates, got {rates.shape[0]}")
    if np.any(rates <= 0):
        raise InvalidArgumentError("rates must be positive")
    if t < 0 or t > grid.knots[-1]:
        raise OutOfRangeError(f"t={t} outside [0, {grid.knots[-1]}]")
    overlap = np.clip(np.minimum(t, grid.knots[1:]) - grid.knots[:-1], 0.0, None)
    return float(rates @ overlap)


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings; defaults follow the shipped analysis configuration."""

    a_sigma: float = 1.0
    b_sigma: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    a1: float = 2.0
    b1: float = 40.0
    tau_scale2: float = 16.0
    a_ell: float = 2.0
    b_ell: float = 1.0
    ell_max: float = 10.0

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"hyperparameter {name} must be positive")

    def ell_trunc_log_norm(self) -> float:
        """log P(ell <= ell_max) under the untruncated inverse-gamma prior."""
        return float(np.log(scipy.special.gammaincc(self.a_ell, self.b_ell / self.ell_max)))


@dataclass(frozen=True)
class ModelSpec:
    """Structural choices: spatial terms, interval count, basis settings."""

    spatial_mode: str = "intercept+slope"
    k: int = 30
    hsgp: HsgpConfig = field(default_factory=HsgpConfig)

    def __post_init__(self):
        if self.spatial_mode not in SPATIAL_MODES:
            raise InvalidArgumentError(
                f"spatial_mode must be one of {SPATIAL_MODES}, got {self.spatial_mode!r}"
            )
        if self.k < 1:
            raise InvalidArgumentError(f"k must be >= 1, got {self.k}")

    @property
    def mode_code(self) -> int:
        return SPATIAL_MODES.index(self.spatial_mode)


@dataclass
class ParameterState:
    """Constrained model unknowns.

    Arrays are indexed by risk along the first axis. Surface blocks are None
    when the spatial mode omits them; sigma2 and kappa are shared across
    risks.
    """

    beta: np.ndarray
    beta_w: np.ndarray
    psi: np.ndarray
    sigma2: float
    kappa: float
    z0: np.ndarray | None = None
    tau0: np.ndarray | None = None
    ell0: np.ndarray | None = None
    z1: np.ndarray | None = None
    tau1: np.ndarray | None = None
    ell1: np.ndarray | None = None

    def rates(self) -> np.ndarray:
        """Baseline rates lambda_{jl} = prod_{r<=l} psi_{jr}; shape (m, k)."""
        return np.cumprod(self.psi, axis=1)

    def validate(self, ell_max: float | None = None):
        if np.any(self.psi <= 0) or not self.sigma2 > 0 or not self.kappa > 0:
            raise InvalidArgumentError("psi, sigma2, kappa must be positive")
        for tau in (self.tau0, self.tau1):
            if tau is not None and np.any(np.asarray(tau) <= 0):
                raise InvalidArgumentError("tau must be positive")
        if ell_max is not None:
            for ell in (self.ell0, self.ell1):
                if ell is not None and np.any(
                    (np.asarray(ell) <= 0) | (np.asarray(ell) >= ell_max)
                ):
                    raise InvalidArgumentError(f"ell must lie in (0, {ell_max})")


def _surfaces(spec: ModelSpec, state: ParameterState, basis: HsgpBasis | None, m: int, n: int):
    """Realize (theta0, theta1) as (m, n) arrays, zeros where absent."""
    theta0 = np.zeros((m, n))
    theta1 = np.zeros((m, n))
    if spec.mode_code >= 1:
        if basis is None:
            raise InvalidArgumentError("spatial mode requires a basis")
        for j in range(m):
            theta0[j] = surface_from_weights(
                basis, MaternParams(float(state.tau0[j]), float(state.ell0[j])), state.z0[j]
            )
    if spec.mode_code == 2:
        for j in range(m):
            theta1[j] = surface_from_weights(
                basis, MaternParams(float(state.tau1[j]), float(state.ell1[j])), state.z1[j]
            )
    return theta0, theta1


def eta_matrix(
    spec: ModelSpec,
    state: ParameterState,
    dataset: Dataset,
    basis: HsgpBasis | None = None,
) -> np.ndarray:
    """Linear predictors for all subjects and risks; shape (n, m_risks)."""
    m = dataset.m_risks
    if state.beta.shape != (m, dataset.p):
        raise InvalidArgumentError(
            f"beta shape {state.beta.shape} != ({m}, {dataset.p})"
        )
    theta0, theta1 = _surfaces(spec, state, basis, m, dataset.n)
    eta = np.empty((dataset.n, m))
    for j in range(m):
        eta[:, j] = (
            dataset.X @ state.beta[j]
            + theta0[j]
            + (theta1[j] + state.beta_w[j]) * dataset.w
        )
    return eta


def linear_predictor(
    spec: ModelSpec,
    state: ParameterState,
    dataset: Dataset,
    i: int,
    j: int,
    basis: HsgpBasis | None = None,
) -> float:
    """eta_ij for subject i (0-based) and risk j (1-based)."""
    if not (0 <= i < dataset.n) or not (1 <= j <= dataset.m_risks):
        raise InvalidArgumentError(f"subject {i} / risk {j} out of range")
    return float(eta_matrix(spec, state, dataset, basis)[i, j - 1])


def log_likelihood(
    dataset: Dataset,
    spec: ModelSpec,
    state: ParameterState,
    grid: TimeGrid,
    basis: HsgpBasis | None = None,
) -> tuple[float, np.ndarray]:
    """Total and pointwise log likelihood under the current state."""
    lam = state.rates()
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise InvalidArgumentError("baseline rates must be positive and finite")
    binidx = grid.interval_index(dataset.times)
    expo = grid.exposures(dataset.times)
    dmat = dataset.event_matrix()
    eta = eta_matrix(spec, state, dataset, basis)
    pointwise = np.zeros(dataset.n)
    for j in range(dataset.m_risks):
        loglam = np.log(lam[j])
        pointwise += dmat[:, j] * (loglam[binidx] + eta[:, j])
        pointwise -= np.exp(eta[:, j]) * (expo @ lam[j])
    return float(pointwise.sum()), pointwise


def _norm_logpdf(x, var):
    return -0.5 * np.log(2.0 * np.pi * var) - np.square(x) / (2.0 * var)


def _gamma_logpdf(x, a, b):
    return a * np.log(b) - scipy.special.gammaln(a) + (a - 1.0) * np.log(x) - b * x


def _invgamma_logpdf(x, a, b):
    return a * np.log(b) - scipy.special.gammaln(a) - (a + 1.0) * np.log(x) - b / x


def log_prior(
    state: ParameterState,
    hyper: Hyperparameters,
    spec: ModelSpec,
    grid: TimeGrid,
) -> float:
    """Joint log prior density of a constrained state.

    Lengthscales at or beyond ell_max have zero prior mass and return -inf;
    violations of strict positivity raise instead.
    """
    state.validate()
    m = state.beta.shape[0]
    for ell in (state.ell0, state.ell1):
        if ell is not None and np.any(
            (np.asarray(ell) <= 0) | (np.asarray(ell) >= hyper.ell_max)
        ):
            return float("-inf")

    total = _norm_logpdf(state.beta, state.sigma2).sum()
    total += _norm_logpdf(state.beta_w, state.sigma2).sum()
    total += _invgamma_logpdf(state.sigma2, hyper.a_sigma, hyper.b_sigma)
    total += _invgamma_logpdf(state.kappa, hyper.a1, hyper.b1)

    deltas = grid.deltas
    if state.psi.shape != (m, grid.k):
        raise InvalidArgumentError(f"psi shape {state.psi.shape} != ({m}, {grid.k})")
    total += _gamma_logpdf(state.psi[:, 0], hyper.a0, hyper.b0).sum()
    if grid.k > 1:
        alphas = state.kappa / deltas[:-1]
        total += _gamma_logpdf(state.psi[:, 1:], alphas, alphas).sum()

    for z in (state.z0, state.z1):
        if z is not None:
            total += _norm_logpdf(np.asarray(z), 1.0).sum()
    for tau in (state.tau0, state.tau1):
        if tau is not None:
            total += (np.log(2.0) + _norm_logpdf(np.asarray(tau), hyper.tau_scale2)).sum()
    logz = hyper.ell_trunc_log_norm()
    for ell in (state.ell0, state.ell1):
        if ell is not None:
            total += (
                _invgamma_logpdf(np.asarray(ell), hyper.a_ell, hyper.b_ell) - logz
            ).sum()
    return float(total)


def mgp_prior_correlation(a0: float, kappa: float, grid: TimeGrid, l: int, q: int) -> float:
    """Prior correlation between baseline rates lambda_l and lambda_{l+q}.

    Closed form from the multiplicative construction:
    sqrt(((1+a0) prod_{r=1..l} (Delta_r/kappa + 1) - a0)
         / ((1+a0) prod_{r=1..l+q} (Delta_r/kappa + 1) - a0)).
    """
    if not (a0 > 0 and kappa > 0):
        raise InvalidArgumentError("a0 and kappa must be positive")
    if l < 1:
        raise OutOfRangeError(f"l must be >= 1, got {l}")
    if q < 0 or l + q > grid.k - 1:
        raise OutOfRangeError(f"l+q={l + q} exceeds the last rate index {grid.k - 1}")
    if q == 0:
        return 1.0
    terms = grid.deltas / kappa + 1.0
    num = (1.0 + a0) * np.prod(terms[:l]) - a0
    den = (1.0 + a0) * np.prod(terms[: l + q]) - a0
    return float(np.sqrt(num / den))


# ---------------------------------------------------------------------------
# unconstrained parameterization


@dataclass(frozen=True)
class ParamLayout:
    """Static shape of the unconstrained vector for one model family."""

    m_risks: int
    p: int
    k: int
    m_basis: int
    mode_code: int

    @property
    def per_risk(self) -> int:
        size = self.p + 1 + self.k
        if self.mode_code >= 1:
            size += self.m_basis + 2
        if self.mode_code == 2:
            size += self.m_basis + 2
        return size

    @property
    def dim(self) -> int:
        return self.m_risks * self.per_risk + 2

    def key(self) -> tuple:
        return (self.m_risks, self.p, self.k, self.m_basis, self.mode_code)

    def names(self) -> list[str]:
        """Constrained parameter names in vector order."""
        out = []
        for j in range(1, self.m_risks + 1):
            out += [f"beta{j}_{i}" for i in range(1, self.p + 1)]
            out.append(f"beta_w{j}")
            out += [f"psi{j}_{r}" for r in range(self.k)]
            if self.mode_code >= 1:
                out += [f"z0_{j}_{b}" for b in range(1, self.m_basis + 1)]
                out += [f"tau0_{j}", f"ell0_{j}"]
            if self.mode_code == 2:
                out += [f"z1_{j}_{b}" for b in range(1, self.m_basis + 1)]
                out += [f"tau1_{j}", f"ell1_{j}"]
        out += ["sigma2", "kappa"]
        return out


def layout_for(dataset: Dataset, spec: ModelSpec, basis: HsgpBasis | None) -> ParamLayout:
    mb = basis.m_basis if (basis is not None and spec.mode_code >= 1) else 0
    if spec.mode_code >= 1 and basis is None:
        raise InvalidArgumentError("spatial mode requires a basis")
    return ParamLayout(dataset.m_risks, dataset.p, spec.k, mb, spec.mode_code)


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def unpack(u: np.ndarray, layout: ParamLayout, ell_max: float) -> tuple[ParameterState, float]:
    """Map an unconstrained vector to a constrained state plus log |Jacobian|."""
    u = np.asarray(u, dtype=float)
    if u.shape != (layout.dim,):
        raise InvalidArgumentError(f"expected vector of length {layout.dim}, got {u.shape}")
    m, p, k, mb = layout.m_risks, layout.p, layout.k, layout.m_basis
    beta = np.zeros((m, p))
    beta_w = np.zeros(m)
    psi = np.zeros((m, k))
    z0 = np.zeros((m, mb)) if layout.mode_code >= 1 else None
    tau0 = np.zeros(m) if layout.mode_code >= 1 else None
    ell0 = np.zeros(m) if layout.mode_code >= 1 else None
    z1 = np.zeros((m, mb)) if layout.mode_code == 2 else None
    tau1 = np.zeros(m) if layout.mode_code == 2 else None
    ell1 = np.zeros(m) if layout.mode_code == 2 else None
    logjac = 0.0
    off = 0

    def take(size):
        nonlocal off
        out = u[off : off + size]
        off += size
        return out

    for j in range(m):
        beta[j] = take(p)
        beta_w[j] = take(1)[0]
        lpsi = take(k)
        psi[j] = np.exp(lpsi)
        logjac += lpsi.sum()
        for zs, taus, ells, present in (
            (z0, tau0, ell0, layout.mode_code >= 1),
            (z1, tau1, ell1, layout.mode_code == 2),
        ):
            if present:
                zs[j] = take(mb)
                ltau = take(1)[0]
                taus[j] = np.exp(ltau)
                logjac += ltau
                v = take(1)[0]
                sig = _sigmoid(v)
                ells[j] = ell_max * sig
                logjac += np.log(ell_max) + np.log(sig) + np.log1p(-sig)
    lsig, lkap = take(1)[0], take(1)[0]
    logjac += lsig + lkap
    state = ParameterState(
        beta=beta, beta_w=beta_w, psi=psi, sigma2=float(np.exp(lsig)),
        kappa=float(np.exp(lkap)), z0=z0, tau0=tau0, ell0=ell0,
        z1=z1, tau1=tau1, ell1=ell1,
    )
    return state, float(logjac)


def pack(state: ParameterState, layout: ParamLayout, ell_max: float) -> np.ndarray:
    """Inverse of `unpack` (drops the Jacobian)."""
    parts = []
    for j in range(layout.m_risks):
        parts.append(state.beta[j])
        parts.append([state.beta_w[j]])
        parts.append(np.log(state.psi[j]))
        for zs, taus, ells, present in (
            (state.z0, state.tau0, state.ell0, layout.mode_code >= 1),
            (state.z1, state.tau1, state.ell1, layout.mode_code == 2),
        ):
            if present:
                parts.append(np.asarray(zs[j]))
                parts.append([np.log(taus[j])])
                frac = ells[j] / ell_max
                parts.append([np.log(frac) - np.log1p(-frac)])
    parts.append([np.log(state.sigma2), np.log(state.kappa)])
    u = np.concatenate([np.asarray(x, dtype=float).ravel() for x in parts])
    if u.shape != (layout.dim,):
        raise InvalidArgumentError("state inconsistent with layout")
    return u


# ---------------------------------------------------------------------------
# differentiable joint density

# hyper vector slots passed to the jitted functions
_H = ("a_sigma", "b_sigma", "a0", "b0", "a1", "b1", "tau_scale2", "a_ell", "b_ell", "ell_max")


def _hyper_vector(hyper: Hyperparameters) -> np.ndarray:
    vec = [getattr(hyper, name) for name in _H]
    return np.array(vec + [hyper.ell_trunc_log_norm()], dtype=float)


def _spectral_jnp(eig, tau, ell):
    return tau**2 * 6.0 * jnp.pi * 3.0**1.5 * ell**-3 * (3.0 / ell**2 + eig) ** -2.5


def _build_parts(layout_key):
    """Return a jax function computing (pointwise loglik, prior + Jacobian)."""
    m, p, k, mb, mode = layout_key

    surface_flags = []
    if mode >= 1:
        surface_flags.append(False)  # intercept surface
    if mode == 2:
        surface_flags.append(True)  # slope surface, multiplies w

    def parts(u, X, w, expo, dmat, binidx, deltas, phi, eig, hyper):
        a_sigma, b_sigma, a0, b0 = hyper[0], hyper[1], hyper[2], hyper[3]
        a1, b1, tau_s2 = hyper[4], hyper[5], hyper[6]
        a_ell, b_ell, ell_max, logz_ell = hyper[7], hyper[8], hyper[9], hyper[10]
        lsig, lkap = u[-2], u[-1]
        sigma2 = jnp.exp(lsig)
        kappa = jnp.exp(lkap)
        # prior plus transform-Jacobian accumulator
        rest = lsig + lkap
        rest += a_sigma * jnp.log(b_sigma) - gammaln(a_sigma) - (a_sigma + 1.0) * lsig - b_sigma / sigma2
        rest += a1 * jnp.log(b1) - gammaln(a1) - (a1 + 1.0) * lkap - b1 / kappa

        pointwise = jnp.zeros(X.shape[0])
        off = 0
        for j in range(m):
            beta = u[off : off + p]
            off += p
            bw = u[off]
            off += 1
            lpsi = u[off : off + k]
            off += k
            psi = jnp.exp(lpsi)
            loglam = jnp.cumsum(lpsi)
            lam = jnp.exp(loglam)
            rest += lpsi.sum()
            rest += a0 * jnp.log(b0) - gammaln(a0) + (a0 - 1.0) * lpsi[0] - b0 * psi[0]
            if k > 1:
                al = kappa / deltas[:-1]
                rest += jnp.sum(
                    al * jnp.log(al) - gammaln(al) + (al - 1.0) * lpsi[1:] - al * psi[1:]
                )

            eta = X @ beta + bw * w
            for slope in surface_flags:
                z = u[off : off + mb]
                off += mb
                ltau = u[off]
                off += 1
                v = u[off]
                off += 1
                tau = jnp.exp(ltau)
                ell = ell_max * jax.nn.sigmoid(v)
                rest += ltau + jnp.log(ell_max) + jax.nn.log_sigmoid(v) + jax.nn.log_sigmoid(-v)
                theta = phi @ (jnp.sqrt(_spectral_jnp(eig, tau, ell)) * z)
                eta = eta + (theta * w if slope else theta)
                rest += -0.5 * mb * jnp.log(2.0 * jnp.pi) - 0.5 * jnp.sum(z**2)
                rest += jnp.log(2.0) - 0.5 * jnp.log(2.0 * jnp.pi * tau_s2) - tau**2 / (2.0 * tau_s2)
                rest += (
                    a_ell * jnp.log(b_ell) - gammaln(a_ell)
                    - (a_ell + 1.0) * jnp.log(ell) - b_ell / ell - logz_ell
                )

            rest += -0.5 * (p + 1) * jnp.log(2.0 * jnp.pi * sigma2)
            rest -= (jnp.sum(beta**2) + bw**2) / (2.0 * sigma2)
            pointwise = pointwise + dmat[:, j] * (loglam[binidx] + eta)
            pointwise = pointwise - jnp.exp(eta) * (expo @ lam)
        return pointwise, rest

    return parts


@functools.lru_cache(maxsize=None)
def _compiled(layout_key):
    parts = _build_parts(layout_key)

    def value(u, *data):
        pointwise, rest = parts(u, *data)
        return pointwise.sum() + rest

    def pointwise(u, *data):
        return parts(u, *data)[0]

    return jax.jit(jax.value_and_grad(value)), jax.jit(pointwise)


class LogPosterior:
    """Differentiable unconstrained log posterior for one dataset and model.

    Compiled functions are cached by layout shape, so repeated fits of the
    same model family (across replicate datasets, say) reuse one compilation.
    """

    def __init__(
        self,
        dataset: Dataset,
        spec: ModelSpec,
        hyper: Hyperparameters,
        grid: TimeGrid,
        basis: HsgpBasis | None = None,
    ):
        self.dataset = dataset
        self.spec = spec
        self.hyper = hyper
        self.grid = grid
        self.basis = basis if spec.mode_code >= 1 else None
        self.layout = layout_for(dataset, spec, self.basis)
        binidx = grid.interval_index(dataset.times)
        if self.basis is not None:
            phi, eig = self.basis.phi, self.basis.eigvals
        else:
            phi = np.zeros((dataset.n, 0))
            eig = np.zeros(0)
        self._data = tuple(
            jnp.asarray(a)
            for a in (
                dataset.X,
                dataset.w,
                grid.exposures(dataset.times),
                dataset.event_matrix(),
                binidx,
                grid.deltas,
                phi,
                eig,
                _hyper_vector(hyper),
            )
        )
        self._vg, self._pw = _compiled(self.layout.key())

    @property
    def dim(self) -> int:
        return self.layout.dim

    def value_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        val, grad = self._vg(jnp.asarray(u), *self._data)
        return float(val), np.asarray(grad)

    def value(self, u: np.ndarray) -> float:
        return self.value_and_grad(u)[0]

    def pointwise_loglik(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(self._pw(jnp.asarray(u), *self._data))

    def unpack(self, u: np.ndarray) -> ParameterState:
        return unpack(u, self.layout, self.hyper.ell_max)[0]

    def pack(self, state: ParameterState) -> np.ndarray:
        return pack(state, self.layout, self.hyper.ell_max)


def log_posterior_grad(
    u: np.ndarray,
    dataset: Dataset,
    spec: ModelSpec,
    hyper: Hyperparameters,
    grid: TimeGrid,
    basis: HsgpBasis | None = None,
) -> tuple[float, np.ndarray]:
    """Value and exact gradient of the unconstrained log posterior at u."""
    return LogPosterior(dataset, spec, hyper, grid, basis).value_and_grad(u)
