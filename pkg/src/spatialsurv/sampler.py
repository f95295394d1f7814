"""Gradient-based MCMC over the unconstrained posterior.

The transition kernel is a dynamic-trajectory Hamiltonian scheme: from the
current point it simulates leapfrog dynamics forward and backward in time,
doubling the trajectory until the path starts to double back (a U-turn in
the metric) or a divergence appears, then samples a point from the
trajectory with probability proportional to exp(-H). Step size adapts
during warmup by dual averaging toward a target acceptance statistic, and a
diagonal metric is estimated from warmup draws in expanding windows.

All randomness flows through numpy Generators seeded from a single master
seed with per-chain spawned streams, so runs are reproducible regardless of
how chains are scheduled. Chains here run sequentially.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InitializationError, InvalidArgumentError
from .model import Dataset, Hyperparameters, LogPosterior, ModelSpec, TimeGrid
from .spatial import HsgpBasis, hsgp_basis

DIVERGENCE_ENERGY = 1000.0
INIT_RETRIES = 100


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    iterations: int = 4000
    thin: int = 5
    seed: int = 0
    target_accept: float = 0.9
    max_tree_depth: int = 10

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.iterations < 1 or self.thin < 1:
            raise InvalidArgumentError("chains, warmup, iterations, thin must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise InvalidArgumentError("max_tree_depth must be >= 1")

    @property
    def kept_per_chain(self) -> int:
        return self.iterations // self.thin


@dataclass
class PosteriorDraws:
    """Post-thinning constrained draws plus pointwise log likelihoods.

    draws has shape (chains, kept, len(names)); loglik has shape
    (chains, kept, n). meta carries provenance: seed, sampler settings,
    divergence counts, adapted step sizes, knots, basis/layout details.
    """

    names: list
    draws: np.ndarray
    loglik: np.ndarray
    meta: dict

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.names)}

    @property
    def chains(self) -> int:
        return self.draws.shape[0]

    @property
    def kept_per_chain(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def by_chain(self, name: str) -> np.ndarray:
        if name not in self._index:
            raise InvalidArgumentError(f"unknown parameter {name!r}")
        return self.draws[:, :, self._index[name]]

    def pooled(self, name: str) -> np.ndarray:
        return self.by_chain(name).reshape(-1)

    def loglik_matrix(self) -> np.ndarray:
        return self.loglik.reshape(-1, self.loglik.shape[-1])


def leapfrog(u, momentum, step, gradfn, inv_mass=None):
    """One symplectic update; gradfn maps u to (logp, grad)."""
    u = np.asarray(u, dtype=float)
    momentum = np.asarray(momentum, dtype=float)
    if inv_mass is None:
        inv_mass = np.ones_like(u)
    half = momentum + 0.5 * step * gradfn(u)[1]
    u_new = u + step * inv_mass * half
    new = half + 0.5 * step * gradfn(u_new)[1]
    return u_new, new


class _DualAveraging:
    """Step-size adaptation toward a target acceptance statistic."""

    def __init__(self, step0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.count = 0
        self.h_bar = 0.0
        self.log_step = math.log(step0)
        self.log_step_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_step = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count**-self.kappa
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar
        return math.exp(self.log_step)

    def adapted(self) -> float:
        return math.exp(self.log_step_bar)

    def restart(self, step0: float):
        self.mu = math.log(10.0 * step0)
        self.count = 0
        self.h_bar = 0.0
        self.log_step = math.log(step0)
        self.log_step_bar = 0.0


class _Welford:
    """Streaming mean/variance for the diagonal metric."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x: np.ndarray):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        # shrink toward a small diagonal, as in common windowed adaptation
        if self.count < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (self.count - 1)
        w = self.count / (self.count + 5.0)
        return w * var + 1e-3 * (1.0 - w)


def _joint(logp: float, momentum: np.ndarray, inv_mass: np.ndarray) -> float:
    # overflow in the kinetic term just means a divergent trajectory; the
    # resulting -inf is handled by the divergence check
    with np.errstate(over="ignore"):
        return logp - 0.5 * float(np.sum(inv_mass * momentum**2))


def _find_initial_step(vg, u, inv_mass, rng) -> float:
    """Crude bracketing of a step size with acceptance near 1/2."""
    step = 1.0
    logp0, grad0 = vg(u)
    sqrt_mass = 1.0 / np.sqrt(inv_mass)
    momentum = rng.standard_normal(u.shape[0]) * sqrt_mass
    joint0 = _joint(logp0, momentum, inv_mass)

    def joint_after(eps: float) -> float:
        half = momentum + 0.5 * eps * grad0
        u1 = u + eps * inv_mass * half
        logp1, grad1 = vg(u1)
        if not np.isfinite(logp1):
            return -np.inf
        p1 = half + 0.5 * eps * grad1
        return _joint(logp1, p1, inv_mass)

    log_ratio = joint_after(step) - joint0
    while not np.isfinite(log_ratio) and step > 1e-10:
        step *= 0.5
        log_ratio = joint_after(step) - joint0
    direction = 1.0 if log_ratio > math.log(0.5) else -1.0
    for _ in range(100):
        step_next = step * 2.0**direction
        if step_next < 1e-10 or step_next > 1e3:
            break
        log_ratio = joint_after(step_next) - joint0
        if direction * log_ratio < direction * math.log(0.5):
            break
        step = step_next
    return step


class _NutsKernel:
    def __init__(self, vg, dim: int, max_depth: int):
        self.vg = vg
        self.dim = dim
        self.max_depth = max_depth

    def transition(self, u0, logp0, grad0, step, inv_mass, rng):
        sqrt_mass = 1.0 / np.sqrt(inv_mass)
        p0 = rng.standard_normal(self.dim) * sqrt_mass
        self._inv_mass = inv_mass
        self._step = step
        self._rng = rng
        self._joint0 = _joint(logp0, p0, inv_mass)
        self._divergent = False
        self._n_leapfrog = 0
        self._accept_sum = 0.0
        self._accept_count = 0

        state = (u0, p0, grad0, logp0)
        minus, plus = state, state
        sample = state
        log_weight = 0.0  # exp(joint - joint0) at the start point is 1
        depth = 0
        while depth < self.max_depth:
            go_right = rng.random() < 0.5
            if go_right:
                _, plus, prop, log_w_sub, ok = self._build(plus, +1, depth)
            else:
                minus, _, prop, log_w_sub, ok = self._build(minus, -1, depth)
            if not ok:
                break
            # biased progressive sampling: favor the new subtree
            if math.log(rng.random()) < log_w_sub - log_weight:
                sample = prop
            log_weight = np.logaddexp(log_weight, log_w_sub)
            if self._turned(minus, plus):
                depth += 1
                break
            depth += 1

        stats = {
            "accept_stat": self._accept_sum / max(1, self._accept_count),
            "depth": depth,
            "divergent": self._divergent,
            "n_leapfrog": self._n_leapfrog,
        }
        return sample[0], float(sample[3]), sample[2], stats

    def _single_step(self, state, direction):
        u, p, grad, _ = state
        eps = direction * self._step
        half = p + 0.5 * eps * grad
        u1 = u + eps * self._inv_mass * half
        logp1, grad1 = self.vg(u1)
        p1 = half + 0.5 * eps * grad1
        self._n_leapfrog += 1
        joint = _joint(logp1, p1, self._inv_mass) if np.isfinite(logp1) else -np.inf
        delta = joint - self._joint0
        divergent = not np.isfinite(delta) or delta < -DIVERGENCE_ENERGY
        if divergent:
            self._divergent = True
        self._accept_sum += min(1.0, math.exp(min(0.0, delta)))
        self._accept_count += 1
        return (u1, p1, grad1, logp1), (-np.inf if divergent else delta), divergent

    def _turned(self, minus, plus) -> bool:
        span = plus[0] - minus[0]
        return (
            float(span @ (self._inv_mass * minus[1])) < 0.0
            or float(span @ (self._inv_mass * plus[1])) < 0.0
        )

    def _build(self, state, direction, depth):
        """Grow 2^depth leaves from state; returns (minus, plus, proposal,
        log subtree weight, valid)."""
        if depth == 0:
            new, log_w, divergent = self._single_step(state, direction)
            return new, new, new, log_w, not divergent
        first = self._build(state, direction, depth - 1)
        if not first[4]:
            return first
        minus, plus, prop, log_w, _ = first
        tip = plus if direction == 1 else minus
        second = self._build(tip, direction, depth - 1)
        if direction == 1:
            _, plus, prop2, log_w2, ok = second
        else:
            minus, _, prop2, log_w2, ok = second
        if not ok:
            return minus, plus, prop, log_w, False
        total = np.logaddexp(log_w, log_w2)
        # multinomial choice between the two halves
        if math.log(self._rng.random()) < log_w2 - total:
            prop = prop2
        if self._turned(minus, plus):
            return minus, plus, prop, total, False
        return minus, plus, prop, total, True


def _warmup_windows(warmup: int) -> tuple[int, list, int]:
    """Split warmup into (initial step-size phase, metric windows, final)."""
    init = max(1, int(round(0.15 * warmup)))
    final = max(1, int(round(0.10 * warmup)))
    term = warmup - init - final
    if term < 25:
        return warmup, [], 0
    sizes = []
    rem, size = term, 25
    while rem > 0:
        if size >= rem or 2 * size > rem - size:
            sizes.append(rem)
            rem = 0
        else:
            sizes.append(size)
            rem -= size
            size *= 2
    return init, sizes, final


def _run_chain(lp: LogPosterior, config: SamplerConfig, rng: np.random.Generator):
    dim = lp.dim
    vg = lp.value_and_grad
    u = None
    for _ in range(INIT_RETRIES):
        cand = rng.uniform(-1.0, 1.0, dim)
        logp, grad = vg(cand)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            u = cand
            break
    if u is None:
        raise InitializationError(
            f"no finite starting point after {INIT_RETRIES} attempts"
        )

    inv_mass = np.ones(dim)
    kernel = _NutsKernel(vg, dim, config.max_tree_depth)
    step = _find_initial_step(vg, u, inv_mass, rng)
    da = _DualAveraging(step, config.target_accept)

    init, windows, _final = _warmup_windows(config.warmup)
    boundaries = set()
    pos = init
    for size in windows:
        pos += size
        boundaries.add(pos)
    window_end = init + sum(windows)
    welford = _Welford(dim)

    for it in range(config.warmup):
        u, logp, grad, stats = kernel.transition(u, logp, grad, step, inv_mass, rng)
        step = da.update(stats["accept_stat"])
        if init <= it < window_end:
            welford.push(u)
        if (it + 1) in boundaries:
            inv_mass = welford.regularized_variance()
            welford = _Welford(dim)
            step = _find_initial_step(vg, u, inv_mass, rng)
            da.restart(step)
    step = da.adapted()

    kept = np.empty((config.kept_per_chain, dim))
    divergences = 0
    accept_sum = 0.0
    kept_idx = 0
    for it in range(config.iterations):
        u, logp, grad, stats = kernel.transition(u, logp, grad, step, inv_mass, rng)
        divergences += int(stats["divergent"])
        accept_sum += stats["accept_stat"]
        if (it + 1) % config.thin == 0 and kept_idx < kept.shape[0]:
            kept[kept_idx] = u
            kept_idx += 1
    return kept, {
        "divergences": divergences,
        "accept_rate": accept_sum / config.iterations,
        "step_size": step,
        "inv_mass": inv_mass,
    }


def fit(
    dataset: Dataset,
    spec: ModelSpec,
    hyper: Hyperparameters,
    grid: TimeGrid,
    config: SamplerConfig,
    basis: HsgpBasis | None = None,
) -> PosteriorDraws:
    """Sample the posterior; returns post-thinning constrained draws.

    A reduced-rank basis is built from the dataset coordinates when the
    spatial mode needs one and none is supplied. Chains run sequentially
    with independent spawned RNG streams; results are reproducible given
    (dataset, spec, hyper, grid, config).
    """
    if spec.mode_code >= 1 and basis is None:
        basis = hsgp_basis(dataset.coords, spec.hsgp)
    lp = LogPosterior(dataset, spec, hyper, grid, basis)
    layout = lp.layout

    streams = np.random.SeedSequence(config.seed).spawn(config.chains)
    per_chain = []
    chain_meta = []
    for ss in streams:
        kept_u, info = _run_chain(lp, config, np.random.Generator(np.random.PCG64(ss)))
        per_chain.append(kept_u)
        chain_meta.append(info)

    names = layout.names()
    m, k = layout.m_risks, layout.k
    lam_names = [f"lambda{j}_{l}" for j in range(1, m + 1) for l in range(k)]
    all_names = names + lam_names
    kept = config.kept_per_chain
    draws = np.empty((config.chains, kept, len(all_names)))
    loglik = np.empty((config.chains, kept, dataset.n))
    for c, kept_u in enumerate(per_chain):
        for s in range(kept):
            state = lp.unpack(kept_u[s])
            draws[c, s] = np.concatenate(
                [_constrain_vector(state, layout), state.rates().ravel()]
            )
            loglik[c, s] = lp.pointwise_loglik(kept_u[s])

    total_div = int(sum(cm["divergences"] for cm in chain_meta))
    div_frac = total_div / (config.chains * config.iterations)
    if div_frac > 0.01:
        warnings.warn(
            f"{total_div} post-warmup divergences "
            f"({100 * div_frac:.1f}% of transitions); treat results with care"
        )
    meta = {
        "seed": config.seed,
        "chains": config.chains,
        "warmup": config.warmup,
        "iterations": config.iterations,
        "thin": config.thin,
        "target_accept": config.target_accept,
        "max_tree_depth": config.max_tree_depth,
        "divergences": [cm["divergences"] for cm in chain_meta],
        "divergence_warning": bool(div_frac > 0.01),
        "accept_rate": [cm["accept_rate"] for cm in chain_meta],
        "step_size": [cm["step_size"] for cm in chain_meta],
        "spatial_mode": spec.spatial_mode,
        "m_risks": layout.m_risks,
        "p": layout.p,
        "k": layout.k,
        "m_basis": layout.m_basis,
        "knots": grid.knots.tolist(),
        "n": dataset.n,
    }
    if basis is not None and spec.mode_code >= 1:
        meta["basis"] = {
            "m_per_dim": spec.hsgp.m_per_dim,
            "boundary_factor": spec.hsgp.boundary_factor,
            "L": basis.L.tolist(),
        }
    return PosteriorDraws(names=all_names, draws=draws, loglik=loglik, meta=meta)


def _constrain_vector(state, layout) -> np.ndarray:
    """Constrained values aligned with layout.names() order."""
    parts = []
    for j in range(layout.m_risks):
        parts.append(state.beta[j])
        parts.append([state.beta_w[j]])
        parts.append(state.psi[j])
        if layout.mode_code >= 1:
            parts.append(state.z0[j])
            parts.append([state.tau0[j], state.ell0[j]])
        if layout.mode_code == 2:
            parts.append(state.z1[j])
            parts.append([state.tau1[j], state.ell1[j]])
    parts.append([state.sigma2, state.kappa])
    return np.concatenate([np.asarray(x, dtype=float).ravel() for x in parts])
