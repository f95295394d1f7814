"""Spatial machinery: Matern 3/2 kernel, low-rank basis, kriging.

The kernel is the Matern family member with smoothness 3/2,

    k(r) = tau^2 (1 + sqrt(3) r / ell) exp(-sqrt(3) r / ell),

whose sample paths are once differentiable. Exact covariance matrices are
dense and O(n^3) to factor, so surfaces are usually represented in a
reduced-rank form: on a centered box [-L1, L1] x [-L2, L2] the kernel is
expanded in Laplacian eigenfunctions

    phi_{m1,m2}(x) = prod_d (1/sqrt(L_d)) sin(pi m_d (x_d + L_d) / (2 L_d)),

with the spectral density of the kernel evaluated at the eigenvalue roots
supplying the diagonal weights, so that Phi S Phi^T approximates the exact
covariance. A surface draw is then Phi sqrt(S) z with standard-normal
weights z, and prediction at new locations is the same linear map through a
basis evaluated there (the predictive distribution is degenerate given z).

Coordinates are assumed centered; `normalize_coords` maps raw planar
coordinates into [-1, 1]^2 with a single isotropic scale and records the
affine transform for mapping prediction grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    InvalidArgumentError,
    NumericalError,
    OutOfRangeError,
)

# jitter policy for dense factorizations: start small, escalate, give up
JITTER_START = 1e-8
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class MaternParams:
    """Kernel magnitude tau and lengthscale ell (smoothness fixed at 3/2)."""

    tau: float
    ell: float

    def __post_init__(self):
        if not (self.tau > 0 and self.ell > 0):
            raise InvalidArgumentError(
                f"tau and ell must be positive, got tau={self.tau}, ell={self.ell}"
            )


@dataclass(frozen=True)
class HsgpConfig:
    """Reduced-rank settings: modes per dimension and boundary inflation."""

    m_per_dim: int = 32
    boundary_factor: float = 1.25

    def __post_init__(self):
        if self.m_per_dim < 1:
            raise InvalidArgumentError(f"m_per_dim must be >= 1, got {self.m_per_dim}")
        if self.boundary_factor < 1.0:
            raise InvalidArgumentError(
                f"boundary_factor must be >= 1, got {self.boundary_factor}"
            )


@dataclass(frozen=True)
class HsgpBasis:
    """Evaluated eigenfunction basis.

    Attributes
    ----------
    L : (2,) array
        Box half-widths of the boundary-extended domain.
    freqs : (m_basis, 2) int array
        Per-dimension frequency indices (m1, m2), both starting at 1.
    phi : (n, m_basis) array
        Eigenfunctions evaluated at the input coordinates.
    eigvals : (m_basis,) array
        Laplacian eigenvalues sum_d (pi m_d / (2 L_d))^2.
    """

    L: np.ndarray
    freqs: np.ndarray
    phi: np.ndarray
    eigvals: np.ndarray

    @property
    def m_basis(self) -> int:
        return self.phi.shape[1]

    def same_expansion(self, other: "HsgpBasis") -> bool:
        return np.array_equal(self.L, other.L) and np.array_equal(
            self.freqs, other.freqs
        )


@dataclass(frozen=True)
class CoordTransform:
    """Affine map raw -> normalized: (raw - center) * scale."""

    center: np.ndarray
    scale: float

    def to_normalized(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.center) * self.scale

    def to_raw(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized, dtype=float) / self.scale + self.center


@dataclass(frozen=True)
class KrigingDistribution:
    """Gaussian predictive law at new locations; sample() draws from it."""

    mean: np.ndarray
    cov: np.ndarray
    _tau2: float = field(default=1.0, repr=False)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        chol = _chol_with_jitter(self.cov, self._tau2)
        return self.mean + chol @ rng.standard_normal(self.mean.shape[0])


def matern32(r, params: MaternParams):
    """Matern 3/2 kernel value at distance r (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidArgumentError("distances must be nonnegative")
    a = np.sqrt(3.0) * r / params.ell
    out = params.tau**2 * (1.0 + a) * np.exp(-a)
    return out if out.ndim else float(out)


def matern32_spectral_density(omega2, params: MaternParams):
    """Spectral density of the 2-D Matern 3/2 kernel at squared frequency omega2.

    S(omega) = tau^2 * 6 pi * 3^{3/2} * ell^{-3} * (3/ell^2 + |omega|^2)^{-5/2},
    normalized so that (2 pi)^{-2} integral S d omega = tau^2.
    """
    omega2 = np.asarray(omega2, dtype=float)
    if np.any(omega2 < 0):
        raise InvalidArgumentError("squared frequencies must be nonnegative")
    out = (
        params.tau**2
        * 6.0
        * np.pi
        * 3.0**1.5
        * params.ell**-3
        * (3.0 / params.ell**2 + omega2) ** -2.5
    )
    return out if out.ndim else float(out)


def exact_cov(coords: np.ndarray, params: MaternParams, jitter: float = JITTER_START) -> np.ndarray:
    """Dense kernel matrix over coordinates, with a small diagonal jitter."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    cov = matern32(d, params)
    return cov + jitter * params.tau**2 * np.eye(coords.shape[0])


def _cross_cov(a: np.ndarray, b: np.ndarray, params: MaternParams) -> np.ndarray:
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return matern32(d, params)


def _chol_with_jitter(mat: np.ndarray, tau2: float) -> np.ndarray:
    """Cholesky with escalating diagonal jitter; raises after the cap."""
    jitter = JITTER_START
    eye = np.eye(mat.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return np.linalg.cholesky(mat + jitter * tau2 * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky failed after jitter escalation to {JITTER_MAX} * tau^2"
    )


def domain_halfwidths(coords: np.ndarray, config: HsgpConfig) -> np.ndarray:
    """Box half-widths L_d = boundary_factor * max |coord_d| for centered coords."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    span = np.abs(coords).max(axis=0)
    if np.any(span <= 0):
        raise DegenerateInputError("coordinates have zero extent in some dimension")
    return config.boundary_factor * span


def hsgp_basis(coords: np.ndarray, config: HsgpConfig, L: np.ndarray | None = None) -> HsgpBasis:
    """Evaluate the eigenfunction basis at (centered) coordinates.

    Parameters
    ----------
    coords : (n, 2) array
        Centered planar coordinates; every point must lie strictly inside
        the box, i.e. |coord_d| < L_d.
    config : HsgpConfig
    L : optional (2,) array
        Explicit half-widths. Prediction locations must reuse the half-widths
        of the fitting basis, so pass the stored L when building a basis for
        new coordinates. Default: derived from `coords` via `config`.
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if L is None:
        L = domain_halfwidths(coords, config)
    L = np.asarray(L, dtype=float)
    if np.any(np.abs(coords) >= L):
        raise OutOfRangeError(
            "coordinates outside the boundary-extended domain "
            f"(half-widths {L.tolist()})"
        )
    m = config.m_per_dim
    ms = np.arange(1, m + 1)
    m1, m2 = [g.ravel() for g in np.meshgrid(ms, ms, indexing="ij")]
    freqs = np.column_stack([m1, m2])
    eigvals = (np.pi * m1 / (2 * L[0])) ** 2 + (np.pi * m2 / (2 * L[1])) ** 2
    phi1 = np.sin(np.pi * np.outer(coords[:, 0] + L[0], m1) / (2 * L[0])) / np.sqrt(L[0])
    phi2 = np.sin(np.pi * np.outer(coords[:, 1] + L[1], m2) / (2 * L[1])) / np.sqrt(L[1])
    return HsgpBasis(L=L, freqs=freqs, phi=phi1 * phi2, eigvals=eigvals)


def spectral_weights(basis: HsgpBasis, params: MaternParams) -> np.ndarray:
    """Diagonal spectral weights S evaluated at the basis eigenvalues."""
    return matern32_spectral_density(basis.eigvals, params)


def spectral_weights_batch(eigvals: np.ndarray, tau: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """Spectral weights for many (tau, ell) pairs at once; shape (s, m_basis)."""
    tau = np.asarray(tau, dtype=float)[:, None]
    ell = np.asarray(ell, dtype=float)[:, None]
    if np.any(tau <= 0) or np.any(ell <= 0):
        raise InvalidArgumentError("tau and ell must be positive")
    om2 = np.asarray(eigvals, dtype=float)[None, :]
    return tau**2 * 6.0 * np.pi * 3.0**1.5 / ell**3 * (3.0 / ell**2 + om2) ** -2.5


def surface_from_weights(basis: HsgpBasis, params: MaternParams, z: np.ndarray) -> np.ndarray:
    """Surface realization Phi sqrt(S) z for standard-normal weights z.

    z may carry leading batch axes: shape (..., m_basis) maps to (..., n).
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != basis.m_basis:
        raise InvalidArgumentError(
            f"weight vector length {z.shape[-1]} != basis size {basis.m_basis}"
        )
    return (z * np.sqrt(spectral_weights(basis, params))) @ basis.phi.T


def approx_cov(basis: HsgpBasis, params: MaternParams) -> np.ndarray:
    """Low-rank covariance Phi S Phi^T implied by the basis."""
    s = spectral_weights(basis, params)
    return (basis.phi * s) @ basis.phi.T


def krige_exact(
    theta_obs: np.ndarray,
    coords_obs: np.ndarray,
    coords_new: np.ndarray,
    params: MaternParams,
) -> KrigingDistribution:
    """Exact conditional law of the surface at new locations.

    Returns the Gaussian with mean Sigma_+^T Sigma^{-1} theta_obs and
    covariance Sigma_* - Sigma_+^T Sigma^{-1} Sigma_+, where Sigma is the
    observed-location covariance (with jitter), Sigma_+ the cross block and
    Sigma_* the new-location block. Use .sample(rng) for a draw.
    """
    theta_obs = np.asarray(theta_obs, dtype=float)
    coords_obs = np.atleast_2d(np.asarray(coords_obs, dtype=float))
    coords_new = np.atleast_2d(np.asarray(coords_new, dtype=float))
    cov_obs = _cross_cov(coords_obs, coords_obs, params)
    chol = _chol_with_jitter(cov_obs, params.tau**2)
    cross = _cross_cov(coords_obs, coords_new, params)
    cov_new = _cross_cov(coords_new, coords_new, params)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, theta_obs))
    v = np.linalg.solve(chol, cross)
    mean = cross.T @ alpha
    cov = cov_new - v.T @ v
    return KrigingDistribution(mean=mean, cov=cov, _tau2=params.tau**2)


def krige_hsgp(
    z: np.ndarray,
    basis_new: HsgpBasis,
    params: MaternParams,
    fit_basis: HsgpBasis | None = None,
) -> np.ndarray:
    """Degenerate prediction Phi* sqrt(S) z at new locations.

    If `fit_basis` is given, the new basis must share its half-widths and
    frequency set; a mismatch means the two expansions live in different
    function spaces and is rejected.
    """
    if fit_basis is not None and not basis_new.same_expansion(fit_basis):
        raise InvalidArgumentError(
            "prediction basis does not match the fitting basis "
            "(different half-widths or frequency set)"
        )
    return surface_from_weights(basis_new, params, z)


def sum_to_zero(values: np.ndarray) -> np.ndarray:
    """Center values to mean zero along the last axis (per draw for 2-D input)."""
    values = np.asarray(values, dtype=float)
    return values - values.mean(axis=-1, keepdims=True)


def normalize_coords(coords_raw: np.ndarray) -> tuple[np.ndarray, CoordTransform]:
    """Center raw coordinates and scale isotropically into [-1, 1]^2.

    The center is the bounding-box midpoint per dimension and the single
    multiplicative scale is the reciprocal of the larger half-width, so the
    wider dimension spans [-1, 1] exactly and aspect ratio is preserved.
    Returns the normalized coordinates and the recorded transform.
    """
    coords_raw = np.atleast_2d(np.asarray(coords_raw, dtype=float))
    if coords_raw.shape[0] < 2:
        raise DegenerateInputError("need at least 2 points to normalize coordinates")
    lo = coords_raw.min(axis=0)
    hi = coords_raw.max(axis=0)
    half = (hi - lo) / 2.0
    if np.max(half) <= 0:
        raise DegenerateInputError("all coordinates identical; bounding box is a point")
    transform = CoordTransform(center=(lo + hi) / 2.0, scale=1.0 / np.max(half))
    return transform.to_normalized(coords_raw), transform
