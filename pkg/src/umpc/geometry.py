"""Probabilistic forecast regions for obstacle avoidance.

Confidence ellipses of bivariate normal position forecasts, their
enlargement by the combined robot/obstacle radius, the keep-out
constraint value on the ellipse complement, the Bonferroni rectangle
alternative and the enlargement approximation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

EPS_PSD = 1e-12


class SingularCovarianceError(ValueError):
    """Covariance matrix is numerically singular where PD is required."""


@dataclass(frozen=True)
class Covariance2:
    """Symmetric PSD 2x2 covariance matrix stored by its three entries."""

    xx: float
    xy: float
    yy: float

    def __post_init__(self):
        if not (math.isfinite(self.xx) and math.isfinite(self.xy) and math.isfinite(self.yy)):
            raise ValueError("covariance entries must be finite")
        tol = EPS_PSD * max(1.0, self.xx * self.yy, self.xy * self.xy)
        if self.xx < 0.0 or self.yy < 0.0 or self.det < -tol:
            raise ValueError(f"covariance not PSD: xx={self.xx} xy={self.xy} yy={self.yy}")

    @property
    def det(self) -> float:
        return self.xx * self.yy - self.xy * self.xy

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.xx, self.xy], [self.xy, self.yy]])

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Covariance2":
        return Covariance2(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))

    @staticmethod
    def zero() -> "Covariance2":
        return Covariance2(0.0, 0.0, 0.0)

    @staticmethod
    def isotropic(var: float) -> "Covariance2":
        return Covariance2(var, 0.0, var)


@dataclass(frozen=True)
class EigenDecomp2:
    """Eigenpairs of a symmetric PSD 2x2 matrix, lambda1 >= lambda2.

    (v1, v2) is a right-handed orthonormal pair: det [v1 v2] = +1.
    """

    lambda1: float
    lambda2: float
    v1: tuple[float, float]
    v2: tuple[float, float]

    def rotation(self) -> np.ndarray:
        return np.array([[self.v1[0], self.v2[0]], [self.v1[1], self.v2[1]]])


@dataclass(frozen=True)
class ChanceLevel:
    """Probability p and the Mahalanobis threshold s = sqrt(-2 ln(1-p))."""

    p: float
    s: float


@dataclass(frozen=True)
class ForecastEllipse:
    """Enlarged confidence ellipse: semi-axis j is s*sqrt(lambda_j) + enlargement."""

    center: tuple[float, float]
    rot: np.ndarray = field(repr=False)
    inv_len_sq: tuple[float, float]
    raw: EigenDecomp2
    enlargement: float
    chance: ChanceLevel

    @property
    def semi_axes(self) -> tuple[float, float]:
        return (1.0 / math.sqrt(self.inv_len_sq[0]), 1.0 / math.sqrt(self.inv_len_sq[1]))


@dataclass(frozen=True)
class RectangleRegion:
    """Joint forecast rectangle, axis-aligned in the eigenframe of the covariance."""

    center: tuple[float, float]
    rot: np.ndarray = field(repr=False)
    half_widths: tuple[float, float]

    @property
    def area(self) -> float:
        return 4.0 * self.half_widths[0] * self.half_widths[1]

    def corners(self) -> np.ndarray:
        hw = np.array(self.half_widths)
        local = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * hw
        return np.asarray(self.center) + local @ self.rot.T


def chi2_threshold(p: float) -> ChanceLevel:
    """Threshold s with P(d_M < s) = p for a bivariate normal.

    Closed form from the chi-square(2) CDF: s = sqrt(-2 ln(1-p)).
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return ChanceLevel(p=p, s=math.sqrt(-2.0 * math.log1p(-p)))


def mahalanobis_sq(x, mu, sigma: Covariance2) -> float:
    """Squared Mahalanobis distance (x-mu)^T Sigma^-1 (x-mu)."""
    det = sigma.det
    if det <= EPS_PSD:
        raise SingularCovarianceError(f"covariance is singular (det={det:g})")
    dx = x[0] - mu[0]
    dy = x[1] - mu[1]
    return (sigma.yy * dx * dx - 2.0 * sigma.xy * dx * dy + sigma.xx * dy * dy) / det


def eig_sym_2x2(sigma: Covariance2) -> EigenDecomp2:
    """Closed-form eigendecomposition of a symmetric PSD 2x2 matrix.

    Eigenvalues sorted descending; repeated eigenvalues return the
    identity rotation. v1 is canonicalized to a nonnegative leading
    component so results are deterministic.
    """
    half_tr = 0.5 * (sigma.xx + sigma.yy)
    half_diff = 0.5 * (sigma.xx - sigma.yy)
    disc = math.hypot(half_diff, sigma.xy)
    lam1 = half_tr + disc
    lam2 = half_tr - disc
    lam2 = max(lam2, 0.0)

    scale = max(abs(sigma.xx), abs(sigma.yy), abs(sigma.xy), 1.0)
    if disc <= 1e-15 * scale:
        return EigenDecomp2(lam1, lam2, (1.0, 0.0), (0.0, 1.0))

    if abs(sigma.xy) > 1e-15 * scale:
        # pick the component formula free of cancellation
        if half_diff >= 0.0:
            v1 = np.array([half_diff + disc, sigma.xy])
        else:
            v1 = np.array([sigma.xy, disc - half_diff])
    elif sigma.xx >= sigma.yy:
        v1 = np.array([1.0, 0.0])
    else:
        v1 = np.array([0.0, 1.0])
    v1 = v1 / np.linalg.norm(v1)
    if v1[0] < 0.0 or (v1[0] == 0.0 and v1[1] < 0.0):
        v1 = -v1
    v2 = np.array([-v1[1], v1[0]])  # right-handed completion
    return EigenDecomp2(lam1, lam2, (float(v1[0]), float(v1[1])), (float(v2[0]), float(v2[1])))


def build_forecast_ellipse(
    mu,
    sigma: Covariance2,
    chance: ChanceLevel,
    r_robot: float,
    r_obstacle: float,
) -> ForecastEllipse:
    """Confidence ellipse at level `chance` enlarged by r_robot + r_obstacle.

    Semi-axis j becomes s*sqrt(lambda_j) + r_robot + r_obstacle; a zero
    eigenvalue degenerates that axis to the bare enlargement radius.
    """
    if r_robot <= 0.0 or r_obstacle <= 0.0:
        raise ValueError("radii must be positive")
    eig = eig_sym_2x2(sigma)
    enlargement = r_robot + r_obstacle
    a = chance.s * math.sqrt(max(eig.lambda1, 0.0)) + enlargement
    b = chance.s * math.sqrt(max(eig.lambda2, 0.0)) + enlargement
    return ForecastEllipse(
        center=(float(mu[0]), float(mu[1])),
        rot=eig.rotation(),
        inv_len_sq=(1.0 / (a * a), 1.0 / (b * b)),
        raw=eig,
        enlargement=enlargement,
        chance=chance,
    )


def constraint_value(ellipse: ForecastEllipse, p_robot) -> float:
    """Keep-out constraint g = dp^T R Lambda^-1 R^T dp; g >= 1 means outside."""
    dx = p_robot[0] - ellipse.center[0]
    dy = p_robot[1] - ellipse.center[1]
    r = ellipse.rot
    w1 = r[0, 0] * dx + r[1, 0] * dy
    w2 = r[0, 1] * dx + r[1, 1] * dy
    return ellipse.inv_len_sq[0] * w1 * w1 + ellipse.inv_len_sq[1] * w2 * w2


def constraint_gradient(ellipse: ForecastEllipse, p_robot) -> np.ndarray:
    """Analytic gradient of constraint_value w.r.t. the robot position."""
    dp = np.array([p_robot[0] - ellipse.center[0], p_robot[1] - ellipse.center[1]])
    r = ellipse.rot
    m = r @ np.diag(ellipse.inv_len_sq) @ r.T
    return 2.0 * (m @ dp)


def in_complement_all(ellipses, p_robot) -> bool:
    """True iff p_robot lies outside (or on) every ellipse of the family."""
    return all(constraint_value(e, p_robot) >= 1.0 for e in ellipses)


def rectangle_region(mu, sigma: Covariance2, p: float) -> RectangleRegion:
    """Bonferroni joint forecast rectangle at level p.

    Per-axis two-sided interval in the eigenframe with quantile
    z_{1-(1-p)/4}, so the joint coverage is at least p.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if sigma.det <= EPS_PSD:
        raise SingularCovarianceError(f"covariance is singular (det={sigma.det:g})")
    eig = eig_sym_2x2(sigma)
    z = float(norm.ppf(1.0 - (1.0 - p) / 4.0))
    return RectangleRegion(
        center=(float(mu[0]), float(mu[1])),
        rot=eig.rotation(),
        half_widths=(z * math.sqrt(eig.lambda1), z * math.sqrt(eig.lambda2)),
    )


def ellipse_area(sigma: Covariance2, chance: ChanceLevel) -> float:
    """Area of the base confidence ellipse, pi s^2 sqrt(lambda1 lambda2)."""
    eig = eig_sym_2x2(sigma)
    return math.pi * chance.s**2 * math.sqrt(max(eig.lambda1 * eig.lambda2, 0.0))


def ellipse_boundary(center, rot: np.ndarray, semi_axes, n: int = 128) -> np.ndarray:
    """Polyline of an ellipse boundary, for plotting. Shape (n, 2), closed."""
    t = np.linspace(0.0, 2.0 * math.pi, n)
    local = np.column_stack([semi_axes[0] * np.cos(t), semi_axes[1] * np.sin(t)])
    return np.asarray(center) + local @ rot.T


def _offset_radius_at(a: float, b: float, r_sum: float, theta: float, samples: int) -> float:
    """Radial extent along theta of the Minkowski sum of an ellipse and a disk.

    The boundary is the outward offset of the ellipse by r_sum, sampled
    densely and interpolated in polar angle.
    """
    if a <= 0.0 and b <= 0.0:
        return r_sum
    if b <= 1e-12 * max(a, 1.0):
        # degenerate ellipse: stadium around the segment [-a, a] x {0}
        c, s = abs(math.cos(theta)), abs(math.sin(theta))
        if s > 0.0 and (r_sum / s) * c <= a:
            return r_sum / s
        # end-cap circle of radius r_sum centered at (a, 0)
        return a * c + math.sqrt(max(r_sum * r_sum - a * a * s * s, 0.0))
    t = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    ct, st = np.cos(t), np.sin(t)
    nrm = np.hypot(b * ct, a * st)
    px = a * ct + r_sum * b * ct / nrm
    py = b * st + r_sum * a * st / nrm
    phi = np.unwrap(np.arctan2(py, px))
    rad = np.hypot(px, py)
    phi0 = phi[0]
    query = phi0 + (theta - phi0) % (2.0 * math.pi)
    phi_ext = np.append(phi, phi[0] + 2.0 * math.pi)
    rad_ext = np.append(rad, rad[0])
    return float(np.interp(query, phi_ext, rad_ext))


def enlargement_error(
    sigma: Covariance2,
    chance: ChanceLevel,
    r_sum: float,
    theta: float,
    samples: int = 16384,
) -> float:
    """Signed radial gap of the enlarged ellipse versus the true Minkowski sum.

    Along eigenframe direction theta: (enlarged-ellipse radius) minus the
    radius of the offset of the base ellipse by r_sum. Zero on the axes
    and for isotropic covariances; negative where the enlargement
    under-covers.
    """
    if r_sum <= 0.0:
        raise ValueError("r_sum must be positive")
    eig = eig_sym_2x2(sigma)
    a = chance.s * math.sqrt(max(eig.lambda1, 0.0))
    b = chance.s * math.sqrt(max(eig.lambda2, 0.0))
    c, s = math.cos(theta), math.sin(theta)
    r_enl = 1.0 / math.hypot(c / (a + r_sum), s / (b + r_sum))
    r_true = _offset_radius_at(a, b, r_sum, theta, samples)
    return r_enl - r_true
