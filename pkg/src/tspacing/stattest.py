"""Spacing and t-spacing p-values at the global maximum.

With ``Omega`` the curvature matrix at the maximiser, ``lambda1`` the maximum
and ``lambda2`` the maximum of the conditioned field,

    p      = G(Omega/sigma, lambda1/sigma) / G(Omega/sigma, lambda2/sigma)
    p_t    = H(Omega/sigma_hat, lambda1/sigma_hat) / H(Omega/sigma_hat, lambda2/sigma_hat)

where ``G`` and ``H`` integrate ``det(u I - r)`` against a Gaussian or a
Student density over ``[l, inf)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, special, stats

from .conditional import ConditionalField, omega
from .errors import DegenerateDenominator, EstimationFailed, MomentDiverges
from .models import FieldModel

DENOM_FLOOR = 1e-300
POINT_SET_TOL = 1e-10  # smallest eigenvalue of the conditional covariance
_LOG_FLOOR = math.log(DENOM_FLOOR)


def charpoly(r) -> np.ndarray:
    """Coefficients of ``det(u I - r)``, highest degree first."""
    r = np.atleast_2d(np.asarray(r, float))
    if r.size == 0:
        return np.ones(1)
    return np.real(np.poly(np.linalg.eigvalsh(0.5 * (r + r.T))))


def gaussian_partial_moments(l: float, jmax: int) -> np.ndarray:
    """``I_j(l) = int_l^inf u^j phi(u) du`` for ``j = 0..jmax``."""
    I = np.empty(jmax + 1)
    phi = math.exp(-0.5 * l * l) / math.sqrt(2 * math.pi)
    I[0] = special.ndtr(-l)
    if jmax >= 1:
        I[1] = phi
    for j in range(2, jmax + 1):
        I[j] = l ** (j - 1) * phi + (j - 1) * I[j - 2]
    return I


def _scaled_moments(l: float, jmax: int) -> np.ndarray:
    """``I_j(l) / phi(l)``; finite for any ``l`` thanks to the scaled erfc."""
    J = np.empty(jmax + 1)
    J[0] = math.sqrt(math.pi / 2) * special.erfcx(l / math.sqrt(2))
    if jmax >= 1:
        J[1] = 1.0
    for j in range(2, jmax + 1):
        J[j] = l ** (j - 1) + (j - 1) * J[j - 2]
    return J


def _log_G(r, l):
    """``(log|G|, sign)`` of ``G(r, l)``."""
    a = charpoly(r)[::-1]  # a[j] multiplies u^j
    s = float(a @ _scaled_moments(l, a.size - 1))
    if s == 0.0:
        return -math.inf, 0.0
    return math.log(abs(s)) - 0.5 * l * l - 0.5 * math.log(2 * math.pi), math.copysign(1.0, s)


def G_functional(r, l: float) -> float:
    """``int_l^inf det(u I - r) phi(u) du``."""
    a = charpoly(r)[::-1]
    return float(a @ gaussian_partial_moments(l, a.size - 1))


def G_closed_2x2(r, l: float) -> float:
    """Closed form for ``2 x 2`` matrices."""
    r = np.asarray(r, float)
    phi = math.exp(-0.5 * l * l) / math.sqrt(2 * math.pi)
    det = r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0]
    return l * phi - np.trace(r) * phi + (det + 1.0) * special.ndtr(-l)


def student_partial_moments(x: float, nu: int, jmax: int) -> np.ndarray:
    """``T_j(x) = int_x^inf v^j f_nu(v) dv`` for ``j = 0..jmax < nu``.

    Integration by parts against ``g(v) = nu/(nu-1) (1 + v^2/nu) f_nu(v)``,
    whose derivative is ``-v f_nu(v)``, gives
    ``T_j = [(nu-1) x^{j-1} g(x) + (j-1) nu T_{j-2}] / (nu - j)``.
    """
    if jmax >= nu:
        raise MomentDiverges(f"moment {jmax} of a t density with {nu} dof is infinite")
    T = np.empty(jmax + 1)
    T[0] = stats.t.sf(x, nu)
    g = nu / (nu - 1) * (1.0 + x * x / nu) * stats.t.pdf(x, nu)
    for j in range(1, jmax + 1):
        prev = T[j - 2] if j >= 2 else 0.0
        T[j] = ((nu - 1) * x ** (j - 1) * g + (j - 1) * nu * prev) / (nu - j)
    return T


def H_functional(r, l: float, m: int, kappa: int) -> float:
    """``int_l^inf det(u I - r) f_{m-1}(u sqrt((m-1)/kappa)) du``.

    ``f_nu`` is the Student density with ``nu`` degrees of freedom.
    """
    r = np.atleast_2d(np.asarray(r, float))
    d = r.shape[0]
    nu = m - 1
    if d >= nu:
        raise MomentDiverges(f"u^{d} is not integrable against a t density with {nu} dof")
    a = charpoly(r)[::-1]
    s = math.sqrt(nu / kappa)
    T = student_partial_moments(s * l, nu, d)
    return float(np.sum(a * T / s ** (np.arange(d + 1) + 1)))


def H_closed_2x2(r, l: float, m: int, kappa: int) -> float:
    """Closed form of :func:`H_functional` for ``2 x 2`` matrices."""
    r = np.asarray(r, float)
    tr = float(np.trace(r))
    det = float(r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0])
    lg = special.gammaln
    C = (kappa * math.sqrt(m - 3) / ((m - 2) * math.sqrt(m - 1))
         * math.exp(lg(m / 2) + lg((m - 3) / 2) - lg((m - 1) / 2) - lg((m - 2) / 2)))
    a = l * math.sqrt((m - 3) / kappa)
    b = l * math.sqrt((m - 1) / kappa)
    t3, t1 = stats.t(m - 3), stats.t(m - 1)
    return (C * math.sqrt(kappa / (m - 3)) * (a * t3.pdf(a) + t3.sf(a))
            - tr * C * t3.pdf(a)
            + det * math.sqrt(kappa / (m - 1)) * t1.sf(b))


def spacing_pvalue(omega_matrix, lambda1: float, lambda2: float, sigma: float) -> float:
    """Spacing p-value with known noise level."""
    r = np.asarray(omega_matrix, float) / sigma
    l1, l2 = lambda1 / sigma, lambda2 / sigma
    log_den, sgn_den = _log_G(r, l2)
    if sgn_den <= 0 or log_den <= _LOG_FLOOR:
        raise DegenerateDenominator(f"G(Omega/sigma, {l2:.4g}) is not above {DENOM_FLOOR}")
    log_num, sgn_num = _log_G(r, l1)
    if sgn_num <= 0:
        return 0.0
    return float(min(1.0, max(0.0, math.exp(log_num - log_den))))


def t_spacing_pvalue(omega_matrix, lambda1: float, lambda2: float, sigma_hat: float,
                     m: int, kappa: int) -> float:
    """Spacing p-value with the noise level replaced by its estimate."""
    r = np.asarray(omega_matrix, float) / sigma_hat
    den = H_functional(r, lambda2 / sigma_hat, m, kappa)
    if not den > DENOM_FLOOR:
        raise DegenerateDenominator(f"H denominator {den:.3g} is not above {DENOM_FLOOR}")
    num = H_functional(r, lambda1 / sigma_hat, m, kappa)
    return float(min(1.0, max(0.0, num / den)))


# -- noise-level estimation ----------------------------------------------------

@dataclass
class SigmaEstimate:
    sigma_hat: float
    kappa: int
    points: np.ndarray = field(repr=False)
    attempts: int = 1


def sample_point_set(model: FieldModel, t1, size: int, rng, min_pole_distance: float = 0.05):
    """Random points kept away from ``t1`` and its images."""
    cf_poles = model.equivalent_points(t1)
    M = model.manifold
    out = []
    while len(out) < size:
        P = M.random_point(rng, 2 * size)
        dist = np.min(np.stack([M.distance(P, p) for p in cf_poles]), axis=0)
        out.extend(P[dist > min_pole_distance])
    return np.asarray(out[:size])


def _residual_features(model: FieldModel, t1, P) -> np.ndarray:
    """Columns ``P_perp psi_s / (1 - c(s, t1))`` for each point ``s``.

    ``P_perp`` projects off ``span{psi_t1, D psi_t1[e_i]}``; the Gram matrix
    of the columns is the conditional covariance at ``P``.
    """
    B = np.stack([model.real_vector(model.feature(t1))]
                 + [model.real_vector(model.feature_derivative(t1, f)) for f in model.frame(t1)], axis=1)
    Qb, _ = np.linalg.qr(B)
    Phi = np.stack([model.real_vector(model.feature(s)) for s in P], axis=1)
    Phi = Phi - Qb @ (Qb.T @ Phi)
    return Phi / (1.0 - model.covariance(P, t1))


def estimate_sigma(model: FieldModel, Y, t1, rng=None, points=None, max_resamples: int = 10) -> SigmaEstimate:
    """Noise level from the conditioned field at ``t1``.

    Over ``kappa = m - d - 1`` points the whitened values ``V^T Sigma^{-1} V``
    are ``sigma^2 chi^2_kappa`` when ``t1`` is fixed; ``sigma_hat^2`` is that
    quadratic form over ``kappa``. The Cholesky factor of ``Sigma`` is taken
    from a QR factorisation of the projected features rather than from
    ``Sigma`` itself, which would square its condition number.
    """
    m, d = model.kl_order(), model.dim
    kappa = m - d - 1
    if kappa < 1:
        raise EstimationFailed(f"no residual degrees of freedom (m={m}, d={d})")
    cf = ConditionalField(model, Y, t1, mode="full")
    rng = np.random.default_rng() if rng is None else rng
    attempts = 0
    while True:
        attempts += 1
        P = sample_point_set(model, t1, kappa, rng) if points is None else np.asarray(points, float)
        Rf = np.linalg.qr(_residual_features(model, t1, P), mode="r")
        sv = np.linalg.svd(Rf, compute_uv=False)
        if sv[-1] ** 2 < POINT_SET_TOL:
            if points is not None or attempts > max_resamples:
                raise EstimationFailed(f"no usable point set after {attempts} attempts") from None
            continue
        V = cf.value(P)
        w = linalg.solve_triangular(Rf, V, trans="T")
        return SigmaEstimate(float(math.sqrt(w @ w / kappa)), kappa, P, attempts)


def sigma_hat_direct(model: FieldModel, Y, t1) -> float:
    """``||R|| / sqrt(kappa)`` with ``R`` the residual payload at ``t1``."""
    cf = ConditionalField(model, Y, t1, mode="full")
    kappa = model.kl_order() - model.dim - 1
    return math.sqrt(model.inner(cf.residual, cf.residual) / kappa)


# -- full test ----------------------------------------------------------------------

@dataclass
class TestReport:
    """Everything needed to audit one test: knots, ``Omega``, noise level, p-values."""

    model: dict
    lambda1: float
    lambda2: float
    t1: list
    t2: object
    omega: list
    m: int
    kappa: int
    sigma_used: float
    sigma_hat: float
    p_spacing: float | None
    p_tspacing: float
    G_values: list | None
    H_values: list
    flags: list = field(default_factory=list)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_test(model: FieldModel, Y, sigma=None, rng=None, options=None, maxima=None) -> TestReport:
    """Locate both knots, then compute the spacing and t-spacing p-values.

    The spacing p-value needs ``sigma``; the t-spacing one always uses the
    estimate from the conditioned field at the maximiser.
    """
    from .optimize import find_maxima

    rng = np.random.default_rng() if rng is None else rng
    rec = find_maxima(model, Y, rng=rng, **dict(options or {})) if maxima is None else maxima
    Om = rec.omega.matrix
    lam1, lam2 = rec.lambda1, rec.lambda2
    est = estimate_sigma(model, Y, rec.t1, rng=rng)
    m, kappa = model.kl_order(), est.kappa
    sh = est.sigma_hat
    p_s = G_vals = None
    if sigma is not None:
        p_s = spacing_pvalue(Om, lam1, lam2, sigma)
        G_vals = [G_functional(Om / sigma, lam1 / sigma), G_functional(Om / sigma, lam2 / sigma)]
    p_t = t_spacing_pvalue(Om, lam1, lam2, sh, m, kappa)
    H_vals = [H_functional(Om / sh, lam1 / sh, m, kappa), H_functional(Om / sh, lam2 / sh, m, kappa)]
    flags = list(rec.flags)
    if isinstance(rec.t2, str):
        flags.append(rec.t2)
    if est.attempts > 1:
        flags.append("resampled")
    return TestReport(
        model=model.descriptor(),
        lambda1=lam1,
        lambda2=lam2,
        t1=np.asarray(rec.t1).tolist(),
        t2=rec.t2 if isinstance(rec.t2, str) else np.asarray(rec.t2).tolist(),
        omega=np.asarray(Om).tolist(),
        m=m,
        kappa=kappa,
        sigma_used=float(sigma) if sigma is not None else sh,
        sigma_hat=sh,
        p_spacing=p_s,
        p_tspacing=p_t,
        G_values=G_vals,
        H_values=H_vals,
        flags=flags,
    )
