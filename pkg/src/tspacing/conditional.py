"""The field conditioned on a critical point, its pole limits, and ``Omega``.

For a point ``t`` the conditioned field is

    X^{|t}(s) = [Z(s) - c(s,t) Z(t) - grad_t c(s,t)^T Lambda_2^{-1} grad Z(t)] / (1 - c(s,t)).

The numerator is itself the field of the residual payload ``R``: the
projection of ``Y`` off ``span{psi_t, D psi_t[e_i]}``. All evaluations go
through ``R`` so that values and derivatives are batched model calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePointSet, DomainMismatch, NearSingularDenominator, NotCritical, PoleEvaluation
from .models import FieldModel, SphereTensorModel

DENOM_TOL = 1e-14
POLE_TOL = 1e-12
GRAD_TOL = 1e-8


def _sym_inv_sqrt(L):
    w, V = np.linalg.eigh(L)
    return (V / np.sqrt(w)) @ V.T


class ConditionalField:
    """``X^{|t1}`` for a payload ``Y``.

    Parameters
    ----------
    model, Y : field model and payload.
    t1 : conditioning point.
    mode : ``"full"`` keeps the gradient correction; ``"critical"`` drops it,
        which is exact only when the gradient vanishes at ``t1``; ``"auto"``
        picks ``"critical"`` when ``|grad Z(t1)| <= grad_tol (1 + |Z(t1)|)``.
    """

    def __init__(self, model: FieldModel, Y, t1, mode: str = "auto", grad_tol: float = GRAD_TOL):
        if mode not in ("auto", "full", "critical"):
            raise ValueError(f"unknown mode {mode!r}")
        self.model = model
        self.Y = np.asarray(Y)
        self.t1 = np.asarray(t1, dtype=float)
        M = model.manifold
        self.frame = M.frame(self.t1)
        self.lambda1 = float(model.value(self.Y, self.t1))
        self.gradient = self.frame @ model.euclid_gradient(self.Y, self.t1)
        if mode == "auto":
            small = np.linalg.norm(self.gradient) <= grad_tol * (1.0 + abs(self.lambda1))
            mode = "critical" if small else "full"
        self.mode = mode
        self.lambda2 = model.lambda2(self.t1)
        psi = model.feature(self.t1)
        self.psi = psi
        R = self.Y - self.lambda1 * psi
        if self.mode == "full":
            self.beta = np.linalg.solve(self.lambda2, self.gradient)
            for b, f in zip(self.beta, self.frame):
                R = R - b * model.feature_derivative(self.t1, f)
        else:
            self.beta = np.zeros(model.dim)
        self.residual = R
        self.poles = model.equivalent_points(self.t1)

    @property
    def pole(self):
        return self.t1

    @property
    def pole_value(self):
        return self.lambda1

    @property
    def pole_gradient(self):
        return self.gradient

    @property
    def critical_mode(self) -> bool:
        return self.mode == "critical"

    # -- pieces ------------------------------------------------------------------
    def numerator(self, S):
        return self.model.value(self.residual, S)

    def denominator(self, S):
        return 1.0 - self.model.value(self.psi, S)

    def pole_distance(self, S):
        """Geodesic distance from each point to the nearest pole image."""
        M = self.model.manifold
        S = np.asarray(S, float)
        return np.min(np.stack([M.distance(S, p) for p in self.poles]), axis=0)

    def value(self, S):
        S = np.asarray(S, float)
        if np.any(self.pole_distance(S) < POLE_TOL):
            raise PoleEvaluation("evaluation at the conditioning point (or an image of it)")
        D = self.denominator(S)
        if np.any(D < DENOM_TOL):
            raise NearSingularDenominator(f"1 - c(s, t1) = {np.min(D):.3g} below {DENOM_TOL}")
        return self.numerator(S) / D

    __call__ = value

    def value_explicit(self, S):
        """Same value assembled from covariance functions instead of ``R``."""
        m = self.model
        S = np.asarray(S, float)
        c = m.covariance(S, self.t1)
        num = m.value(self.Y, S) - c * self.lambda1 - m.grad_covariance_t(S, self.t1) @ self.beta
        return num / (1.0 - c)

    # -- derivatives (unchecked, for optimisation) ---------------------------------
    def value_and_egrad(self, S):
        """Value and Euclidean gradient; no pole checks."""
        m = self.model
        N = m.value(self.residual, S)
        gN = m.euclid_gradient(self.residual, S)
        D = 1.0 - m.value(self.psi, S)
        gD = -m.euclid_gradient(self.psi, S)
        f = N / D
        return f, (gN - f[..., None] * gD) / D[..., None]

    def euclid_hessian(self, S):
        m = self.model
        f, g = self.value_and_egrad(S)
        D = 1.0 - m.value(self.psi, S)
        gD = -m.euclid_gradient(self.psi, S)
        HN = m.euclid_hessian(self.residual, S)
        HD = -m.euclid_hessian(self.psi, S)
        cross = g[..., :, None] * gD[..., None, :]
        f, D = np.asarray(f)[..., None, None], np.asarray(D)[..., None, None]
        return (HN - f * HD - cross - np.swapaxes(cross, -1, -2)) / D


def conditional_value(cf: ConditionalField, s):
    return cf.value(s)


@dataclass(frozen=True)
class OmegaMatrix:
    """``Omega`` in the tangent frame at ``t1``; ``lambda1 = Z(t1)``.

    ``scale`` is the divisor already applied to the entries (1 for ``Omega``
    itself, ``sigma`` or ``sigma_hat`` after :meth:`scaled`), ``scale_label``
    names it.
    """

    matrix: np.ndarray
    lambda1: float
    scale: float = 1.0
    scale_label: str = "none"

    def scaled(self, sigma: float, label: str = "sigma") -> "OmegaMatrix":
        if self.scale != 1.0:
            raise ValueError("already scaled")
        return OmegaMatrix(self.matrix / sigma, self.lambda1, float(sigma), label)

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


def _check_critical(model, Y, t1, grad_tol):
    lam = float(model.value(Y, t1))
    g = model.riemannian_gradient(Y, t1)
    if np.linalg.norm(g) > grad_tol * (1.0 + abs(lam)):
        raise NotCritical(f"|grad Z(t1)| = {np.linalg.norm(g):.3g} exceeds {grad_tol:g} (1 + |Z|)")
    return lam


def riemannian_curvature_matrix(model: FieldModel, Y, t1):
    """``RiemHess Z(t1) + Z(t1) Lambda_2`` in the frame at ``t1``."""
    lam = float(model.value(Y, t1))
    return model.riemannian_hessian(Y, t1) + lam * model.lambda2(t1), lam


def omega(model: FieldModel, Y, t1, fast: bool = True, grad_tol: float = GRAD_TOL) -> OmegaMatrix:
    """``Lambda_2^{-1/2} (RiemHess Z(t1) + lambda1 Lambda_2) Lambda_2^{-1/2}`` at a critical ``t1``.

    For the sphere tensor model this reduces to the tangent block of the
    Euclidean Hessian divided by ``k``; ``fast`` uses it.
    """
    Y = np.asarray(Y)
    t1 = np.asarray(t1, float)
    lam = _check_critical(model, Y, t1, grad_tol)
    if fast and isinstance(model, SphereTensorModel):
        return OmegaMatrix(model.omega_fast(Y, t1), lam)
    A, lam = riemannian_curvature_matrix(model, Y, t1)
    W = _sym_inv_sqrt(model.lambda2(t1))
    Om = W @ A @ W
    return OmegaMatrix(0.5 * (Om + Om.T), lam)


def tensor_omega_det_trace(Y, t1, k: int = 3, sigma: float = 1.0):
    """``det`` and ``trace`` of ``Omega / sigma`` on the sphere from ambient quantities.

    With ``P = I - t t^T`` and ``H`` the Euclidean Hessian:
    ``det = det(P H P + t t^T) / (k sigma)^{n-1}`` and
    ``trace = (tr H - t^T H t) / (k sigma)``.
    """
    Y = np.asarray(Y, float)
    t1 = np.asarray(t1, float)
    n = t1.size
    H = SphereTensorModel(n, k).euclid_hessian(Y, t1)
    Pi = np.outer(t1, t1)
    P = np.eye(n) - Pi
    det = np.linalg.det(P @ H @ P + Pi) / (k * sigma) ** (n - 1)
    tr = (np.trace(H) - t1 @ H @ t1) / (k * sigma)
    return float(det), float(tr)


def _frame_coords(model, t, h):
    h = np.asarray(h, float)
    F = model.frame(t)
    if h.shape == (model.dim,):
        return h
    if h.shape == (F.shape[1],):
        return F @ h
    raise DomainMismatch(f"direction of shape {h.shape} does not match the tangent space")


def helix_limit(model: FieldModel, Y, t1, h, grad_tol: float = GRAD_TOL) -> float:
    """Limit of ``X^{|t1}(exp_{t1}(eps h))`` as ``eps -> 0`` at a critical ``t1``.

    ``h`` is given either in frame coordinates or as an ambient tangent vector.
    The limit is ``h^T (RiemHess Z + Z Lambda_2) h / h^T Lambda_2 h``.
    """
    t1 = np.asarray(t1, float)
    _check_critical(model, Y, t1, grad_tol)
    hc = _frame_coords(model, t1, h)
    if not np.any(hc):
        raise ValueError("direction must be nonzero")
    A, _ = riemannian_curvature_matrix(model, Y, t1)
    L = model.lambda2(t1)
    return float(hc @ A @ hc / (hc @ L @ hc))


def conditional_covariance(model: FieldModel, t1, S, tol: float = 1e-10) -> np.ndarray:
    """Covariance matrix of ``X^{|t1}`` (unit noise) at the points ``S``."""
    t1 = np.asarray(t1, float)
    S = np.asarray(S, float)
    c_t = model.covariance(S, t1)
    G = model.grad_covariance_t(S, t1)
    L = model.lambda2(t1)
    C = model.covariance(S[:, None, :], S[None, :, :])
    num = C - np.outer(c_t, c_t) - G @ np.linalg.solve(L, G.T)
    den = 1.0 - c_t
    if np.any(den < DENOM_TOL):
        raise DegeneratePointSet("a point sits on a pole of the conditioned field")
    cov = num / np.outer(den, den)
    cov = 0.5 * (cov + cov.T)
    ev = np.linalg.eigvalsh(cov)
    if ev[0] < tol:
        raise DegeneratePointSet(f"smallest eigenvalue {ev[0]:.3g} below {tol}")
    return cov
