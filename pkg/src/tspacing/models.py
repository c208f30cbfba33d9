"""Gaussian field models ``Z(t) = <Y, psi_t>`` on the supported manifolds.

A model knows its feature map ``psi``; payloads ``Y`` are plain arrays of
the feature space (dense symmetric tensors, or complex Fourier vectors).
Every generic quantity (covariance, its gradient, ``Lambda_2``, Riemannian
derivatives) has a default derived from ``psi`` itself; the concrete models
override them with closed forms, and the test-suite checks one against the
other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, reduce

import numpy as np

from .errors import DegenerateLambda2, DomainMismatch
from .manifold import CircleStiefel, Manifold, Sphere, Torus2, _complement_basis, _wrap
from .tensors import SymmetricTensor, contract, sample_noise_tensor, sym_dim

# sqrt(3 log 3 + 3 log log 3) with base-10 logarithms, as used for the S^2 figures
LAMBDA0_UNIT = 0.684

THETA_TOL = 1e-6


def _outer_power(t, k):
    # built per index class so the array is exactly (not just numerically) symmetric
    return SymmetricTensor.rank_one(t, k).full.copy()


def _sym_derivative(t, v, k):
    """``D(t^{(x)k})[v]``: sum of the k placements of ``v`` among copies of ``t``."""
    out = 0.0
    for j in range(k):
        out = out + reduce(np.multiply.outer, [t] * j + [v] + [t] * (k - 1 - j))
    return out


class FieldModel:
    """Abstract Gaussian field with unit variance and feature map ``psi``."""

    manifold: Manifold
    name = ""

    # -- to be provided by subclasses ------------------------------------
    def value(self, Y, T):
        raise NotImplementedError

    def euclid_gradient(self, Y, T):
        raise NotImplementedError

    def euclid_hessian(self, Y, T):
        raise NotImplementedError

    def feature(self, t):
        raise NotImplementedError

    def feature_derivative(self, t, v):
        raise NotImplementedError

    def sample_noise(self, rng):
        raise NotImplementedError

    def inner(self, A, B) -> float:
        return float(np.sum(A * B))

    def real_vector(self, A) -> np.ndarray:
        """Flatten a payload to a real vector whose dot product is :meth:`inner`."""
        A = np.asarray(A)
        if np.iscomplexobj(A):
            return np.concatenate([A.real.ravel(), A.imag.ravel()])
        return A.ravel().astype(float)

    def kl_order(self) -> int:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def equivalent_points(self, t):
        """Points ``s`` (``t`` included) with ``psi_s == psi_t``."""
        return np.asarray(t, dtype=float)[None]

    # -- generic machinery -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.manifold.dim

    def frame(self, t):
        return self.manifold.frame(t)

    def covariance(self, S, t):
        """``c(s, t)`` for a batch of points ``S``."""
        return self.value(self.feature(t), S)

    def grad_covariance_t(self, S, t):
        """``grad_t c(s, t)`` in the tangent frame at ``t``; shape ``(..., d)``."""
        F = self.frame(t)
        return np.stack([self.value(self.feature_derivative(t, f), S) for f in F], axis=-1)

    def lambda2(self, t):
        """``Var[grad X(t)]`` in the tangent frame at ``t``."""
        F = self.frame(t)
        D = [self.feature_derivative(t, f) for f in F]
        return np.array([[self.inner(a, b) for b in D] for a in D])

    def riemannian_gradient(self, Y, t):
        return self.frame(t) @ self.euclid_gradient(Y, t)

    def riemannian_hessian(self, Y, t):
        F = self.frame(t)
        g = self.euclid_gradient(Y, t)
        return F @ self.euclid_hessian(Y, t) @ F.T + self.manifold.hessian_correction(t, g, F)

    def lambda2_bound(self) -> float:
        """Upper bound on the top eigenvalue of ``Lambda_2`` over the manifold."""
        raise NotImplementedError

    def warm_starts(self, Y):
        """Model-specific starting points for the global search (may be empty)."""
        return np.empty((0, self.manifold.ambient_dim))


class SphereTensorModel(FieldModel):
    """Spiked tensor PCA: ``psi_t = t^{(x)k}`` on the unit sphere of R^n."""

    name = "tensor"

    def __init__(self, n: int = 3, k: int = 3):
        if n < 2 or k < 3:
            raise ValueError("tensor model needs n >= 2 and k >= 3")
        self.n, self.k = n, k
        self.manifold = Sphere(n)

    def __repr__(self):
        return f"SphereTensorModel(n={self.n}, k={self.k})"

    def descriptor(self):
        return {"model": "tensor", "n": self.n, "k": self.k}

    def _check(self, Y):
        if np.shape(Y) != (self.n,) * self.k:
            raise DomainMismatch(f"expected a {self.k}-way tensor on R^{self.n}")

    def value(self, Y, T):
        Y = np.asarray(Y)
        self._check(Y)
        return contract(Y, np.asarray(T, float), self.k)

    def euclid_gradient(self, Y, T):
        Y = np.asarray(Y)
        self._check(Y)
        return self.k * contract(Y, np.asarray(T, float), self.k - 1)

    def euclid_hessian(self, Y, T):
        Y = np.asarray(Y)
        self._check(Y)
        T = np.asarray(T, float)
        H = contract(Y, T, self.k - 2) if self.k > 2 else Y
        return self.k * (self.k - 1) * H

    def feature(self, t):
        return _outer_power(np.asarray(t, float), self.k)

    def feature_derivative(self, t, v):
        return _sym_derivative(np.asarray(t, float), np.asarray(v, float), self.k)

    def sample_noise(self, rng):
        return sample_noise_tensor(self.n, self.k, rng).full

    def covariance(self, S, t):
        return np.sum(np.asarray(S) * t, axis=-1) ** self.k

    def grad_covariance_t(self, S, t):
        S = np.asarray(S, float)
        ip = np.sum(S * t, axis=-1)
        return (self.k * ip ** (self.k - 1))[..., None] * (S @ self.frame(t).T)

    def lambda2(self, t):
        return self.k * np.eye(self.n - 1)

    def lambda2_bound(self):
        return float(self.k)

    def kl_order(self):
        return sym_dim(self.n, self.k)

    def equivalent_points(self, t):
        t = np.asarray(t, float)
        return np.stack([t, -t]) if self.k % 2 == 0 else t[None]

    def warm_starts(self, Y):
        # leading singular vectors of the mode-1 unfolding, both signs
        U, _, _ = np.linalg.svd(np.asarray(Y).reshape(self.n, -1), full_matrices=False)
        u = U[:, 0]
        return np.stack([u, -u])

    def omega_fast(self, Y, t1):
        """``(1/k)`` times the tangent restriction of the Euclidean Hessian."""
        F = self.frame(t1)
        return F @ self.euclid_hessian(Y, t1) @ F.T / self.k


class TwoSpikedModel(FieldModel):
    """``psi = cos(theta) x^{(x)k} + sin(theta) y^{(x)k}`` on ``S^1 x V_2(R^n)``."""

    name = "twospiked"

    def __init__(self, n: int = 4, k: int = 3):
        if n < 4 or k < 3:
            raise ValueError("two-spiked model needs n >= 4 and k >= 3")
        self.n, self.k = n, k
        self.manifold = CircleStiefel(n)

    def __repr__(self):
        return f"TwoSpikedModel(n={self.n}, k={self.k})"

    def descriptor(self):
        return {"model": "twospiked", "n": self.n, "k": self.k}

    def _parts(self, Y, T):
        Y = np.asarray(Y)
        if np.shape(Y) != (self.n,) * self.k:
            raise DomainMismatch(f"expected a {self.k}-way tensor on R^{self.n}")
        theta, x, y = self.manifold.split(T)
        return Y, np.cos(theta), np.sin(theta), x, y

    def value(self, Y, T):
        Y, c, s, x, y = self._parts(Y, T)
        return c * contract(Y, x, self.k) + s * contract(Y, y, self.k)

    def euclid_gradient(self, Y, T):
        Y, c, s, x, y = self._parts(Y, T)
        k = self.k
        fx, fy = contract(Y, x, k), contract(Y, y, k)
        gx, gy = k * contract(Y, x, k - 1), k * contract(Y, y, k - 1)
        return self.manifold.join(-s * fx + c * fy, c[..., None] * gx, s[..., None] * gy)

    def euclid_hessian(self, Y, T):
        Y, c, s, x, y = self._parts(Y, T)
        k, n = self.k, self.n
        fx, fy = contract(Y, x, k), contract(Y, y, k)
        gx, gy = k * contract(Y, x, k - 1), k * contract(Y, y, k - 1)
        Hx, Hy = k * (k - 1) * contract(Y, x, k - 2), k * (k - 1) * contract(Y, y, k - 2)
        batch = np.shape(c)
        H = np.zeros((*batch, 1 + 2 * n, 1 + 2 * n))
        H[..., 0, 0] = -(c * fx + s * fy)
        H[..., 0, 1:1 + n] = -s[..., None] * gx
        H[..., 0, 1 + n:] = c[..., None] * gy
        H[..., 1:1 + n, 0] = H[..., 0, 1:1 + n]
        H[..., 1 + n:, 0] = H[..., 0, 1 + n:]
        H[..., 1:1 + n, 1:1 + n] = c[..., None, None] * Hx
        H[..., 1 + n:, 1 + n:] = s[..., None, None] * Hy
        return H

    def feature(self, t):
        theta, x, y = self.manifold.split(t)
        return np.cos(theta) * _outer_power(x, self.k) + np.sin(theta) * _outer_power(y, self.k)

    def feature_derivative(self, t, v):
        theta, x, y = self.manifold.split(t)
        vt, vx, vy = self.manifold.split(v)
        c, s = np.cos(theta), np.sin(theta)
        k = self.k
        return (
            vt * (-s * _outer_power(x, k) + c * _outer_power(y, k))
            + c * _sym_derivative(x, vx, k)
            + s * _sym_derivative(y, vy, k)
        )

    def sample_noise(self, rng):
        return sample_noise_tensor(self.n, self.k, rng).full

    def covariance(self, S, t):
        th1, u, v = self.manifold.split(S)
        th, x, y = self.manifold.split(t)
        k = self.k
        ip = lambda a, b: np.sum(a * b, -1) ** k
        return (np.cos(th1) * (np.cos(th) * ip(u, x) + np.sin(th) * ip(u, y))
                + np.sin(th1) * (np.cos(th) * ip(v, x) + np.sin(th) * ip(v, y)))

    def lambda2(self, t):
        theta = float(self.manifold.split(t)[0])
        return twospiked_lambda2(theta, self.n, self.k)

    def kl_order(self):
        return sym_dim(self.n, self.k)

    def lambda2_bound(self):
        return float(self.k)

    def equivalent_points(self, t):
        theta, x, y = self.manifold.split(t)
        c, s = np.cos(theta), np.sin(theta)
        k = self.k
        out = []
        for sx in (1.0, -1.0):
            for sy in (1.0, -1.0):
                # (theta', sx x, sy y): cos theta' sx^k = c, sin theta' sy^k = s
                out.append(self.manifold.join(_wrap(np.arctan2(s * sy ** k, c * sx ** k)), sx * x, sy * y))
                # swapped columns: (theta'', sx y, sy x)
                out.append(self.manifold.join(_wrap(np.arctan2(c * sy ** k, s * sx ** k)), sx * y, sy * x))
        return np.stack(out)

    def rotation(self, t):
        """Orthogonal ``U`` with ``U e1 = x``, ``U e2 = y`` matching :meth:`frame`."""
        _, x, y = self.manifold.split(t)
        Q = _complement_basis(np.stack([x, y], axis=1))
        return np.column_stack([x, y, Q.T])

    def riemannian_hessian_closed(self, Y, t):
        """Block Riemannian Hessian assembled at ``(theta, e1, e2)``.

        The tensor is rotated so that ``(x, y)`` becomes ``(e1, e2)``; the
        blocks are then read off the rotated entries. The frame is the one of
        :meth:`frame` (circle, ``Delta_21/sqrt 2``, x-block, y-block).
        """
        theta = float(self.manifold.split(t)[0])
        U = self.rotation(t)
        Yr = np.asarray(Y, float)
        for _ in range(self.k):
            # rotate one mode per pass; after k passes every mode is rotated
            Yr = np.tensordot(Yr, U, axes=([0], [0]))
        k, n = self.k, self.n
        a, b = math.cos(theta), math.sin(theta)
        e1, e2 = np.eye(n)[0], np.eye(n)[1]
        P, Q = contract(Yr, e1, k), contract(Yr, e2, k)
        g1, g2 = k * contract(Yr, e1, k - 1), k * contract(Yr, e2, k - 1)
        H1, H2 = k * (k - 1) * contract(Yr, e1, k - 2), k * (k - 1) * contract(Yr, e2, k - 2)
        r2 = math.sqrt(2.0)
        m = n - 2
        J = slice(2, n)
        H = np.zeros((self.dim, self.dim))
        H[0, 0] = -(a * P + b * Q)
        H[0, 1] = (-b * g1[1] - a * g2[0]) / r2
        H[0, 2:2 + m] = -b * g1[J]
        H[0, 2 + m:] = a * g2[J]
        H[1, 1] = 0.5 * (a * H1[1, 1] + b * H2[0, 0]) - 0.5 * k * (a * P + b * Q)
        H[1, 2:2 + m] = a * H1[1, J] / r2
        H[1, 2 + m:] = -b * H2[0, J] / r2
        H[2:2 + m, 2:2 + m] = a * (H1[J, J] - k * P * np.eye(m))
        H[2:2 + m, 2 + m:] = -0.5 * (a * g1[1] + b * g2[0]) * np.eye(m)
        H[2 + m:, 2 + m:] = b * (H2[J, J] - k * Q * np.eye(m))
        iu = np.triu_indices(self.dim, 1)
        H[(iu[1], iu[0])] = H[iu]
        return H


def twospiked_lambda2(theta: float, n: int, k: int) -> np.ndarray:
    """``Lambda_2`` of the two-spiked field; it depends on ``theta`` only.

    Diagonal ``(1, k/2, k cos^2 theta [n-2 times], k sin^2 theta [n-2 times])``.
    """
    c, s = math.cos(theta), math.sin(theta)
    if abs(c) <= THETA_TOL or abs(s) <= THETA_TOL:
        raise DegenerateLambda2(f"theta={theta!r} is within {THETA_TOL} of a multiple of pi/2")
    return np.diag([1.0, k / 2.0] + [k * c * c] * (n - 2) + [k * s * s] * (n - 2))


def _tensor_array(Y):
    return np.asarray(Y.full if isinstance(Y, SymmetricTensor) else Y, float)


def tensor_field_value(Y, t):
    """``Z(t) = <Y, t^{(x)k}>``."""
    Y = _tensor_array(Y)
    return SphereTensorModel(Y.shape[0], Y.ndim).value(Y, t)


def tensor_euclid_gradient(Y, t):
    Y = _tensor_array(Y)
    return SphereTensorModel(Y.shape[0], Y.ndim).euclid_gradient(Y, t)


def tensor_euclid_hessian(Y, t):
    Y = _tensor_array(Y)
    return SphereTensorModel(Y.shape[0], Y.ndim).euclid_hessian(Y, t)


def tensor_lambda2(t, k: int = 3):
    """``k I`` on the tangent space of the sphere."""
    return k * np.eye(np.size(t) - 1)


def twospiked_riemannian_hessian(Y, t):
    """Closed-form block Riemannian Hessian of the two-spiked field."""
    Y = _tensor_array(Y)
    model = TwoSpikedModel(Y.shape[0], Y.ndim)
    twospiked_lambda2(float(np.asarray(t)[0]), model.n, model.k)  # degeneracy guard
    return model.riemannian_hessian_closed(Y, t)


def sr_covariance(s, t, f: int):
    """``cos(theta - theta') D(x - x')`` with the unit-normalised Dirichlet kernel."""
    return SuperResolutionModel(f).covariance(s, t)


def dirichlet_normalized(u, f: int):
    """``sin((f + 1/2) u) / ((2f + 1) sin(u / 2))`` with value 1 at ``u = 0``."""
    u = np.asarray(u, float)
    l = np.arange(-f, f + 1)
    # direct cosine sum: exact at u = 0 and free of 0/0
    return np.cos(np.multiply.outer(u, l)).sum(axis=-1) / (2 * f + 1)


class SuperResolutionModel(FieldModel):
    """Fourier measurements ``-f..f`` of one spike; torus coordinates ``(x, theta)``.

    Features ``psi_l(x, theta) = exp(i(theta - l x)) / sqrt(2f + 1)`` live in
    C^{2f+1} seen as a real space with ``<a, b> = Re sum a conj(b)``.
    """

    name = "superres"

    def __init__(self, f: int = 3):
        if f < 1:
            raise ValueError("super-resolution needs f >= 1")
        self.f = f
        self.freqs = np.arange(-f, f + 1)
        self.manifold = Torus2()

    def __repr__(self):
        return f"SuperResolutionModel(f={self.f})"

    def descriptor(self):
        return {"model": "superres", "f": self.f}

    def _w(self, Y, T):
        Y = np.asarray(Y)
        if Y.shape != self.freqs.shape:
            raise DomainMismatch(f"expected {self.freqs.size} Fourier coefficients")
        T = np.asarray(T, float)
        x, th = T[..., 0], T[..., 1]
        phase = th[..., None] - np.multiply.outer(x, self.freqs)
        return Y * np.exp(-1j * phase) / math.sqrt(self.freqs.size)

    def value(self, Y, T):
        return self._w(Y, T).real.sum(-1)

    def euclid_gradient(self, Y, T):
        w = self._w(Y, T)
        gx = (1j * self.freqs * w).real.sum(-1)
        gt = (-1j * w).real.sum(-1)
        return np.stack([gx, gt], axis=-1)

    def euclid_hessian(self, Y, T):
        w = self._w(Y, T)
        hxx = (-(self.freqs ** 2) * w).real.sum(-1)
        hxt = (self.freqs * w).real.sum(-1)
        htt = -w.real.sum(-1)
        return np.stack([np.stack([hxx, hxt], -1), np.stack([hxt, htt], -1)], -2)

    def feature(self, t):
        x, th = np.asarray(t, float)
        return np.exp(1j * (th - self.freqs * x)) / math.sqrt(self.freqs.size)

    def feature_derivative(self, t, v):
        vx, vt = np.asarray(v, float)
        return self.feature(t) * (-1j * self.freqs * vx + 1j * vt)

    def inner(self, A, B):
        return float(np.real(np.sum(A * np.conj(B))))

    def sample_noise(self, rng):
        return rng.standard_normal(self.freqs.size) + 1j * rng.standard_normal(self.freqs.size)

    def covariance(self, S, t):
        S = np.asarray(S, float)
        t = np.asarray(t, float)
        return np.cos(S[..., 1] - t[..., 1]) * dirichlet_normalized(S[..., 0] - t[..., 0], self.f)

    def lambda2(self, t):
        return np.diag([self.f * (self.f + 1) / 3.0, 1.0])

    def lambda2_bound(self):
        return max(self.f * (self.f + 1) / 3.0, 1.0)

    def warm_starts(self, Y, grid: int = 512):
        # Z(x, .) peaks at theta = arg(sum Y_l e^{i l x}); scan x on a grid
        x = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
        A = np.exp(1j * np.multiply.outer(x, self.freqs)) @ np.asarray(Y)
        i = int(np.argmax(np.abs(A)))
        return np.array([[x[i], np.mod(np.angle(A[i]), 2 * np.pi)]])

    @cached_property
    def _kl_order(self):
        rng = np.random.default_rng(0)
        P = self.manifold.random_point(rng, 200)
        G = self.covariance(P[:, None, :], P[None, :, :])
        ev = np.linalg.eigvalsh(G)
        return int(np.sum(ev > 1e-8 * ev.max()))

    def kl_order(self):
        return self._kl_order


def make_model(spec: dict) -> FieldModel:
    kind = spec.get("model", spec.get("kind"))
    if kind == "tensor":
        return SphereTensorModel(int(spec.get("n", 3)), int(spec.get("k", 3)))
    if kind == "twospiked":
        return TwoSpikedModel(int(spec.get("n", 4)), int(spec.get("k", 3)))
    if kind == "superres":
        return SuperResolutionModel(int(spec.get("f", 3)))
    raise DomainMismatch(f"unknown model {kind!r}")


def kl_order(model: FieldModel) -> int:
    return model.kl_order()


@dataclass(frozen=True)
class Truth:
    lambda0: float
    t0: np.ndarray
    sigma: float


@dataclass(eq=False)
class Observation:
    """An observed payload ``Y`` together with its model (and truth if synthetic)."""

    model: FieldModel
    payload: np.ndarray
    truth: Truth | None = None
    sigma: float | None = None

    def value(self, T):
        return self.model.value(self.payload, T)

    def scaled(self, c: float) -> "Observation":
        return Observation(self.model, c * self.payload, None, None)

    # -- JSON ----------------------------------------------------------------
    def to_json(self) -> dict:
        m = self.model
        if isinstance(m, SuperResolutionModel):
            out = {"f": m.f, "coefficients": [[float(z.real), float(z.imag)] for z in self.payload]}
        else:
            out = SymmetricTensor.from_full(self.payload, atol=1e-9).to_json()
        out["model"] = m.name
        out["sigma"] = self.sigma
        out["truth"] = None if self.truth is None else {
            "lambda0": self.truth.lambda0,
            "t0": np.asarray(self.truth.t0).tolist(),
            "sigma": self.truth.sigma,
        }
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Observation":
        kind = obj.get("model", "tensor")
        if kind == "superres":
            model = SuperResolutionModel(int(obj["f"]))
            payload = np.array([complex(re, im) for re, im in obj["coefficients"]])
        else:
            T = SymmetricTensor.from_json(obj)
            model = make_model({"model": kind, "n": T.n, "k": T.k})
            payload = T.full.copy()
        tr = obj.get("truth")
        truth = None if tr is None else Truth(float(tr["lambda0"]), np.asarray(tr["t0"], float), float(tr["sigma"]))
        return cls(model, payload, truth, obj.get("sigma"))


def synthesize_observation(model: FieldModel, gamma: float, sigma: float, t0, rng,
                           lambda0: float | None = None) -> Observation:
    """``Y = lambda0 psi_{t0} + sigma W`` with fresh noise.

    Without an explicit ``lambda0`` the signal is ``0.684 * gamma * sigma``,
    the detection-threshold scale of the 3x3x3 tensor figures.
    """
    if gamma < 0 or sigma <= 0:
        raise ValueError("need gamma >= 0 and sigma > 0")
    if lambda0 is None:
        lambda0 = LAMBDA0_UNIT * gamma * sigma
    t0 = np.asarray(t0, float)
    W = model.sample_noise(rng)
    Y = sigma * W if lambda0 == 0 else lambda0 * model.feature(t0) + sigma * W
    return Observation(model, Y, Truth(float(lambda0), t0, float(sigma)), float(sigma))
