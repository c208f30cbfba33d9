"""Embedded manifolds used by the field models.

Every manifold works on plain numpy arrays of *ambient* coordinates, with
arbitrary leading batch axes where that is cheap:

* ``Sphere(n)``: unit vectors of R^n, intrinsic dimension ``n - 1``.
* ``Torus2()``: pairs ``(x, theta)`` in ``[0, 2pi)^2``, flat metric.
* ``CircleStiefel(n)``: ``(theta, x, y)`` with ``x, y`` orthonormal in R^n,
  stored as one vector of length ``1 + 2n``; intrinsic dimension ``2n - 2``.

All metrics are the ones induced by the ambient Euclidean space. Tangent
frames are returned as ``(d, ambient_dim)`` arrays whose rows are
orthonormal tangent vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainMismatch, InvalidTangent

TWO_PI = 2.0 * np.pi


def _wrap(a):
    # floored modulo, so that wrapped angles are bit-stable
    return np.mod(a, TWO_PI)


def _circ_diff(a, b):
    return np.abs(np.mod(a - b + np.pi, TWO_PI) - np.pi)


def _angle(p, q):
    """Angle between unit vectors, accurate near 0 and near pi (unlike arccos)."""
    return 2.0 * np.arctan2(np.linalg.norm(p - q, axis=-1), np.linalg.norm(p + q, axis=-1))


def _gram_schmidt_rows(V):
    """Orthonormalise the rows of ``V`` (shape ``(..., r, n)``) in order."""
    Q, R = np.linalg.qr(np.swapaxes(V, -1, -2))
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs = np.where(signs == 0, 1.0, signs)
    return np.swapaxes(Q * signs[..., None, :], -1, -2)


def _complement_basis(A):
    """Orthonormal basis of the complement of the columns of ``A`` (``n x p``).

    Canonical basis vectors are projected off ``span(A)``; the ``p`` with the
    largest overlap with ``span(A)`` are dropped, the rest are orthonormalised
    in index order.
    """
    n, p = A.shape
    overlap = np.sum(A * A, axis=1)
    drop = np.sort(np.argsort(-overlap, kind="stable")[:p])
    keep = [j for j in range(n) if j not in set(drop.tolist())]
    E = np.eye(n)[keep]
    E = E - (E @ A) @ A.T
    return _gram_schmidt_rows(E)


class Manifold:
    """Common interface. Subclasses are small frozen dataclasses."""

    kind: str = ""
    dim: int = 0
    ambient_dim: int = 0

    # -- serialisation ---------------------------------------------------
    def descriptor(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_descriptor(desc: dict) -> "Manifold":
        kind = desc["kind"]
        if kind == "sphere":
            return Sphere(int(desc["n"]))
        if kind == "torus2":
            return Torus2()
        if kind == "circle_stiefel":
            return CircleStiefel(int(desc["n"]))
        raise DomainMismatch(f"unknown manifold kind {kind!r}")

    # -- geometry (array level) ------------------------------------------
    def check(self, p, atol=1e-12) -> None:
        raise NotImplementedError

    def random_point(self, rng: np.random.Generator, size=None) -> np.ndarray:
        raise NotImplementedError

    def project(self, p, v):
        raise NotImplementedError

    def exp(self, p, v, eps=1.0):
        raise NotImplementedError

    def frame(self, p) -> np.ndarray:
        raise NotImplementedError

    def distance(self, p, q):
        raise NotImplementedError

    def hessian_correction(self, p, egrad, frame):
        """Second-fundamental-form term of the Riemannian Hessian in ``frame``.

        The Riemannian Hessian matrix is ``frame @ ehess @ frame.T`` plus this.
        """
        raise NotImplementedError

    def antipode(self, p):
        """A point ``s`` with ``psi_s = -psi_p`` for the sign-symmetric models."""
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Manifold):
    n: int

    kind = "sphere"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("Sphere needs n >= 2")

    @property
    def dim(self):
        return self.n - 1

    @property
    def ambient_dim(self):
        return self.n

    def descriptor(self):
        return {"kind": "sphere", "n": self.n}

    def check(self, p, atol=1e-12):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.n:
            raise DomainMismatch(f"expected {self.n} coordinates, got {p.shape[-1]}")
        if np.any(np.abs(np.linalg.norm(p, axis=-1) - 1.0) > atol):
            raise DomainMismatch("point is not on the unit sphere")

    def random_point(self, rng, size=None):
        shape = (self.n,) if size is None else (*np.atleast_1d(size), self.n)
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def project(self, p, v):
        return v - np.sum(p * v, axis=-1, keepdims=True) * p

    def exp(self, p, v, eps=1.0):
        eps = np.asarray(eps, dtype=float)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        a = eps[..., None] * nv if eps.ndim else eps * nv
        safe = np.where(nv > 0, nv, 1.0)
        out = np.cos(a) * p + np.sin(a) * v / safe
        # re-normalise to stay on the sphere to machine precision
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        batch = p.shape[:-1]
        flat = p.reshape(-1, self.n)
        # drop the canonical vector closest to the normal direction
        pivot = np.argmax(np.abs(flat), axis=-1)
        base = np.arange(self.n - 1)
        keep = base[None, :] + (base[None, :] >= pivot[:, None])
        E = np.eye(self.n)[keep]
        E = E - (E @ flat[:, :, None]) * flat[:, None, :]
        return _gram_schmidt_rows(E).reshape(*batch, self.n - 1, self.n)

    def distance(self, p, q):
        return _angle(np.asarray(p, float), np.asarray(q, float))

    def hessian_correction(self, p, egrad, frame):
        return -np.sum(p * egrad, axis=-1)[..., None, None] * np.eye(self.dim)

    def antipode(self, p):
        return -np.asarray(p)


@dataclass(frozen=True)
class Torus2(Manifold):
    kind = "torus2"

    @property
    def dim(self):
        return 2

    @property
    def ambient_dim(self):
        return 2

    def descriptor(self):
        return {"kind": "torus2"}

    def check(self, p, atol=1e-12):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != 2:
            raise DomainMismatch("torus points have two coordinates")
        if np.any((p < 0) | (p >= TWO_PI)):
            raise DomainMismatch("torus coordinates must lie in [0, 2pi)")

    def random_point(self, rng, size=None):
        shape = (2,) if size is None else (*np.atleast_1d(size), 2)
        return rng.uniform(0.0, TWO_PI, size=shape)

    def project(self, p, v):
        return np.array(v, dtype=float, copy=True)

    def exp(self, p, v, eps=1.0):
        eps = np.asarray(eps, dtype=float)
        e = eps[..., None] if eps.ndim else eps
        return _wrap(p + e * v)

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(np.eye(2), (*p.shape[:-1], 2, 2)).copy()

    def distance(self, p, q):
        return np.linalg.norm(_circ_diff(p, q), axis=-1)

    def hessian_correction(self, p, egrad, frame):
        return np.zeros((*np.shape(egrad)[:-1], 2, 2))

    def antipode(self, p):
        p = np.asarray(p, dtype=float)
        return _wrap(p + np.array([0.0, np.pi]))


@dataclass(frozen=True)
class CircleStiefel(Manifold):
    """``S^1 x V_2(R^n)`` with coordinates ``(theta, x, y)``."""

    n: int

    kind = "circle_stiefel"

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("CircleStiefel needs n >= 4")

    @property
    def dim(self):
        return 2 * self.n - 2

    @property
    def ambient_dim(self):
        return 1 + 2 * self.n

    def descriptor(self):
        return {"kind": "circle_stiefel", "n": self.n}

    def split(self, p):
        p = np.asarray(p, dtype=float)
        n = self.n
        return p[..., 0], p[..., 1:1 + n], p[..., 1 + n:]

    def join(self, theta, x, y):
        theta = np.asarray(theta, dtype=float)
        return np.concatenate([theta[..., None], x, y], axis=-1)

    def check(self, p, atol=1e-12):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise DomainMismatch(f"expected {self.ambient_dim} coordinates")
        theta, x, y = self.split(p)
        if np.any((theta < 0) | (theta >= TWO_PI)):
            raise DomainMismatch("theta must lie in [0, 2pi)")
        ok = (np.abs(np.sum(x * x, -1) - 1) <= atol) & (np.abs(np.sum(y * y, -1) - 1) <= atol)
        ok &= np.abs(np.sum(x * y, -1)) <= atol
        if not np.all(ok):
            raise DomainMismatch("(x, y) is not an orthonormal pair")

    def random_point(self, rng, size=None):
        batch = () if size is None else tuple(np.atleast_1d(size))
        theta = rng.uniform(0.0, TWO_PI, size=batch)
        G = rng.standard_normal((*batch, self.n, 2))
        Q, R = np.linalg.qr(G)
        s = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
        s = np.where(s == 0, 1.0, s)
        Q = Q * s[..., None, :]
        return self.join(theta, Q[..., 0], Q[..., 1])

    def project(self, p, v):
        _, x, y = self.split(p)
        vt, vx, vy = self.split(v)
        X = np.stack([x, y], axis=-1)
        Zm = np.stack([vx, vy], axis=-1)
        A = np.swapaxes(X, -1, -2) @ Zm
        Zm = Zm - X @ (0.5 * (A + np.swapaxes(A, -1, -2)))
        return self.join(vt, Zm[..., 0], Zm[..., 1])

    def exp(self, p, v, eps=1.0):
        """Geodesic of the embedded metric (closed form with 4x4 expm)."""
        eps = np.asarray(eps, dtype=float)
        e = eps[..., None] if eps.ndim else eps
        theta, x, y = self.split(p)
        vt, vx, vy = self.split(e * np.asarray(v, dtype=float))
        X = np.stack([x, y], axis=-1)
        Zm = np.stack([vx, vy], axis=-1)
        A = np.swapaxes(X, -1, -2) @ Zm
        A = 0.5 * (A - np.swapaxes(A, -1, -2))
        S = np.swapaxes(Zm, -1, -2) @ Zm
        eye = np.broadcast_to(np.eye(2), A.shape)
        block = np.concatenate(
            [np.concatenate([A, -S], axis=-1), np.concatenate([eye, A], axis=-1)], axis=-2
        )
        E = scipy.linalg.expm(block)[..., :, :2]
        Xn = np.concatenate([X, Zm], axis=-1) @ E @ scipy.linalg.expm(-A)
        # polar clean-up: kill the O(1e-16) drift from orthonormality
        U, _, Vt = np.linalg.svd(Xn, full_matrices=False)
        Xn = U @ Vt
        return self.join(_wrap(theta + vt), Xn[..., 0], Xn[..., 1])

    def frame(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim > 1:
            return np.stack([self.frame(q) for q in p.reshape(-1, p.shape[-1])]).reshape(
                *p.shape[:-1], self.dim, self.ambient_dim
            )
        _, x, y = self.split(p)
        n = self.n
        Q = _complement_basis(np.stack([x, y], axis=1))
        F = np.zeros((self.dim, self.ambient_dim))
        F[0, 0] = 1.0
        F[1, 1:1 + n] = y / math.sqrt(2.0)
        F[1, 1 + n:] = -x / math.sqrt(2.0)
        F[2:n, 1:1 + n] = Q
        F[n:, 1 + n:] = Q
        return F

    def distance(self, p, q):
        """Product distance on ``S^1 x S^{n-1} x S^{n-1}``.

        Agrees with the Stiefel geodesic distance to first order near the
        diagonal, which is all the pole exclusion needs.
        """
        t1, x1, y1 = self.split(p)
        t2, x2, y2 = self.split(q)
        dx, dy = _angle(x1, x2), _angle(y1, y2)
        return np.sqrt(_circ_diff(t1, t2) ** 2 + dx ** 2 + dy ** 2)

    def hessian_correction(self, p, egrad, frame):
        _, x, y = self.split(p)
        _, gx, gy = self.split(egrad)
        X = np.stack([x, y], axis=-1)
        G = np.stack([gx, gy], axis=-1)
        S = np.swapaxes(X, -1, -2) @ G
        S = 0.5 * (S + np.swapaxes(S, -1, -2))
        _, fx, fy = self.split(frame)
        Zf = np.stack([fx, fy], axis=-1)
        return -np.einsum("...ank,...bnl,...kl->...ab", Zf, Zf, S)

    def antipode(self, p):
        theta, x, y = self.split(p)
        return self.join(_wrap(theta + np.pi), x, y)


# ---------------------------------------------------------------------------
# point-level API
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """A validated point: manifold descriptor plus ambient coordinates."""

    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if isinstance(self.manifold, (Torus2,)):
            c = _wrap(c)
        elif isinstance(self.manifold, CircleStiefel):
            c[0] = _wrap(c[0])
        self.manifold.check(c)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def to_json(self) -> dict:
        return {"manifold": self.manifold.descriptor(), "coords": self.coords.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ManifoldPoint":
        return cls(Manifold.from_descriptor(obj["manifold"]), np.asarray(obj["coords"], float))


@dataclass(frozen=True)
class TangentFrame:
    base: ManifoldPoint
    basis: np.ndarray


def exp_map(t: ManifoldPoint, h, eps: float) -> ManifoldPoint:
    """Geodesic ``exp_t(eps * h)`` for a non-zero tangent vector ``h``."""
    h = np.asarray(h, dtype=float)
    if h.shape != t.coords.shape:
        raise DomainMismatch("tangent vector has the wrong ambient dimension")
    if not np.linalg.norm(h) > 0:
        raise InvalidTangent("zero tangent vector")
    return ManifoldPoint(t.manifold, t.manifold.exp(t.coords, h, eps))


def tangent_frame(t: ManifoldPoint) -> TangentFrame:
    return TangentFrame(t, t.manifold.frame(t.coords))


def geodesic_distance(s: ManifoldPoint, t: ManifoldPoint) -> float:
    if s.manifold != t.manifold:
        raise DomainMismatch("points live on different manifolds")
    return float(s.manifold.distance(s.coords, t.coords))


def normalized_sphere_distance(s, t) -> float:
    """Cap-area fraction ``(1 - cos d)/2`` of the geodesic distance on S^2.

    Uniform on (0, 1) when one argument is uniform on the sphere.
    """
    if isinstance(s, ManifoldPoint):
        if s.manifold != Sphere(3) or t.manifold != Sphere(3):
            raise DomainMismatch("normalized distance is defined on Sphere(3) only")
        s, t = s.coords, t.coords
    s, t = np.asarray(s, float), np.asarray(t, float)
    if s.shape[-1] != 3 or t.shape[-1] != 3:
        raise DomainMismatch("normalized distance is defined on Sphere(3) only")
    theta = Sphere(3).distance(s, t)
    return (1.0 - np.cos(theta)) / 2.0


def random_point(manifold: Manifold, rng: np.random.Generator) -> ManifoldPoint:
    return ManifoldPoint(manifold, manifold.random_point(rng))
