"""Independent reference computations used by the tests.

Nothing here calls the package's optimiser, ``Omega`` or moment code: grids
are brute force, polishing is scipy BFGS in a local chart, derivatives are
central differences and integrals are adaptive quadrature.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, stats


# -- grids -----------------------------------------------------------------------

def fibonacci_sphere(N: int) -> np.ndarray:
    """``N`` near-uniform points on S^2 (golden-angle spiral)."""
    i = np.arange(N) + 0.5
    z = 1.0 - 2.0 * i / N
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def cubic_field(Y, P):
    """``<Y, t (x) t (x) t>`` at every row of ``P`` by plain einsum."""
    return np.einsum("abc,pa,pb,pc->p", Y, P, P, P)


def _chart(t):
    """Orthonormal basis of the tangent plane at ``t`` (via SVD, not the package frame)."""
    _, _, Vt = np.linalg.svd(t[None, :])
    return Vt[1:]


def _polish(f, t, maxball=None):
    """Maximise ``f`` on the sphere near ``t`` with BFGS in the chart ``u -> (t + B u)/|.|``."""
    B = _chart(t)

    def point(u):
        p = t + u @ B
        return p / np.linalg.norm(p)

    def neg(u):
        return -float(f(point(u)[None, :])[0])

    res = optimize.minimize(neg, np.zeros(B.shape[0]), method="BFGS",
                            options={"gtol": 1e-13, "maxiter": 2000})
    return -res.fun, point(res.x)


def grid_global_max(Y, N: int = 10_000, polish_top: int = 30):
    """Brute-force maximum of the cubic field on S^2, polished from the best grid cells."""
    P = fibonacci_sphere(N)
    v = cubic_field(Y, P)
    best = (-math.inf, None)
    for i in np.argsort(v)[::-1][:polish_top]:
        val, p = _polish(lambda S: cubic_field(Y, S), P[i])
        if val > best[0]:
            best = (val, p)
    return best


def conditional_grid_values(Y, t1, P):
    """``X^{|t1}`` from the covariance ``<s,t>^3`` directly, gradient term included.

    With ``c = <s,t>^3`` the tangential gradient of ``c`` in ``t`` is
    ``3 <s,t>^2 P s`` and the gradient covariance is ``3 I``, so the
    regression on the gradient contributes ``<s,t>^2 (P s) . grad Z(t)``.
    """
    c1 = P @ t1
    Pt = np.eye(t1.size) - np.outer(t1, t1)
    gZ = Pt @ (3.0 * np.einsum("abc,b,c->a", Y, t1, t1))
    corr = c1 ** 2 * ((P @ Pt) @ gZ)
    num = cubic_field(Y, P) - c1 ** 3 * cubic_field(Y, t1[None, :])[0] - corr
    return num / (1.0 - c1 ** 3)


def pole_limit_oracle(Y, t1, eps: float = 1e-3, n_dirs: int = 360):
    """Largest radial limit of the conditioned field at ``t1``.

    The limit is even in the direction, so each direction averages ``+h``
    and ``-h`` (odd error terms cancel) and is then Richardson-extrapolated
    from ``eps`` and ``2 eps``; the best direction is refined by a bounded
    1-d search.
    """
    B = _chart(t1)

    def radial(angle, e):
        h = math.cos(angle) * B[0] + math.sin(angle) * B[1]
        S = np.stack([math.cos(e) * t1 + math.sin(e) * h, math.cos(e) * t1 - math.sin(e) * h])
        return conditional_grid_values(Y, t1, S).mean()

    def limit(angle):
        return (4.0 * radial(angle, eps) - radial(angle, 2 * eps)) / 3.0

    angles = np.linspace(0.0, math.pi, n_dirs, endpoint=False)  # limit is even in h
    vals = np.array([limit(a) for a in angles])
    a0 = angles[int(np.argmax(vals))]
    step = math.pi / n_dirs
    res = optimize.minimize_scalar(lambda a: -limit(a), bounds=(a0 - step, a0 + step),
                                   method="bounded", options={"xatol": 1e-10})
    return max(-res.fun, vals.max())


def grid_second_max(Y, t1, N: int = 10_000, ball: float = 1e-3, polish_top: int = 30):
    """Brute-force supremum of ``X^{|t1}``: interior grid maxima (outside the ball) and the pole limit."""
    P = fibonacci_sphere(N)
    keep = np.arccos(np.clip(P @ t1, -1, 1)) > ball
    P = P[keep]
    v = conditional_grid_values(Y, t1, P)
    interior = -math.inf
    for i in np.argsort(v)[::-1][:polish_top]:
        val, p = _polish(lambda S: conditional_grid_values(Y, t1, S), P[i])
        if math.acos(min(1.0, abs(p @ t1))) > ball and np.isfinite(val):
            interior = max(interior, val)
    return max(interior, pole_limit_oracle(Y, t1))


# -- finite differences -------------------------------------------------------

def fd_gradient(f, x, h: float = 1e-5):
    x = np.asarray(x, float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(F, x, h: float = 1e-5):
    x = np.asarray(x, float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def manifold_fd_hessian(f, exp, frame, h: float = 1e-4):
    """Second directional derivatives along geodesics ``exp(h v)``, polarised for the off-diagonal."""
    d = len(frame)
    f0 = f(exp(np.zeros_like(frame[0]), 0.0))
    H = np.empty((d, d))

    def second(v):
        return (f(exp(v, h)) - 2 * f0 + f(exp(v, -h))) / h ** 2

    for i in range(d):
        H[i, i] = second(frame[i])
    for i in range(d):
        for j in range(i + 1, d):
            # along geodesics the Riemannian Hessian is the second derivative of f(exp(t v))
            H[i, j] = H[j, i] = 0.25 * (second(frame[i] + frame[j]) - second(frame[i] - frame[j]))
    return H


def manifold_fd_gradient(f, exp, frame, h: float = 1e-6):
    return np.array([(f(exp(v, h)) - f(exp(v, -h))) / (2 * h) for v in frame])


# -- quadrature ---------------------------------------------------------------

def quad_G(r, l):
    """``int_l^inf det(uI - r) phi(u) du`` by adaptive quadrature."""
    r = np.atleast_2d(np.asarray(r, float))
    I = np.eye(r.shape[0])
    f = lambda u: np.linalg.det(u * I - r) * stats.norm.pdf(u)
    val, _ = integrate.quad(f, l, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def quad_H(r, l, m, kappa):
    """``int_l^inf det(uI - r) f_{m-1}(u sqrt((m-1)/kappa)) du`` by adaptive quadrature."""
    r = np.atleast_2d(np.asarray(r, float))
    I = np.eye(r.shape[0])
    s = math.sqrt((m - 1) / kappa)
    f = lambda u: np.linalg.det(u * I - r) * stats.t.pdf(s * u, m - 1)
    pieces = [(l, 0.0), (0.0, np.inf)] if l < 0 else [(l, np.inf)]
    return sum(integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=400)[0] for a, b in pieces)


def quad_moment(l, j):
    val, _ = integrate.quad(lambda u: u ** j * stats.norm.pdf(u), l, np.inf, epsabs=1e-15, epsrel=1e-14)
    return val
