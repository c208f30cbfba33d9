"""Global maximisation of a field and of its conditioned version.

Multistart Riemannian ascent: a batched Armijo gradient phase brings every
start near a critical point, nearby endpoints are merged, and a batched
Newton phase (with absolute eigenvalues, so every step is an ascent
direction) polishes the survivors to ``grad_tol``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conditional import ConditionalField, OmegaMatrix, omega
from .errors import OptimizationFailed
from .models import FieldModel

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 40
NEWTON_ITERS = 100
SWITCH_TOL = 1.0
MERGE_RADIUS = 1e-2
DEDUPE_RADIUS = 1e-6
TIE_TOL = 1e-10


@dataclass
class SearchResult:
    """Location and value of one maximum, with search diagnostics."""

    point: np.ndarray | None
    value: float
    gradient_norm: float
    hessian_eigenvalues: np.ndarray | None
    n_starts: int
    n_converged: int
    best_gap: float | None
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


class _FieldObjective:
    def __init__(self, model, Y):
        self.model, self.Y = model, np.asarray(Y)

    def value_and_egrad(self, S):
        return self.model.value(self.Y, S), self.model.euclid_gradient(self.Y, S)

    def euclid_hessian(self, S):
        return self.model.euclid_hessian(self.Y, S)


def _no_pole(P):
    return np.zeros(len(P), dtype=bool)


def _gradient_phase(obj, M, P, alpha0, max_iters, blocked, history=None):
    """Armijo ascent for all rows of ``P``; returns points, values, pole mask."""
    P = P.copy()
    f, eg = obj.value_and_egrad(P)
    v = M.project(P, eg)
    gn = np.linalg.norm(v, axis=-1)
    alpha = np.full(len(P), alpha0)
    pole = blocked(P)
    active = ~pole
    iters = 0
    for iters in range(1, max_iters + 1):
        active &= gn > SWITCH_TOL * (1.0 + np.abs(f))
        if not active.any():
            break
        idx = np.flatnonzero(active)
        # cap the geodesic step length at pi/2
        a = np.minimum(alpha[idx], (np.pi / 2) / gn[idx])
        todo = np.ones(idx.size, dtype=bool)
        for _ in range(MAX_HALVINGS):
            j = idx[todo]
            cand = M.exp(P[j], a[todo, None] * v[j])
            fc, gc = obj.value_and_egrad(cand)
            ok = fc >= f[j] + ARMIJO_C * a[todo] * gn[j] ** 2
            jj = j[ok]
            P[jj], f[jj], eg[jj] = cand[ok], fc[ok], gc[ok]
            alpha[jj] = 2.0 * a[todo][ok]
            sub = np.flatnonzero(todo)
            todo[sub[ok]] = False
            a[todo] *= 0.5
            if not todo.any():
                break
        if history is not None:
            history.append(f.copy())
        active[idx[todo]] = False  # no ascent found: leave it to Newton
        v[idx] = M.project(P[idx], eg[idx])
        gn[idx] = np.linalg.norm(v[idx], axis=-1)
        hit = blocked(P[idx])
        pole[idx[hit]] = True
        active[idx[hit]] = False
    return P, f, pole, iters


def _merge(M, P, f, radius):
    """Greedy clustering by value; keeps the best representative of each cluster."""
    order = np.argsort(-f, kind="stable")
    keep = []
    for i in order:
        if keep and np.min(M.distance(P[keep], P[i])) < radius:
            continue
        keep.append(i)
    return np.array(keep, dtype=int)


def _riem_grad_hess(obj, M, P):
    f, eg = obj.value_and_egrad(P)
    F = M.frame(P)
    g = np.einsum("bda,ba->bd", F, eg)
    H = np.einsum("bda,bae,bce->bdc", F, obj.euclid_hessian(P), F)
    H = H + M.hessian_correction(P, eg, F)
    return f, g, 0.5 * (H + np.swapaxes(H, -1, -2)), F


def _newton_phase(obj, M, P, grad_tol, blocked, history=None):
    P = P.copy()
    n = len(P)
    done = np.zeros(n, dtype=bool)
    pole = blocked(P)
    stalled = np.zeros(n, dtype=bool)
    f, g, H, F = _riem_grad_hess(obj, M, P)
    for _ in range(NEWTON_ITERS):
        gn = np.linalg.norm(g, axis=-1)
        done = gn <= grad_tol * (1.0 + np.abs(f))
        live = ~(done | pole | stalled)
        if not live.any():
            break
        idx = np.flatnonzero(live)
        w, V = np.linalg.eigh(H[idx])
        floor = 1e-8 * (1.0 + np.abs(w).max(axis=-1, keepdims=True))
        coef = np.einsum("bdk,bd->bk", V, g[idx]) / np.maximum(np.abs(w), floor)
        step = np.einsum("bdk,bk->bd", V, coef)
        h = np.einsum("bd,bda->ba", step, F[idx])
        t = np.ones(idx.size)
        todo = np.ones(idx.size, dtype=bool)
        for _ in range(MAX_HALVINGS):
            j = idx[todo]
            cand = M.exp(P[j], t[todo, None] * h[todo])
            fc, _ = obj.value_and_egrad(cand)
            # monotone up to rounding
            ok = fc >= f[j] - 8 * np.finfo(float).eps * (1.0 + np.abs(f[j]))
            P[j[ok]] = cand[ok]
            sub = np.flatnonzero(todo)
            todo[sub[ok]] = False
            t[todo] *= 0.5
            if not todo.any():
                break
        stalled[idx[todo]] = True
        moved = idx[~todo]
        if moved.size:
            f[moved], g[moved], H[moved], F[moved] = _riem_grad_hess(obj, M, P[moved])
            pole[moved] = blocked(P[moved])
        if history is not None:
            history.append(f.copy())
    gn = np.linalg.norm(g, axis=-1)
    done = (gn <= grad_tol * (1.0 + np.abs(f))) & ~pole
    return P, f, gn, H, done, pole


def _lexmin(P):
    return min(range(len(P)), key=lambda i: tuple(np.round(P[i], 12)))


def _maximise(obj, model: FieldModel, starts, grad_tol, max_iters, blocked, images, history=None):
    M = model.manifold
    alpha0 = 1.0 / model.lambda2_bound()
    P1, f1, pole1, iters = _gradient_phase(obj, M, starts, alpha0, max_iters, blocked,
                                          None if history is None else history.setdefault("gradient", []))
    free = np.flatnonzero(~pole1)
    diag = {"gradient_iterations": iters, "pole_bound": int(pole1.sum())}
    if free.size == 0:
        return None, diag
    reps = free[_merge(M, P1[free], f1[free], MERGE_RADIUS)]
    P2, f2, gn, H, done, pole2 = _newton_phase(obj, M, P1[reps], grad_tol, blocked,
                                                   None if history is None else history.setdefault("newton", []))
    diag.update(candidates=int(reps.size), newton_pole_bound=int(pole2.sum()),
                converged=int(done.sum()))
    if not done.any():
        diag["gradient_norms"] = gn.tolist()
        return None, diag
    ok = np.flatnonzero(done)
    keep = ok[_merge(M, P2[ok], f2[ok], DEDUPE_RADIUS)]
    fbest = f2[keep].max()
    ties = keep[f2[keep] >= fbest - TIE_TOL * (1.0 + abs(fbest))]
    best = ties[_lexmin(P2[ties])]
    # gap to the best critical value that is not the same maximum (or an image of it)
    imgs = images(P2[best])
    others = [i for i in keep
              if np.min(np.stack([M.distance(P2[i], q) for q in imgs])) > 1e-4]
    gap = float(f2[best] - max(f2[others])) if others else None
    rec = SearchResult(
        point=P2[best].copy(),
        value=float(f2[best]),
        gradient_norm=float(gn[best]),
        hessian_eigenvalues=np.linalg.eigvalsh(H[best]),
        n_starts=len(starts),
        n_converged=int(done.sum()),
        best_gap=gap,
    )
    if rec.hessian_eigenvalues[-1] > 1e-6 * (1.0 + abs(rec.value)):
        rec.flags.append("saddle")
    return rec, diag


def default_starts(model: FieldModel) -> int:
    return max(40, 20 * model.dim)


def find_global_max(model: FieldModel, Y, rng=None, starts=None, grad_tol=1e-8,
                    pole_radius=1e-3, max_iters=500, history=None) -> SearchResult:
    """Global maximum of ``Z = <Y, psi_t>``.

    ``history``, if a dict, receives the per-iteration objective values of
    the gradient and Newton phases.
    """
    rng = np.random.default_rng() if rng is None else rng
    n = default_starts(model) if starts is None else int(starts)
    P0 = np.concatenate([model.warm_starts(Y), model.manifold.random_point(rng, n)])
    rec, diag = _maximise(_FieldObjective(model, Y), model, P0, grad_tol, max_iters,
                          _no_pole, model.equivalent_points, history)
    if rec is None:
        raise OptimizationFailed("no start converged to a critical point", diag)
    rec.diagnostics = diag
    return rec


def find_second_max(model: FieldModel, Y, t1, rng=None, starts=None, grad_tol=1e-8,
                    pole_radius=1e-3, max_iters=500, history=None) -> SearchResult:
    """Supremum of the field conditioned on the global maximiser ``t1``.

    Ascent paths entering the ``pole_radius`` ball around ``t1`` (or an image
    of it) are abandoned; the supremum of the limits there is the top
    eigenvalue of ``Omega``, so the result is the larger of that and the best
    interior maximum. When the pole wins, ``point`` is ``t1`` and the record
    carries the flag ``"pole-limit"``.
    """
    rng = np.random.default_rng() if rng is None else rng
    t1 = np.asarray(t1, float)
    cf = ConditionalField(model, Y, t1, mode="auto")
    n = default_starts(model) if starts is None else int(starts)
    M = model.manifold
    P0 = M.random_point(rng, n)
    P0 = P0[cf.pole_distance(P0) > 2 * pole_radius]

    def blocked(P):
        return cf.pole_distance(P) < pole_radius

    rec, diag = _maximise(cf, model, P0, grad_tol, max_iters, blocked, model.equivalent_points, history)
    lam_pole = float(omega(model, Y, t1).eigenvalues[-1])
    diag["pole_limit"] = lam_pole
    if rec is None or lam_pole >= rec.value:
        out = SearchResult(
            point=t1.copy(), value=lam_pole, gradient_norm=0.0, hessian_eigenvalues=None,
            n_starts=len(P0), n_converged=0 if rec is None else rec.n_converged,
            best_gap=None if rec is None else lam_pole - rec.value, flags=["pole-limit"],
        )
        out.diagnostics = diag
        return out
    rec.diagnostics = diag
    return rec


POLE_LIMIT = "pole-limit"


@dataclass
class MaximaRecord:
    """Both knots: ``(lambda1, t1)`` and ``(lambda2, t2)``, plus ``Omega`` at ``t1``.

    ``t2`` is the string ``"pole-limit"`` when the second supremum is only
    reached radially at ``t1``.
    """

    lambda1: float
    t1: np.ndarray
    lambda2: float
    t2: object
    omega: OmegaMatrix
    n_starts: int
    best_gap: float | None
    converged: bool
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def second_order_ok(model: FieldModel, Y, t1, tol=1e-8) -> bool:
    """Riemannian Hessian at ``t1`` is negative semidefinite up to ``tol (1 + |lambda1|)``."""
    lam = float(model.value(Y, t1))
    return bool(np.linalg.eigvalsh(model.riemannian_hessian(Y, t1))[-1] <= tol * (1.0 + abs(lam)))


def find_maxima(model: FieldModel, Y, rng=None, **opts) -> MaximaRecord:
    """Run both searches and assemble a :class:`MaximaRecord`."""
    rng = np.random.default_rng() if rng is None else rng
    first = find_global_max(model, Y, rng=rng, **opts)
    second = find_second_max(model, Y, first.point, rng=rng, **opts)
    flags = list(first.flags) + [f for f in second.flags if f != POLE_LIMIT]
    lam2 = second.value
    if lam2 > first.value + 1e-10:
        flags.append("lambda2-above-lambda1")
    return MaximaRecord(
        lambda1=first.value,
        t1=first.point,
        lambda2=lam2,
        t2=POLE_LIMIT if POLE_LIMIT in second.flags else second.point,
        omega=omega(model, Y, first.point),
        n_starts=first.n_starts,
        best_gap=first.best_gap,
        converged=first.gradient_norm <= opts.get("grad_tol", 1e-8) * (1.0 + abs(first.value)),
        flags=flags,
        diagnostics={"first": first.diagnostics, "second": second.diagnostics},
    )
