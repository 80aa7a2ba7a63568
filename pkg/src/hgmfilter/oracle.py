"""Direct quadrature of the assumed joint density and its moment integrals.

Everything here is the slow, trusted path: quadrature over a standardised
Gaussian centred on the predictive distribution of x (trapezoidal by default,
Gauss-Hermite on request), with order doubling as the correctness gate.
The parameter vector z is ``(y, u, prior mean, vech(prior cov))`` where vech
stacks the lower triangle column by column.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NonPositiveDefinite,
    RefinementFailure,
    UnsupportedMonomial,
)
from .models import GaussianDensity, StateSpaceModel, normal_pdf_batch
from .pfaffian import PfaffianSystem
from .ratfun import DEFAULT_EPS_DEN, RationalFunction


@dataclass(frozen=True)
class QuadratureConfig:
    """Quadrature settings.

    ``hermite_order`` is the number of nodes per dimension.  The default rule
    is the equispaced (trapezoidal) rule on the standardised Gaussian,
    truncated at ``truncation_sigmas``; it converges geometrically for
    integrands analytic in a strip around the real axis, which covers
    observation functions with complex poles such as 2x / (1 + x^2) where
    Gauss-Hermite stalls.  ``rule="hermite"`` selects Gauss-Hermite nodes.
    """

    hermite_order: int = 64
    truncation_sigmas: float = 8.0
    tolerance: float = 1e-10
    refinement_max: int = 4
    rule: str = "trapezoid"

    def __post_init__(self):
        if self.hermite_order < 8:
            raise ValueError("hermite_order must be at least 8")
        if self.truncation_sigmas < 4:
            raise ValueError("truncation_sigmas must be at least 4")
        if self.refinement_max < 1:
            raise ValueError("refinement_max must be at least 1")
        if self.rule not in ("trapezoid", "hermite"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")


@dataclass(frozen=True)
class Conditioning:
    """The data one filter step conditions on."""

    y: np.ndarray
    u: np.ndarray
    prior: GaussianDensity

    @classmethod
    def make(cls, y, u, mean, cov) -> "Conditioning":
        return cls(
            np.atleast_1d(np.asarray(y, dtype=float)),
            np.atleast_1d(np.asarray(u, dtype=float)),
            GaussianDensity(mean, cov),
        )


def vech(a: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    n = a.shape[0]
    return np.array([a[i, j] for j in range(n) for i in range(j, n)])


def unvech(v: Sequence[float], n: int) -> np.ndarray:
    a = np.zeros((n, n))
    k = 0
    for j in range(n):
        for i in range(j, n):
            a[i, j] = a[j, i] = v[k]
            k += 1
    return a


def z_size(model: StateSpaceModel) -> int:
    n = model.n
    return model.r + model.m + n + n * (n + 1) // 2


def assemble_z(cond: Conditioning) -> np.ndarray:
    return np.concatenate([cond.y, cond.u, cond.prior.mean, vech(cond.prior.cov)])


def split_z(model: StateSpaceModel, z: Sequence[float]) -> Conditioning:
    z = np.asarray(z, dtype=float)
    if z.size != z_size(model):
        raise DimensionMismatch(f"z has {z.size} components, model needs {z_size(model)}")
    r, m, n = model.r, model.m, model.n
    y, u, mean = z[:r], z[r : r + m], z[r + m : r + m + n]
    cov = unvech(z[r + m + n :], n)
    try:
        prior = GaussianDensity(mean, cov)
    except NonPositiveDefinite:
        raise NonPositiveDefinite(f"prior covariance from z is not positive definite: {cov.tolist()}") from None
    return Conditioning(y, u, prior)


@dataclass(frozen=True)
class MomentVector:
    phi0: float
    phi1: np.ndarray
    phi2: np.ndarray

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.phi1 / self.phi0
        return mean, self.phi2 / self.phi0 - np.outer(mean, mean)


# quadrature grids


@lru_cache(maxsize=64)
def _std_nodes(order: int, dim: int, cutoff: float, rule: str = "trapezoid") -> tuple[np.ndarray, np.ndarray]:
    """Tensor rule for expectations under the standard normal in ``dim`` dimensions."""
    if rule == "hermite":
        t, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / np.sqrt(2.0 * np.pi)
        keep = np.abs(t) <= cutoff
        t, w = t[keep], w[keep]
    else:
        step = 2.0 * cutoff / order
        t = -cutoff + (np.arange(order) + 0.5) * step
        w = step * np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)
    if dim == 1:
        nodes, weights = t[:, None], w
    else:
        nodes = np.array(list(itertools.product(t, repeat=dim)))
        weights = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def predictive_moments(model: StateSpaceModel, cond: Conditioning, order: int, cutoff: float = 8.0, rule: str = "trapezoid"):
    """Mean and covariance of x = f(x_prev, u) + w with x_prev from the prior."""
    u = cond.u
    if model.linear_in_state:
        F = model.F
        mean = F @ cond.prior.mean + model.offset(u)
        cov = F @ cond.prior.cov @ F.T + model.process_cov
        return mean, 0.5 * (cov + cov.T), None
    t, w = _std_nodes(order, model.n, cutoff, rule)
    L = np.linalg.cholesky(cond.prior.cov)
    xp = cond.prior.mean + t @ L.T
    fx = model.f(xp, u)
    mean = w @ fx
    d = fx - mean
    cov = (w[:, None] * d).T @ d + model.process_cov
    return mean, 0.5 * (cov + cov.T), (fx, w)


def _weighted_nodes(model: StateSpaceModel, cond: Conditioning, order: int, quad: QuadratureConfig):
    """Nodes x_k and weights v_k with sum_k v_k g(x_k) ~ integral g(x) p_xy(x, z) dx."""
    cutoff, rule = quad.truncation_sigmas, quad.rule
    mean, cov, mixture = predictive_moments(model, cond, order, cutoff, rule)
    t, w = _std_nodes(order, model.n, cutoff, rule)
    L = np.linalg.cholesky(cov)
    x = mean + t @ L.T
    lik = normal_pdf_batch(cond.y - model.h(x), np.zeros(model.r), model.obs_cov)
    if mixture is not None:
        fx, wm = mixture
        # p(x) / N(x; mean, cov) for the Gaussian mixture predictive density
        px = normal_pdf_batch(x[:, None, :], fx[None, :, :], model.process_cov) @ wm
        lik = lik * px / normal_pdf_batch(x, mean, cov)
    return x, w * lik


def joint_density(model: StateSpaceModel, cond: Conditioning, x, quad: QuadratureConfig | None = None) -> float:
    """p(y | x) * integral p(x | x_prev; u) N(x_prev; prior) dx_prev."""
    quad = quad or QuadratureConfig()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lik = normal_pdf_batch(cond.y - model.h(x), np.zeros(model.r), model.obs_cov)
    if model.linear_in_state:
        mean, cov, _ = predictive_moments(model, cond, quad.hermite_order)
        return float(lik * normal_pdf_batch(x, mean, cov))
    t, w = _std_nodes(quad.hermite_order, model.n, quad.truncation_sigmas, quad.rule)
    xp = cond.prior.mean + t @ np.linalg.cholesky(cond.prior.cov).T
    fx = model.f(xp, cond.u)
    return float(lik * (normal_pdf_batch(x[None, :], fx, model.process_cov) @ w))


def _refined(compute: Callable[[int], np.ndarray], quad: QuadratureConfig, close: Callable, what: str):
    return _refined_order(compute, quad, close, what)[0]


def _refined_order(compute, quad: QuadratureConfig, close: Callable, what: str):
    """Double the node count until two successive values agree; return (value, order)."""
    order = quad.hermite_order
    coarse = compute(order)
    for attempt in range(quad.refinement_max):
        order *= 2
        fine = compute(order)
        if close(coarse, fine):
            return fine, order
        if attempt == quad.refinement_max - 1:
            raise RefinementFailure(coarse, fine, what)
        coarse = fine


def _rel_close(tol: float):
    def close(a, b):
        a, b = np.asarray(a), np.asarray(b)
        return bool(np.all(np.abs(a - b) <= tol * np.maximum(np.abs(a), np.abs(b)) + 1e-300))
    return close


def transform_value(model: StateSpaceModel, xi, cond: Conditioning, quad: QuadratureConfig | None = None) -> float:
    """integral exp(xi . x) p_xy(x, z) dx."""
    quad = quad or QuadratureConfig()
    xi = np.atleast_1d(np.asarray(xi, dtype=float))

    def compute(order):
        x, v = _weighted_nodes(model, cond, order, quad)
        return float(v @ np.exp(x @ xi))

    return _refined(compute, quad, _rel_close(quad.tolerance), "transform")


def _raw_moments(model, cond, order, quad):
    x, v = _weighted_nodes(model, cond, order, quad)
    phi0 = float(np.sum(v))
    phi1 = v @ x
    phi2 = (v[:, None] * x).T @ x
    return phi0, phi1, phi2


def moments(model: StateSpaceModel, cond: Conditioning, quad: QuadratureConfig | None = None) -> MomentVector:
    """Phi[1], Phi[x], Phi[x x^T] with polynomial weights on the quadrature grid."""
    quad = quad or QuadratureConfig()
    tol = quad.tolerance

    def compute(order):
        phi0, phi1, phi2 = _raw_moments(model, cond, order, quad)
        return phi0, phi1, phi2

    def close(a, b):
        if not abs(a[0] - b[0]) <= tol * max(abs(a[0]), abs(b[0])) + 1e-300:
            return False
        # compare normalised moments on an absolute-plus-relative scale
        for ka, kb in ((a[1] / a[0], b[1] / b[0]), (a[2] / a[0], b[2] / b[0])):
            if np.any(np.abs(ka - kb) > tol * (1.0 + np.maximum(np.abs(ka), np.abs(kb)))):
                return False
        return True

    phi0, phi1, phi2 = _refined(compute, quad, close, "moments")
    phi2 = 0.5 * (phi2 + phi2.T)
    return MomentVector(phi0, np.asarray(phi1), np.asarray(phi2))


def moments_by_differences(
    model: StateSpaceModel, cond: Conditioning, quad: QuadratureConfig | None = None, step: float = 1e-2
) -> MomentVector:
    """Moments from Richardson-extrapolated central differences of the transform in xi."""
    quad = quad or QuadratureConfig()
    n = model.n

    def T(xi):
        return transform_value(model, xi, cond, quad)

    e = np.eye(n)
    phi0 = T(np.zeros(n))
    phi1 = np.array([_richardson(lambda h, i=i: _d1(lambda t: T(t * e[i]), 0.0, h), step) for i in range(n)])
    phi2 = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            if i == j:
                val = _richardson(lambda h, i=i: _d2(lambda t: T(t * e[i]), 0.0, h, phi0), step)
            else:
                val = _richardson(lambda h, i=i, j=j: _dmixed(lambda a, b: T(a * e[i] + b * e[j]), h), step)
            phi2[i, j] = phi2[j, i] = val
    return MomentVector(phi0, phi1, phi2)


# finite differences

_D1 = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))  # / 12 h
_D2 = ((-2, -1.0), (-1, 16.0), (1, 16.0), (2, -1.0))  # plus -30 f(0), / 12 h^2


def _d1(g: Callable[[float], float], x0: float, h: float) -> float:
    return sum(c * g(x0 + k * h) for k, c in _D1) / (12.0 * h)


def _d2(g: Callable[[float], float], x0: float, h: float, g0: float | None = None) -> float:
    g0 = g(x0) if g0 is None else g0
    return (sum(c * g(x0 + k * h) for k, c in _D2) - 30.0 * g0) / (12.0 * h * h)


def _dmixed(g: Callable[[float, float], float], h: float, k: float | None = None) -> float:
    k = h if k is None else k
    total = 0.0
    for ka, ca in _D1:
        for kb, cb in _D1:
            total += ca * cb * g(ka * h, kb * k)
    return total / (144.0 * h * k)


def _richardson(d: Callable[[float], float], h: float) -> float:
    """Remove the leading h^4 error term of a fourth-order difference."""
    return (16.0 * d(h / 2.0) - d(h)) / 15.0


def initial_vector(
    model: StateSpaceModel,
    sys: PfaffianSystem,
    z_init: Sequence[float],
    quad: QuadratureConfig | None = None,
    fd_step: float = 1e-2,
    fd_tolerance: float = 1e-7,
) -> np.ndarray:
    """Q(0, z_init) for the system's monomials, computed by quadrature.

    xi-derivatives use polynomial weights under the integral sign; derivatives
    in z (total order at most 2) use Richardson-extrapolated fourth-order
    central differences, halving the step until two estimates agree.
    """
    quad = quad or QuadratureConfig()
    z0 = np.asarray(z_init, dtype=float)
    nxi = sys.nxi
    if nxi != model.n:
        raise DimensionMismatch(f"system has {nxi} transform variables, model state has {model.n}")
    if z0.size != len(sys.z_variables) or z0.size != z_size(model):
        raise DimensionMismatch("z_init does not match the system's parameter variables")

    cache: dict[tuple, float] = {}
    # node count chosen by refinement at z_init, then frozen so that shifted
    # points see a quadrature that varies smoothly with z
    orders: dict[tuple[int, ...], int] = {}

    def G(d_xi: tuple[int, ...], z) -> float:
        key = (d_xi, tuple(np.asarray(z).tolist()))
        if key not in cache:
            cond = split_z(model, z)

            def compute(order):
                x, v = _weighted_nodes(model, cond, order, quad)
                return float(v @ np.prod(x ** np.array(d_xi), axis=1))

            # the moment itself may vanish by symmetry; compare against the mass
            def close(a, b, cond=cond):
                return abs(a - b) <= quad.tolerance * (max(abs(a), abs(b)) + phi0_of(cond))

            if d_xi in orders:
                cache[key] = compute(orders[d_xi])
            else:
                cache[key], orders[d_xi] = _refined_order(compute, quad, close, "initial vector")
        return cache[key]

    def phi0_of(cond):
        x, v = _weighted_nodes(model, cond, quad.hermite_order, quad)
        return float(np.sum(v))

    out = []
    for mono in sys.monomials:
        d_xi = tuple(mono[:nxi])
        d_z = mono[nxi:]
        order = sum(d_z)
        if order > 2:
            raise UnsupportedMonomial(f"z-derivative of order {order} in monomial {mono}")
        base = G(d_xi, z0)
        if order == 0:
            out.append(base)
            continue
        idx = [i for i, e in enumerate(d_z) for _ in range(e)]
        steps = [fd_step * max(1.0, abs(z0[i])) for i in idx]

        def shifted(offsets):
            z = z0.copy()
            for i, o in offsets:
                z[i] += o
            return G(d_xi, z)

        # est(t) differentiates with steps t * steps
        if len(idx) == 1:
            i, hi = idx[0], steps[0]
            est = lambda t: _d1(lambda a: shifted([(i, a)]), 0.0, t * hi)  # noqa: E731
        elif idx[0] == idx[1]:
            i, hi = idx[0], steps[0]
            est = lambda t: _d2(lambda a: shifted([(i, a)]), 0.0, t * hi, base)  # noqa: E731
        else:
            (i, j), (hi, hj) = idx, steps
            est = lambda t: _dmixed(lambda a, b: shifted([(i, a), (j, b)]), t * hi, t * hj)  # noqa: E731
        out.append(_converged_difference(est, 1.0, fd_tolerance, abs(base)))
    return np.array(out)


def _converged_difference(est: Callable[[float], float], t0: float, tol: float, magnitude: float, max_halvings: int = 4) -> float:
    t = t0
    prev = _richardson(est, t)
    for attempt in range(max_halvings):
        t /= 2.0
        cur = _richardson(est, t)
        if abs(cur - prev) <= tol * (max(abs(cur), abs(prev)) + 1e-3 * magnitude):
            return cur
        if attempt == max_halvings - 1:
            break
        prev = cur
    raise RefinementFailure(prev, cur, "finite-difference")


def initial_table(model, sys, points, quad: QuadratureConfig | None = None):
    from .pfaffian import InitialPointTable

    points = np.atleast_2d(np.asarray(points, dtype=float))
    vectors = np.array([initial_vector(model, sys, p, quad) for p in points])
    return InitialPointTable(points, vectors, sys.z_variables)


def default_grid(model: StateSpaceModel) -> np.ndarray:
    """All sign patterns of +-1 for y, u and the prior mean, with identity prior covariance."""
    free = model.r + model.m + model.n
    cov = vech(np.eye(model.n))
    return np.array([np.concatenate([np.array(signs, dtype=float), cov]) for signs in itertools.product((-1.0, 1.0), repeat=free)])


# annihilating operators


def partial_derivative(fn: Callable[[np.ndarray], float], point: Sequence[float], multi: Sequence[int], step: float = 1e-3) -> float:
    """Mixed partial derivative by nested fourth-order central differences."""
    point = np.asarray(point, dtype=float)
    multi = list(multi)
    for i, e in enumerate(multi):
        if e == 0:
            continue
        h = step * max(1.0, abs(point[i]))
        rest = multi.copy()
        if e >= 2:
            rest[i] -= 2

            def g(t, i=i, rest=rest):
                p = point.copy()
                p[i] += t
                return partial_derivative(fn, p, rest, step)

            return _d2(g, 0.0, h)
        rest[i] -= 1

        def g(t, i=i, rest=rest):
            p = point.copy()
            p[i] += t
            return partial_derivative(fn, p, rest, step)

        return _d1(g, 0.0, h)
    return float(fn(point))


def annihilator_residual(
    op: Sequence[tuple[Sequence[int], RationalFunction]],
    fn: Callable[[np.ndarray], float],
    point: Sequence[float],
    normalize: bool = True,
    step: float = 1e-3,
    eps_den: float = DEFAULT_EPS_DEN,
) -> float:
    """|sum_d a_d(p) d^d fn(p)|, divided by the largest |a_d d^d fn| when normalising."""
    terms = []
    for multi, coeff in op:
        a = coeff.evaluate(point, eps_den)
        terms.append(a * partial_derivative(fn, point, multi, step))
    total = abs(sum(terms))
    if not normalize:
        return total
    scale = max(abs(t) for t in terms)
    return total / scale if scale > 0 else total


# brute-force cross-check


def importance_sampling_mean(
    model: StateSpaceModel, cond: Conditioning, samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean by self-normalised importance sampling and its standard error."""
    Lp = np.linalg.cholesky(cond.prior.cov)
    Lw = np.linalg.cholesky(model.process_cov)
    xp = cond.prior.mean + rng.standard_normal((samples, model.n)) @ Lp.T
    x = model.f(xp, cond.u) + rng.standard_normal((samples, model.n)) @ Lw.T
    w = normal_pdf_batch(cond.y - model.h(x), np.zeros(model.r), model.obs_cov)
    total = np.sum(w)
    mean = (w @ x) / total
    se = np.sqrt(np.sum((w[:, None] * (x - mean)) ** 2, axis=0)) / total
    return mean, se
