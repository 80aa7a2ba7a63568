"""One-step Gaussian filters: HGM, quadrature oracle, KF, EKF, UKF and bootstrap PF."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CovarianceRepairExceeded,
    DimensionMismatch,
    NonPositiveEvidence,
    SingularCovariance,
)
from .hgm import LinePath, SolverConfig, pole_scan, solve_ivp
from .models import ROLE_PARTICLES, GaussianBelief, StateSpaceModel, gaussian_logpdf, noise_generator
from .oracle import Conditioning, QuadratureConfig, assemble_z, moments
from .pfaffian import CoefficientRows, InitialPointTable, PfaffianSystem, derive_coefficient_rows

MIN_EIGENVALUE = 1e-10
MAX_JITTER_FRACTION = 1e-4


@dataclass(frozen=True)
class FilterStepInput:
    y: np.ndarray
    u: np.ndarray
    prior: GaussianBelief

    @classmethod
    def make(cls, y, u, prior: GaussianBelief) -> "FilterStepInput":
        return cls(np.atleast_1d(np.asarray(y, dtype=float)), np.atleast_1d(np.asarray(u, dtype=float)), prior)

    def conditioning(self) -> Conditioning:
        return Conditioning(self.y, self.u, self.prior)


def repair_covariance(cov, diagnostics: dict | None = None) -> np.ndarray:
    """Symmetrise and lift the smallest eigenvalue to MIN_EIGENVALUE if needed."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.all(np.isfinite(cov)):
        raise SingularCovariance("non-finite covariance")
    cov = 0.5 * (cov + cov.T)
    lam = float(np.min(np.linalg.eigvalsh(cov)))
    if lam >= MIN_EIGENVALUE:
        return cov
    jitter = MIN_EIGENVALUE - lam
    if jitter > MAX_JITTER_FRACTION * float(np.trace(cov)):
        raise CovarianceRepairExceeded(f"jitter {jitter:.3e} exceeds {MAX_JITTER_FRACTION:g} * trace")
    if diagnostics is not None:
        diagnostics["covariance_repairs"] = diagnostics.get("covariance_repairs", 0) + 1
    return cov + jitter * np.eye(cov.shape[0])


def _belief(mean, cov, diagnostics=None) -> GaussianBelief:
    return GaussianBelief(np.asarray(mean, dtype=float), repair_covariance(cov, diagnostics))


# HGM filter


@dataclass(frozen=True)
class HgmFilterAssets:
    system: PfaffianSystem
    rows: CoefficientRows
    table: InitialPointTable
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if len(self.table) == 0:
            raise DimensionMismatch("initial-point table is empty")
        if self.table.points.shape[1] != len(self.system.z_variables):
            raise DimensionMismatch("table points do not match the system's z variables")
        if self.table.vectors.shape[1] != self.system.dim:
            raise DimensionMismatch("table vectors do not match the system dimension")

    @classmethod
    def build(cls, system: PfaffianSystem, table: InitialPointTable, solver: SolverConfig | None = None) -> "HgmFilterAssets":
        return cls(system, derive_coefficient_rows(system), table, solver or SolverConfig())


def hgm_moments(assets: HgmFilterAssets, z) -> tuple[float, np.ndarray, np.ndarray]:
    """Phi[1], Phi[x], Phi[x x^T] at (xi = 0, z) by transporting Q from the nearest table point."""
    sys = assets.system
    z = np.asarray(z, dtype=float)
    k = assets.table.nearest(z)
    zeros = np.zeros(sys.nxi)
    path = LinePath(np.concatenate([zeros, assets.table.points[k]]), np.concatenate([zeros, z]))
    hit = pole_scan(sys, path, assets.solver)
    if hit is not None:
        raise hit.error()
    Q = solve_ivp(sys, path, assets.table.vectors[k], assets.solver)
    c0, c1, c2 = assets.rows.evaluate(path.end)
    return float(c0 @ Q), c1 @ Q, c2 @ Q


def hgm_step(assets: HgmFilterAssets, inp: FilterStepInput, diagnostics: dict | None = None) -> GaussianBelief:
    phi0, phi1, phi2 = hgm_moments(assets, assemble_z(inp.conditioning()))
    if not phi0 > 0:
        raise NonPositiveEvidence(f"Phi[1] = {phi0!r}")
    mean = phi1 / phi0
    return _belief(mean, phi2 / phi0 - np.outer(mean, mean), diagnostics)


def oracle_step(model: StateSpaceModel, inp: FilterStepInput, quad: QuadratureConfig | None = None,
                diagnostics: dict | None = None) -> GaussianBelief:
    mv = moments(model, inp.conditioning(), quad)
    if not mv.phi0 > 0:
        raise NonPositiveEvidence(f"Phi[1] = {mv.phi0!r}")
    mean, cov = mv.posterior()
    return _belief(mean, cov, diagnostics)


# Kalman-type baselines


def _update(m, P, y_pred, S, C, y, diagnostics=None) -> GaussianBelief:
    """Gaussian conditioning given predicted output, its covariance S and cross-covariance C."""
    try:
        K = np.linalg.solve(S.T, C.T).T
    except np.linalg.LinAlgError:
        raise SingularCovariance("innovation covariance is singular") from None
    mean = m + K @ (y - y_pred)
    cov = P - K @ S @ K.T
    return _belief(mean, cov, diagnostics)


def kf_step(model: StateSpaceModel, inp: FilterStepInput, diagnostics: dict | None = None) -> GaussianBelief:
    if model.F is None or model.H is None:
        raise ValueError("the Kalman filter needs a model linear in state and observation")
    F, H = model.F, model.H
    m = F @ inp.prior.mean + model.offset(inp.u)
    P = F @ inp.prior.cov @ F.T + model.process_cov
    S = H @ P @ H.T + model.obs_cov
    return _update(m, P, H @ m, S, P @ H.T, inp.y, diagnostics)


def ekf_step(model: StateSpaceModel, inp: FilterStepInput, diagnostics: dict | None = None) -> GaussianBelief:
    Fj = model.f_jac(inp.prior.mean, inp.u)
    m = model.f(inp.prior.mean, inp.u)
    P = Fj @ inp.prior.cov @ Fj.T + model.process_cov
    Hj = model.h_jac(m)
    S = Hj @ P @ Hj.T + model.obs_cov
    return _update(m, P, model.h(m), S, P @ Hj.T, inp.y, diagnostics)


@dataclass(frozen=True)
class UkfParams:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0


def sigma_points(mean: np.ndarray, cov: np.ndarray, p: UkfParams):
    n = mean.size
    lam = p.alpha**2 * (n + p.kappa) - n
    try:
        L = np.linalg.cholesky((n + lam) * cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance not positive definite for sigma points") from None
    pts = np.vstack([mean, mean + L.T, mean - L.T])
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1.0 - p.alpha**2 + p.beta)
    return pts, wm, wc


def ukf_step(model: StateSpaceModel, inp: FilterStepInput, params: UkfParams | None = None,
             diagnostics: dict | None = None) -> GaussianBelief:
    p = params or UkfParams()
    pts, wm, wc = sigma_points(inp.prior.mean, inp.prior.cov, p)
    fx = model.f(pts, inp.u)
    m = wm @ fx
    d = fx - m
    P = (wc[:, None] * d).T @ d + model.process_cov
    P = 0.5 * (P + P.T)
    pts, wm, wc = sigma_points(m, P, p)
    hy = model.h(pts)
    y_pred = wm @ hy
    dy = hy - y_pred
    dx = pts - m
    S = (wc[:, None] * dy).T @ dy + model.obs_cov
    C = (wc[:, None] * dx).T @ dy
    return _update(m, P, y_pred, S, C, inp.y, diagnostics)


# bootstrap particle filter


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray  # (P, n)
    weights: np.ndarray  # (P,)
    degenerate: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ValueError("particle weights must be nonnegative and sum to 1")

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @classmethod
    def from_belief(cls, belief: GaussianBelief, count: int, rng: np.random.Generator) -> "ParticleSet":
        L = np.linalg.cholesky(belief.cov)
        x = belief.mean + rng.standard_normal((count, belief.dim)) @ L.T
        return cls(x, np.full(count, 1.0 / count))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with one uniform offset and evenly spaced pointers."""
    P = weights.size
    positions = (rng.random() + np.arange(P)) / P
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def pf_step(model: StateSpaceModel, pset: ParticleSet, y, u, rng: np.random.Generator,
            diagnostics: dict | None = None) -> tuple[GaussianBelief, ParticleSet]:
    """Propagate, weight, report the weighted belief, then resample systematically."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    P, n = pset.particles.shape
    Lw = np.linalg.cholesky(model.process_cov)
    x = model.f(pset.particles, u) + rng.standard_normal((P, n)) @ Lw.T
    resid = y - model.h(x)
    Rinv = np.linalg.inv(model.obs_cov)
    loglik = -0.5 * np.einsum("pi,ij,pj->p", resid, Rinv, resid)
    _, logdet = np.linalg.slogdet(2.0 * np.pi * model.obs_cov)
    loglik -= 0.5 * logdet
    logw = np.log(np.maximum(pset.weights, 1e-300)) + loglik
    degenerate = bool(np.max(logw) < np.log(1e-300))
    if degenerate:
        w = np.full(P, 1.0 / P)
        if diagnostics is not None:
            diagnostics["degenerate_weights"] = diagnostics.get("degenerate_weights", 0) + 1
    else:
        w = np.exp(logw - np.max(logw))
        w /= w.sum()
    if diagnostics is not None:
        diagnostics["effective_sample_size"] = float(1.0 / np.sum(w * w))
    mean = w @ x
    d = x - mean
    cov = (w[:, None] * d).T @ d
    belief = _belief(mean, cov, diagnostics)
    idx = systematic_resample(w, rng)
    return belief, ParticleSet(x[idx], np.full(P, 1.0 / P), degenerate)


def nll(belief: GaussianBelief, x_true) -> float:
    """Negative log-likelihood of the true state under the Gaussian belief."""
    return -gaussian_logpdf(belief, x_true)


# stateful wrappers used by the experiment harness


class GaussianFilterRunner:
    def __init__(self, name: str, step):
        self.name = name
        self._step = step
        self.belief: GaussianBelief | None = None
        self.diagnostics: dict = {}

    def start(self, belief: GaussianBelief, seed: int) -> None:
        self.belief = belief

    def step(self, k: int, y, u) -> GaussianBelief:
        new = self._step(FilterStepInput.make(y, u, self.belief), self.diagnostics)
        self.belief = new
        return new


class ParticleFilterRunner:
    def __init__(self, model: StateSpaceModel, particles: int = 100, name: str = "pf"):
        self.name = name
        self.model = model
        self.count = particles
        self.pset: ParticleSet | None = None
        self.seed = 0
        self.diagnostics: dict = {}

    def start(self, belief: GaussianBelief, seed: int) -> None:
        self.seed = seed
        self.pset = ParticleSet.from_belief(belief, self.count, noise_generator(seed, 0, ROLE_PARTICLES))

    def step(self, k: int, y, u) -> GaussianBelief:
        rng = noise_generator(self.seed, k, ROLE_PARTICLES)
        belief, self.pset = pf_step(self.model, self.pset, y, u, rng, self.diagnostics)
        return belief


def make_runner(name: str, model: StateSpaceModel, *, quad: QuadratureConfig | None = None,
                ukf: UkfParams | None = None, particles: int = 100,
                assets: HgmFilterAssets | None = None):
    if name == "kf":
        return GaussianFilterRunner(name, lambda inp, d: kf_step(model, inp, d))
    if name == "ekf":
        return GaussianFilterRunner(name, lambda inp, d: ekf_step(model, inp, d))
    if name == "ukf":
        return GaussianFilterRunner(name, lambda inp, d: ukf_step(model, inp, ukf, d))
    if name == "oracle":
        return GaussianFilterRunner(name, lambda inp, d: oracle_step(model, inp, quad, d))
    if name == "hgm":
        if assets is None:
            raise ValueError("the hgm filter needs a Pfaffian system and an initial-point table")
        return GaussianFilterRunner(name, lambda inp, d: hgm_step(assets, inp, d))
    if name == "pf":
        return ParticleFilterRunner(model, particles)
    raise ValueError(f"unknown filter {name!r}")


FILTER_NAMES = ("kf", "ekf", "ukf", "pf", "oracle", "hgm")
