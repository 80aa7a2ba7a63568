"""State-space models with additive Gaussian noise, simulation and densities.

Transition and observation functions are vectorised: they take states with any
number of leading batch axes, ``x.shape == (..., n)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Callable

import numpy as np

from .errors import NonPositiveDefinite, NonPositiveVariance, SingularCovariance
from .pfaffian import PfaffianSystem, loads_pfaffian

LOG_2PI = math.log(2.0 * math.pi)

# stream identifiers for the counter-based generator
ROLE_INITIAL = 0
ROLE_PROCESS = 1
ROLE_OBSERVATION = 2
ROLE_PARTICLES = 3


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise NonPositiveDefinite("covariance is not symmetric")
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise NonPositiveDefinite("non-finite mean or covariance")
        if np.min(np.linalg.eigvalsh(cov)) <= 0.0:
            raise NonPositiveDefinite("covariance is not positive definite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


GaussianBelief = GaussianDensity


def gaussian_logpdf(d: GaussianDensity, x) -> float:
    """log N(x; mean, cov)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != d.mean.shape:
        raise ValueError("dimension mismatch between density and point")
    try:
        L = np.linalg.cholesky(d.cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite") from None
    diag = np.diag(L)
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise SingularCovariance("degenerate Cholesky factor")
    z = np.linalg.solve(L, x - d.mean)
    return -0.5 * (d.dim * LOG_2PI + 2.0 * float(np.sum(np.log(diag))) + float(z @ z))


def normal_pdf_batch(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """N(x; mean, cov) for x of shape (..., n); ``mean`` broadcasts against x."""
    cov = np.atleast_2d(cov)
    n = cov.shape[0]
    L = np.linalg.cholesky(cov)
    diff = np.asarray(x, dtype=float) - mean
    z = np.linalg.solve(L, diff.reshape(-1, n).T).T.reshape(diff.shape)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return np.exp(-0.5 * (n * LOG_2PI + logdet + np.sum(z * z, axis=-1)))


@dataclass(frozen=True)
class StateSpaceModel:
    """x = f(x_prev, u) + w, y = h(x) + v with Gaussian w, v."""

    name: str
    n: int
    r: int
    m: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f_jac: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    h_jac: Callable[[np.ndarray], np.ndarray]
    process_cov: np.ndarray
    obs_cov: np.ndarray
    F: np.ndarray | None = None
    H: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    input_fn: Callable[[int], float] | None = None

    def __post_init__(self):
        if self.input_fn is None:
            object.__setattr__(self, "input_fn", input_signal)
        for label, cov, dim in (("process", self.process_cov, self.n), ("observation", self.obs_cov, self.r)):
            cov = np.atleast_2d(np.asarray(cov, dtype=float))
            if cov.shape != (dim, dim):
                raise ValueError(f"{label} covariance must be {dim}x{dim}")
            if np.max(np.abs(cov - cov.T)) > 0 or np.min(np.linalg.eigvalsh(cov)) <= 0:
                raise NonPositiveVariance(f"{label} covariance must be symmetric positive definite")
            object.__setattr__(self, "process_cov" if label == "process" else "obs_cov", cov)

    @property
    def linear_in_state(self) -> bool:
        return self.F is not None

    def offset(self, u) -> np.ndarray:
        """g(u) in f(x, u) = F x + g(u)."""
        return self.f(np.zeros(self.n), np.asarray(u, dtype=float))

    def input(self, k: int) -> np.ndarray:
        return np.full(self.m, float(self.input_fn(k)))

    def transition_logpdf(self, x, x_prev, u) -> float:
        """log p(x | x_prev; u) = log p_w(x - f(x_prev, u))."""
        w = np.asarray(x, dtype=float) - self.f(np.asarray(x_prev, dtype=float), np.asarray(u, dtype=float))
        return gaussian_logpdf(GaussianDensity(np.zeros(self.n), self.process_cov), w)

    def observation_logpdf(self, y, x) -> float:
        v = np.asarray(y, dtype=float) - self.h(np.asarray(x, dtype=float))
        return gaussian_logpdf(GaussianDensity(np.zeros(self.r), self.obs_cov), v)


def input_signal(k: int) -> float:
    return math.cos(0.6 * k)


def builtin_example5() -> StateSpaceModel:
    """x = 4/5 x_prev + u + w, y = 2x / (1 + x^2) + v, unit noise variances."""

    def f(x, u):
        return 0.8 * x + u

    def f_jac(x, u):
        return np.array([[0.8]])

    def h(x):
        return 2.0 * x / (1.0 + x * x)

    def h_jac(x):
        x0 = float(np.asarray(x).ravel()[0])
        return np.array([[2.0 * (1.0 - x0 * x0) / (1.0 + x0 * x0) ** 2]])

    return StateSpaceModel(
        "example5", 1, 1, 1, f, f_jac, h, h_jac,
        np.eye(1), np.eye(1), F=np.array([[0.8]]),
        params={"a": Fraction(4, 5)},
    )


def builtin_linear(a: float = 0.8, c: float = 1.0, process_var: float = 1.0, obs_var: float = 1.0) -> StateSpaceModel:
    """Scalar linear-Gaussian model x = a x_prev + u + w, y = c x + v."""
    if not process_var > 0 or not obs_var > 0:
        raise NonPositiveVariance("noise variances must be positive")

    def f(x, u):
        return a * x + u

    def f_jac(x, u):
        return np.array([[a]])

    def h(x):
        return c * x

    def h_jac(x):
        return np.array([[c]])

    return StateSpaceModel(
        "linear", 1, 1, 1, f, f_jac, h, h_jac,
        np.array([[process_var]]), np.array([[obs_var]]),
        F=np.array([[a]]), H=np.array([[c]]),
        params={"a": a, "c": c, "process_var": process_var, "obs_var": obs_var},
    )


BUILTIN_MODELS = {"example5": builtin_example5, "linear": builtin_linear}


def get_model(name: str) -> StateSpaceModel:
    try:
        return BUILTIN_MODELS[name]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None


# Pfaffian system of the integral transform for the scalar linear model.
# With m = a mu + u, P = a^2 sigma + sw, S = c^2 P + sv and r = y - c m the
# transform is N(y; c m, S) exp(xi mu* + xi^2 s*^2 / 2), where
# mu* = m + c P r / S and s*^2 = P sv / S, so every A is a log-derivative.


def _lit(x) -> str:
    x = Fraction(x)
    return f"({x.numerator}/{x.denominator})" if x.denominator != 1 else f"({x.numerator})"


def linear_transform_pfaffian_text(a=Fraction(4, 5), c=1, process_var=1, obs_var=1) -> str:
    a, c, sw, sv = (Fraction(str(v)) if isinstance(v, float) else Fraction(v) for v in (a, c, process_var, obs_var))
    A, C, W, V = _lit(a), _lit(c), _lit(sw), _lit(sv)
    m = f"({A}*mu + u)"
    P = f"({A}^2*sigma + {W})"
    S = f"({C}^2*{P} + {V})"
    r = f"(y - {C}*{m})"
    entries = {
        "xi": f"{m} + {C}*{P}*{r}/{S} + xi*{V}*{P}/{S}",
        "y": f"-{r}/{S} + xi*{C}*{P}/{S}",
        "u": f"{C}*{r}/{S} + xi*{V}/{S}",
        "mu": f"{A}*{C}*{r}/{S} + xi*{A}*{V}/{S}",
        "sigma": (
            f"-{C}^2*{A}^2/(2*{S}) + {C}^2*{A}^2*{r}^2/(2*{S}^2)"
            f" + xi*{C}*{A}^2*{V}*{r}/{S}^2 + xi^2*{A}^2*{V}^2/(2*{S}^2)"
        ),
    }
    lines = [
        "pfaffian v1",
        f"# transform of the joint density for x = {a} x- + u + w, y = {c} x + v,",
        f"# var(w) = {sw}, var(v) = {sv}; z = (y, u, mu-, sigma-)",
        "vars: xi, y, u, mu, sigma",
        "nxi: 1",
        "dim: 1",
        "monomials: 1",
        "box: xi in [-0.5, 0.5]",
        "box: y in [-3, 3]",
        "box: u in [-2, 2]",
        "box: mu in [-3, 3]",
        "box: sigma in [0.05, 3]",
    ]
    for v, expr in entries.items():
        lines += [f"matrix {v}:", f"(1,1) = {expr}", "end"]
    return "\n".join(lines) + "\n"


def linear_transform_pfaffian(a=Fraction(4, 5), c=1, process_var=1, obs_var=1) -> PfaffianSystem:
    return loads_pfaffian(linear_transform_pfaffian_text(a, c, process_var, obs_var), name="linear_q1")


# simulation


def noise_generator(seed: int, step: int, role: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, step, role)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(step), int(role)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (K+1, n), row 0 is x_0
    outputs: np.ndarray  # (K, r), row k-1 is y_k
    inputs: np.ndarray  # (K, m)
    seed: int

    @property
    def K(self) -> int:
        return self.outputs.shape[0]

    def to_csv(self, stream: IO[str]) -> None:
        n, r, m = self.states.shape[1], self.outputs.shape[1], self.inputs.shape[1]
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["k"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(r)] + [f"u{i + 1}" for i in range(m)])
        w.writerow([0] + [repr(float(v)) for v in self.states[0]] + [""] * (r + m))
        for k in range(1, self.K + 1):
            w.writerow(
                [k]
                + [repr(float(v)) for v in self.states[k]]
                + [repr(float(v)) for v in self.outputs[k - 1]]
                + [repr(float(v)) for v in self.inputs[k - 1]]
            )

    def dumps(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, stream: IO[str], seed: int = 0) -> "Trajectory":
        rows = list(csv.reader(stream))
        header = rows[0]
        xs = [i for i, h in enumerate(header) if h.startswith("x")]
        ys = [i for i, h in enumerate(header) if h.startswith("y")]
        us = [i for i, h in enumerate(header) if h.startswith("u")]
        body = [r for r in rows[1:] if r]
        states = np.array([[float(r[i]) for i in xs] for r in body])
        outputs = np.array([[float(r[i]) for i in ys] for r in body[1:]]).reshape(len(body) - 1, len(ys))
        inputs = np.array([[float(r[i]) for i in us] for r in body[1:]]).reshape(len(body) - 1, len(us))
        return cls(states, outputs, inputs, seed)


def simulate(model: StateSpaceModel, K: int, x0_density: GaussianDensity, seed: int) -> Trajectory:
    if K < 1:
        raise ValueError("K must be at least 1")
    Lw = np.linalg.cholesky(model.process_cov)
    Lv = np.linalg.cholesky(model.obs_cov)
    L0 = np.linalg.cholesky(x0_density.cov)
    x = x0_density.mean + L0 @ noise_generator(seed, 0, ROLE_INITIAL).standard_normal(model.n)
    states = [x]
    outputs, inputs = [], []
    for k in range(1, K + 1):
        u = model.input(k)
        w = Lw @ noise_generator(seed, k, ROLE_PROCESS).standard_normal(model.n)
        v = Lv @ noise_generator(seed, k, ROLE_OBSERVATION).standard_normal(model.r)
        x = model.f(x, u) + w
        y = model.h(x) + v
        states.append(x)
        outputs.append(y)
        inputs.append(u)
    return Trajectory(np.array(states), np.array(outputs), np.array(inputs), seed)
