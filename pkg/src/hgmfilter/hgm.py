"""Holonomic gradient method: transport Q along a straight path by ODE integration.

On the segment ``z(s) = (1 - s) start + s end`` the Pfaffian system becomes the
linear ODE ``dQ/ds = M(s) Q`` with ``M(s) = sum_v A_v(z(s)) (end_v - start_v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonfiniteState, PoleOnPath
from .pfaffian import PfaffianSystem
from .ratfun import batch_evaluate

METHODS = ("rk4", "abm4")


@dataclass(frozen=True)
class LinePath:
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        start = np.asarray(self.start, dtype=float).ravel()
        end = np.asarray(self.end, dtype=float).ravel()
        if start.shape != end.shape:
            raise DimensionMismatch("path endpoints have different lengths")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def direction(self) -> np.ndarray:
        return self.end - self.start

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.direction))

    def at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return (1.0 - s)[..., None] * self.start + s[..., None] * self.end


@dataclass(frozen=True)
class SolverConfig:
    method: str = "abm4"
    steps_per_unit: int = 1000
    min_steps: int = 100
    steps: int | None = None
    pole_scan_samples: int | None = None
    min_denominator: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be positive")
        if self.method == "abm4" and self.steps is not None and self.steps < 4:
            raise ValueError("ABM4 needs at least 4 steps")
        if self.min_steps < (4 if self.method == "abm4" else 1):
            raise ValueError("min_steps too small for the chosen method")
        if self.min_denominator <= 0:
            raise ValueError("min_denominator must be positive")

    def steps_for(self, path: LinePath) -> int:
        if self.steps is not None:
            return self.steps
        return max(self.min_steps, math.ceil(self.steps_per_unit * path.length))

    def samples_for(self, path: LinePath) -> int:
        steps = self.steps_for(path)
        if self.pole_scan_samples is None:
            return steps
        return max(self.pole_scan_samples, steps)


@dataclass(frozen=True)
class PoleHit:
    s: float
    variable: str
    entry: tuple[int, int]

    def error(self) -> PoleOnPath:
        return PoleOnPath(self.s, self.variable, self.entry)


class CompiledSystem:
    """Float evaluation of all Pfaffian matrices at many points at once."""

    def __init__(self, sys: PfaffianSystem):
        self.sys = sys
        q = sys.dim
        nums, num_index = [], {}
        dens, den_index = [], {}
        self.num_idx = {}
        self.den_idx = {}
        for v in sys.variables:
            a = sys.matrices[v]
            ni = np.full((q, q), -1, dtype=np.int64)
            di = np.zeros((q, q), dtype=np.int64)
            for r in range(q):
                for c in range(q):
                    f = a[r, c]
                    if f.is_zero():
                        continue
                    ni[r, c] = num_index.setdefault(f.num, len(nums))
                    if ni[r, c] == len(nums):
                        nums.append(f.num)
                    di[r, c] = den_index.setdefault(f.den, len(dens))
                    if di[r, c] == len(dens):
                        dens.append(f.den)
            self.num_idx[v] = ni
            self.den_idx[v] = di
        self.nums = nums
        self.dens = dens
        self.pole_dens = [(d, v, e) for d, v, e in sys.denominators()]

    @classmethod
    def of(cls, sys: PfaffianSystem) -> "CompiledSystem":
        cache = sys.__dict__
        if "_compiled" not in cache:
            cache["_compiled"] = cls(sys)
        return cache["_compiled"]

    def combined(self, points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``sum_v w_v A_v(p)`` for each point (shape (S, q, q)) and min |den| per point."""
        points = np.atleast_2d(points)
        S, q = points.shape[0], self.sys.dim
        num_vals = batch_evaluate(self.nums, points)
        den_vals = batch_evaluate(self.dens, points)
        out = np.zeros((S, q, q))
        for v, w in zip(self.sys.variables, weights):
            if w == 0.0:
                continue
            ni = self.num_idx[v]
            mask = ni >= 0
            if not mask.any():
                continue
            di = self.den_idx[v]
            block = np.zeros((S, q, q))
            # zero denominators are caught by the caller through min_den
            with np.errstate(divide="ignore", invalid="ignore"):
                block[:, mask] = num_vals[:, ni[mask]] / den_vals[:, di[mask]]
            out += w * block
        min_den = np.min(np.abs(den_vals), axis=1) if self.dens else np.full(S, np.inf)
        return out, min_den


def pole_scan(sys: PfaffianSystem, path: LinePath, cfg: SolverConfig) -> PoleHit | None:
    """First place on the path where some denominator vanishes, or None.

    A sample with |den| below ``cfg.min_denominator`` or a sign change between
    consecutive samples both count as a pole.
    """
    _check_path(sys, path)
    comp = CompiledSystem.of(sys)
    if not comp.pole_dens:
        return None
    n = cfg.samples_for(path)
    s = np.linspace(0.0, 1.0, n + 1)
    vals = batch_evaluate([d for d, _, _ in comp.pole_dens], path.at(s))
    best: PoleHit | None = None
    for k, (_, var, entry) in enumerate(comp.pole_dens):
        col = vals[:, k]
        hits = []
        small = np.nonzero(np.abs(col) < cfg.min_denominator)[0]
        if small.size:
            hits.append(float(s[small[0]]))
        flips = np.nonzero(np.sign(col[:-1]) * np.sign(col[1:]) < 0)[0]
        if flips.size:
            i = flips[0]
            frac = col[i] / (col[i] - col[i + 1])
            hits.append(float(s[i] + frac * (s[i + 1] - s[i])))
        if hits:
            first = min(hits)
            if best is None or first < best.s:
                best = PoleHit(first, var, entry)
    return best


def _check_path(sys: PfaffianSystem, path: LinePath) -> None:
    if path.start.size != len(sys.variables):
        raise DimensionMismatch(
            f"path has {path.start.size} coordinates, system has {len(sys.variables)} variables"
        )


def solve_ivp(
    sys: PfaffianSystem,
    path: LinePath,
    q_init,
    cfg: SolverConfig | None = None,
) -> np.ndarray:
    """Integrate ``dQ/ds = M(s) Q`` from s=0 to s=1 and return Q at the path end."""
    cfg = cfg or SolverConfig()
    _check_path(sys, path)
    q0 = np.asarray(q_init, dtype=float).ravel()
    if q0.size != sys.dim:
        raise DimensionMismatch(f"initial vector has length {q0.size}, expected {sys.dim}")
    if path.length == 0.0:
        return q0.copy()

    n = cfg.steps_for(path)
    if cfg.method == "abm4" and n < 4:
        raise ValueError("ABM4 needs at least 4 steps")
    h = 1.0 / n
    comp = CompiledSystem.of(sys)
    # half-step grid: index 2k is node k, odd indices are RK4 midpoints
    s_half = np.linspace(0.0, 1.0, 2 * n + 1)
    if cfg.method == "abm4":
        # only the bootstrap steps need midpoints
        keep = np.zeros(2 * n + 1, dtype=bool)
        keep[::2] = True
        keep[: 2 * min(3, n) + 1] = True
        idx = np.nonzero(keep)[0]
    else:
        idx = np.arange(2 * n + 1)
    mats, min_den = comp.combined(path.at(s_half[idx]), path.direction)
    bad = np.nonzero(min_den < cfg.min_denominator)[0]
    if bad.size:
        raise _pole_error(sys, path, float(s_half[idx[bad[0]]]), cfg)
    M = np.zeros((2 * n + 1,) + mats.shape[1:])
    M[idx] = mats

    # overflow is reported as NonfiniteState rather than as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        if cfg.method == "rk4":
            return _rk4(M, q0, h, n)
        return _abm4(M, q0, h, n)


def _pole_error(sys: PfaffianSystem, path: LinePath, s: float, cfg: SolverConfig) -> PoleOnPath:
    comp = CompiledSystem.of(sys)
    p = path.at(np.array([s]))
    for d, var, entry in comp.pole_dens:
        if abs(d.evaluate(p[0])) < cfg.min_denominator:
            return PoleOnPath(s, var, entry)
    var, entry = (comp.pole_dens[0][1], comp.pole_dens[0][2]) if comp.pole_dens else ("?", (0, 0))
    return PoleOnPath(s, var, entry)


def _rk4_step(M: np.ndarray, j: int, q: np.ndarray, h: float) -> np.ndarray:
    k1 = M[2 * j] @ q
    k2 = M[2 * j + 1] @ (q + 0.5 * h * k1)
    k3 = M[2 * j + 1] @ (q + 0.5 * h * k2)
    k4 = M[2 * j + 2] @ (q + h * k3)
    return q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(q: np.ndarray, j: int, h: float) -> None:
    if not np.all(np.isfinite(q)):
        raise NonfiniteState(j * h)


def _rk4(M: np.ndarray, q: np.ndarray, h: float, n: int) -> np.ndarray:
    for j in range(n):
        q = _rk4_step(M, j, q, h)
        _check_finite(q, j + 1, h)
    return q


def _abm4(M: np.ndarray, q: np.ndarray, h: float, n: int) -> np.ndarray:
    f = [M[0] @ q]
    for j in range(3):
        q = _rk4_step(M, j, q, h)
        _check_finite(q, j + 1, h)
        f.append(M[2 * (j + 1)] @ q)
    c = h / 24.0
    for j in range(3, n):
        f0, f1, f2, f3 = f[-1], f[-2], f[-3], f[-4]
        pred = q + c * (55.0 * f0 - 59.0 * f1 + 37.0 * f2 - 9.0 * f3)
        Mn = M[2 * (j + 1)]
        fp = Mn @ pred
        q = q + c * (9.0 * fp + 19.0 * f0 - 5.0 * f1 + f2)
        _check_finite(q, j + 1, h)
        f.append(Mn @ q)
        del f[0]
    return q


def transport(sys: PfaffianSystem, start, end, q_init, cfg: SolverConfig | None = None) -> np.ndarray:
    """Pole-scan the segment ``start -> end`` and integrate along it."""
    cfg = cfg or SolverConfig()
    path = LinePath(start, end)
    hit = pole_scan(sys, path, cfg)
    if hit is not None:
        raise hit.error()
    return solve_ivp(sys, path, q_init, cfg)
