"""Annihilating operators of the densities in the example-5 model, with the densities themselves.

Each family is (variables, operators, density, admissible point sampler); an
operator is a list of (multi-index, coefficient expression) pairs.
"""

import math

import numpy as np

from hgmfilter.ratfun import parse_expression


def _op(variables, pairs):
    return [(multi, parse_expression(text, variables)) for multi, text in pairs]


def prior_family():
    v = ("xm", "mu", "S")
    ops = [
        _op(v, [((1, 0, 0), "S"), ((0, 0, 0), "xm - mu")]),
        _op(v, [((0, 1, 0), "S"), ((0, 0, 0), "-xm + mu")]),
        _op(v, [((0, 0, 1), "2*S^2"), ((0, 0, 0), "S - (xm - mu)^2")]),
    ]

    def density(p):
        xm, mu, s = p
        return math.exp(-0.5 * (xm - mu) ** 2 / s) / math.sqrt(2 * math.pi * s)

    def sample(rng):
        return np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.3, 2.0)])

    return "prior", v, ops, density, sample


def transition_family():
    v = ("x", "xm", "u")
    resid = "x - 4/5*xm - u"
    ops = [
        _op(v, [((1, 0, 0), "1"), ((0, 0, 0), resid)]),
        _op(v, [((0, 0, 1), "1"), ((0, 0, 0), "-x + 4/5*xm + u")]),
        _op(v, [((0, 1, 0), "-5/4"), ((0, 0, 0), resid)]),
    ]

    def density(p):
        x, xm, u = p
        return math.exp(-0.5 * (x - 0.8 * xm - u) ** 2) / math.sqrt(2 * math.pi)

    def sample(rng):
        return rng.uniform(-2, 2, size=3)

    return "transition", v, ops, density, sample


def observation_family():
    v = ("y", "x")
    ops = [
        _op(v, [((1, 0), "1"), ((0, 0), "y - 2*x/(1 + x^2)")]),
        _op(v, [((0, 1), "-(1 + x^2)^2/(2*(1 - x^2))"), ((0, 0), "y - 2*x/(1 + x^2)")]),
    ]

    def density(p):
        y, x = p
        return math.exp(-0.5 * (y - 2 * x / (1 + x * x)) ** 2) / math.sqrt(2 * math.pi)

    def sample(rng):
        # keep away from x = +-1 where the second coefficient has a pole
        while True:
            p = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2)])
            if abs(abs(p[1]) - 1) > 0.1:
                return p

    return "observation", v, ops, density, sample


def kernel_family():
    v = ("xi", "x")
    ops = [
        _op(v, [((1, 0), "1"), ((0, 0), "-x")]),
        _op(v, [((0, 1), "1"), ((0, 0), "-xi")]),
    ]

    def density(p):
        xi, x = p
        return math.exp(xi * x)

    def sample(rng):
        return rng.uniform(-1, 1, size=2)

    return "kernel", v, ops, density, sample


FAMILIES = (prior_family, transition_family, observation_family, kernel_family)
