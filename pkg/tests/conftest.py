import math

import numpy as np
import pytest

from gridform.geom import NurbsCurve


def cox_de_boor(i, p, u, knots):
    """Textbook recursion, evaluated naively; closes the last nonempty span at u = b."""
    knots = list(knots)
    b = knots[-p - 1]
    if p == 0:
        if knots[i] <= u < knots[i + 1]:
            return 1.0
        if u == b and knots[i] < knots[i + 1] == b:
            return 1.0
        return 0.0
    left = 0.0
    if knots[i + p] != knots[i]:
        left = (u - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(i, p - 1, u, knots)
    right = 0.0
    if knots[i + p + 1] != knots[i + 1]:
        right = (knots[i + p + 1] - u) / (knots[i + p + 1] - knots[i + 1]) * cox_de_boor(i + 1, p - 1, u, knots)
    return left + right


def random_clamped_knots(rng, n_ctrl, p):
    inner = np.sort(rng.uniform(0, 1, n_ctrl - p - 1))
    return np.concatenate([np.zeros(p + 1), inner, np.ones(p + 1)])


def random_curve(rng, p=None, n_ctrl=None, unit_weights=False):
    p = p if p is not None else int(rng.integers(1, 6))
    n_ctrl = n_ctrl if n_ctrl is not None else int(rng.integers(p + 1, p + 7))
    pts = rng.normal(size=(n_ctrl, 3))
    w = np.ones(n_ctrl) if unit_weights else rng.uniform(0.3, 3.0, n_ctrl)
    return NurbsCurve(p, pts, w, random_clamped_knots(rng, n_ctrl, p))


def quarter_circle():
    return NurbsCurve.clamped([(1, 0, 0), (1, 1, 0), (0, 1, 0)], 2,
                              weights=[1.0, math.sqrt(2) / 2, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
