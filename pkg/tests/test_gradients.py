"""Reverse-mode gradients vs the central finite-difference oracle.

Every primitive must stay below 1e-4 relative error in 64-bit mode
across 20 seeded random instances (the full timed sweep lives in the
acceptance suite; here each primitive is its own test for granular
failure reporting).
"""

import numpy as np
import pytest

from facedyn.engine import Tensor
from facedyn.engine import functional as F
from facedyn.engine.gradcheck import check_gradients

import gradsuite

TOL = 1e-4


@pytest.mark.parametrize("primitive", sorted(gradsuite.BUILDERS))
def test_primitive_gradients(primitive):
    worst = gradsuite.check_primitive(primitive, n_instances=20, h=1e-3, seed=2024)
    assert worst < TOL, f"{primitive}: max relative error {worst:.3e}"


def test_softmax_gradient():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(10):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        r = rng.normal(size=(3, 5))
        worst = max(worst, check_gradients(lambda: (F.softmax(x, axis=-1) * r).sum(), [x]))
    assert worst < TOL


def test_sigmoid_gradient():
    rng = np.random.default_rng(37)
    x = Tensor(rng.normal(size=17), requires_grad=True)
    r = rng.normal(size=17)
    assert check_gradients(lambda: (F.sigmoid(x) * r).sum(), [x]) < TOL


def test_global_avg_pool_gradient():
    rng = np.random.default_rng(41)
    x = Tensor(rng.normal(size=(2, 3, 6)), requires_grad=True)
    r = rng.normal(size=(2, 3))
    assert check_gradients(lambda: (F.global_avg_pool(x) * r).sum(), [x]) < TOL


def test_mean_reshape_transpose_slice_gradients():
    rng = np.random.default_rng(43)
    x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    r = rng.normal(size=(3, 4))

    def f():
        y = x.transpose(1, 0)[1:4] * r          # slice + transpose
        return y.reshape(2, 6).mean(axis=0).sum()

    assert check_gradients(f, [x]) < TOL


def test_concat_gradient():
    from facedyn.engine import concat

    rng = np.random.default_rng(47)
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    r = rng.normal(size=(2, 8))
    assert check_gradients(lambda: (concat([a, b], axis=1) * r).sum(), [a, b]) < TOL


def test_batched_matmul_gradient():
    rng = np.random.default_rng(53)
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
    r = rng.normal(size=(2, 3, 5))
    assert check_gradients(lambda: ((a @ b) * r).sum(), [a, b]) < TOL
