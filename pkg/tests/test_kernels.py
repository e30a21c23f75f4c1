"""The compiled kernels and the numpy fallback must agree."""
from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from stabkit import _kernels_py as py
from stabkit import kernels

ck = pytest.importorskip("stabkit._ckernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_env_switch():
    code = "from stabkit import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, STABKIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("seed", range(5))
def test_bilinear_parity(seed):
    r = np.random.default_rng(seed)
    img = r.uniform(size=(13, 21))
    u = r.uniform(-3, 24, 5000)
    v = r.uniform(-3, 16, 5000)
    # exact grid points, hull edges and near-integers exercise the snapping
    u[:50] = np.arange(50) % 21
    v[:50] = np.arange(50) % 13
    u[50:60] = 20.0
    v[60:70] = -1e-12
    u[70:80] = 7.0 + 5e-10
    a = py.bilinear_sample(img, u, v)
    b = ck.bilinear_sample(img, u, v)
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


@pytest.mark.parametrize("block,radius", [(4, 2), (8, 4), (5, 3)])
def test_sad_parity(block, radius):
    r = np.random.default_rng(block * 10 + radius)
    a = r.uniform(size=(30, 41))
    b = np.roll(a, (1, -2), axis=(0, 1))
    b[::7] = 0.5  # ties and flat rows
    ra = py.sad_block_match(a, b, block, radius)
    rb = ck.sad_block_match(a, b, block, radius)
    # displacements match exactly; costs differ only in summation order
    for x, y in zip(ra[:2], rb[:2]):
        assert np.array_equal(np.asarray(x), np.asarray(y))
    for x, y in zip(ra[2:], rb[2:]):
        np.testing.assert_allclose(np.asarray(x), np.asarray(y), rtol=1e-13, atol=1e-13)


def test_sad_recovers_shift():
    r = np.random.default_rng(0)
    a = r.uniform(size=(32, 32))
    b = np.zeros_like(a)
    b[:, :-2] = a[:, 2:]  # b(x) = a(x + 2)
    dx, dy, best, _ = kernels.sad_block_match(a, b, 8, 3)
    assert np.all(dx[:, :-1] == 2) and np.all(dy[:, :-1] == 0)
    assert np.all(best[:, :-1] == 0.0)
