from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from stabkit.geometry import Homography, PerturbationRange, sample_perturbation
from stabkit.image import Frame


def smooth_frame(rng: np.random.Generator, width: int = 32, height: int = 18, sigma: float = 1.5) -> Frame:
    z = ndimage.gaussian_filter(rng.uniform(size=(height, width)), sigma, mode="wrap")
    z = (z - z.min()) / (z.max() - z.min())
    return Frame.from_array(0.1 + 0.8 * z)


def random_h(rng: np.random.Generator, scale: float = 1.0) -> Homography:
    return sample_perturbation(PerturbationRange.default().scaled(scale), rng)


def oracle_apply(h: Homography, p) -> np.ndarray:
    v = np.array([[float(x) for x in row] for row in h.matrix]) @ np.array([p[0], p[1], 1.0])
    return v[:2] / v[2]


def oracle_normalize(m: np.ndarray) -> np.ndarray:
    return m / m[2, 2]


def oracle_inverse(m: np.ndarray) -> np.ndarray:
    """Adjugate over determinant, written out by cofactors."""
    a = m
    cof = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(a, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    det = sum(a[0, j] * cof[0, j] for j in range(3))
    return cof.T / det


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
