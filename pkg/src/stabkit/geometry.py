"""Homography algebra in normalized image coordinates.

Image extent maps to ``[-1, 1]`` on both axes; pixel centres of the first and
last column sit at -1 and +1. A homography is stored as a 3x3 float64
matrix with bottom-right entry 1 and exposed as the 8-vector
``(h1, ..., h8)`` in row-major order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateError, GeometryError, InsufficientDataError, SingularError

EPS = 1e-12

Vec2 = tuple[float, float]


class Homography:
    """Immutable projective transform."""

    __slots__ = ("_m",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise GeometryError("homography has non-finite entries")
        if abs(m[2, 2]) < EPS:
            raise DegenerateError(f"(3,3) entry {m[2, 2]:.3e} too close to zero")
        if m[2, 2] != 1.0:
            m = m / m[2, 2]
            m[2, 2] = 1.0
        m.setflags(write=False)
        self._m = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_params(cls, params: Iterable[float]) -> "Homography":
        p = np.asarray(list(params) if not isinstance(params, np.ndarray) else params, dtype=np.float64)
        if p.shape != (8,):
            raise GeometryError(f"expected 8 parameters, got shape {p.shape}")
        return cls(np.append(p, 1.0).reshape(3, 3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "Homography":
        sy = sx if sy is None else sy
        return cls([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])

    @classmethod
    def rotation(cls, angle: float) -> "Homography":
        c, s = np.cos(angle), np.sin(angle)
        return cls([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def params(self) -> np.ndarray:
        return self._m.ravel()[:8].copy()

    @property
    def translation_part(self) -> Vec2:
        return float(self._m[0, 2]), float(self._m[1, 2])

    def to_list(self) -> list[float]:
        """Row-major 8 values, the serialization used in JSON files."""
        return [float(v) for v in self._m.ravel()[:8]]

    def det(self) -> float:
        return float(np.linalg.det(self._m))

    def is_identity(self) -> bool:
        return bool(np.array_equal(self._m, np.eye(3)))

    def allclose(self, other: "Homography", atol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self._m - other._m)) <= atol)

    def __matmul__(self, other: "Homography") -> "Homography":
        return compose(self, other)

    def __eq__(self, other) -> bool:
        return isinstance(other, Homography) and np.array_equal(self._m, other._m)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        vals = ", ".join(f"{v:.6g}" for v in self._m.ravel()[:8])
        return f"Homography([{vals}])"


IDENTITY = Homography.identity()


def apply_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Map an ``(N, 2)`` array of points through ``h``."""
    pts = np.asarray(pts, dtype=np.float64)
    m = h.matrix
    x, y = pts[..., 0], pts[..., 1]
    den = m[2, 0] * x + m[2, 1] * y + 1.0
    if np.any(np.abs(den) < EPS):
        raise DegenerateError("projective denominator vanishes at an input point")
    out = np.empty(pts.shape, dtype=np.float64)
    out[..., 0] = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den
    out[..., 1] = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den
    return out


def apply(h: Homography, p: Vec2) -> Vec2:
    q = apply_points(h, np.array([p[0], p[1]], dtype=np.float64))
    return float(q[0]), float(q[1])


def apply_with_jacobian(h: Homography, x: np.ndarray, y: np.ndarray):
    """Mapped coordinates and their derivatives with respect to ``h1..h8``.

    ``x`` and ``y`` are flat arrays. Returns ``(xs, ys, dxs, dys)`` with the
    derivative arrays of shape ``(N, 8)``. Points whose denominator vanishes
    raise ``DegenerateError``.
    """
    m = h.matrix
    den = m[2, 0] * x + m[2, 1] * y + 1.0
    if np.any(np.abs(den) < EPS):
        raise DegenerateError("projective denominator vanishes inside the frame")
    inv = 1.0 / den
    xs = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) * inv
    ys = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) * inv
    n = x.shape[0]
    dxs = np.zeros((n, 8))
    dys = np.zeros((n, 8))
    dxs[:, 0] = x * inv
    dxs[:, 1] = y * inv
    dxs[:, 2] = inv
    dxs[:, 6] = -x * xs * inv
    dxs[:, 7] = -y * xs * inv
    dys[:, 3] = x * inv
    dys[:, 4] = y * inv
    dys[:, 5] = inv
    dys[:, 6] = -x * ys * inv
    dys[:, 7] = -y * ys * inv
    return xs, ys, dxs, dys


def compose(a: Homography, b: Homography) -> Homography:
    """``compose(a, b)`` applies ``b`` first, then ``a``."""
    m = a.matrix @ b.matrix
    if abs(m[2, 2]) < EPS:
        raise DegenerateError("composed homography has vanishing (3,3) entry")
    return Homography(m)


def invert(h: Homography) -> Homography:
    m = h.matrix
    d = np.linalg.det(m)
    if abs(d) < EPS:
        raise SingularError(f"homography is singular (det={d:.3e})")
    inv = np.linalg.inv(m)
    if abs(inv[2, 2]) < EPS:
        raise DegenerateError("inverse has vanishing (3,3) entry")
    return Homography(inv)


def _hartley(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < EPS:
        raise DegenerateError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def dlt_fit(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Least-squares homography with ``dst ~ H(src)`` via normalized DLT."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise GeometryError("src and dst must have the same number of points")
    n = src.shape[0]
    if n < 4:
        raise InsufficientDataError(f"DLT needs at least 4 pairs, got {n}")
    ts, td = _hartley(src), _hartley(dst)
    s = src @ ts[:2, :2].T + ts[:2, 2]
    d = dst @ td[:2, :2].T + td[:2, 2]
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    a = np.empty((2 * n, 9))
    a[0::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    a[1::2] = np.column_stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v])
    _, sv, vt = np.linalg.svd(a)
    if sv[7] < 1e-10 * sv[0]:
        raise DegenerateError("degenerate point configuration (rank-deficient DLT system)")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) < EPS:
        raise DegenerateError("fitted homography has vanishing (3,3) entry")
    return Homography(m)


@dataclass(frozen=True)
class PerturbationRange:
    """Element-wise bounds for random homography perturbations."""

    lower: Homography
    upper: Homography

    def __post_init__(self):
        if np.any(self.lower.params > self.upper.params):
            raise GeometryError("perturbation range has lower > upper")

    @classmethod
    def default(cls) -> "PerturbationRange":
        lo = [[0.9, -0.1, -0.5], [-0.1, 0.9, -0.5], [-0.1, -0.1, 1.0]]
        hi = [[1.1, 0.1, 0.5], [0.1, 1.1, 0.5], [0.1, 0.1, 1.0]]
        return cls(Homography(lo), Homography(hi))

    @classmethod
    def collapsed(cls, h: Homography | None = None) -> "PerturbationRange":
        h = IDENTITY if h is None else h
        return cls(h, h)

    def scaled(self, factor: float) -> "PerturbationRange":
        """Shrink (or grow) the range about the identity by ``factor``."""
        ident = IDENTITY.params
        lo = ident + factor * (self.lower.params - ident)
        hi = ident + factor * (self.upper.params - ident)
        return PerturbationRange(Homography.from_params(lo), Homography.from_params(hi))

    def contains(self, h: Homography, tol: float = 0.0) -> bool:
        p = h.params
        return bool(np.all(p >= self.lower.params - tol) and np.all(p <= self.upper.params + tol))


def sample_perturbation(rng_range: PerturbationRange | None, rng: np.random.Generator) -> Homography:
    """Entry-wise uniform sample inside ``rng_range`` (the published bounds if None)."""
    r = PerturbationRange.default() if rng_range is None else rng_range
    lo, hi = r.lower.params, r.upper.params
    return Homography.from_params(rng.uniform(lo, hi))


@dataclass(frozen=True)
class CameraPath:
    """``path[t] = H_0 H_1 ... H_{t-1}``, ``path[0]`` the identity."""

    path: tuple[Homography, ...]

    def __len__(self) -> int:
        return len(self.path)

    def __getitem__(self, i):
        return self.path[i]

    def translations(self) -> np.ndarray:
        return np.array([h.translation_part for h in self.path])

    def angles(self) -> np.ndarray:
        return np.array([decompose(h).rotation_angle for h in self.path])


def accumulate_path(inter_frame: Sequence[Homography]) -> CameraPath:
    out = [IDENTITY]
    for t, h in enumerate(inter_frame):
        try:
            out.append(compose(out[-1], h))
        except GeometryError as exc:
            raise type(exc)(f"frame {t}: {exc}") from exc
    return CameraPath(tuple(out))


@dataclass(frozen=True)
class HomographyDecomposition:
    scale: float
    rotation_angle: float
    translation: Vec2
    singular_values: tuple[float, float]

    @property
    def anisotropy(self) -> float:
        """``sigma2 / sigma1``, 1 for similarity transforms."""
        return self.singular_values[1] / self.singular_values[0]


def decompose(h: Homography) -> HomographyDecomposition:
    m = h.matrix
    lin = m[:2, :2]
    u, s, vt = np.linalg.svd(lin)
    if s[1] < EPS:
        raise SingularError("affine block of homography is singular")
    r = u @ vt
    angle = float(np.arctan2(r[1, 0], r[0, 0]))
    return HomographyDecomposition(
        scale=float(np.sqrt(abs(np.linalg.det(lin)))),
        rotation_angle=angle,
        translation=(float(m[0, 2]), float(m[1, 2])),
        singular_values=(float(s[0]), float(s[1])),
    )
