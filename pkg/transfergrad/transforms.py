"""
Image transformation kernels used by the attack families.

Images are ``numpy`` arrays in channel-height-width layout with values in [0, 1]. All
kernels are pure; the randomized ones (``draw_dim_transform``, ``dim_resize_pad``) take an
explicit ``numpy.random.Generator``.

Scale families
--------------
sim        x / 2**i
bounded    (L + (H - L) / 2**i) * x
uniform    (L + i * (H - L) / (m - 1)) * x, i = 0 .. m-1; m == 1 gives H * x

Mix kernels
-----------
make_mix_mask   M = (1 - r) + 2r * x', values in [1 - r, 1 + r]
apply_mix_mask  clip(M * x, 0, 1)
admix_mix       x + eta * x'  (the caller applies the scale step afterwards)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage
from scipy.stats import norm

from transfergrad.errors import DomainError, ShapeError


# -- Parameter specs -------------------------------------------------------


class ScaleFamily(str, Enum):
    SIM = "sim"
    BOUNDED = "bounded"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class ScaleSpec:
    """Scale-copy ensemble: ``m`` copies; ``L``/``H`` are ignored by the sim family."""

    m: int = 5
    L: float = 0.1
    H: float = 0.75
    family: ScaleFamily = ScaleFamily.UNIFORM

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", ScaleFamily(self.family))
        if self.m < 1:
            raise DomainError(f"ScaleSpec: m must be >= 1, got {self.m}")
        if self.family is not ScaleFamily.SIM:
            _check_bounds(self.L, self.H)


@dataclass(frozen=True)
class MixSpec:
    """Mix images per copy, mask range ``r`` and Admix ratio ``eta``.

    ``seed`` pins the mix-image sampling stream independently of the attack seed.
    """

    m_mix: int = 3
    r: float = 0.5
    eta: float = 0.2
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.m_mix < 1:
            raise DomainError(f"MixSpec: m_mix must be >= 1, got {self.m_mix}")
        if not 0.0 <= self.r <= 1.0:
            raise DomainError(f"MixSpec: r must lie in [0, 1], got {self.r}")
        if not 0.0 <= self.eta < 1.0:
            raise DomainError(f"MixSpec: eta must lie in [0, 1), got {self.eta}")


@dataclass(frozen=True)
class BaselineParams:
    """DIM and TIM knobs. ``tim_sigma=None`` means ``tim_kernel_size / 3``."""

    dim_probability: float = 0.7
    dim_max_resize: float = 0.1
    tim_kernel_size: int = 7
    tim_sigma: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.dim_probability <= 1.0:
            raise DomainError(
                f"BaselineParams: dim_probability must lie in [0, 1], "
                f"got {self.dim_probability}"
            )
        if not 0.0 <= self.dim_max_resize < 1.0:
            raise DomainError(
                f"BaselineParams: dim_max_resize must lie in [0, 1), "
                f"got {self.dim_max_resize}"
            )
        _check_kernel(self.tim_kernel_size)
        if self.tim_sigma is not None and self.tim_sigma <= 0:
            raise DomainError(f"BaselineParams: tim_sigma must be > 0, got {self.tim_sigma}")


def _check_bounds(L: float, H: float) -> None:
    if not 0.0 <= L <= H <= 1.0:
        raise DomainError(f"scale bounds must satisfy 0 <= L <= H <= 1, got L={L}, H={H}")


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise DomainError(f"kernel size must be odd and >= 1, got {k}")


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _scaled(x: np.ndarray, factor: float) -> np.ndarray:
    x = np.asarray(x)
    return x * x.dtype.type(factor)


# -- Scale copies ----------------------------------------------------------


def sim_scale_factor(i: int) -> float:
    if i < 0:
        raise DomainError(f"scale index must be >= 0, got {i}")
    return math.ldexp(1.0, -i)


def bounded_scale_factor(i: int, L: float, H: float) -> float:
    _check_bounds(L, H)
    return L + (H - L) * sim_scale_factor(i)


def uniform_scale_factor(i: int, m_us: int, L: float, H: float) -> float:
    _check_bounds(L, H)
    if not 0 <= i < m_us:
        raise DomainError(f"uniform scale index {i} out of range for m_us={m_us}")
    if m_us == 1 or i == m_us - 1:
        return H
    return L + i * (H - L) / (m_us - 1)


def scale_factors(spec: ScaleSpec) -> list[float]:
    """Per-copy factors of the ensemble described by *spec*, copy 0 first."""
    if spec.family is ScaleFamily.SIM:
        return [sim_scale_factor(i) for i in range(spec.m)]
    if spec.family is ScaleFamily.BOUNDED:
        return [bounded_scale_factor(i, spec.L, spec.H) for i in range(spec.m)]
    return [uniform_scale_factor(i, spec.m, spec.L, spec.H) for i in range(spec.m)]


def sim_scale(x: np.ndarray, i: int) -> np.ndarray:
    return _scaled(x, sim_scale_factor(i))


def bounded_scale(x: np.ndarray, i: int, L: float, H: float) -> np.ndarray:
    return _scaled(x, bounded_scale_factor(i, L, H))


def uniform_scale(x: np.ndarray, i: int, m_us: int, L: float, H: float) -> np.ndarray:
    return _scaled(x, uniform_scale_factor(i, m_us, L, H))


# -- Mixing ----------------------------------------------------------------


def make_mix_mask(x_mix: np.ndarray, r: float) -> np.ndarray:
    """Multiplicative mask ``(1 - r) + 2r * x_mix`` from an image of another class."""
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"make_mix_mask: r must lie in [0, 1], got {r}")
    x_mix = np.asarray(x_mix)
    if x_mix.size and (x_mix.min() < 0.0 or x_mix.max() > 1.0):
        raise DomainError("make_mix_mask: mix image must lie in [0, 1]")
    dt = x_mix.dtype.type
    mask = dt(1.0 - r) + dt(2.0 * r) * x_mix
    return np.clip(mask, dt(1.0 - r), dt(1.0 + r))


def apply_mix_mask(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    _check_same_shape("apply_mix_mask", x, mask)
    return clip_unit(mask * x)


def admix_mix(x: np.ndarray, x_mix: np.ndarray, eta: float) -> np.ndarray:
    _check_same_shape("admix_mix", x, x_mix)
    if not 0.0 <= eta < 1.0:
        raise DomainError(f"admix_mix: eta must lie in [0, 1), got {eta}")
    return x + x.dtype.type(eta) * x_mix


# -- DIM -------------------------------------------------------------------


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic matrix of 1-D bilinear resampling, half-pixel centres."""
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for j in range(n_out):
        src = (j + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        w = src - lo
        mat[j, lo] += 1.0 - w
        mat[j, hi] += w
    return mat


@dataclass(frozen=True)
class DimTransform:
    """Resize to (height, width) then zero-pad back to ``shape`` at (top, left)."""

    shape: tuple[int, int, int]
    height: int
    width: int
    top: int
    left: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)

    @classmethod
    def create(
        cls, shape: tuple[int, int, int], height: int, width: int, top: int, left: int
    ) -> DimTransform:
        _, h, w = shape
        return cls(
            shape=tuple(shape),
            height=height,
            width=width,
            top=top,
            left=left,
            rows=bilinear_matrix(height, h),
            cols=bilinear_matrix(width, w),
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.shape:
            raise ShapeError(f"DimTransform.apply: expected {self.shape}, got {x.shape}")
        small = np.einsum("ah,chw,bw->cab", self.rows, x, self.cols)
        out = np.zeros(self.shape, dtype=x.dtype)
        out[:, self.top : self.top + self.height, self.left : self.left + self.width] = small
        return out

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        """Transpose of ``apply``: maps a gradient at the output back onto input pixels."""
        if g.shape != self.shape:
            raise ShapeError(f"DimTransform.adjoint: expected {self.shape}, got {g.shape}")
        crop = g[:, self.top : self.top + self.height, self.left : self.left + self.width]
        return np.einsum("ah,cab,bw->chw", self.rows, crop, self.cols).astype(g.dtype)


def _dim_size(n: int, max_fraction: float, rng: np.random.Generator) -> int:
    hi = max(n - 1, 1)
    lo = min(max(math.ceil((1.0 - max_fraction) * n), 1), hi)
    return int(rng.integers(lo, hi + 1))


def draw_dim_transform(
    shape: tuple[int, int, int],
    p: float,
    max_fraction: float,
    rng: np.random.Generator,
) -> DimTransform | None:
    """Draw a resize-and-pad transform with probability *p*; ``None`` means identity."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"dim: probability must lie in [0, 1], got {p}")
    if rng.random() >= p:
        return None
    _, h, w = shape
    nh = _dim_size(h, max_fraction, rng)
    nw = _dim_size(w, max_fraction, rng)
    top = int(rng.integers(0, h - nh + 1))
    left = int(rng.integers(0, w - nw + 1))
    return DimTransform.create(shape, nh, nw, top, left)


def dim_resize_pad(
    x: np.ndarray,
    p: float,
    max_fraction: float,
    rng: np.random.Generator,
) -> np.ndarray:
    t = draw_dim_transform(x.shape, p, max_fraction, rng)
    return x.copy() if t is None else t.apply(x)


# -- TIM -------------------------------------------------------------------


def tim_kernel(kernel_size: int, sigma: float | None = None) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (sum 1)."""
    _check_kernel(kernel_size)
    sigma = kernel_size / 3.0 if sigma is None else sigma
    offsets = np.arange(kernel_size) - kernel_size // 2
    k1d = norm.pdf(offsets, scale=sigma)
    kern = np.outer(k1d, k1d)
    return kern / kern.sum()


def tim_smooth(
    grad: np.ndarray, kernel_size: int = 7, sigma: float | None = None
) -> np.ndarray:
    """Depthwise zero-padded convolution of a (C, H, W) gradient with ``tim_kernel``."""
    kern = tim_kernel(kernel_size, sigma)
    if kernel_size == 1:
        return grad.copy()
    weights = kern.astype(grad.dtype)[None, :, :]
    return ndimage.convolve(grad, weights, mode="constant", cval=0.0)


# -- Clipping --------------------------------------------------------------


def clip_unit(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0).astype(x.dtype, copy=False)


def clip_ball(x: np.ndarray, x0: np.ndarray, eps: float) -> np.ndarray:
    _check_same_shape("clip_ball", x, x0)
    e = x.dtype.type(eps)
    return np.clip(x, x0 - e, x0 + e)
