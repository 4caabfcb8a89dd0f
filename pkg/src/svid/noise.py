"""Noise synthesis, the random sign mask, and adaptive degradation.

Corruptions operate on [0, 1]-scaled intensities and are NOT clipped: the
training pipeline relies on the residuals staying zero-mean, and clipping
would bias them. Values are clipped only when images are exported.

All synthesizers draw from an explicit ``numpy.random.Generator`` so every
corruption is reproducible from (seed, call order) and safe to parallelize
across disjoint streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ShapeError, ValidationError

KINDS = ("gaussian", "speckle", "poisson")

# Speckle variance cap: Uniform(-sqrt(3v), sqrt(3v)) stays within a sane
# multiplicative range for v <= 0.25.
SPECKLE_MAX_VARIANCE = 0.25


@dataclass(frozen=True)
class NoiseSpec:
    """A corruption process: kind plus a fixed level or a uniform range.

    Levels: gaussian sigma on the [0, 1] intensity scale, speckle variance,
    poisson magnitude. A range draws one level per image. Level 0 is
    allowed for gaussian/speckle and degenerates to the identity.
    """

    kind: str
    level: Union[float, tuple]
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.kind not in KINDS:
            problems.append(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        else:
            lo, hi = self.bounds()
            if lo > hi:
                problems.append(f"level range lower bound {lo} exceeds upper bound {hi}")
            if self.kind == "gaussian" and lo < 0:
                problems.append(f"gaussian sigma must be >= 0, got {lo}")
            if self.kind == "speckle" and not (0 <= lo and hi <= SPECKLE_MAX_VARIANCE):
                problems.append(f"speckle variance must be in [0, {SPECKLE_MAX_VARIANCE}], got {self.level}")
            if self.kind == "poisson" and lo <= 0:
                problems.append(f"poisson magnitude must be > 0, got {lo}")
        if problems:
            raise ValidationError("invalid NoiseSpec: " + "; ".join(problems), problems)

    def bounds(self) -> tuple:
        if isinstance(self.level, tuple):
            return float(self.level[0]), float(self.level[1])
        return float(self.level), float(self.level)

    @property
    def is_range(self) -> bool:
        lo, hi = self.bounds()
        return lo != hi

    def sample_level(self, rng: np.random.Generator) -> float:
        """One level draw; fixed specs return the level without consuming
        randomness."""
        lo, hi = self.bounds()
        if lo == hi:
            return lo
        return float(rng.uniform(lo, hi))

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.apply_with_level(x, self.sample_level(rng), rng)

    def apply_with_level(self, x: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return add_gaussian(x, level, rng)
        if self.kind == "speckle":
            return add_speckle(x, level, rng)
        return add_poisson(x, level, rng)


def add_gaussian(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """y = x + n with n ~ N(0, sigma^2) i.i.d. per pixel, unclipped."""
    if sigma < 0:
        raise ValidationError(f"gaussian sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def add_speckle(x: np.ndarray, v: float, rng: np.random.Generator) -> np.ndarray:
    """y = x + x*n with n ~ Uniform(-sqrt(3v), sqrt(3v)): zero mean,
    variance v."""
    if v < 0:
        raise ValidationError(f"speckle variance must be >= 0, got {v}")
    if v == 0:
        return x.copy()
    half = np.sqrt(3.0 * v)
    return x + x * rng.uniform(-half, half, size=x.shape)


def add_poisson(x: np.ndarray, lam: float, rng: np.random.Generator) -> np.ndarray:
    """y = Poisson(lam * x) / lam per pixel: E[y|x] = x, Var[y|x] = x/lam.

    lam is a pure noise-scale knob; larger lam means less noise.
    """
    if lam <= 0:
        raise ValidationError(f"poisson magnitude must be > 0, got {lam}")
    if np.any(x < 0):
        raise ValidationError("poisson noise requires nonnegative intensities")
    return rng.poisson(lam * x).astype(np.float64) / lam


def sample_mask(shape, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    """Array of +1 (probability p) and -1 entries, i.i.d., drawn fresh per
    call."""
    if not 0.0 < p < 1.0:
        raise ValidationError(f"mask probability must be in (0, 1), got {p}")
    return np.where(rng.random(shape) < p, 1.0, -1.0)


def degrade(f_y: np.ndarray, y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Re-noise a denoised image with its own sign-flipped residual.

    Returns f_y + m * (y - f_y): the removed residual y - f_y is put back
    with random signs, so the result keeps the denoised content, has the
    same per-pixel residual magnitude as y, and averages back to f_y over
    masks. Pure function, no clipping.

    Where m is +1 the result is y bitwise. Where m is -1 the value
    f_y - (y - f_y) carries one float64 rounding, so the recomputed
    residual magnitude can differ from |y - f_y| by one ulp.
    """
    if not (f_y.shape == y.shape == m.shape):
        raise ShapeError(f"degrade: shapes differ: f_y {f_y.shape}, y {y.shape}, m {m.shape}")
    return np.where(m > 0.0, y, f_y + m * (y - f_y))
