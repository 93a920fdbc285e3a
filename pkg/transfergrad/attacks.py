"""
Iterative L-infinity transfer attacks built from gradient ensembles over input transforms.

Every iteration computes an aggregated gradient ``G`` over the family's transform ensemble,
folds it into the momentum accumulator (all families except fgsm and bim), then takes a
sign step of size ``alpha`` followed by clipping to the epsilon ball and to [0, 1].

Ensembles (gradient queries per iteration)
------------------------------------------
fgsm, bim, mifgsm   identity                                     1
dim                 random resize-and-pad, gradient mapped back    1
tim                 identity, gradient smoothed with a Gaussian    1
sim                 x / 2**i                                      m
bsm                 (L + (H - L) / 2**i) * x                      m
usm                 (L + i * (H - L) / (m - 1)) * x               m
mm                  clip(M_j * x), one mask per mix image         m_mix
admix               x / 2**i applied to x + eta * x'_j            m * m_mix
sim_mm              clip(M_ij * x / 2**i)                         m * m_mix
us_mm               clip(M_ij * U_i(x))                           m * m_mix

Gradients are taken with respect to the transformed input and summed unchanged, except for
dim (always mapped back through the transform's adjoint, since resize-and-pad moves pixels)
and when ``jacobian_correction`` is set (multiply by the per-pixel transform derivative).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from transfergrad import transforms as tf
from transfergrad.datasets import Dataset
from transfergrad.errors import AttackError, ConfigError, DataError, NumericalError, ShapeError
from transfergrad.models import Classifier, loss_and_input_grad
from transfergrad.utils.rng import stream as rng_stream

logger = logging.getLogger(__name__)

PIXEL_SCALE = 255.0
BUDGET_TOLERANCE = 1e-6


class AttackFamily(str, Enum):
    FGSM = "fgsm"
    BIM = "bim"
    MIFGSM = "mifgsm"
    DIM = "dim"
    TIM = "tim"
    SIM = "sim"
    BSM = "bsm"
    ADMIX = "admix"
    USM = "usm"
    MM = "mm"
    SIM_MM = "sim_mm"
    US_MM = "us_mm"

    @classmethod
    def parse(cls, value: str | AttackFamily) -> AttackFamily:
        try:
            return cls(value)
        except ValueError as e:
            valid = ", ".join(f.value for f in cls)
            raise ConfigError(f"unknown attack family {value!r}; valid families: {valid}") from e


MIX_FAMILIES = frozenset(
    {AttackFamily.MM, AttackFamily.ADMIX, AttackFamily.SIM_MM, AttackFamily.US_MM}
)
MOMENTUM_FREE = frozenset({AttackFamily.FGSM, AttackFamily.BIM})
SCALE_FAMILY = {
    AttackFamily.SIM: tf.ScaleFamily.SIM,
    AttackFamily.ADMIX: tf.ScaleFamily.SIM,
    AttackFamily.SIM_MM: tf.ScaleFamily.SIM,
    AttackFamily.BSM: tf.ScaleFamily.BOUNDED,
    AttackFamily.USM: tf.ScaleFamily.UNIFORM,
    AttackFamily.US_MM: tf.ScaleFamily.UNIFORM,
}


# -- Configuration ---------------------------------------------------------


@dataclass(frozen=True)
class AttackBudget:
    """L-infinity radius ``epsilon`` (unit pixel scale), ``iterations`` and step ``alpha``."""

    epsilon: float = 16.0 / PIXEL_SCALE
    iterations: int = 10
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.epsilon / self.iterations)
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.alpha * self.iterations < self.epsilon * (1 - 1e-9):
            raise ConfigError(
                f"alpha * iterations ({self.alpha * self.iterations:.6g}) "
                f"cannot reach epsilon ({self.epsilon:.6g})"
            )

    @classmethod
    def from_pixels(
        cls, epsilon: float, iterations: int = 10, alpha: float | None = None
    ) -> AttackBudget:
        """Budget given on the 0-255 scale."""
        return cls(
            epsilon=epsilon / PIXEL_SCALE,
            iterations=iterations,
            alpha=None if alpha is None else alpha / PIXEL_SCALE,
        )


@dataclass(frozen=True)
class AttackConfig:
    family: AttackFamily
    seed: int
    budget: AttackBudget = field(default_factory=AttackBudget)
    momentum: float = 1.0
    scale: tf.ScaleSpec = field(default_factory=tf.ScaleSpec)
    mix: tf.MixSpec = field(default_factory=tf.MixSpec)
    baseline: tf.BaselineParams = field(default_factory=tf.BaselineParams)
    jacobian_correction: bool = False
    fixed_mix_pool: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", AttackFamily.parse(self.family))
        if self.seed is None:
            raise ConfigError("attack seed is required")
        if self.momentum < 0:
            raise ConfigError(f"momentum must be >= 0, got {self.momentum}")
        wanted = SCALE_FAMILY.get(self.family)
        if wanted is not None and self.scale.family is not wanted:
            object.__setattr__(self, "scale", replace(self.scale, family=wanted))

    @property
    def uses_mix(self) -> bool:
        return self.family in MIX_FAMILIES

    @property
    def uses_momentum(self) -> bool:
        return self.family not in MOMENTUM_FREE

    @property
    def effective_budget(self) -> AttackBudget:
        if self.family is AttackFamily.FGSM:
            eps = self.budget.epsilon
            return AttackBudget(epsilon=eps, iterations=1, alpha=eps)
        return self.budget

    def ensemble_size(self) -> int:
        """Gradient queries per iteration."""
        f = self.family
        if f in (AttackFamily.SIM, AttackFamily.BSM, AttackFamily.USM):
            return self.scale.m
        if f is AttackFamily.MM:
            return self.mix.m_mix
        if f in (AttackFamily.ADMIX, AttackFamily.SIM_MM, AttackFamily.US_MM):
            return self.scale.m * self.mix.m_mix
        return 1


@dataclass(frozen=True)
class MomentumState:
    g: np.ndarray
    mu: float = 1.0
    stagnant: bool = False

    @classmethod
    def zeros(cls, shape: tuple[int, ...], mu: float, dtype=np.float32) -> MomentumState:
        return cls(g=np.zeros(shape, dtype=dtype), mu=mu)


@dataclass(frozen=True)
class GradientEstimate:
    """Aggregated gradient ``grad`` plus the number of model queries and the mean loss."""

    grad: np.ndarray
    queries: int
    loss: float


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray
    loss_trace: list[float]
    queries: int
    elapsed: float
    stagnant_steps: int = 0

    def linf(self, original: np.ndarray) -> float:
        return float(np.max(np.abs(self.adversarial.astype(np.float64) - original)))


# -- Mix images ------------------------------------------------------------


def sample_mix_images(
    dataset: Dataset, y: int, m_mix: int, rng: np.random.Generator
) -> Dataset:
    """``m_mix`` examples drawn uniformly without replacement among labels != y."""
    candidates = np.flatnonzero(dataset.labels != y)
    if len(candidates) < m_mix:
        raise DataError(
            f"need {m_mix} mix images with label != {y}, only {len(candidates)} available"
        )
    return dataset.subset(rng.choice(candidates, size=m_mix, replace=False))


def _validate_pool(pool: Dataset | None, y: int, family: AttackFamily) -> Dataset:
    if pool is None or len(pool) == 0:
        raise AttackError(f"{family.value} needs a non-empty mix pool")
    if np.any(pool.labels == y):
        raise AttackError(f"mix pool contains images with the true label {y}")
    return pool


# -- Gradient aggregation --------------------------------------------------


def _unclipped(pre: np.ndarray) -> np.ndarray:
    return ((pre >= 0.0) & (pre <= 1.0)).astype(pre.dtype)


def aggregate_gradient(
    model: Classifier,
    x_t: np.ndarray,
    y: int,
    cfg: AttackConfig,
    mix_pool: Dataset | None,
    rng: np.random.Generator,
    *,
    mix_rng: np.random.Generator | None = None,
) -> GradientEstimate:
    """
    Sum of loss gradients over the family's transform ensemble at ``x_t``.

    ``mix_pool`` must hold only images whose label differs from ``y``. With
    ``cfg.fixed_mix_pool`` its first ``m_mix`` images are used for every copy; otherwise
    mix images are redrawn from it with ``mix_rng`` (default ``rng``).
    """
    x_t = np.asarray(x_t, dtype=np.float32)
    family = cfg.family
    mix_rng = rng if mix_rng is None else mix_rng
    dt = x_t.dtype.type
    grad = np.zeros_like(x_t)
    losses: list[float] = []

    def query(x_in: np.ndarray) -> np.ndarray:
        loss, g = loss_and_input_grad(model, x_in, y)
        losses.append(loss)
        return g

    pool = _validate_pool(mix_pool, y, family) if cfg.uses_mix else None

    def draw_mix() -> np.ndarray:
        if cfg.fixed_mix_pool:
            if len(pool) < cfg.mix.m_mix:
                raise DataError(
                    f"fixed mix pool has {len(pool)} images, need {cfg.mix.m_mix}"
                )
            return pool.images[: cfg.mix.m_mix]
        return sample_mix_images(pool, y, cfg.mix.m_mix, mix_rng).images

    if family in (AttackFamily.FGSM, AttackFamily.BIM, AttackFamily.MIFGSM):
        grad = grad + query(x_t)

    elif family is AttackFamily.DIM:
        b = cfg.baseline
        t = tf.draw_dim_transform(x_t.shape, b.dim_probability, b.dim_max_resize, rng)
        grad = grad + (query(x_t) if t is None else t.adjoint(query(t.apply(x_t))))

    elif family is AttackFamily.TIM:
        b = cfg.baseline
        grad = grad + tf.tim_smooth(query(x_t), b.tim_kernel_size, b.tim_sigma)

    elif family in (AttackFamily.SIM, AttackFamily.BSM, AttackFamily.USM):
        for s in tf.scale_factors(cfg.scale):
            g = query(x_t * dt(s))
            grad = grad + (g * dt(s) if cfg.jacobian_correction else g)

    elif family is AttackFamily.MM:
        for x_mix in draw_mix():
            mask = tf.make_mix_mask(x_mix, cfg.mix.r)
            g = query(tf.apply_mix_mask(x_t, mask))
            if cfg.jacobian_correction:
                g = g * mask * _unclipped(mask * x_t)
            grad = grad + g

    elif family is AttackFamily.ADMIX:
        mixes = draw_mix()
        for s in tf.scale_factors(cfg.scale):
            for x_mix in mixes:
                g = query(tf.admix_mix(x_t, x_mix, cfg.mix.eta) * dt(s))
                grad = grad + (g * dt(s) if cfg.jacobian_correction else g)

    elif family in (AttackFamily.SIM_MM, AttackFamily.US_MM):
        for s in tf.scale_factors(cfg.scale):
            x_scaled = x_t * dt(s)
            for x_mix in draw_mix():
                mask = tf.make_mix_mask(x_mix, cfg.mix.r)
                g = query(tf.apply_mix_mask(x_scaled, mask))
                if cfg.jacobian_correction:
                    g = g * dt(s) * mask * _unclipped(mask * x_scaled)
                grad = grad + g

    else:  # pragma: no cover
        raise ConfigError(f"unhandled attack family {family}")

    return GradientEstimate(
        grad=grad.astype(np.float32, copy=False),
        queries=len(losses),
        loss=float(np.mean(losses)),
    )


# -- Momentum and the attack loop -----------------------------------------


def momentum_step(state: MomentumState, G: np.ndarray) -> MomentumState:
    """``g <- mu * g + G / mean|G|``; a zero ``G`` keeps ``mu * g`` and flags stagnation."""
    if G.shape != state.g.shape:
        raise ShapeError(f"momentum_step: gradient {G.shape} vs accumulator {state.g.shape}")
    mu = state.g.dtype.type(state.mu)
    norm = np.mean(np.abs(G))
    if norm == 0:
        return MomentumState(g=mu * state.g, mu=state.mu, stagnant=True)
    return MomentumState(g=mu * state.g + G / norm, mu=state.mu)


def run_attack(
    model: Classifier,
    x: np.ndarray,
    y: int,
    cfg: AttackConfig,
    mix_pool: Dataset | None = None,
    *,
    stream: int = 0,
) -> AttackResult:
    """
    Craft one adversarial example for ``(x, y)`` on ``model``.

    ``mix_pool`` is any dataset; candidates with label ``y`` are dropped before use.
    ``stream`` selects the per-image random stream, so results do not depend on the order
    images are processed in.
    """
    started = time.perf_counter()
    x0 = np.array(x, dtype=np.float32)
    if x0.shape != model.spec.input_shape:
        raise ShapeError(f"run_attack: expected {model.spec.input_shape}, got {x0.shape}")
    if x0.min() < 0.0 or x0.max() > 1.0:
        raise AttackError("run_attack: input image must lie in [0, 1]")

    rng = rng_stream(cfg.seed, stream, 0)
    mix_seed = cfg.seed if cfg.mix.seed is None else cfg.mix.seed
    mix_rng = rng_stream(mix_seed, stream, 1)

    pool: Dataset | None = None
    if cfg.uses_mix:
        if mix_pool is None:
            raise AttackError(f"{cfg.family.value} needs a mix pool")
        pool = mix_pool.subset(np.flatnonzero(mix_pool.labels != y))
        if len(pool) == 0:
            raise AttackError(f"mix pool has no image with a label other than {y}")
        if cfg.fixed_mix_pool:
            pool = sample_mix_images(pool, y, cfg.mix.m_mix, mix_rng)

    budget = cfg.effective_budget
    eps = budget.epsilon
    step = np.float32(budget.alpha)
    state = MomentumState.zeros(x0.shape, cfg.momentum)
    x_adv = x0.copy()
    trace: list[float] = []
    queries = 0
    stagnant = 0

    for _ in range(budget.iterations):
        est = aggregate_gradient(model, x_adv, y, cfg, pool, rng, mix_rng=mix_rng)
        trace.append(est.loss)
        queries += est.queries
        if cfg.uses_momentum:
            state = momentum_step(state, est.grad)
            stagnant += int(state.stagnant)
            direction = state.g
        else:
            direction = est.grad
        x_adv = x_adv + step * np.sign(direction).astype(np.float32)
        x_adv = tf.clip_unit(tf.clip_ball(x_adv, x0, eps))

    result = AttackResult(
        adversarial=x_adv,
        loss_trace=trace,
        queries=queries,
        elapsed=time.perf_counter() - started,
        stagnant_steps=stagnant,
    )
    linf = result.linf(x0)
    if linf > eps + BUDGET_TOLERANCE:
        raise NumericalError(
            f"{cfg.family.value}: perturbation {linf:.8f} exceeds epsilon {eps:.8f}"
        )
    logger.debug(
        "%s stream %d: loss %.4f -> %.4f, %d queries",
        cfg.family.value,
        stream,
        trace[0],
        trace[-1],
        queries,
    )
    return result
