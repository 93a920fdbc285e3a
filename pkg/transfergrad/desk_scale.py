"""
Desk-scale experiments: white-box potency, attack ordering and scale-copy degradation.

All three share one setup: a synthetic dataset, the four-model default roster trained with
different seeds, and an MLP surrogate. They are slow (minutes), so tests run them only with
``TRANSFERGRAD_DESK_SCALE=1``; ``scripts/desk_scale_check.py`` runs them from the shell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from transfergrad import datasets as ds
from transfergrad import evalharness as ev
from transfergrad import models as md
from transfergrad import transforms as tf
from transfergrad.attacks import AttackBudget, AttackConfig, AttackFamily

logger = logging.getLogger(__name__)

ORDERING = ("us_mm", "admix", "sim", "mifgsm")
POTENCY_THRESHOLD = 0.95
USM_SLACK = 0.02
M_GRID = [float(m) for m in range(1, 13)]


@dataclass(frozen=True)
class DeskScaleSetup:
    splits: ds.DatasetSplits
    models: dict[str, md.Classifier]
    surrogate: str
    seed: int

    @property
    def budget(self) -> AttackBudget:
        return AttackBudget.from_pixels(16, 10)


def build_setup(
    seed: int = 0,
    *,
    classes: int = 8,
    per_class: int = 300,
    image_size: int = 16,
    attack_size: int = 200,
    epochs: int = 10,
    surrogate: str = "mlp_a",
    contrast: float = ds.DEFAULT_CONTRAST,
    quiet: bool = True,
) -> DeskScaleSetup:
    data = ds.gen_synthetic(classes, per_class, image_size, seed, contrast=contrast)
    splits = ds.split_dataset(data, seed, attack_size=attack_size)
    models: dict[str, md.Classifier] = {}
    for i, (name, spec) in enumerate(md.default_roster(splits.image_shape, classes).items()):
        cfg = md.TrainConfig(epochs=epochs, seed=seed + i)
        result = md.train(md.build(spec, seed + i), splits.train, cfg, quiet=quiet)
        models[name] = result.model
        acc = md.accuracy(result.model, splits.test.images, splits.test.labels)
        logger.info("%s: test accuracy %.3f", name, acc)
    return DeskScaleSetup(splits=splits, models=models, surrogate=surrogate, seed=seed)


# -- Experiments -----------------------------------------------------------


def white_box_potency(setup: DeskScaleSetup, *, threads: int = 1) -> float:
    """MI-FGSM success on the surrogate itself, among images it classifies correctly."""
    cfg = AttackConfig(AttackFamily.MIFGSM, setup.seed, budget=setup.budget)
    model = setup.models[setup.surrogate]
    attack = setup.splits.attack
    batch = ev.craft_adversarials(model, attack, cfg, threads=threads)
    rates = ev.success_rate(model, batch.adversarials, attack.labels, attack.images)
    return rates.filtered_rate or 0.0


def ordering_configs(seed: int, budget: AttackBudget) -> dict[str, AttackConfig]:
    return {name: AttackConfig(name, seed, budget=budget) for name in ORDERING}


def attack_ordering(
    setup: DeskScaleSetup, seeds: list[int], *, threads: int = 1
) -> dict[str, float]:
    """Mean transfer rate per attack; victims are every model but the surrogate."""
    return ev.compare_attacks(
        ordering_configs(setup.seed, setup.budget),
        setup.models,
        setup.splits.attack,
        surrogate=setup.surrogate,
        seeds=seeds,
        mix_pool=setup.splits.train,
        threads=threads,
    )


def ordering_holds(rates: dict[str, float]) -> bool:
    """Non-increasing along ``ORDERING`` with the first attack strictly above the last."""
    values = [rates[name] for name in ORDERING]
    monotone = all(a >= b for a, b in zip(values, values[1:]))
    return monotone and values[0] > values[-1]


@dataclass(frozen=True)
class DegradationResult:
    sim_curve: list[float]
    usm_curve: list[float]
    grid: list[float] = field(default_factory=lambda: list(M_GRID))

    @property
    def sim_peak_index(self) -> int:
        return int(np.argmax(self.sim_curve))

    @property
    def sim_degrades(self) -> bool:
        return self.sim_curve[-1] < max(self.sim_curve)

    @property
    def usm_holds(self) -> bool:
        return self.usm_curve[-1] >= self.usm_curve[self.sim_peak_index] - USM_SLACK


def scale_degradation(
    setup: DeskScaleSetup, seeds: list[int], *, threads: int = 1
) -> DegradationResult:
    """Transfer rate of SIM and USM (L=0.1, H=0.75) as the copy count m grows to 12."""
    bases = {
        "sim": AttackConfig(AttackFamily.SIM, setup.seed, budget=setup.budget),
        "usm": AttackConfig(
            AttackFamily.USM,
            setup.seed,
            budget=setup.budget,
            scale=tf.ScaleSpec(L=0.1, H=0.75),
        ),
    }
    curves: dict[str, list[float]] = {}
    for name, base in bases.items():
        report = ev.ablation_sweep(
            "m",
            M_GRID,
            base,
            setup.models,
            setup.splits.attack,
            surrogate=setup.surrogate,
            seeds=seeds,
            threads=threads,
        )
        curves[name] = report.mean_curve()
        logger.info("%s over m: %s", name, ", ".join(f"{v:.3f}" for v in curves[name]))
    return DegradationResult(sim_curve=curves["sim"], usm_curve=curves["usm"])
