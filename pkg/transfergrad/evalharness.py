"""
Transfer evaluation: success metrics, budget audits, transfer matrices and ablation sweeps.

Work is ordered surrogate -> attack -> victim. Each (surrogate, attack) cell crafts its
adversarials once and scores them on every victim. Image ``i`` of the attack split always
uses random stream ``i`` of the cell seed, so every attack sees the same per-image streams
and thread scheduling cannot change results.

Set ``TRANSFERGRAD_TELEMETRY=1`` to print per-cell attack telemetry to stdout; INFO logs
carry the same counts.
"""

from __future__ import annotations

import logging
import math
import os
from collections import defaultdict
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from transfergrad import transforms as tf
from transfergrad.attacks import (
    BUDGET_TOLERANCE,
    SCALE_FAMILY,
    AttackConfig,
    AttackFamily,
    AttackResult,
    run_attack,
)
from transfergrad.datasets import Dataset
from transfergrad.errors import ConfigError, DataError, NumericalError, ShapeError
from transfergrad.models import Classifier, predict
from transfergrad.report_csv import RankedRow, SweepRow, SweepSummaryRow, TransferRow

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("L", "H", "r", "m")

# -- Metrics ---------------------------------------------------------------

@dataclass(frozen=True)
class SuccessRates:
    raw_rate: float
    filtered_rate: float | None
    clean_error: float
    n: int
    n_clean_correct: int

def success_rate(
    model: Classifier,
    adversarials: np.ndarray,
    labels: np.ndarray,
    originals: np.ndarray,
) -> SuccessRates:
    """
    Raw rate: share of adversarials misclassified. Filtered rate: the same share among
    images the model gets right when clean; ``None`` when it gets none right.
    """
    labels = np.asarray(labels)
    if not len(adversarials) == len(labels) == len(originals):
        raise ShapeError(
            f"success_rate: {len(adversarials)} adversarials, {len(labels)} labels, "
            f"{len(originals)} originals"
        )
    n = len(labels)
    if n == 0:
        raise DataError("success_rate: no images to score")
    fooled = predict(model, adversarials) != labels
    clean_ok = predict(model, originals) == labels
    n_ok = int(clean_ok.sum())
    return SuccessRates(
        raw_rate=float(fooled.mean()),
        filtered_rate=float(fooled[clean_ok].mean()) if n_ok else None,
        clean_error=1.0 - n_ok / n,
        n=n,
        n_clean_correct=n_ok,
    )

def audit_budget(
    adversarials: np.ndarray,
    originals: np.ndarray,
    epsilon: float,
    tolerance: float = BUDGET_TOLERANCE,
) -> float:
    """Re-check every adversarial against the epsilon ball and [0, 1]; returns max L-inf."""
    if adversarials.shape != originals.shape:
        raise ShapeError(
            f"audit_budget: adversarials {adversarials.shape} vs originals {originals.shape}"
        )
    if adversarials.size == 0:
        return 0.0
    diff = np.abs(adversarials.astype(np.float64) - originals.astype(np.float64))
    per_image = diff.reshape(len(diff), -1).max(axis=1)
    worst = float(per_image.max())
    over = int((per_image > epsilon + tolerance).sum())
    if over:
        raise NumericalError(
            f"budget audit failed: {over} adversarials exceed epsilon {epsilon:.6f} "
            f"(worst {worst:.6f})"
        )
    if adversarials.min() < 0.0 or adversarials.max() > 1.0:
        raise NumericalError("budget audit failed: adversarial pixels outside [0, 1]")
    return worst

def median_loss_curve(traces: Sequence[Sequence[float]]) -> np.ndarray:
    """Per-iteration median of the surrogate loss over images."""
    return np.median(np.asarray(traces, dtype=np.float64), axis=0)

def non_decreasing_fraction(traces: Sequence[Sequence[float]]) -> float:
    """Share of loss traces that never decrease from one iteration to the next."""
    if not traces:
        return 0.0
    arr = np.asarray(traces, dtype=np.float64)
    return float(np.mean(np.all(np.diff(arr, axis=1) >= 0, axis=1)))

# -- Crafting --------------------------------------------------------------

@dataclass
class AttackTelemetry:
    """Counts for one (surrogate, attack) cell."""

    images: int = 0
    queries: int = 0
    stagnant_steps: int = 0
    elapsed: float = 0.0

    def add(self, result: AttackResult) -> None:
        self.images += 1
        self.queries += result.queries
        self.stagnant_steps += result.stagnant_steps
        self.elapsed += result.elapsed

    def log_summary(self, label: str) -> None:
        msg = (
            f"attack telemetry {label}: images={self.images} queries={self.queries} "
            f"stagnant_steps={self.stagnant_steps} elapsed={self.elapsed:.2f}s"
        )
        logger.info(msg)
        if os.environ.get("TRANSFERGRAD_TELEMETRY", "").strip().lower() in ("1", "true", "yes"):
            print(msg, flush=True)

@dataclass(frozen=True, eq=False)
class CraftedBatch:
    adversarials: np.ndarray
    loss_traces: list[list[float]]
    telemetry: AttackTelemetry
    max_linf: float

def craft_adversarials(
    model: Classifier,
    attack_set: Dataset,
    cfg: AttackConfig,
    mix_pool: Dataset | None = None,
    *,
    threads: int = 1,
    quiet: bool = True,
    desc: str = "attack",
) -> CraftedBatch:
    """Run ``cfg`` on every image of *attack_set*; image ``i`` uses stream ``i``."""
    from tqdm import tqdm

    if len(attack_set) == 0:
        raise DataError("attack split is empty")

    def one(i: int) -> AttackResult:
        return run_attack(
            model, attack_set.images[i], int(attack_set.labels[i]), cfg, mix_pool, stream=i
        )

    indices = range(len(attack_set))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(
                tqdm(ex.map(one, indices), total=len(attack_set), desc=desc, disable=quiet)
            )
    else:
        results = [one(i) for i in tqdm(indices, desc=desc, disable=quiet)]

    telemetry = AttackTelemetry()
    for r in results:
        telemetry.add(r)
    adversarials = np.stack([r.adversarial for r in results])
    max_linf = audit_budget(adversarials, attack_set.images, cfg.effective_budget.epsilon)
    return CraftedBatch(
        adversarials=adversarials,
        loss_traces=[r.loss_trace for r in results],
        telemetry=telemetry,
        max_linf=max_linf,
    )

# -- Transfer matrix -------------------------------------------------------

@dataclass(frozen=True)
class TransferReport:
    rows: list[TransferRow]
    metadata: dict = field(default_factory=dict)

    def cell(self, surrogate: str, victim: str, attack: str) -> TransferRow:
        for row in self.rows:
            if (row.surrogate, row.victim, row.attack) == (surrogate, victim, attack):
                return row
        raise KeyError((surrogate, victim, attack))

def score_adversarials(
    surrogate: str,
    attack: str,
    adversarials: np.ndarray,
    attack_set: Dataset,
    victims: Mapping[str, Classifier],
    seed: int,
) -> list[TransferRow]:
    """One report row per victim for adversarials crafted on *surrogate*."""
    rows: list[TransferRow] = []
    for victim_name, victim in victims.items():
        rates = success_rate(victim, adversarials, attack_set.labels, attack_set.images)
        rows.append(
            TransferRow(
                surrogate=surrogate,
                victim=victim_name,
                attack=attack,
                raw_rate=rates.raw_rate,
                filtered_rate=rates.filtered_rate,
                clean_error=rates.clean_error,
                n=rates.n,
                seed=seed,
            )
        )
    return rows

OnCrafted = Callable[[str, str, AttackConfig, CraftedBatch], None]

def transfer_matrix(
    models: Mapping[str, Classifier],
    attack_cfgs: Mapping[str, AttackConfig],
    attack_set: Dataset,
    seed: int,
    *,
    mix_pool: Dataset | None = None,
    surrogates: Sequence[str] | None = None,
    threads: int = 1,
    quiet: bool = True,
    on_crafted: OnCrafted | None = None,
) -> TransferReport:
    """
    Craft on each surrogate with each attack, score on every model.

    Every attack runs with ``seed`` as its seed so per-image streams are paired across
    attacks. ``on_crafted`` sees each cell's adversarials (used to write archives).
    """
    if len(models) < 2:
        raise ConfigError(f"transfer_matrix needs at least 2 models, got {len(models)}")
    if len(attack_set) == 0:
        raise DataError("attack split is empty")
    names = list(surrogates) if surrogates is not None else list(models)
    unknown = [n for n in names if n not in models]
    if unknown:
        raise ConfigError(f"unknown surrogate(s): {', '.join(unknown)}")

    rows: list[TransferRow] = []
    for surrogate in names:
        for attack_name, cfg in attack_cfgs.items():
            cfg = replace(cfg, seed=seed)
            batch = craft_adversarials(
                models[surrogate],
                attack_set,
                cfg,
                mix_pool,
                threads=threads,
                quiet=quiet,
                desc=f"{surrogate}/{attack_name}",
            )
            batch.telemetry.log_summary(f"{surrogate}/{attack_name}")
            if on_crafted is not None:
                on_crafted(surrogate, attack_name, cfg, batch)
            rows.extend(
                score_adversarials(
                    surrogate, attack_name, batch.adversarials, attack_set, models, seed
                )
            )
    return TransferReport(
        rows=rows,
        metadata={
            "seed": seed,
            "surrogates": names,
            "attacks": list(attack_cfgs),
            "victims": list(models),
            "n": len(attack_set),
        },
    )

def ranked_summary(rows: Sequence[TransferRow]) -> list[RankedRow]:
    """Per attack: mean off-diagonal raw/filtered rate and mean white-box rate, best first."""
    transfer_raw: dict[str, list[float]] = defaultdict(list)
    transfer_filtered: dict[str, list[float]] = defaultdict(list)
    white_box: dict[str, list[float]] = defaultdict(list)
    order: list[str] = []
    for row in rows:
        if row.attack not in order:
            order.append(row.attack)
        if row.white_box:
            white_box[row.attack].append(row.raw_rate)
            continue
        transfer_raw[row.attack].append(row.raw_rate)
        if row.filtered_rate is not None:
            transfer_filtered[row.attack].append(row.filtered_rate)

    def mean(values: list[float]) -> float | None:
        return float(np.mean(values)) if values else None

    summary = [
        (
            attack,
            mean(transfer_raw[attack]),
            mean(transfer_filtered[attack]),
            mean(white_box[attack]),
            len(transfer_raw[attack]) + len(white_box[attack]),
        )
        for attack in order
    ]
    summary.sort(key=lambda s: -math.inf if s[1] is None else s[1], reverse=True)
    return [
        RankedRow(
            rank=i + 1,
            attack=attack,
            transfer_raw_rate=raw,
            transfer_filtered_rate=filt,
            white_box_raw_rate=wb,
            cells=cells,
        )
        for i, (attack, raw, filt, wb, cells) in enumerate(summary)
    ]

# -- Grids and sweeps ------------------------------------------------------

def parse_grid(text: str) -> list[float]:
    """``"start:stop:step"`` (stop inclusive) or a comma list; must be strictly increasing."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0:
                raise ConfigError(f"grid step must be > 0 in {text!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + i * step, 10) for i in range(max(count, 0))]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse grid {text!r}: {e}") from e
    check_grid(values)
    return values

def check_grid(values: Sequence[float]) -> None:
    if not values:
        raise ConfigError("grid is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"grid must be strictly increasing, got {list(values)}")

def with_parameter(cfg: AttackConfig, parameter: str, value: float) -> AttackConfig:
    """Copy of *cfg* with one swept parameter replaced."""
    try:
        if parameter == "L":
            return replace(cfg, scale=replace(cfg.scale, L=float(value)))
        if parameter == "H":
            return replace(cfg, scale=replace(cfg.scale, H=float(value)))
        if parameter == "r":
            return replace(cfg, mix=replace(cfg.mix, r=float(value)))
        if parameter == "m":
            if float(value) != int(value):
                raise ConfigError(f"m must be an integer, got {value}")
            return replace(cfg, scale=replace(cfg.scale, m=int(value)))
    except ConfigError as e:
        raise ConfigError(f"illegal value {value} for parameter {parameter}: {e}") from e
    valid = ", ".join(SWEEP_PARAMETERS)
    raise ConfigError(f"unknown sweep parameter {parameter!r}; valid: {valid}")

@dataclass(frozen=True)
class AblationPreset:
    """Grid and fixed settings of one standard ablation."""

    parameter: str
    grid: str
    family: AttackFamily
    fixed: dict[str, float]

ABLATION_PRESETS: dict[str, AblationPreset] = {
    "L": AblationPreset("L", "0:0.3:0.05", AttackFamily.US_MM, {"H": 0.75, "r": 0.0}),
    "H": AblationPreset("H", "0.5:1.0:0.05", AttackFamily.US_MM, {"L": 0.1, "r": 0.0}),
    "r": AblationPreset("r", "0:0.8:0.1", AttackFamily.US_MM, {"L": 0.1, "H": 0.75}),
    "m": AblationPreset("m", "1:12:1", AttackFamily.USM, {"L": 0.1, "H": 0.75}),
}

MASK_FAMILIES = frozenset({AttackFamily.MM, AttackFamily.SIM_MM, AttackFamily.US_MM})

def check_sweepable(parameter: str, family: AttackFamily) -> None:
    """Raise ``ConfigError`` when *parameter* has no effect on *family*."""
    if parameter not in SWEEP_PARAMETERS:
        valid = ", ".join(SWEEP_PARAMETERS)
        raise ConfigError(f"unknown sweep parameter {parameter!r}; valid: {valid}")
    scale_family = SCALE_FAMILY.get(family)
    if parameter == "r":
        usable = family in MASK_FAMILIES
    elif parameter == "m":
        usable = scale_family is not None
    else:
        usable = scale_family in (tf.ScaleFamily.BOUNDED, tf.ScaleFamily.UNIFORM)
    if not usable:
        raise ConfigError(f"parameter {parameter} has no effect on attack family {family.value}")

def preset_config(
    parameter: str, base: AttackConfig | None = None, *, seed: int = 0
) -> tuple[list[float], AttackConfig]:
    """Grid and base config of the standard ablation for *parameter*.

    A given *base* is swept as is: only the grid comes from the preset, and the
    parameter must act on its family. Without one the preset family and fixed
    values apply.
    """
    if parameter not in ABLATION_PRESETS:
        raise ConfigError(
            f"no ablation preset for {parameter!r}; valid: {', '.join(ABLATION_PRESETS)}"
        )
    preset = ABLATION_PRESETS[parameter]
    if base is not None:
        check_sweepable(parameter, base.family)
        return parse_grid(preset.grid), base
    cfg = AttackConfig(family=preset.family, seed=seed)
    for key, value in preset.fixed.items():
        cfg = with_parameter(cfg, key, value)
    return parse_grid(preset.grid), cfg

@dataclass(frozen=True)
class SweepReport:
    parameter: str
    grid: list[float]
    surrogate: str
    rows: list[SweepRow]

    def summary(self) -> list[SweepSummaryRow]:
        return summarize_sweep(self.rows)

    def mean_curve(self) -> list[float]:
        """Mean raw rate over victims and seeds, one entry per grid value."""
        means = {
            r.value: r.raw_rate for r in self.summary() if r.victim == "mean"
        }
        return [means[v] for v in self.grid]

def sweep_seeds(seed: int, count: int) -> list[int]:
    if count < 1:
        raise ConfigError(f"sweep seed count must be >= 1, got {count}")
    return [seed + i for i in range(count)]

def ablation_sweep(
    parameter: str,
    grid: Sequence[float],
    base_cfg: AttackConfig,
    models: Mapping[str, Classifier],
    attack_set: Dataset,
    *,
    surrogate: str,
    seeds: Sequence[int],
    mix_pool: Dataset | None = None,
    threads: int = 1,
    quiet: bool = True,
) -> SweepReport:
    """Success rate per grid value, victim and seed with the surrogate held fixed."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"unknown sweep parameter {parameter!r}; valid: {', '.join(SWEEP_PARAMETERS)}"
        )
    check_grid(grid)
    if surrogate not in models:
        raise ConfigError(f"unknown surrogate {surrogate!r}")
    cfgs = [with_parameter(base_cfg, parameter, v) for v in grid]
    victims = {k: v for k, v in models.items() if k != surrogate} or dict(models)

    rows: list[SweepRow] = []
    for value, cfg in zip(grid, cfgs):
        for seed in seeds:
            batch = craft_adversarials(
                models[surrogate],
                attack_set,
                replace(cfg, seed=seed),
                mix_pool,
                threads=threads,
                quiet=quiet,
                desc=f"{parameter}={value:g}",
            )
            batch.telemetry.log_summary(f"{parameter}={value:g} seed={seed}")
            for t in score_adversarials(
                surrogate, cfg.family.value, batch.adversarials, attack_set, victims, seed
            ):
                rows.append(
                    SweepRow(
                        parameter=parameter,
                        value=float(value),
                        victim=t.victim,
                        raw_rate=t.raw_rate,
                        filtered_rate=t.filtered_rate,
                        seed=seed,
                    )
                )
    return SweepReport(parameter=parameter, grid=list(grid), surrogate=surrogate, rows=rows)

def summarize_sweep(rows: Sequence[SweepRow]) -> list[SweepSummaryRow]:
    """Mean over seeds per (value, victim), plus a ``mean`` row over victims per value."""
    groups: dict[tuple[str, float, str], list[SweepRow]] = defaultdict(list)
    for row in rows:
        groups[(row.parameter, row.value, row.victim)].append(row)
        groups[(row.parameter, row.value, "mean")].append(row)

    out: list[SweepSummaryRow] = []
    for (parameter, value, victim), members in groups.items():
        filtered = [m.filtered_rate for m in members if m.filtered_rate is not None]
        out.append(
            SweepSummaryRow(
                parameter=parameter,
                value=value,
                victim=victim,
                raw_rate=float(np.mean([m.raw_rate for m in members])),
                filtered_rate=float(np.mean(filtered)) if filtered else None,
                seeds=len({m.seed for m in members}),
            )
        )
    out.sort(key=lambda r: (r.parameter, r.value, r.victim == "mean", r.victim))
    return out

def compare_attacks(
    attack_cfgs: Mapping[str, AttackConfig],
    models: Mapping[str, Classifier],
    attack_set: Dataset,
    *,
    surrogate: str,
    seeds: Sequence[int],
    mix_pool: Dataset | None = None,
    threads: int = 1,
    quiet: bool = True,
) -> dict[str, float]:
    """Mean transfer raw rate per attack over victims (all but the surrogate) and seeds."""
    if surrogate not in models:
        raise ConfigError(f"unknown surrogate {surrogate!r}")
    victims = {k: v for k, v in models.items() if k != surrogate} or dict(models)
    out: dict[str, float] = {}
    for name, cfg in attack_cfgs.items():
        rates: list[float] = []
        for seed in seeds:
            batch = craft_adversarials(
                models[surrogate],
                attack_set,
                replace(cfg, seed=seed),
                mix_pool,
                threads=threads,
                quiet=quiet,
                desc=name,
            )
            rates.extend(
                r.raw_rate
                for r in score_adversarials(
                    surrogate, name, batch.adversarials, attack_set, victims, seed
                )
            )
        out[name] = float(np.mean(rates))
        logger.info("%s: mean transfer rate %.3f", name, out[name])
    return out

def mm_versus_admix(base: AttackConfig) -> dict[str, AttackConfig]:
    """SIM-MM (m=5, 3 masks) against Admix (5 scales, 3 mix images) at equal cost."""
    scale = replace(base.scale, m=5)
    mix = replace(base.mix, m_mix=3)
    return {
        "sim_mm": replace(base, family=AttackFamily.SIM_MM, scale=scale, mix=mix),
        "admix": replace(base, family=AttackFamily.ADMIX, scale=scale, mix=mix),
    }

def sim_versus_usm(base: AttackConfig, m: int) -> dict[str, AttackConfig]:
    """SIM and USM (L=0.1, H=0.75) with the same copy count."""
    return {
        "sim": replace(base, family=AttackFamily.SIM, scale=tf.ScaleSpec(m=m, family="sim")),
        "usm": replace(base, family=AttackFamily.USM, scale=tf.ScaleSpec(m=m, L=0.1, H=0.75)),
    }
