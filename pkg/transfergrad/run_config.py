"""
Run configuration: schema, file loading, overrides and seed resolution.

Precedence (lowest first):

  1. schema defaults below (attack defaults: eps 16/255, T 10, mu 1.0, m 5, L 0.1, H 0.75,
     m_mix 3, r 0.5, eta 0.2, p 0.7, 7x7 kernel)
  2. config file (``.toml`` or ``.yaml``/``.yml``); when it names no models or attacks the
     default roster is filled in
  3. ``--set dotted.key=value`` overrides
  4. dedicated CLI flags (``--seed``, ``--epochs``, ``--family``, ...)

Environment variables:

  TRANSFERGRAD_SEED        master seed when neither the flag nor the file sets one
  TRANSFERGRAD_OUTPUT_DIR  output directory when the file sets none (default: runs)

Unknown keys anywhere are rejected. ``epsilon`` and ``alpha`` are on the 0-255 pixel scale.
"""

import hashlib
import logging
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from omegaconf import DictConfig, OmegaConf
from omegaconf.errors import OmegaConfBaseException

from transfergrad import transforms as tf
from transfergrad.attacks import SCALE_FAMILY, AttackBudget, AttackConfig, AttackFamily
from transfergrad.errors import ConfigError, DataError
from transfergrad.models import ArchitectureSpec, ModelKind, TrainConfig, default_roster
from transfergrad.utils.rng import env_seed

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV_VAR = "TRANSFERGRAD_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"


# -- Schema ----------------------------------------------------------------


@dataclass
class DatasetSection:
    source: str = "synthetic"  # synthetic | idx | dir
    path: Optional[str] = None
    classes: int = 8
    per_class: int = 300
    image_size: int = 16
    channels: int = 1
    noise: float = 0.05
    contrast: float = 0.1
    test_fraction: float = 0.25
    attack_size: int = 200
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None


@dataclass
class ModelEntry:
    kind: str = "mlp"
    hidden: List[int] = field(default_factory=lambda: [128])
    kernel_size: int = 3
    head_width: int = 0
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: Optional[int] = None


@dataclass
class AttackEntry:
    family: str = "mifgsm"
    epsilon: float = 16.0
    iterations: int = 10
    alpha: Optional[float] = None
    momentum: float = 1.0
    m: int = 5
    L: float = 0.1
    H: float = 0.75
    m_mix: int = 3
    r: float = 0.5
    eta: float = 0.2
    mix_seed: Optional[int] = None
    dim_probability: float = 0.7
    dim_max_resize: float = 0.1
    tim_kernel_size: int = 7
    tim_sigma: Optional[float] = None
    jacobian_correction: bool = False
    fixed_mix_pool: bool = False


@dataclass
class EvalSection:
    surrogates: List[str] = field(default_factory=list)
    attacks: List[str] = field(default_factory=list)
    victims: List[str] = field(default_factory=list)
    sweep_surrogate: Optional[str] = None
    sweep_seeds: int = 3
    threads: int = 1


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    models: Dict[str, ModelEntry] = field(default_factory=dict)
    attacks: Dict[str, AttackEntry] = field(default_factory=dict)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: Optional[str] = None
    seed: Optional[int] = None


DEFAULT_ATTACKS = ("mifgsm", "dim", "tim", "sim", "admix", "us_mm")


def default_models() -> Dict[str, Dict[str, Any]]:
    roster = default_roster((1, 16, 16), 2)
    return {
        name: {
            "kind": spec.kind.value,
            "hidden": list(spec.hidden),
            "kernel_size": spec.kernel_size,
            "head_width": spec.head_width,
        }
        for name, spec in roster.items()
    }


def default_attacks() -> Dict[str, Dict[str, Any]]:
    return {name: {"family": name} for name in DEFAULT_ATTACKS}


# -- Loading ---------------------------------------------------------------


def _read_file(path: Path) -> DictConfig:
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as f:
                return OmegaConf.create(tomllib.load(f))
        if suffix in (".yaml", ".yml"):
            loaded = OmegaConf.load(path)
            if not isinstance(loaded, DictConfig):
                raise ConfigError(f"{path}: top level must be a mapping")
            return loaded
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from e
    raise ConfigError(f"{path}: unsupported config format {suffix!r} (use .toml or .yaml)")


def load_run_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    flag_overrides: Sequence[str] = (),
    *,
    seed: Optional[int] = None,
) -> DictConfig:
    """Merge defaults, file, ``--set`` and flag overrides; resolve seed and output dir."""
    try:
        cfg = OmegaConf.structured(RunConfig)
        if path is not None:
            cfg = OmegaConf.merge(cfg, _read_file(Path(path)))
        if not cfg.models:
            cfg = OmegaConf.merge(cfg, {"models": default_models()})
        if not cfg.attacks:
            cfg = OmegaConf.merge(cfg, {"attacks": default_attacks()})
        for dotlist in (overrides, flag_overrides):
            if dotlist:
                cfg = OmegaConf.merge(cfg, OmegaConf.from_dotlist(list(dotlist)))
    except OmegaConfBaseException as e:
        raise ConfigError(f"invalid configuration: {e}") from e

    if seed is not None:
        cfg.seed = seed
    if cfg.seed is None:
        cfg.seed = env_seed()
    if cfg.seed is None:
        raise ConfigError(
            "no master seed: pass --seed, set 'seed' in the config file, "
            "or export TRANSFERGRAD_SEED"
        )
    if cfg.output_dir is None:
        cfg.output_dir = os.getenv(OUTPUT_DIR_ENV_VAR) or DEFAULT_OUTPUT_DIR
    validate(cfg)
    return cfg


def validate(cfg: DictConfig) -> None:
    """Fail fast on unresolved names and invalid model/attack entries."""
    for name in cfg.models:
        train_config(cfg, name)
        kind = cfg.models[name].kind
        if kind not in [k.value for k in ModelKind]:
            raise ConfigError(f"models.{name}.kind: unknown model kind {kind!r}")
    for name in cfg.attacks:
        attack_config(cfg, name)
    for section, roster in (
        ("surrogates", cfg.models),
        ("victims", cfg.models),
        ("attacks", cfg.attacks),
    ):
        unknown = [n for n in cfg.eval[section] if n not in roster]
        if unknown:
            raise ConfigError(f"eval.{section}: unknown name(s) {', '.join(unknown)}")
    if cfg.eval.sweep_surrogate is not None and cfg.eval.sweep_surrogate not in cfg.models:
        raise ConfigError(f"eval.sweep_surrogate: unknown model {cfg.eval.sweep_surrogate!r}")
    if cfg.eval.threads < 1:
        raise ConfigError(f"eval.threads must be >= 1, got {cfg.eval.threads}")
    if cfg.dataset.source not in ("synthetic", "idx", "dir"):
        raise ConfigError(
            f"dataset.source must be synthetic, idx or dir, got {cfg.dataset.source!r}"
        )
    if not 0.0 < cfg.dataset.contrast <= 1.0:
        raise ConfigError(f"dataset.contrast must lie in (0, 1], got {cfg.dataset.contrast}")


def to_yaml(cfg: DictConfig) -> str:
    return OmegaConf.to_yaml(cfg, resolve=True, sort_keys=True)


def config_hash(cfg: DictConfig) -> str:
    return hashlib.sha256(to_yaml(cfg).encode("utf-8")).hexdigest()


def output_dir(cfg: DictConfig) -> Path:
    return Path(cfg.output_dir)


# -- Typed views -----------------------------------------------------------


def _require(section: DictConfig, name: str, what: str) -> Any:
    if name not in section:
        valid = ", ".join(section.keys()) or "(none)"
        raise ConfigError(f"unknown {what} {name!r}; configured: {valid}")
    return section[name]


def architecture(
    cfg: DictConfig, name: str, input_shape: tuple[int, int, int], num_classes: int
) -> ArchitectureSpec:
    entry = _require(cfg.models, name, "model")
    return ArchitectureSpec(
        kind=entry.kind,
        hidden=tuple(entry.hidden),
        input_shape=input_shape,
        num_classes=num_classes,
        kernel_size=entry.kernel_size,
        head_width=entry.head_width,
    )


def model_seed(cfg: DictConfig, name: str) -> int:
    """Per-model seed: explicit entry seed, else master seed plus roster position."""
    entry = _require(cfg.models, name, "model")
    if entry.seed is not None:
        return int(entry.seed)
    return int(cfg.seed) + list(cfg.models).index(name)


def train_config(cfg: DictConfig, name: str) -> TrainConfig:
    entry = _require(cfg.models, name, "model")
    return TrainConfig(
        epochs=entry.epochs,
        batch_size=entry.batch_size,
        learning_rate=entry.learning_rate,
        momentum=entry.momentum,
        seed=model_seed(cfg, name),
    )


def attack_config(cfg: DictConfig, name: str) -> AttackConfig:
    entry = _require(cfg.attacks, name, "attack")
    family = AttackFamily.parse(entry.family)
    return AttackConfig(
        family=family,
        seed=int(cfg.seed),
        budget=AttackBudget.from_pixels(entry.epsilon, entry.iterations, entry.alpha),
        momentum=entry.momentum,
        scale=tf.ScaleSpec(
            m=entry.m,
            L=entry.L,
            H=entry.H,
            family=SCALE_FAMILY.get(family, tf.ScaleFamily.UNIFORM),
        ),
        mix=tf.MixSpec(m_mix=entry.m_mix, r=entry.r, eta=entry.eta, seed=entry.mix_seed),
        baseline=tf.BaselineParams(
            dim_probability=entry.dim_probability,
            dim_max_resize=entry.dim_max_resize,
            tim_kernel_size=entry.tim_kernel_size,
            tim_sigma=entry.tim_sigma,
        ),
        jacobian_correction=entry.jacobian_correction,
        fixed_mix_pool=entry.fixed_mix_pool,
    )


def selected(cfg: DictConfig, section: str) -> List[str]:
    """Names listed under ``eval.<section>``, or the whole roster when the list is empty."""
    roster = cfg.attacks if section == "attacks" else cfg.models
    names = list(cfg.eval[section])
    return names or list(roster)
