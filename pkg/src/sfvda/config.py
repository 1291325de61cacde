"""Run configuration: documented defaults, a line-oriented ``key = value``
file format, and the precedence rule inline flags > file > defaults.

Unknown keys are rejected, every key has a default, and
``parse_config(emit_config(cfg)) == cfg``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .data import DomainSpec
from .losses import LossWeights

__all__ = ["RunConfig", "VARIANTS", "FREEZE_SCOPES", "parse_config", "emit_config", "load_config"]

VARIANTS = (
    "full",
    "fc",
    "pc",
    "pc_no_overall",
    "tc",
    "na",
    "a_at_f",
    "a_at_p",
    "shot_baseline",
    "source_only",
)
FREEZE_SCOPES = ("head_all", "last_layer_only")
CONFIDENCE_MODES = ("normalized", "raw")
WEIGHT_TARGETS = ("logits", "probabilities")


@dataclass
class RunConfig:
    """Everything a reproducible experiment depends on, one flat namespace."""

    # synthetic data
    classes: int = 8
    videos_per_class: int = 200
    frames: int = 5
    frame_dim: int = 32
    shift_severity: float = 0.7
    noise_std: float = 0.1
    # model
    d_enc: int = 64
    d: int = 64
    d_b: int = 64
    m_max: int = 3
    # loss weights and guards
    lam: float = 5e-3
    alpha_local: float = 1.0
    alpha_overall: float = 1.0
    beta_fc: float = 1.0
    beta_pc: float = 1.0
    beta_tc: float = 1.0
    beta_im: float = 1.0
    beta_ce: float = 1.0
    eps_norm: float = 1e-5
    eps_smooth: float = 0.1
    # optimizer
    lr_source: float = 1e-2
    lr_adapt: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3
    # schedule
    epochs_source: int = 30
    epochs_adapt: int = 15
    batch_size: int = 64
    # adaptation behavior
    variant: str = "full"
    freeze_scope: str = "head_all"
    confidence_mode: str = "normalized"
    lwm_weight_target: str = "logits"
    literal_eq8: bool = False
    pc_overall_weighted: bool = True
    pl_rounds: int = 1
    # reproducibility and output
    seed: int = 42
    out_dir: str = "runs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.freeze_scope not in FREEZE_SCOPES:
            raise ValueError(f"unknown freeze_scope {self.freeze_scope!r}")
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise ValueError(f"unknown confidence_mode {self.confidence_mode!r}")
        if self.lwm_weight_target not in WEIGHT_TARGETS:
            raise ValueError(f"unknown lwm_weight_target {self.lwm_weight_target!r}")
        if self.epochs_source < 1 or self.epochs_adapt < 1:
            raise ValueError("epochs must be >= 1")
        if self.pl_rounds < 1:
            raise ValueError("pl_rounds must be >= 1")

    def domain_spec(self, seed: int | None = None) -> DomainSpec:
        return DomainSpec(
            classes=self.classes,
            videos_per_class=self.videos_per_class,
            frames=self.frames,
            frame_dim=self.frame_dim,
            shift_severity=self.shift_severity,
            noise_std=self.noise_std,
            seed=self.seed if seed is None else seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lam=self.lam,
            alpha_local=self.alpha_local,
            alpha_overall=self.alpha_overall,
            beta_fc=self.beta_fc,
            beta_pc=self.beta_pc,
            beta_tc=self.beta_tc,
            beta_im=self.beta_im,
            beta_ce=self.beta_ce,
            eps_norm=self.eps_norm,
            eps_smooth=self.eps_smooth,
        )


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines on top of ``base`` (defaults when absent)."""
    values = {f.name: getattr(base, f.name) for f in fields(RunConfig)} if base else {}
    cfg = RunConfig(**values) if values else RunConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        updates[key] = _parse_value(key, raw)
    return apply_overrides(cfg, updates)


def apply_overrides(cfg: RunConfig, updates: dict) -> RunConfig:
    values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    for key, value in updates.items():
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, value) if isinstance(value, str) and _FIELDS[key] != "str" else value
    return RunConfig(**values)


def emit_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format(getattr(cfg, f.name))}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base=base)
