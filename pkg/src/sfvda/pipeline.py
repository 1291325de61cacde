"""Source training, source-free adaptation, evaluation, ablations, export.

The adaptation loop never reads target labels except to fill the diagnostic
accuracy columns; deleting labels from the target dataset changes no model
parameter. The classifier head is frozen per ``freeze_scope`` and checked
bitwise after every run. All randomness derives from the config seed, so a
(config, seed) pair fully determines every output byte.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import lwm, pseudolabel
from .config import RunConfig
from .data import Dataset, batch_iterator
from .losses import (
    information_maximization,
    local_prediction_consistency,
    make_prediction_set,
    overall_prediction_consistency,
    feature_consistency_total,
    pseudo_label_cross_entropy,
    smoothed_cross_entropy,
)
from .model import (
    ModelParams,
    aggregate_overall,
    classify,
    encode_frames,
    eval_clip_set,
    init_model,
    local_temporal_features,
    sample_clips,
)
from .tensor import Tensor, no_grad

__all__ = [
    "SGD",
    "MetricsRow",
    "EvalResult",
    "train_source",
    "adapt_target",
    "evaluate",
    "run_ablation",
    "export_embeddings",
    "write_metrics",
    "check_compatible",
    "VARIANT_SITES",
    "VARIANTS_WITH_PSEUDO_LABELS",
]

# Which weighting sites each adaptation variant applies, and which variants
# run information maximization + pseudo-labeling. The consistency-only
# variants train unweighted: without the entropy-minimizing IM term, the
# weight feedback (uncertain scale -> small weight -> flatter prediction ->
# smaller weight) degenerates, so entropy weighting is only active alongside
# the full objective.
VARIANT_SITES = {
    "full": frozenset({"feature", "prediction"}),
    "fc": frozenset(),
    "pc": frozenset(),
    "pc_no_overall": frozenset(),
    "tc": frozenset(),
    "na": frozenset(),
    "a_at_f": frozenset({"feature"}),
    "a_at_p": frozenset({"prediction"}),
    "shot_baseline": frozenset(),
    "source_only": frozenset(),
}
VARIANTS_WITH_PSEUDO_LABELS = frozenset({"full", "na", "a_at_f", "a_at_p", "shot_baseline"})

_SHUFFLE_SOURCE, _CLIPS_SOURCE, _SHUFFLE_ADAPT, _CLIPS_ADAPT = 101, 102, 201, 202

EVAL_BATCH = 256


class SGD:
    """Plain SGD with momentum and L2 weight decay, deterministic in order."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v


@dataclass
class MetricsRow:
    epoch: int
    ce: float = 0.0
    fc: float = 0.0
    pc_local: float = 0.0
    pc_overall: float = 0.0
    im: float = 0.0
    pl_ce: float = 0.0
    total: float = 0.0
    accuracy: float | None = None
    pl_accuracy: float | None = None
    wall_time: float = 0.0


METRICS_COLUMNS = ("epoch", "ce", "fc", "pc_local", "pc_overall", "im", "pl_ce", "total", "accuracy", "pl_accuracy")


def write_metrics(rows: list[MetricsRow], path) -> None:
    """CSV, one row per epoch. Wall time stays in memory: byte-identical
    metrics files across reruns are part of the contract."""
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in METRICS_COLUMNS:
                value = getattr(row, col)
                if value is None:
                    cells.append("")
                elif col == "epoch":
                    cells.append(str(value))
                else:
                    cells.append(repr(float(value)))
            fh.write(",".join(cells) + "\n")


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, tuple[int, int]]


def check_compatible(params: ModelParams, ds: Dataset) -> None:
    for field, have, want in (
        ("k", params.k, ds.k),
        ("d_in", params.d_in, ds.d_in),
        ("C", params.n_classes, ds.n_classes),
    ):
        if have != want:
            raise ValueError(f"checkpoint/dataset mismatch on {field}: checkpoint {have}, dataset {want}")


def _train_rng(seed: int, tag: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, *key)))


def _overall_eval_logits(model: ModelParams, lts):
    """Overall feature and logits with the model's aggregation, eval mode."""
    if model.aggregation == "entropy_weighted":
        local_logits = [classify(lt, model, mode="eval") for lt in lts]
        weights = lwm.local_relevance_weight(local_logits, model.confidence_mode)
        overall = aggregate_overall(lts, weights)
    else:
        overall = aggregate_overall(lts)
    return overall, classify(overall, model, mode="eval")


def _full_eval_pass(model: ModelParams, ds: Dataset, batch_size: int = EVAL_BATCH):
    """Overall features and logits for every sample, in dataset order."""
    feats, logits = [], []
    with no_grad():
        for start in range(0, len(ds), batch_size):
            picked = ds.samples[start : start + batch_size]
            frames = np.stack([s.frames for s in picked], axis=0)
            enc = encode_frames(frames, model)
            clip_sets = [eval_clip_set(s.id, model.k, model.m_max) for s in picked]
            lts = local_temporal_features(enc, clip_sets, model)
            overall, out = _overall_eval_logits(model, lts)
            feats.append(overall.data)
            logits.append(out.data)
    return np.concatenate(feats, axis=0), np.concatenate(logits, axis=0)


def evaluate(model: ModelParams, ds: Dataset, batch_size: int = EVAL_BATCH) -> EvalResult:
    """Top-1 accuracy with per-class breakdown, deterministic eval forward."""
    labels = ds.labels_array()
    if labels is None:
        raise ValueError("evaluate: dataset has no labels")
    check_compatible(model, ds)
    _, logits = _full_eval_pass(model, ds, batch_size)
    predicted = np.argmax(logits, axis=1)
    per_class: dict[int, tuple[int, int]] = {}
    for c in range(ds.n_classes):
        mask = labels == c
        per_class[c] = (int((predicted[mask] == c).sum()), int(mask.sum()))
    return EvalResult(accuracy=float((predicted == labels).mean()), per_class=per_class)


def train_source(source: Dataset, cfg: RunConfig) -> tuple[ModelParams, list[MetricsRow]]:
    """Minimize smoothed cross-entropy; return the best-by-source-accuracy model."""
    if not source.labeled:
        raise ValueError("train_source: source dataset must be labeled")
    model = init_model(
        k=source.k,
        d_in=source.d_in,
        n_classes=source.n_classes,
        d_enc=cfg.d_enc,
        d=cfg.d,
        d_b=cfg.d_b,
        m_max=cfg.m_max,
        seed=cfg.seed,
    )
    opt = SGD(model.trainable_parameters(), cfg.lr_source, cfg.momentum, cfg.weight_decay)
    rows: list[MetricsRow] = []
    best_acc, best_model = -1.0, None
    for epoch in range(1, cfg.epochs_source + 1):
        started = time.perf_counter()
        ce_sum, n_batches = 0.0, 0
        shuffle_seed = np.random.SeedSequence(cfg.seed, spawn_key=(_SHUFFLE_SOURCE, epoch))
        for b, batch in enumerate(batch_iterator(source, cfg.batch_size, shuffle_seed, train=True)):
            clips = sample_clips(source.k, cfg.m_max, _train_rng(cfg.seed, _CLIPS_SOURCE, epoch, b))
            enc = encode_frames(batch.frames, model)
            lts = local_temporal_features(enc, clips, model)
            overall = aggregate_overall(lts)
            logits = classify(overall, model, mode="train")
            loss = smoothed_cross_entropy(logits, batch.labels, cfg.eps_smooth)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(f"train_source: non-finite loss at epoch {epoch} batch {b}")
            opt.zero_grad()
            loss.backward(free_graph=True)
            opt.step()
            ce_sum += value
            n_batches += 1
        acc = evaluate(model, source).accuracy
        ce = ce_sum / max(1, n_batches)
        rows.append(
            MetricsRow(
                epoch=epoch,
                ce=ce,
                total=ce,
                accuracy=acc,
                wall_time=time.perf_counter() - started,
            )
        )
        # ties prefer the later epoch: accuracy saturates early while the
        # smoothed objective keeps calibrating per-scale predictions
        if acc >= best_acc:
            best_acc, best_model = acc, model.copy()
    return best_model, rows


def _snapshot(tensors: list[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in tensors}


def _assert_unchanged(tensors: list[tuple[str, Tensor]], snap: dict[str, np.ndarray]) -> None:
    for name, t in tensors:
        if t.data.tobytes() != snap[name].tobytes():
            raise RuntimeError(f"frozen parameter drift detected: {name}")


def adapt_target(source_model: ModelParams, target: Dataset, cfg: RunConfig) -> tuple[ModelParams, list[MetricsRow]]:
    """Source-free adaptation with the variant's objective; head stays frozen.

    Per epoch: regenerate pseudo-labels over the full target set (when the
    variant uses them), then mini-batch steps on the variant's loss. Target
    labels feed only the diagnostic accuracy columns.
    """
    if cfg.variant not in VARIANT_SITES:
        raise ValueError(f"unknown variant {cfg.variant!r}")
    check_compatible(source_model, target)
    model = source_model.copy()
    if cfg.variant == "source_only":
        return model, []

    sites = VARIANT_SITES[cfg.variant]
    model.confidence_mode = cfg.confidence_mode
    model.freeze_head(cfg.freeze_scope)
    head_frozen_bn = cfg.freeze_scope == "head_all"
    frozen_named = model.head_parameters(cfg.freeze_scope)
    frozen_snap = _snapshot(frozen_named)
    bn_snap = (model.bn_mean.copy(), model.bn_var.copy())

    use_pl = cfg.variant in VARIANTS_WITH_PSEUDO_LABELS
    weights_cfg = cfg.loss_weights()
    labels = target.labels_array()
    id_to_index = {s.id: i for i, s in enumerate(target.samples)}
    opt = SGD(model.trainable_parameters(), cfg.lr_adapt, cfg.momentum, cfg.weight_decay)

    needs_fc = cfg.variant in ("full", "na", "a_at_f", "a_at_p", "fc", "tc")
    needs_pc = cfg.variant in ("full", "na", "a_at_f", "a_at_p", "pc", "pc_no_overall", "tc")
    needs_pc_overall = needs_pc and cfg.variant != "pc_no_overall"
    needs_im = cfg.variant in ("full", "na", "a_at_f", "a_at_p", "shot_baseline")

    # Effective coefficient on each component; a variant whose coefficients
    # are all zero optimizes nothing and must leave the model untouched.
    w = weights_cfg
    if cfg.variant in ("full", "na", "a_at_f", "a_at_p"):
        coeffs = (
            w.beta_tc * w.beta_fc,
            w.beta_tc * w.beta_pc * w.alpha_local,
            w.beta_tc * w.beta_pc * w.alpha_overall,
            w.beta_im,
            w.beta_ce,
        )
    elif cfg.variant == "fc":
        coeffs = (w.beta_fc,)
    elif cfg.variant == "pc":
        coeffs = (w.alpha_local, w.alpha_overall)
    elif cfg.variant == "pc_no_overall":
        coeffs = (w.alpha_local,)
    elif cfg.variant == "tc":
        coeffs = (w.beta_fc, w.beta_pc * w.alpha_local, w.beta_pc * w.alpha_overall)
    else:  # shot_baseline
        coeffs = (w.beta_im, w.beta_ce)
    objective_active = any(c > 0.0 for c in coeffs)
    # an all-zero objective must behave exactly like source_only, so the
    # aggregation switch only happens when something will actually train
    if objective_active and "feature" in sites:
        model.aggregation = "entropy_weighted"
    else:
        model.aggregation = "mean"

    rows: list[MetricsRow] = []
    for epoch in range(1, cfg.epochs_adapt + 1):
        started = time.perf_counter()
        pseudo, pl_acc = None, None
        if use_pl:
            feats, logits_all = _full_eval_pass(model, target)
            pseudo = pseudolabel.generate_pseudo_labels(feats, logits_all, rounds=cfg.pl_rounds)
            if labels is not None:
                pl_acc = float((pseudo == labels).mean())

        sums = {"fc": 0.0, "pc_local": 0.0, "pc_overall": 0.0, "im": 0.0, "pl_ce": 0.0, "total": 0.0}
        n_batches = 0
        shuffle_seed = np.random.SeedSequence(cfg.seed, spawn_key=(_SHUFFLE_ADAPT, epoch))
        for b, batch in enumerate(batch_iterator(target, cfg.batch_size, shuffle_seed, train=True)):
            clips = sample_clips(target.k, cfg.m_max, _train_rng(cfg.seed, _CLIPS_ADAPT, epoch, b))
            enc = encode_frames(batch.frames, model)
            lts = local_temporal_features(enc, clips, model)
            local_logits = [classify(lt, model, mode="train", frozen=head_frozen_bn) for lt in lts]

            if sites:
                weights = lwm.local_relevance_weight(local_logits, cfg.confidence_mode)
                overall, pc_logits = lwm.apply_weights(
                    lts, local_logits, weights, sites, weight_target=cfg.lwm_weight_target
                )
            else:
                overall, pc_logits = aggregate_overall(lts), list(local_logits)
            overall_logits = classify(overall, model, mode="train", frozen=head_frozen_bn)

            terms = []
            fc_v = pcl_v = pco_v = im_v = ce_v = 0.0
            if needs_fc:
                fc = feature_consistency_total(lts, weights_cfg.lam, weights_cfg.eps_norm)
                fc_v = fc.item()
            if needs_pc:
                if needs_pc_overall and not cfg.pc_overall_weighted and "feature" in sites:
                    plain_logits = classify(
                        aggregate_overall(lts), model, mode="train", frozen=head_frozen_bn
                    )
                    preds = make_prediction_set(pc_logits, plain_logits)
                else:
                    preds = make_prediction_set(pc_logits, overall_logits)
                pc_local = local_prediction_consistency(preds, literal=cfg.literal_eq8)
                pcl_v = pc_local.item()
                if needs_pc_overall:
                    pc_over = overall_prediction_consistency(preds)
                    pco_v = pc_over.item()
            if needs_im:
                im = information_maximization(overall_logits)
                im_v = im.item()
            if use_pl:
                batch_pseudo = pseudo[[id_to_index[i] for i in batch.ids]]
                ce = pseudo_label_cross_entropy(overall_logits, batch_pseudo)
                ce_v = ce.item()

            # Assemble the variant objective from its active components.
            if cfg.variant in ("full", "na", "a_at_f", "a_at_p"):
                pc = pc_local * weights_cfg.alpha_local + pc_over * weights_cfg.alpha_overall
                tc = fc * weights_cfg.beta_fc + pc * weights_cfg.beta_pc
                loss = tc * weights_cfg.beta_tc + im * weights_cfg.beta_im + ce * weights_cfg.beta_ce
            elif cfg.variant == "fc":
                loss = fc * weights_cfg.beta_fc
            elif cfg.variant == "pc":
                loss = pc_local * weights_cfg.alpha_local + pc_over * weights_cfg.alpha_overall
            elif cfg.variant == "pc_no_overall":
                loss = pc_local * weights_cfg.alpha_local
            elif cfg.variant == "tc":
                pc = pc_local * weights_cfg.alpha_local + pc_over * weights_cfg.alpha_overall
                loss = fc * weights_cfg.beta_fc + pc * weights_cfg.beta_pc
            else:  # shot_baseline
                loss = im * weights_cfg.beta_im + ce * weights_cfg.beta_ce

            total_v = loss.item()
            if not np.isfinite(total_v):
                raise RuntimeError(f"adapt_target: non-finite loss at epoch {epoch} batch {b}")
            if objective_active and loss.requires_grad:
                opt.zero_grad()
                loss.backward(free_graph=True)
                opt.step()

            sums["fc"] += fc_v
            sums["pc_local"] += pcl_v
            sums["pc_overall"] += pco_v
            sums["im"] += im_v
            sums["pl_ce"] += ce_v
            sums["total"] += total_v
            n_batches += 1

        acc = evaluate(model, target).accuracy if labels is not None else None
        denom = max(1, n_batches)
        rows.append(
            MetricsRow(
                epoch=epoch,
                fc=sums["fc"] / denom,
                pc_local=sums["pc_local"] / denom,
                pc_overall=sums["pc_overall"] / denom,
                im=sums["im"] / denom,
                pl_ce=sums["pl_ce"] / denom,
                total=sums["total"] / denom,
                accuracy=acc,
                pl_accuracy=pl_acc,
                wall_time=time.perf_counter() - started,
            )
        )

    _assert_unchanged(frozen_named, frozen_snap)
    if head_frozen_bn:
        if model.bn_mean.tobytes() != bn_snap[0].tobytes() or model.bn_var.tobytes() != bn_snap[1].tobytes():
            raise RuntimeError("frozen parameter drift detected: batch-norm running stats")
    return model, rows


def export_embeddings(model: ModelParams, ds: Dataset, level: str, path) -> None:
    """CSV of deterministic eval-mode features: one row per (video, scale) at
    level=local, one per video at level=overall."""
    if level not in ("local", "overall"):
        raise ValueError(f"export_embeddings: unknown level {level!r}")
    check_compatible(model, ds)
    dim = model.d
    with open(path, "w") as fh:
        fh.write("id,scale,label," + ",".join(f"f{i}" for i in range(dim)) + "\n")
        with no_grad():
            for start in range(0, len(ds), EVAL_BATCH):
                picked = ds.samples[start : start + EVAL_BATCH]
                frames = np.stack([s.frames for s in picked], axis=0)
                enc = encode_frames(frames, model)
                clip_sets = [eval_clip_set(s.id, model.k, model.m_max) for s in picked]
                lts = local_temporal_features(enc, clip_sets, model)
                if level == "local":
                    for row, sample in enumerate(picked):
                        label = "" if sample.label is None else str(sample.label)
                        for scale_idx, lt in enumerate(lts):
                            values = ",".join(repr(float(x)) for x in lt.data[row])
                            fh.write(f"{sample.id},{scale_idx + 2},{label},{values}\n")
                else:
                    overall, _ = _overall_eval_logits(model, lts)
                    for row, sample in enumerate(picked):
                        label = "" if sample.label is None else str(sample.label)
                        values = ",".join(repr(float(x)) for x in overall.data[row])
                        fh.write(f"{sample.id},overall,{label},{values}\n")


def run_ablation(cfg: RunConfig, variants: list[str], seeds: list[int]):
    """Adapt every variant on every seed; one source model per seed is shared.

    Returns {variant: {seed: target accuracy}}; datasets and training both
    derive from the seed, so rows are paired replicates.
    """
    from .data import generate_domain_pair
    from dataclasses import replace

    results: dict[str, dict[int, float]] = {v: {} for v in variants}
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        source, target = generate_domain_pair(run_cfg.domain_spec())
        source_model, _ = train_source(source, run_cfg)
        for variant in variants:
            adapted, _ = adapt_target(source_model, target, replace(run_cfg, variant=variant))
            results[variant][seed] = evaluate(adapted, target).accuracy
    return results


def ablation_csv(results: dict[str, dict[int, float]], seeds: list[int]) -> str:
    lines = ["variant," + ",".join(f"seed{s}" for s in seeds) + ",mean"]
    for variant, per_seed in results.items():
        accs = [per_seed[s] for s in seeds]
        cells = [variant] + [repr(a) for a in accs] + [repr(float(np.mean(accs)))]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
