"""End-to-end run at reduced scale: generate a shifted domain pair, train a
source model, adapt it without source data, and compare variants.

Takes about a minute on a laptop CPU; shrink videos_per_class for a faster
pass. The full calibration setup lives in tests/test_acceptance.py.
"""

from dataclasses import replace

from sfvda.config import RunConfig
from sfvda.data import generate_domain_pair
from sfvda.pipeline import adapt_target, evaluate, train_source

cfg = RunConfig(videos_per_class=50, epochs_source=15, epochs_adapt=8, seed=7)

source, target = generate_domain_pair(cfg.domain_spec())
print(f"{len(source)} source / {len(target)} target videos, shift {cfg.shift_severity}")

model, rows = train_source(source, cfg)
print(f"source accuracy  : {rows[-1].accuracy:.3f}")
baseline = evaluate(model, target).accuracy
print(f"target, no adapt : {baseline:.3f}")

for variant in ("full", "tc", "fc", "shot_baseline"):
    adapted, arows = adapt_target(model, target, replace(cfg, variant=variant))
    acc = evaluate(adapted, target).accuracy
    marker = "+" if acc > baseline else "-"
    print(f"target, {variant:13s}: {acc:.3f} ({marker}{abs(acc - baseline):.3f})")
