"""What may move during incremental training decides what is forgotten.

Runs the benchmark three times with widening update scopes:
  current_only  -- only the new session's embeddings, keys and prompts
  plus_keymap   -- additionally the key-map network
  all_params    -- everything, including earlier sessions' parameters
and compares base-class maintenance (BMA) against new-task learning (NLA).
"""

import dataclasses
import tempfile
from pathlib import Path

from iosf.config import RunConfig
from iosf.datasets import SyntheticSpec, gen_synthetic
from iosf.metrics import summarize
from iosf.trainer import run_protocol

work = Path(tempfile.mkdtemp(prefix="iosf_scope_"))

base = RunConfig(
    dim=32, ctx_len=8, seed=0, tau=16.0,
    ways=2, shots=5, sessions=3, base_classes=6,
    synth_classes=10, synth_train_per_class=8, synth_test_per_class=60,
)
spec = SyntheticSpec(
    classes=base.synth_classes, train_per_class=base.synth_train_per_class,
    test_per_class=base.synth_test_per_class, dim=base.dim,
    noise=base.synth_noise, seed=base.seed, ctx_len=base.ctx_len,
)
train_dir, test_dir = gen_synthetic(spec, work / "data")
base.train_features, base.test_features = str(train_dir), str(test_dir)

print("scope          AVG    PD    NLA    BMA")
for scope in ("current_only", "plus_keymap", "all_params"):
    cfg = dataclasses.replace(base, update_scope=scope)
    reports = run_protocol(cfg)
    s = summarize([r.accuracy for r in reports], len(reports))
    print(
        f"{scope:<13s} {100 * s.avg:5.1f}  {100 * s.pd:4.1f}"
        f"  {100 * s.nla:5.1f}  {100 * s.bma:5.1f}"
    )
print("\nwider scopes trade base maintenance for nothing the new task needs")
