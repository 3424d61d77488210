"""Seed-variance study: how much does the random pair initialization matter?

The key-prompt pairs copy randomly chosen class embeddings at session start.
This script repeats the benchmark over ten seeds (fresh data, splits and
initialization each time) and reports the spread of the AVG metric.
"""

import statistics
import tempfile
from pathlib import Path

from iosf.config import RunConfig
from iosf.datasets import SyntheticSpec, gen_synthetic
from iosf.metrics import summarize
from iosf.trainer import run_protocol

work = Path(tempfile.mkdtemp(prefix="iosf_seeds_"))
avgs = []
for seed in range(10):
    cfg = RunConfig(
        dim=32, ctx_len=8, seed=seed, tau=16.0,
        ways=2, shots=5, sessions=3, base_classes=6,
        synth_classes=10, synth_train_per_class=8, synth_test_per_class=60,
    )
    spec = SyntheticSpec(
        classes=cfg.synth_classes, train_per_class=cfg.synth_train_per_class,
        test_per_class=cfg.synth_test_per_class, dim=cfg.dim,
        noise=cfg.synth_noise, seed=seed, ctx_len=cfg.ctx_len,
    )
    train_dir, test_dir = gen_synthetic(spec, work / f"data_{seed}")
    cfg.train_features, cfg.test_features = str(train_dir), str(test_dir)
    reports = run_protocol(cfg)
    summary = summarize([r.accuracy for r in reports], len(reports))
    avgs.append(100 * summary.avg)
    print(f"seed {seed}: AVG {avgs[-1]:.1f}")

print(f"\nmean AVG {statistics.mean(avgs):.2f}")
print(f"std  AVG {statistics.stdev(avgs):.2f} over {len(avgs)} seeds")
