"""Acceptance suite: one test per release criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the criterion
lines as they complete.  Everything here is deterministic: fixed seeds,
fixed benchmark datasets, no wall-clock dependence except the stated
runtime budgets.
"""

import time

import numpy as np
import pytest

from conftest import benchmark_config, build_engine, engine_to_straightline
from iosf.autograd import no_grad, value_and_grad
from iosf.classify import sample_loss
from iosf.checkpoint import read_container
from iosf.encoders import TextEncoder
from iosf.metrics import cell_from_percent, summarize, SessionAccuracy
from iosf.promptmem import pair_similarities, topk_2d
from iosf.trainer import Engine, run_protocol
from straightline import straightline_loss

REL_TOL = 1e-4
ABS_FLOOR = 1e-7


def _verdict(name: str, ok: bool, detail: str = "") -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    return ok


# -- criterion 1: gradient suite ------------------------------------------------

def _grad_instance(seed: int):
    """Random base-session instance with a safe top-K margin."""
    dims = (2, 4, 8)
    for attempt in range(10):
        rng = np.random.default_rng(50_000 + 97 * seed + attempt)
        dim = dims[seed % 3]
        n_classes = int(rng.integers(2, 6))
        top_k = int(rng.integers(1, 4))
        n_pairs = max(top_k, int(rng.integers(top_k, top_k + 2)))
        variant = ("FC1", "FC2", "RES2")[seed % 3 if seed % 2 else (seed // 3) % 3]
        engine = build_engine(
            dim=dim,
            ctx_len=5,
            seed=1000 + seed,
            classes_per_session=(n_classes,),
            pairs_per_session=(n_pairs,),
            variant=variant,
        )
        feature = rng.normal(size=dim)
        label = int(rng.integers(0, n_classes))
        tau = float(rng.uniform(1.0, 8.0))
        kx = engine.keymap.apply_value(feature)
        sims = sorted(
            (s for row in pair_similarities(kx, engine.memory, 1) for s in row),
            reverse=True,
        )
        if len(sims) == top_k or sims[top_k - 1] - sims[top_k] > 1e-3:
            return engine, feature, label, tau, top_k
    raise AssertionError(f"could not build a well-separated instance for seed {seed}")


def test_acceptance_gradient_suite():
    started = time.perf_counter()
    checked = 0
    worst = 0.0
    for seed in range(102):
        engine, feature, label, tau, top_k = _grad_instance(seed)
        params = engine.named_params()
        names = list(params)
        loss = sample_loss(
            feature, label, engine.bank, engine.memory, engine.keymap,
            engine.encoder, tau, top_k, 1,
        )
        _, grads = value_and_grad(loss, [params[n] for n in names])

        def fn(arrays):
            for name, arr in zip(names, arrays):
                params[name].data = arr
            with no_grad():
                out = sample_loss(
                    feature, label, engine.bank, engine.memory, engine.keymap,
                    engine.encoder, tau, top_k, 1,
                )
            return float(out.data)

        base = [params[n].data.copy() for n in names]
        from iosf.autograd import finite_diff_grad

        fd = finite_diff_grad(fn, base, eps=1e-5)
        for name, arr in zip(names, base):
            params[name].data = arr
        for got, want in zip(grads, fd):
            err = np.abs(got - want) - REL_TOL * np.abs(want)
            worst = max(worst, float(err.max()))
            assert np.all(np.abs(got - want) <= ABS_FLOOR + REL_TOL * np.abs(want))
        checked += 1
    elapsed = time.perf_counter() - started
    ok = checked >= 100 and elapsed < 30.0
    assert _verdict(
        "gradient suite: analytic == finite differences on every learnable tensor",
        ok,
        f"{checked} instances in {elapsed:.1f}s",
    )


# -- criterion 2: top-K oracle ---------------------------------------------------

def test_acceptance_topk_oracle():
    rng = np.random.default_rng(77)
    for trial in range(1000):
        sims = []
        for _ in range(int(rng.integers(1, 6))):
            row = rng.normal(size=int(rng.integers(1, 7)))
            if trial % 4 == 0 and row.size > 1:
                row[rng.integers(0, row.size)] = row[0]  # inject ties
            sims.append([float(x) for x in row])
        pool = sum(len(r) for r in sims)
        k = int(rng.integers(1, pool + 1))
        triples = []
        z = 0
        for t, row in enumerate(sims, start=1):
            for i, s in enumerate(row, start=1):
                triples.append((s, z, t, i))
                z += 1
        triples.sort(key=lambda e: (-e[0], e[1]))
        want = [(t, i, s) for s, _, t, i in triples[:k]]
        got = [(e.session, e.index, e.similarity) for e in topk_2d(sims, k).entries]
        assert got == want, f"trial {trial}"
    assert _verdict("top-K retrieval equals brute-force sort on 1000 ragged pools", True)


# -- criterion 3: freeze invariant ----------------------------------------------

def test_acceptance_freeze_invariant(synth_data_root, tmp_path):
    cfg = benchmark_config(synth_data_root, seed=0)
    run_protocol(cfg, tmp_path / "run")
    containers = {
        t: read_container(tmp_path / "run" / "checkpoints" / f"session_{t}.iosc")[1]
        for t in (1, 2, 3)
    }
    violations = []
    for earlier in (1, 2):
        owned = [
            name
            for name in containers[earlier]
            if name.startswith((f"emb/s{earlier}/", f"key/s{earlier}/", f"prompt/s{earlier}/"))
            or name.startswith("keymap/")
        ]
        for later in range(earlier + 1, 4):
            for name in owned:
                if containers[later][name].tobytes() != containers[earlier][name].tobytes():
                    violations.append((earlier, later, name))
    encoder_ok = (
        Engine(cfg).encoder.weights_digest()
        == TextEncoder(cfg.dim, cfg.ctx_len, cfg.seed).weights_digest()
    )
    ok = not violations and encoder_ok
    assert _verdict(
        "freeze invariant: earlier sessions, key-map, encoder byte-identical",
        ok,
        f"{len(violations)} violations",
    )


# -- criterion 4: metric reproduction ---------------------------------------------

def test_acceptance_metric_reproduction():
    ours = [95.4, 94.4, 93.4, 93.1, 92.1, 91.4, 90.8, 90.0, 89.1]
    matrix = [
        SessionAccuracy(t + 1, cell_from_percent(a)) for t, a in enumerate(ours)
    ]
    summary = summarize(matrix, 9)
    ok_avg = abs(100 * summary.avg - 92.2) <= 0.05
    ok_pd = abs(100 * summary.pd - 6.3) <= 0.05

    zsl = [85.8, 85.5, 84.9, 84.8, 84.2, 84.2, 84.0, 83.9, 83.7]
    matrix = [SessionAccuracy(t + 1, cell_from_percent(a)) for t, a in enumerate(zsl)]
    ok_zsl = abs(100 * summarize(matrix, 9).pd - 2.1) <= 0.05
    ok = ok_avg and ok_pd and ok_zsl
    assert _verdict(
        "metric reproduction: AVG 92.2 +/- 0.05, PD 6.3 +/- 0.05, ZSL PD 2.1 +/- 0.05",
        ok,
        f"AVG {100 * summary.avg:.3f}",
    )


# -- criteria 5-7: synthetic benchmark and directionality sweeps -------------------

@pytest.fixture(scope="module")
def sweep(synth_data_root):
    """Summaries for 10 seeds x {current_only/embedding, all_params, random}."""
    results = {}
    for seed in range(10):
        for tag, overrides in (
            ("current", {}),
            ("all_params", {"update_scope": "all_params"}),
            ("random_init", {"init_strategy": "random"}),
        ):
            cfg = benchmark_config(synth_data_root, seed=seed, **overrides)
            started = time.perf_counter()
            reports = run_protocol(cfg)
            elapsed = time.perf_counter() - started
            summary = summarize([r.accuracy for r in reports], len(reports))
            results[(seed, tag)] = {
                "summary": summary,
                "final_all": reports[-1].accuracy.all_seen.value,
                "elapsed": elapsed,
            }
    return results


def test_acceptance_synthetic_benchmark(sweep):
    run = sweep[(0, "current")]
    chance = 1.0 / 10.0
    ok = (
        run["final_all"] >= 3 * chance
        and run["summary"].nla >= 2 * chance
        and run["elapsed"] < 60.0
    )
    assert _verdict(
        "synthetic benchmark: final accuracy >= 3x chance, NLA >= 2x chance, < 60 s",
        ok,
        f"final {run['final_all']:.3f}, NLA {run['summary'].nla:.3f}, {run['elapsed']:.1f}s",
    )


def test_acceptance_update_scope_directionality(sweep):
    wins = sum(
        sweep[(seed, "current")]["summary"].bma > sweep[(seed, "all_params")]["summary"].bma
        for seed in range(10)
    )
    assert _verdict(
        "update-scope directionality: BMA(current_only) > BMA(all_params)",
        wins >= 8,
        f"{wins}/10 seeds",
    )


def test_acceptance_initialization_directionality(sweep):
    wins = sum(
        sweep[(seed, "current")]["summary"].nla >= sweep[(seed, "random_init")]["summary"].nla
        for seed in range(10)
    )
    assert _verdict(
        "initialization directionality: NLA(embedding) >= NLA(random)",
        wins >= 8,
        f"{wins}/10 seeds",
    )


# -- criterion 8: determinism ------------------------------------------------------

def test_acceptance_determinism(synth_data_root, tmp_path):
    cfg = benchmark_config(synth_data_root, seed=0)
    run_protocol(cfg, tmp_path / "a")
    run_protocol(cfg, tmp_path / "b")
    mismatches = []
    for rel in (
        "reports/report.json",
        "reports/report.csv",
        "reports/report.plotdata",
        "checkpoints/session_1.iosc",
        "checkpoints/session_2.iosc",
        "checkpoints/session_3.iosc",
    ):
        if (tmp_path / "a" / rel).read_bytes() != (tmp_path / "b" / rel).read_bytes():
            mismatches.append(rel)
    assert _verdict(
        "determinism: identical config and seed give byte-identical artifacts",
        not mismatches,
        f"{len(mismatches)} mismatching files",
    )


# -- criterion 9: dual-implementation oracle ----------------------------------------

def test_acceptance_dual_implementation_oracle():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(90_000 + seed)
        dim = (2, 4, 8)[seed % 3]
        sessions = (1, 2)[seed % 2]
        classes = tuple(int(rng.integers(2, 4)) for _ in range(sessions))
        pairs = tuple(int(rng.integers(2, 4)) for _ in range(sessions))
        top_k = min(int(rng.integers(1, 4)), sum(pairs))
        engine = build_engine(
            dim=dim,
            ctx_len=5,
            seed=3000 + seed,
            classes_per_session=classes,
            pairs_per_session=pairs,
            variant=("FC1", "FC2", "RES2")[seed % 3],
        )
        feature = rng.normal(size=dim)
        label = int(rng.integers(0, sum(classes)))
        tau = float(rng.uniform(0.5, 20.0))
        with no_grad():
            got = float(
                sample_loss(
                    feature, label, engine.bank, engine.memory, engine.keymap,
                    engine.encoder, tau, top_k, sessions,
                ).data
            )
        s_data, keymap, encoder = engine_to_straightline(engine)
        want = straightline_loss(feature, label, s_data, keymap, encoder, tau, top_k)
        worst = max(worst, abs(got - want))
        assert abs(got - want) <= 1e-10, f"seed {seed}: {got} vs {want}"
    assert _verdict(
        "dual-implementation oracle: engine loss equals straight-line re-implementation",
        True,
        f"worst |diff| {worst:.2e}",
    )
