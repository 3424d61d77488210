"""Class bank, key-prompt initialization, key-map variants, retrieval, bias."""

import numpy as np
import pytest

from conftest import build_engine
from iosf.autograd import Tensor, value_and_grad
from iosf.classify import sample_loss
from iosf.encoders import TextEncoder
from iosf.errors import ContractError, SetupError
from iosf.promptmem import (
    ClassTokenBank,
    KeyMap,
    PromptMemory,
    init_key_prompt_pairs,
    init_random_pairs,
    make_bias,
    pair_similarities,
    prompt_weights,
    quotient_remainder,
    topk_2d,
)

CTX, DIM, SEED = 8, 4, 3


def _bank(*session_classes):
    bank = ClassTokenBank(CTX, DIM, SEED)
    next_id = 0
    for t, names in enumerate(session_classes, start=1):
        bank.add_session(t, [(next_id + i, n) for i, n in enumerate(names)])
        next_id += len(names)
    return bank


# -- class token bank ----------------------------------------------------------

def test_prompt_token_count():
    bank = _bank(["dog"])
    assert bank.sessions[1][0].embedding.valid_len == 5  # a photo of a dog


def test_duplicate_class_across_sessions_rejected():
    bank = _bank(["dog", "cat"])
    with pytest.raises(SetupError):
        bank.add_session(2, [(7, "dog")])


def test_bank_sizes_after_base_plus_incremental():
    bank = _bank(["a1", "a2", "a3"], ["b1", "b2"])
    assert bank.session_sizes() == [3, 2]


def test_empty_class_list_rejected():
    bank = ClassTokenBank(CTX, DIM, SEED)
    with pytest.raises(SetupError):
        bank.add_session(1, [])


# -- key-prompt pair initialization ---------------------------------------------

def test_single_class_forces_choice():
    bank = _bank(["dog"])
    enc = TextEncoder(DIM, CTX, SEED)
    rng = np.random.default_rng(0)
    pairs = init_key_prompt_pairs(1, 1, bank, enc, rng)
    entry = bank.sessions[1][0]
    np.testing.assert_array_equal(pairs[0].key.data, enc.encode_value(entry.embedding.matrix.data))
    np.testing.assert_array_equal(pairs[0].prompt.matrix.data, entry.embedding.matrix.data)
    assert pairs[0].prompt.valid_len == entry.embedding.valid_len


def test_without_replacement_while_pairs_fit():
    bank = _bank(["c1", "c2", "c3", "c4", "c5"])
    enc = TextEncoder(DIM, CTX, SEED)
    pairs = init_key_prompt_pairs(1, 3, bank, enc, np.random.default_rng(1))
    prompts = {p.prompt.matrix.data.tobytes() for p in pairs}
    assert len(prompts) == 3  # three distinct classes chosen


def test_oversubscribed_pool_covers_every_class():
    names = [f"w{i}" for i in range(60)]
    bank = _bank(names)
    enc = TextEncoder(DIM, CTX, SEED)
    pairs = init_key_prompt_pairs(1, 100, bank, enc, np.random.default_rng(2))
    assert len(pairs) == 100
    chosen = [p.prompt.matrix.data.tobytes() for p in pairs]
    all_embs = {e.embedding.matrix.data.tobytes() for e in bank.sessions[1]}
    assert set(chosen) == all_embs          # every class used at least once
    assert len(chosen) - len(all_embs) == 40  # forty repeats


def test_pair_init_deterministic_per_seed():
    bank = _bank(["c1", "c2", "c3"])
    enc = TextEncoder(DIM, CTX, SEED)
    a = init_key_prompt_pairs(1, 2, bank, enc, np.random.default_rng(9))
    b = init_key_prompt_pairs(1, 2, bank, enc, np.random.default_rng(9))
    for pa, pb in zip(a, b):
        assert pa.key.data.tobytes() == pb.key.data.tobytes()


def test_empty_bank_rejected():
    bank = ClassTokenBank(CTX, DIM, SEED)
    enc = TextEncoder(DIM, CTX, SEED)
    with pytest.raises(SetupError):
        init_key_prompt_pairs(1, 2, bank, enc, np.random.default_rng(0))


def test_keys_are_free_parameters_after_init():
    bank = _bank(["c1"])
    enc = TextEncoder(DIM, CTX, SEED)
    pairs = init_key_prompt_pairs(1, 1, bank, enc, np.random.default_rng(0))
    pairs[0].key.data = pairs[0].key.data + 1.0  # detached from encoder output
    np.testing.assert_array_equal(
        bank.sessions[1][0].embedding.matrix.data, pairs[0].prompt.matrix.data
    )


# -- key map ---------------------------------------------------------------------

def test_fc1_identity_weights_pass_feature_through():
    km = KeyMap("FC1", DIM, SEED)
    km.params["w"].data = np.eye(DIM)
    km.params["b"].data = np.zeros(DIM)
    f = np.array([1.0, -2.0, 3.0, 4.0])
    np.testing.assert_array_equal(km.apply(Tensor(f)).data, f)
    np.testing.assert_array_equal(km.apply_value(f), f)


def test_fc2_zero_second_layer_gives_constant():
    km = KeyMap("FC2", DIM, SEED)
    km.params["w2"].data = np.zeros((DIM, DIM))
    f = np.random.default_rng(0).normal(size=DIM)
    np.testing.assert_array_equal(km.apply_value(f), km.params["b2"].data)


def test_res2_zero_inner_weights_is_skip_plus_bias():
    km = KeyMap("RES2", DIM, SEED)
    km.params["w1"].data = np.zeros((DIM, DIM))
    km.params["w2"].data = np.zeros((DIM, DIM))
    f = np.random.default_rng(1).normal(size=DIM)
    np.testing.assert_allclose(km.apply_value(f), f + km.params["b2"].data)


def test_keymap_variants_graph_matches_value():
    f = np.random.default_rng(2).normal(size=DIM)
    for variant in ("FC1", "FC2", "RES2"):
        km = KeyMap(variant, DIM, SEED)
        np.testing.assert_array_equal(km.apply(Tensor(f)).data, km.apply_value(f))


def test_unknown_variant_rejected():
    with pytest.raises(SetupError):
        KeyMap("FC9", DIM, SEED)


# -- two-dimensional top-K --------------------------------------------------------

def test_topk_example_from_two_sessions():
    sel = topk_2d([[0.9, 0.1], [0.5, 0.7]], 2)
    got = [(e.session, e.index, e.similarity) for e in sel.entries]
    assert got == [(1, 1, 0.9), (2, 2, 0.7)]


def test_topk_all_equal_breaks_ties_to_smallest_flat_index():
    sel = topk_2d([[0.5, 0.5], [0.5, 0.5]], 2)
    assert [(e.session, e.index) for e in sel.entries] == [(1, 1), (1, 2)]


def test_quotient_remainder_appendix_mapping():
    assert quotient_remainder(4, 3) == (2, 1)
    assert quotient_remainder(5, 3) == (2, 2)
    assert quotient_remainder(1, 3) == (1, 1)
    assert quotient_remainder(3, 3) == (1, 3)


def test_topk_matches_rectangular_quotient_remainder_construction():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        table = rng.normal(size=(n, m))
        k = int(rng.integers(1, n * m + 1))
        sel = topk_2d(table.tolist(), k)
        flat = table.reshape(-1)
        order = sorted(range(n * m), key=lambda z: (-flat[z], z))
        want = [quotient_remainder(z + 1, m) for z in order[:k]]
        assert [(e.session, e.index) for e in sel.entries] == want


def test_topk_brute_force_oracle_on_ragged_pools():
    rng = np.random.default_rng(5)
    for trial in range(1000):
        n_sessions = int(rng.integers(1, 5))
        sims = []
        for _ in range(n_sessions):
            row = rng.normal(size=int(rng.integers(1, 6)))
            if trial % 3 == 0 and row.size > 1:
                row[-1] = row[0]  # force ties regularly
            sims.append([float(x) for x in row])
        pool = sum(len(r) for r in sims)
        k = int(rng.integers(1, pool + 1))
        # brute force: sort every (session, index, sim) triple
        triples = []
        z = 0
        for t, row in enumerate(sims, start=1):
            for i, s in enumerate(row, start=1):
                triples.append((s, z, t, i))
                z += 1
        triples.sort(key=lambda e: (-e[0], e[1]))
        want = [(t, i, s) for s, _, t, i in triples[:k]]
        got = [(e.session, e.index, e.similarity) for e in topk_2d(sims, k).entries]
        assert got == want


def test_topk_pool_too_small():
    with pytest.raises(SetupError):
        topk_2d([[0.5]], 2)


def test_topk_rejects_non_finite():
    with pytest.raises(ValueError):
        topk_2d([[np.inf, 0.0]], 1)


# -- weights and bias -------------------------------------------------------------

def _memory_from_engine():
    engine = build_engine(dim=DIM, ctx_len=CTX, classes_per_session=(3,), pairs_per_session=(4,))
    return engine


def test_single_pair_weight_is_one():
    engine = _memory_from_engine()
    kx = Tensor(np.ones(DIM))
    sims = pair_similarities(kx.data, engine.memory, 1)
    sel = topk_2d(sims, 1)
    w = prompt_weights(sel, kx, engine.memory)
    np.testing.assert_allclose(w.data, [1.0])


def test_equal_similarities_give_half_half():
    memory = PromptMemory()
    from iosf.encoders import TokenEmbedding
    from iosf.promptmem import KeyPromptPair

    key = np.array([1.0, 0.0, 0.0, 0.0])
    pairs = [
        KeyPromptPair(Tensor(key * 2.0), TokenEmbedding(Tensor(np.ones((CTX, DIM))), CTX), 1, 1),
        KeyPromptPair(Tensor(key * 3.0), TokenEmbedding(Tensor(np.full((CTX, DIM), 2.0)), CTX), 1, 2),
    ]
    memory.add_session(1, pairs)
    kx = Tensor(key)
    sel = topk_2d(pair_similarities(key, memory, 1), 2)
    w = prompt_weights(sel, kx, memory)
    np.testing.assert_allclose(w.data, [0.5, 0.5])


def test_weights_softmax_of_sims():
    # cook two keys whose cosines against kx are 0.9 and 0.7
    memory = PromptMemory()
    from iosf.encoders import TokenEmbedding
    from iosf.promptmem import KeyPromptPair

    def key_with_cos(c):
        return np.array([c, np.sqrt(1 - c * c), 0.0, 0.0])

    pairs = [
        KeyPromptPair(Tensor(key_with_cos(0.9)), TokenEmbedding(Tensor(np.ones((CTX, DIM))), CTX), 1, 1),
        KeyPromptPair(Tensor(key_with_cos(0.7)), TokenEmbedding(Tensor(np.ones((CTX, DIM))), CTX), 1, 2),
    ]
    memory.add_session(1, pairs)
    kx = Tensor(np.array([1.0, 0.0, 0.0, 0.0]))
    sel = topk_2d(pair_similarities(kx.data, memory, 1), 2)
    w = prompt_weights(sel, kx, memory)
    np.testing.assert_allclose(w.data, [0.549834, 0.450166], atol=1e-6)
    assert abs(float(w.data.sum()) - 1.0) < 1e-9


def test_bias_single_pair_is_that_prompt():
    engine = _memory_from_engine()
    kx = Tensor(np.ones(DIM))
    sel = topk_2d(pair_similarities(kx.data, engine.memory, 1), 1)
    w = prompt_weights(sel, kx, engine.memory)
    bias = make_bias(sel, w, engine.memory)
    want = engine.memory.get(sel.entries[0].session, sel.entries[0].index).prompt
    np.testing.assert_allclose(bias.matrix.data, want.matrix.data, atol=1e-15)
    assert bias.valid_len == CTX


def test_bias_of_identical_prompts_is_that_prompt():
    memory = PromptMemory()
    from iosf.encoders import TokenEmbedding
    from iosf.promptmem import KeyPromptPair

    prompt = np.random.default_rng(0).normal(size=(CTX, DIM))
    pairs = [
        KeyPromptPair(Tensor(np.array([1.0, 0, 0, 0])), TokenEmbedding(Tensor(prompt), CTX), 1, 1),
        KeyPromptPair(Tensor(np.array([0.6, 0.8, 0, 0])), TokenEmbedding(Tensor(prompt), CTX), 1, 2),
    ]
    memory.add_session(1, pairs)
    kx = Tensor(np.array([1.0, 0.2, 0.0, 0.0]))
    sel = topk_2d(pair_similarities(kx.data, memory, 1), 2)
    w = prompt_weights(sel, kx, memory)
    bias = make_bias(sel, w, memory)
    np.testing.assert_allclose(bias.matrix.data, prompt, atol=1e-12)


def test_bias_of_opposite_prompts_with_equal_weights_is_zero():
    memory = PromptMemory()
    from iosf.encoders import TokenEmbedding
    from iosf.promptmem import KeyPromptPair

    prompt = np.random.default_rng(1).normal(size=(CTX, DIM))
    key = np.array([1.0, 0, 0, 0])
    pairs = [
        KeyPromptPair(Tensor(key), TokenEmbedding(Tensor(prompt), CTX), 1, 1),
        KeyPromptPair(Tensor(key * 5), TokenEmbedding(Tensor(-prompt), CTX), 1, 2),
    ]
    memory.add_session(1, pairs)
    kx = Tensor(key.astype(float))
    sel = topk_2d(pair_similarities(kx.data, memory, 1), 2)
    w = prompt_weights(sel, kx, memory)
    bias = make_bias(sel, w, memory)
    np.testing.assert_allclose(bias.matrix.data, np.zeros((CTX, DIM)), atol=1e-12)


def test_bias_weight_length_contract():
    engine = _memory_from_engine()
    kx = Tensor(np.ones(DIM))
    sel = topk_2d(pair_similarities(kx.data, engine.memory, 1), 2)
    with pytest.raises(ContractError):
        make_bias(sel, Tensor(np.array([1.0])), engine.memory)


# -- retrieval invariants ----------------------------------------------------------

def _bias_for(engine, feature):
    kx = Tensor(engine.keymap.apply_value(feature))
    sims = pair_similarities(kx.data, engine.memory, max(engine.memory.sessions))
    sel = topk_2d(sims, 3)
    w = prompt_weights(sel, kx, engine.memory)
    return make_bias(sel, w, engine.memory).matrix.data


def test_storage_permutation_invariance():
    rng = np.random.default_rng(6)
    feature = rng.normal(size=DIM)
    engine = build_engine(dim=DIM, ctx_len=CTX, classes_per_session=(4,), pairs_per_session=(5,))
    before = _bias_for(engine, feature)
    # permute pair storage, keep owner indices intact
    pairs = engine.memory.sessions[1]
    engine.memory.sessions[1] = [pairs[i] for i in (3, 0, 4, 1, 2)]
    after = _bias_for(engine, feature)
    np.testing.assert_allclose(after, before, atol=1e-12)


def test_query_scale_invariance_of_retrieval():
    engine = _memory_from_engine()
    rng = np.random.default_rng(7)
    feature = rng.normal(size=DIM)
    kx = engine.keymap.apply_value(feature)
    for alpha in (0.5, 3.0, 17.0):
        sims_a = pair_similarities(kx, engine.memory, 1)
        sims_b = pair_similarities(alpha * kx, engine.memory, 1)
        np.testing.assert_allclose(sims_b, sims_a, atol=1e-12)
        sel_a, sel_b = topk_2d(sims_a, 2), topk_2d(sims_b, 2)
        assert [(e.session, e.index) for e in sel_a.entries] == [
            (e.session, e.index) for e in sel_b.entries
        ]
        wa = prompt_weights(sel_a, Tensor(kx), engine.memory)
        wb = prompt_weights(sel_b, Tensor(alpha * kx), engine.memory)
        np.testing.assert_allclose(wb.data, wa.data, atol=1e-12)


def test_non_selected_pairs_get_exactly_zero_gradient():
    # five distinct classes so no two pairs are byte-identical duplicates
    engine = build_engine(dim=DIM, ctx_len=CTX, classes_per_session=(5,), pairs_per_session=(5,))
    rng = np.random.default_rng(8)
    feature = rng.normal(size=DIM)
    loss = sample_loss(
        feature, 0, engine.bank, engine.memory, engine.keymap, engine.encoder, 4.0, 2, 1
    )
    params = engine.named_params()
    names = list(params)
    _, grads = value_and_grad(loss, [params[n] for n in names])
    kx = engine.keymap.apply_value(feature)
    sel = topk_2d(pair_similarities(kx, engine.memory, 1), 2)
    selected = {(e.session, e.index) for e in sel.entries}
    for name, grad in zip(names, grads):
        if name.startswith(("key/", "prompt/")):
            _, s_part, p_part = name.split("/")
            coords = (int(s_part[1:]), int(p_part[1:]))
            if coords not in selected:
                assert np.all(grad == 0.0), name
            else:
                assert np.any(grad != 0.0), name


def test_random_init_pairs_have_nonzero_keys():
    rng = np.random.default_rng(9)
    pairs = init_random_pairs(2, 4, CTX, DIM, rng)
    assert len(pairs) == 4
    for p in pairs:
        assert np.linalg.norm(p.key.data) > 0
        assert p.prompt.valid_len == CTX
