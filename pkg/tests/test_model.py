"""Model semantics: forward shapes, gate/surgery equivalence, serialization,
and parameter accounting."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gates_from_drops, toy
from prunekit.checkpoint import load_model, save_model
from prunekit.errors import (ConfigError, ContractError, CorruptionError,
                             InvalidIndexError, ShapeError, VocabularyError)
from prunekit.fixtures import FixtureSpec, build_model
from prunekit.model import (ModelConfig, build_gates, count_parameters,
                            count_parameters_from_config, encoder_forward, lm_forward,
                            named_tensors, remove_ffn_neurons, remove_heads,
                            remove_vocab_rows, task_forward)


def ids_batch(vocab, rows=2, n=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, len(vocab), size=(rows, n))


class TestForward:
    def test_output_shapes(self):
        model, vocab, spec = toy()
        ids = ids_batch(vocab)
        assert encoder_forward(model, ids).shape == (2, 8, spec.hidden_size)
        assert task_forward(model, ids).shape == (2, spec.num_labels)

    def test_identical_rows_identical_logits(self):
        model, vocab, _ = toy()
        row = ids_batch(vocab, rows=1)
        both = np.vstack([row, row])
        logits = task_forward(model, both).data
        np.testing.assert_array_equal(logits[0], logits[1])

    def test_batch_permutation_equivariance(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab, rows=4)
        perm = np.array([2, 0, 3, 1])
        base = task_forward(model, ids).data
        shuffled = task_forward(model, ids[perm]).data
        np.testing.assert_array_equal(shuffled, base[perm])

    def test_neutral_gates_bit_identical(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab)
        plain = encoder_forward(model, ids).data
        head_gates, ffn_gates = build_gates(model)
        gated = encoder_forward(model, ids, head_gates, ffn_gates).data
        assert plain.tobytes() == gated.tobytes()

    def test_token_id_out_of_range(self):
        model, vocab, _ = toy()
        bad = np.array([[0, len(vocab)]])
        with pytest.raises(VocabularyError):
            encoder_forward(model, bad)

    def test_sequence_too_long(self):
        model, vocab, spec = toy()
        ids = np.zeros((1, spec.max_seq_len + 1), dtype=np.int64)
        with pytest.raises(ContractError):
            encoder_forward(model, ids)

    def test_gate_structure_validated(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab)
        head_gates, ffn_gates = build_gates(model)
        with pytest.raises(ShapeError):
            encoder_forward(model, ids, head_gates[:1], ffn_gates)
        with pytest.raises(ShapeError):
            encoder_forward(model, ids, [hg[:-1] for hg in head_gates], ffn_gates)
        short = [g for g in ffn_gates]
        from prunekit.tensor import Tensor
        short[0] = Tensor(np.ones(3))
        with pytest.raises(ShapeError):
            encoder_forward(model, ids, head_gates, short)


class TestSurgery:
    def test_remove_nothing_is_noop(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab)
        before = task_forward(model, ids).data
        remove_heads(model, 0, [])
        remove_ffn_neurons(model, 1, [])
        after = task_forward(model, ids).data
        assert before.tobytes() == after.tobytes()

    def test_removed_head_equals_zero_gate(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab)
        gates = gates_from_drops(model, head_drops={0: [1], 1: [0, 3]})
        gated = task_forward(model, ids, *gates).data
        pruned = model.clone()
        remove_heads(pruned, 0, [1])
        remove_heads(pruned, 1, [0, 3])
        np.testing.assert_allclose(task_forward(pruned, ids).data, gated,
                                   rtol=0, atol=1e-10)

    def test_remove_all_heads_leaves_residual_path(self):
        model, vocab, spec = toy()
        ids = ids_batch(vocab)
        gates = gates_from_drops(model, head_drops={0: list(range(spec.num_heads))})
        gated = task_forward(model, ids, *gates).data
        pruned = model.clone()
        remove_heads(pruned, 0, range(spec.num_heads))
        assert pruned.config.num_heads == [0, spec.num_heads]
        np.testing.assert_allclose(task_forward(pruned, ids).data, gated,
                                   rtol=0, atol=1e-10)

    def test_removed_ffn_neuron_equals_zero_gate(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab)
        gates = gates_from_drops(model, ffn_drops={0: [5, 17], 1: [0]})
        gated = task_forward(model, ids, *gates).data
        pruned = model.clone()
        remove_ffn_neurons(pruned, 0, [5, 17])
        remove_ffn_neurons(pruned, 1, [0])
        np.testing.assert_allclose(task_forward(pruned, ids).data, gated,
                                   rtol=0, atol=1e-10)

    def test_halving_ffn_halves_ffn_total(self):
        model, _, spec = toy()
        before = count_parameters(model)["ffn_total"]
        for l in range(spec.num_layers):
            remove_ffn_neurons(model, l, range(spec.ffn_size // 2))
        after = count_parameters(model)["ffn_total"]
        assert after * 2 == before

    def test_surgery_order_commutes(self):
        a, _, _ = toy()
        b = a.clone()
        remove_heads(a, 0, [2])
        remove_ffn_neurons(a, 0, [3, 4])
        remove_ffn_neurons(b, 0, [3, 4])
        remove_heads(b, 0, [2])
        for (name_a, ta), (name_b, tb) in zip(named_tensors(a), named_tensors(b)):
            assert name_a == name_b
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_bad_indices_rejected(self):
        model, _, spec = toy()
        with pytest.raises(InvalidIndexError):
            remove_heads(model, 0, [0, 0])
        with pytest.raises(InvalidIndexError):
            remove_heads(model, 0, [spec.num_heads])
        with pytest.raises(InvalidIndexError):
            remove_heads(model, 99, [0])
        with pytest.raises(InvalidIndexError):
            remove_ffn_neurons(model, 0, [-1])

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_random_mask_gating_matches_surgery(self, seed):
        model, vocab, spec = toy(seed=seed % 7)
        rng = np.random.default_rng(seed)
        head_drops = {l: sorted(rng.choice(spec.num_heads,
                                           size=rng.integers(0, spec.num_heads),
                                           replace=False).tolist())
                      for l in range(spec.num_layers)}
        ffn_drops = {l: sorted(rng.choice(spec.ffn_size,
                                          size=rng.integers(0, spec.ffn_size // 2),
                                          replace=False).tolist())
                     for l in range(spec.num_layers)}
        ids = ids_batch(vocab, seed=seed)
        gated = task_forward(model, ids, *gates_from_drops(model, head_drops, ffn_drops)).data
        pruned = model.clone()
        for l, idx in head_drops.items():
            remove_heads(pruned, l, idx)
        for l, idx in ffn_drops.items():
            remove_ffn_neurons(pruned, l, idx)
        np.testing.assert_allclose(task_forward(pruned, ids).data, gated,
                                   rtol=0, atol=1e-10)


class TestVocabSurgery:
    def test_mapping_and_logit_equivalence(self):
        model, vocab, _ = toy()
        kept = [i for i in range(len(vocab)) if i % 3 != 1 or i < 8]
        ids_old = np.array([[k] for k in kept[:6]]).T  # (1, 6) of surviving ids
        before = task_forward(model, ids_old).data
        mapping = remove_vocab_rows(model.clone(), kept)  # mapping only
        pruned = model.clone()
        assert remove_vocab_rows(pruned, kept) == mapping
        assert mapping == {old: new for new, old in enumerate(kept)}
        ids_new = np.vectorize(mapping.get)(ids_old)
        np.testing.assert_allclose(task_forward(pruned, ids_new).data, before,
                                   rtol=0, atol=1e-10)
        assert pruned.config.vocab_size == len(kept)

    def test_identity_keep_is_noop(self):
        model, vocab, _ = toy()
        ids = ids_batch(vocab)
        before = task_forward(model, ids).data
        mapping = remove_vocab_rows(model, list(range(len(vocab))))
        assert mapping == {i: i for i in range(len(vocab))}
        assert task_forward(model, ids).data.tobytes() == before.tobytes()

    def test_empty_keep_rejected(self):
        model, _, _ = toy()
        with pytest.raises(ContractError):
            remove_vocab_rows(model, [])

    def test_tied_lm_head_follows_embedding(self):
        model, vocab, spec = toy(has_lm_head=True, lm_head_tied=True)
        ids = ids_batch(vocab, rows=1, n=4)
        kept = list(range(0, len(vocab), 2))
        logits_before = lm_forward(model, ids).data
        mapping = remove_vocab_rows(model, kept)
        ids_new = np.vectorize(mapping.get)(ids) if all(int(i) in mapping for i in ids.ravel()) else None
        assert model.config.lm_vocab_size == len(kept)
        assert model.lm_bias.shape == (len(kept),)
        if ids_new is not None:
            after = lm_forward(model, ids_new).data
            np.testing.assert_allclose(after, logits_before[:, :, kept], rtol=0, atol=1e-10)

    def test_untied_lm_head_respects_flag(self):
        model, vocab, _ = toy(has_lm_head=True, lm_head_tied=False)
        v = len(vocab)
        kept = list(range(v // 2))
        spared = model.clone()
        remove_vocab_rows(spared, kept, prune_lm_head=False)
        assert spared.lm_head.shape == (v, 32)
        assert spared.config.lm_vocab_size == v
        assert spared.config.vocab_size == v // 2
        pruned = model.clone()
        remove_vocab_rows(pruned, kept, prune_lm_head=True)
        assert pruned.lm_head.shape == (v // 2, 32)
        assert pruned.config.lm_vocab_size == v // 2


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model, _, _ = toy()
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        for (na, ta), (nb, tb) in zip(named_tensors(model), named_tensors(loaded)):
            assert na == nb
            assert ta.data.tobytes() == tb.data.tobytes()
        assert loaded.config == model.config

    def test_roundtrip_after_pruning(self, tmp_path):
        model, _, _ = toy(has_lm_head=True, lm_head_tied=False)
        remove_heads(model, 0, [0, 2])
        remove_ffn_neurons(model, 1, range(10))
        remove_vocab_rows(model, list(range(40)), prune_lm_head=False)
        save_model(model, tmp_path / "m")
        loaded = load_model(tmp_path / "m")
        assert loaded.config == model.config
        for (_, ta), (_, tb) in zip(named_tensors(model), named_tensors(loaded)):
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_truncated_weights_rejected(self, tmp_path):
        model, _, _ = toy()
        save_model(model, tmp_path / "m")
        wpath = tmp_path / "m" / "weights.bin"
        wpath.write_bytes(wpath.read_bytes()[:-16])
        with pytest.raises(CorruptionError):
            load_model(tmp_path / "m")

    def test_manifest_shape_mismatch_names_tensor(self, tmp_path):
        import json
        model, _, _ = toy()
        save_model(model, tmp_path / "m")
        mpath = tmp_path / "m" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["tensors"][3]["shape"][0] += 1
        mpath.write_text(json.dumps(manifest))
        name = manifest["tensors"][3]["name"]
        with pytest.raises(CorruptionError, match=name.replace(".", r"\.")):
            load_model(tmp_path / "m")


class TestCounting:
    def test_hand_computed_totals(self):
        # d=32, dh=8: per head 4*8*32 + 3*8 + 32 = 1080; ffn (65)*128 = 8320
        model, _, _ = toy()
        counts = count_parameters(model)
        assert counts["heads_total"] == 2 * 4 * 1080
        assert counts["ffn_total"] == 65 * 128
        assert counts["embedding"] == 64 * 32 + 64 * 32
        assert counts["task_head"] == 32 * 3 + 3
        assert counts["transformer"] == counts["heads_total"] + counts["ffn_total"] + 2 * 5 * 32
        assert counts["total"] == counts["embedding"] + counts["transformer"] + counts["task_head"]
        assert counts["total"] == sum(t.size for _, t in named_tensors(model))

    def test_config_counting_matches_model(self):
        model, _, spec = toy(has_lm_head=True, lm_head_tied=False)
        remove_heads(model, 0, [1])
        remove_ffn_neurons(model, 0, [0, 1, 2])
        assert count_parameters_from_config(model.config) == count_parameters(model)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(num_layers=2, hidden_size=0, head_size=8, num_heads=4,
                        ffn_size=64, vocab_size=64, max_seq_len=64, num_labels=3)
        with pytest.raises(ConfigError):
            ModelConfig(num_layers=2, hidden_size=32, head_size=8, num_heads=[4],
                        ffn_size=[64, 64], vocab_size=64, max_seq_len=64, num_labels=3)
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"num_layers": 1})
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({**toy()[0].config.to_dict(), "bogus": 1})

    def test_lm_head_param_accounting(self):
        tied, _, _ = toy(has_lm_head=True, lm_head_tied=True)
        untied, _, _ = toy(has_lm_head=True, lm_head_tied=False)
        plain, _, _ = toy()
        c_plain = count_parameters(plain)["embedding"]
        assert count_parameters(tied)["embedding"] == c_plain + 64
        assert count_parameters(untied)["embedding"] == c_plain + 64 * 32 + 64
