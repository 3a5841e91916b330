"""Concept bank IO and region-conditioned prompt refinement."""

import json

import numpy as np
import pytest

from vdrp.concepts import (ROUTES, ConceptBank, load_concepts, refine_prompts,
                           refine_prompts_backward, save_concepts)
from vdrp.core import Rng, grad_check
from vdrp.errors import DataError, DegenerateInputWarning, DimensionError


def make_bank(seed=5, n_verbs=3, k=4, d=6):
    rng = Rng(seed)
    embeddings, texts = {}, {}
    for route in ROUTES:
        embeddings[route] = rng.normal((n_verbs, k, d)) + 0.1
        texts[route] = [[f"{route} verb{v} concept{i}" for i in range(k)]
                        for v in range(n_verbs)]
    return ConceptBank(embeddings=embeddings, texts=texts)


class TestBankIO:
    def test_round_trip(self, tmp_path):
        bank = make_bank()
        p = tmp_path / "concepts.json"
        save_concepts(p, bank)
        back = load_concepts(p, bank.n_verbs, bank.dim)
        for route in ROUTES:
            # storage is textual floats, round trip is exact
            assert np.array_equal(back.embeddings[route], bank.embeddings[route])
            assert back.texts[route] == bank.texts[route]

    def test_missing_verb_rejected(self, tmp_path):
        bank = make_bank(n_verbs=2)
        p = tmp_path / "concepts.json"
        save_concepts(p, bank)
        with pytest.raises(DataError):
            load_concepts(p, 3, bank.dim)

    def test_missing_route_rejected(self, tmp_path):
        p = tmp_path / "concepts.json"
        payload = {"0": {"human": [{"text": "t", "embedding": [1.0, 0.0]}]}}
        p.write_text(json.dumps(payload))
        with pytest.raises(DataError):
            load_concepts(p, 1, 2)

    def test_ragged_bank_rejected(self, tmp_path):
        bank = make_bank(n_verbs=1, k=2)
        p = tmp_path / "concepts.json"
        save_concepts(p, bank)
        raw = json.loads(p.read_text())
        raw["0"]["object"] = raw["0"]["object"][:1]
        p.write_text(json.dumps(raw))
        with pytest.raises(DataError):
            load_concepts(p, 1, bank.dim)

    def test_zero_embedding_rejected(self, tmp_path):
        p = tmp_path / "concepts.json"
        item = {"text": "t", "embedding": [0.0, 0.0]}
        ok = {"text": "t", "embedding": [1.0, 0.0]}
        payload = {"0": {"human": [item], "object": [ok], "union": [ok]}}
        p.write_text(json.dumps(payload))
        with pytest.raises(DataError):
            load_concepts(p, 1, 2)

    def test_wrong_width_rejected(self, tmp_path):
        bank = make_bank(d=4)
        p = tmp_path / "concepts.json"
        save_concepts(p, bank)
        with pytest.raises(DataError):
            load_concepts(p, bank.n_verbs, 6)

    def test_garbage_file_rejected(self, tmp_path):
        p = tmp_path / "concepts.json"
        p.write_text("not json {")
        with pytest.raises(DataError):
            load_concepts(p, 1, 2)

    def test_unit_property(self):
        bank = make_bank()
        u = bank.unit("union")
        assert np.allclose(np.linalg.norm(u, axis=2), 1.0, atol=1e-12)


class TestRefine:
    def test_gamma_zero_is_identity(self):
        bank = make_bank()
        prompts = Rng(1).normal((3, 6))
        x = Rng(2).normal(6)
        refined, _ = refine_prompts(prompts, x, bank.embeddings["human"], gamma=0.0)
        assert np.allclose(refined, prompts, atol=1e-15)

    def test_adds_weighted_centroid(self):
        bank = make_bank()
        c = bank.embeddings["union"]
        prompts = np.zeros((3, 6))
        x = Rng(3).normal(6)
        refined, cache = refine_prompts(prompts, x, c, gamma=0.5)
        # recompute the centroid from the cached weights
        from vdrp.simplex import retrieve_weights
        unit = c / np.linalg.norm(c, axis=2, keepdims=True)
        xhat = x / np.linalg.norm(x)
        for v in range(3):
            w = retrieve_weights(unit[v] @ xhat, "sparsemax")
            assert np.allclose(refined[v], 0.5 * (w @ c[v]), atol=1e-12)

    def test_weights_live_on_simplex(self):
        bank = make_bank()
        _, cache = refine_prompts(np.zeros((3, 6)), Rng(4).normal(6),
                                  bank.embeddings["human"], gamma=1.0)
        s = cache["scores"]
        assert s.shape == (3, 4)
        assert np.all(s <= 1.0 + 1e-12) and np.all(s >= -1.0 - 1e-12)

    def test_zero_region_feature_skips(self):
        bank = make_bank()
        prompts = Rng(5).normal((3, 6))
        with pytest.warns(DegenerateInputWarning):
            refined, cache = refine_prompts(prompts, np.zeros(6),
                                            bank.embeddings["human"], gamma=0.7)
        assert np.array_equal(refined, prompts)
        d_p, d_x = refine_prompts_backward(cache, np.ones((3, 6)))
        assert np.array_equal(d_p, np.ones((3, 6)))
        assert np.all(d_x == 0.0)

    def test_shape_mismatch_rejected(self):
        bank = make_bank()
        with pytest.raises(DimensionError):
            refine_prompts(np.zeros((2, 6)), np.zeros(6), bank.embeddings["human"], 0.1)


class TestRefineBackward:
    @pytest.mark.parametrize("mode,kw", [
        ("sparsemax", {}),
        ("softmax", {"temperature": 0.7}),
        ("top_k", {"k": 2}),
    ])
    def test_dx_matches_finite_differences(self, mode, kw):
        bank = make_bank()
        c = bank.embeddings["object"]
        prompts = Rng(6).normal((3, 6))
        g = Rng(7).normal((3, 6))
        rng = Rng(8)
        checked = 0
        for _ in range(20):
            x = rng.normal(6)
            _, cache = refine_prompts(prompts, x, c, 0.4, mode=mode, **kw)
            _, d_x = refine_prompts_backward(cache, g)

            def f(v):
                out, _ = refine_prompts(prompts, v, c, 0.4, mode=mode, **kw)
                return float(np.sum(out * g))

            err = grad_check(f, x, d_x, step=1e-6)
            if mode == "sparsemax" and err > 1e-5:
                continue  # finite differences cross a support boundary
            assert err < 1e-5
            checked += 1
        assert checked >= 15

    def test_dprompts_is_passthrough(self):
        bank = make_bank()
        _, cache = refine_prompts(Rng(1).normal((3, 6)), Rng(2).normal(6),
                                  bank.embeddings["human"], 0.3)
        g = Rng(3).normal((3, 6))
        d_p, _ = refine_prompts_backward(cache, g)
        assert np.array_equal(d_p, g)
