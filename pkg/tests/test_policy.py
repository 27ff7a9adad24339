import math

import numpy as np
import pytest

from tinyvogue import RngStream
from tinyvogue import autodiff as ad
from tinyvogue import policy as pol
from tinyvogue.errors import ContractError

SMALL = dict(vocab_size=8, embed_dim=8, n_heads=2, context_len=16, image_hw=5, image_channels=3, k_img=2, mlp_hidden=12)


def small_cfg(arch="causal-attention-1-layer"):
    return pol.PolicyConfig(architecture=arch, **SMALL)


def random_image(rng, hw=5, ch=3):
    return rng.uniform(0.0, 1.0, size=(hw, hw, ch))


def randomized_params(cfg, seed=0, dtype=np.float64, head_scale=0.5):
    """Init then overwrite with larger random weights so outputs are nonuniform."""
    params = pol.init_policy(cfg, RngStream(seed).derive("init"), dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    for name, t in params.items():
        scale = head_scale if name.startswith("out_") else 0.3
        t.data = (rng.standard_normal(t.data.shape) * scale).astype(dtype)
    return params


class TestInitAndShapes:
    @pytest.mark.parametrize("arch", pol.ARCHITECTURES)
    def test_param_budget_at_default_config(self, arch):
        cfg = pol.PolicyConfig(vocab_size=26, architecture=arch)
        params = pol.init_policy(cfg, RngStream(0).derive("init"))
        assert pol.param_count(params) <= 100_000

    @pytest.mark.parametrize("arch", pol.ARCHITECTURES)
    def test_initial_policy_is_uniform(self, arch):
        cfg = small_cfg(arch)
        params = pol.init_policy(cfg, RngStream(3).derive("init"), dtype=np.float64)
        arrs = pol.as_arrays(params)
        img = random_image(np.random.default_rng(0))
        dists = pol.next_token_dists(arrs, cfg, img, [1, 2, 3])
        for d in dists:
            np.testing.assert_allclose(d.probs, np.full(cfg.vocab_size, 1.0 / cfg.vocab_size), atol=1e-12)

    def test_uniform_entropy_is_log_vocab(self):
        # V=4 gives ln(4) ~ 1.3863
        cfg = pol.PolicyConfig(vocab_size=4, embed_dim=8, n_heads=2, context_len=16, image_hw=5, k_img=2, mlp_hidden=12)
        params = pol.init_policy(cfg, RngStream(1).derive("init"), dtype=np.float64)
        dists = pol.next_token_dists(pol.as_arrays(params), cfg, random_image(np.random.default_rng(1)), [0])
        assert abs(pol.token_entropy(dists[0]) - math.log(4)) < 1e-9

    def test_init_deterministic_given_stream(self):
        cfg = small_cfg()
        a = pol.init_policy(cfg, RngStream(5).derive("init"))
        b = pol.init_policy(cfg, RngStream(5).derive("init"))
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)

    def test_config_validation(self):
        with pytest.raises(ContractError):
            pol.PolicyConfig(vocab_size=8, architecture="transformer-48-layer").validate()
        with pytest.raises(ContractError):
            pol.PolicyConfig(vocab_size=8, embed_dim=10, n_heads=4).validate()
        with pytest.raises(ContractError):
            pol.PolicyConfig(vocab_size=1).validate()

    def test_snapshot_restore_bitwise(self):
        cfg = small_cfg()
        params = randomized_params(cfg)
        snap = pol.snapshot(params)
        params["out_w"].data += 1.0  # snapshot must be insulated from training
        restored = pol.restore(snap)
        assert restored["out_w"].data.tobytes() == snap["out_w"].tobytes()
        assert not np.array_equal(restored["out_w"].data, params["out_w"].data)


class TestFlooring:
    def test_floor_probs_contract(self):
        p = pol._softmax_rows(np.array([100.0, 0.0, -50.0, 1.0]))
        q, lq = pol.floor_probs(p, 1e-8)
        assert q.min() >= 0.5e-8
        assert abs(q.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(lq, np.log(q), rtol=0, atol=1e-12)

    def test_floor_noop_on_benign_distributions(self):
        p = np.full(26, 1.0 / 26)
        q, _ = pol.floor_probs(p, 1e-8)
        np.testing.assert_array_equal(p, q)


class TestPathConsistency:
    @pytest.mark.parametrize("arch", pol.ARCHITECTURES)
    def test_graph_matches_numpy_logps(self, arch):
        cfg = small_cfg(arch)
        params = randomized_params(cfg, seed=7)
        arrs = pol.as_arrays(params)
        rng = np.random.default_rng(2)
        img = random_image(rng)
        question = [0, 5]
        response = [3, 1, 4, 2]
        prefix = pol.encode_image_np(arrs, cfg, img)
        _, logps = pol.response_dists_np(arrs, cfg, prefix, question, response)
        np_logp = logps[np.arange(len(response)), response]
        graph_logp = pol.response_logp_graph(params, cfg, pol.encode_image_graph(params, cfg, img), question, response)
        np.testing.assert_allclose(graph_logp.data, np_logp, atol=1e-6)

    @pytest.mark.parametrize("arch", pol.ARCHITECTURES)
    def test_sampled_logps_match_teacher_forced_reeval(self, arch):
        cfg = small_cfg(arch)
        params = randomized_params(cfg, seed=11)
        arrs = pol.as_arrays(params)
        img = random_image(np.random.default_rng(4))
        question = [0, 3]
        resp = pol.sample_response(arrs, cfg, img, question, max_len=6, eos_id=7, stream=RngStream(9).derive("s"))
        assert 1 <= len(resp.tokens) <= 6
        dists = pol.next_token_dists(arrs, cfg, img, question + resp.tokens)
        for t, tok in enumerate(resp.tokens):
            d = dists[len(question) + t]
            assert abs(resp.logps[t] - d.logps[tok]) < 1e-6
            assert abs(resp.entropies[t] - pol.token_entropy(d)) < 1e-6

    def test_image_conditioning_matters(self):
        cfg = small_cfg()
        params = randomized_params(cfg, seed=13)
        arrs = pol.as_arrays(params)
        rng = np.random.default_rng(5)
        d1 = pol.next_token_dists(arrs, cfg, random_image(rng), [1, 2])
        d2 = pol.next_token_dists(arrs, cfg, random_image(rng), [1, 2])
        assert not np.allclose(d1[0].probs, d2[0].probs)


class TestSampling:
    def test_stops_after_eos(self):
        cfg = small_cfg()
        params = randomized_params(cfg, seed=3, head_scale=0.0)  # uniform, EOS appears early-ish
        arrs = pol.as_arrays(params)
        img = random_image(np.random.default_rng(6))
        resp = pol.sample_response(arrs, cfg, img, [0], max_len=10, eos_id=2, stream=RngStream(1).derive("x"))
        if 2 in resp.tokens:
            assert resp.tokens.index(2) == len(resp.tokens) - 1

    def test_max_len_cap(self):
        cfg = small_cfg()
        arrs = pol.as_arrays(randomized_params(cfg, seed=3))
        img = random_image(np.random.default_rng(7))
        for _ in range(5):
            resp = pol.sample_response(arrs, cfg, img, [0], max_len=4, eos_id=7, stream=RngStream(2).derive("y"))
            assert len(resp.tokens) <= 4

    def test_greedy_is_deterministic_and_needs_no_stream(self):
        cfg = small_cfg()
        arrs = pol.as_arrays(randomized_params(cfg, seed=19))
        img = random_image(np.random.default_rng(8))
        a = pol.sample_response(arrs, cfg, img, [0], max_len=5, eos_id=7, stream=None, greedy=True)
        b = pol.sample_response(arrs, cfg, img, [0], max_len=5, eos_id=7, stream=None, greedy=True)
        assert a.tokens == b.tokens

    def test_sampling_deterministic_given_stream(self):
        cfg = small_cfg()
        arrs = pol.as_arrays(randomized_params(cfg, seed=19))
        img = random_image(np.random.default_rng(9))
        a = pol.sample_response(arrs, cfg, img, [0], max_len=6, eos_id=7, stream=RngStream(4).derive("z"))
        b = pol.sample_response(arrs, cfg, img, [0], max_len=6, eos_id=7, stream=RngStream(4).derive("z"))
        assert a.tokens == b.tokens and np.array_equal(a.logps, b.logps)

    def test_temperature_and_image_validation(self):
        cfg = small_cfg()
        arrs = pol.as_arrays(randomized_params(cfg))
        img = random_image(np.random.default_rng(0))
        with pytest.raises(ContractError):
            pol.sample_response(arrs, cfg, img, [0], max_len=4, eos_id=7, stream=RngStream(0), temperature=0.0)
        with pytest.raises(ContractError):
            pol.sample_response(arrs, cfg, img * 3.0, [0], max_len=4, eos_id=7, stream=RngStream(0))
        with pytest.raises(ContractError):
            pol.sample_response(arrs, cfg, img[:3], [0], max_len=4, eos_id=7, stream=RngStream(0))

    def test_context_overflow_rejected(self):
        cfg = small_cfg()
        arrs = pol.as_arrays(randomized_params(cfg))
        img = random_image(np.random.default_rng(1))
        with pytest.raises(ContractError):
            pol.next_token_dists(arrs, cfg, img, list(range(2)) * 10)


class TestPolicyGradients:
    @pytest.mark.parametrize("arch", pol.ARCHITECTURES)
    def test_nll_gradcheck_every_parameter(self, arch):
        cfg = small_cfg(arch)
        params = randomized_params(cfg, seed=23)
        img = random_image(np.random.default_rng(10))
        question, response = [0, 4], [3, 1, 5]

        def nll(_):
            prefix = pol.encode_image_graph(params, cfg, img)
            lp = pol.response_logp_graph(params, cfg, prefix, question, response)
            return ad.scale(ad.tsum(lp), -1.0)

        for name in params:
            err = ad.check_gradients(nll, params[name])
            assert err <= 1e-5, f"{arch}/{name}: rel err {err}"
