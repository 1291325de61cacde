import itertools

import numpy as np
import pytest

from sfvda import model as M
from sfvda.tensor import Tensor, no_grad


def tiny_model(k=3, d_in=4, n_classes=3, seed=0, **kw):
    return M.init_model(k=k, d_in=d_in, n_classes=n_classes, seed=seed, **kw)


class TestSampleClips:
    def test_k3_is_exhaustive_at_top_scale(self):
        clips = M.sample_clips(3, 3, np.random.default_rng(0))
        assert clips.clips[3] == [(0, 1, 2)]
        assert len(clips.clips[2]) == 3  # all of C(3,2)

    def test_fixed_seed_is_deterministic(self):
        a = M.sample_clips(5, 3, np.random.default_rng(77))
        b = M.sample_clips(5, 3, np.random.default_rng(77))
        assert a.clips == b.clips

    def test_large_m_max_enumerates_all(self):
        clips = M.sample_clips(5, 100, np.random.default_rng(1))
        assert sorted(clips.clips[2]) == list(itertools.combinations(range(5), 2))
        assert len(clips.clips[2]) == 10

    def test_tuples_strictly_increasing_and_distinct(self):
        for seed in range(20):
            clips = M.sample_clips(6, 4, np.random.default_rng(seed))
            for r, tuples in clips.clips.items():
                assert len(set(tuples)) == len(tuples)
                for tup in tuples:
                    assert list(tup) == sorted(set(tup))

    def test_validation(self):
        with pytest.raises(ValueError):
            M.sample_clips(2, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            M.ClipIndexSet(k=3, clips={2: [(1, 0)], 3: [(0, 1, 2)]})
        with pytest.raises(ValueError):
            M.ClipIndexSet(k=3, clips={2: [(0, 1), (0, 1)], 3: [(0, 1, 2)]})

    def test_eval_clip_set_per_video_determinism(self):
        a = M.eval_clip_set("target-c00-v0001", 5, 3)
        b = M.eval_clip_set("target-c00-v0001", 5, 3)
        other = M.eval_clip_set("target-c00-v0002", 5, 3)
        assert a.clips == b.clips
        assert a.clips != other.clips


class TestEncoder:
    def test_identity_initialized_encoder_passes_frames_through(self):
        params = tiny_model(d_in=4, d_enc=4)
        w1 = np.zeros((4, M.ENCODER_HIDDEN))
        w1[:4, :4] = np.eye(4)
        w2 = np.zeros((M.ENCODER_HIDDEN, 4))
        w2[:4, :4] = np.eye(4)
        params.enc_w1 = Tensor(w1, requires_grad=True)
        params.enc_b1 = Tensor(np.zeros(M.ENCODER_HIDDEN), requires_grad=True)
        params.enc_w2 = Tensor(w2, requires_grad=True)
        params.enc_b2 = Tensor(np.zeros(4), requires_grad=True)
        frames = np.abs(np.random.default_rng(0).normal(size=(2, 3, 4)))
        enc = M.encode_frames(frames, params)
        for j in range(3):
            assert np.allclose(enc[j].data, frames[:, j], atol=1e-12)

    def test_equal_frames_equal_encodings(self):
        params = tiny_model()
        frame = np.random.default_rng(1).normal(size=4)
        frames = np.stack([np.stack([frame, frame, frame])])
        enc = M.encode_frames(frames, params)
        assert np.array_equal(enc[0].data, enc[1].data)
        assert np.array_equal(enc[1].data, enc[2].data)

    def test_matches_scripted_forward(self):
        params = tiny_model(seed=9)
        frames = np.random.default_rng(2).normal(size=(3, 3, 4))
        enc = M.encode_frames(frames, params)
        for j in range(3):
            h = np.maximum(frames[:, j] @ params.enc_w1.data + params.enc_b1.data, 0.0)
            expected = h @ params.enc_w2.data + params.enc_b2.data
            assert np.max(np.abs(enc[j].data - expected)) < 1e-12

    def test_dimension_mismatch(self):
        params = tiny_model()
        with pytest.raises(ValueError, match="encode_frames"):
            M.encode_frames(np.zeros((2, 3, 5)), params)


def scripted_relation(params, r, clip_input):
    w1, b1, w2, b2 = params.relation[r]
    h = np.maximum(clip_input @ w1.data + b1.data, 0.0)
    return h @ w2.data + b2.data


class TestLocalTemporalFeatures:
    def test_single_clip_is_no_summation(self):
        params = tiny_model()
        clips = M.ClipIndexSet(k=3, clips={2: [(0, 2)], 3: [(0, 1, 2)]})
        frames = np.random.default_rng(3).normal(size=(2, 3, 4))
        enc = M.encode_frames(frames, params)
        lts = M.local_temporal_features(enc, clips, params)
        enc_np = np.stack([e.data for e in enc], axis=1)
        clip_in = np.concatenate([enc_np[:, 0], enc_np[:, 2]], axis=1)
        assert np.max(np.abs(lts[0].data - scripted_relation(params, 2, clip_in))) < 1e-12

    def test_zero_relation_map_gives_zero(self):
        params = tiny_model()
        for r in params.relation:
            w1, b1, w2, b2 = params.relation[r]
            params.relation[r] = (
                w1,
                b1,
                Tensor(np.zeros_like(w2.data), requires_grad=True),
                Tensor(np.zeros_like(b2.data), requires_grad=True),
            )
        frames = np.random.default_rng(4).normal(size=(2, 3, 4))
        enc = M.encode_frames(frames, params)
        for lt in M.local_temporal_features(enc, M.sample_clips(3, 3, np.random.default_rng(0)), params):
            assert np.allclose(lt.data, 0.0, atol=0)

    def test_two_clips_sum(self):
        params = tiny_model()
        clips = M.ClipIndexSet(k=3, clips={2: [(0, 1), (1, 2)], 3: [(0, 1, 2)]})
        frames = np.random.default_rng(5).normal(size=(2, 3, 4))
        enc = M.encode_frames(frames, params)
        lts = M.local_temporal_features(enc, clips, params)
        enc_np = np.stack([e.data for e in enc], axis=1)
        first = scripted_relation(params, 2, np.concatenate([enc_np[:, 0], enc_np[:, 1]], axis=1))
        second = scripted_relation(params, 2, np.concatenate([enc_np[:, 1], enc_np[:, 2]], axis=1))
        assert np.max(np.abs(lts[0].data - (first + second))) < 1e-12

    def test_per_video_clip_sets(self):
        params = tiny_model()
        frames = np.random.default_rng(6).normal(size=(2, 3, 4))
        enc = M.encode_frames(frames, params)
        per_video = [
            M.ClipIndexSet(k=3, clips={2: [(0, 1)], 3: [(0, 1, 2)]}),
            M.ClipIndexSet(k=3, clips={2: [(1, 2)], 3: [(0, 1, 2)]}),
        ]
        lts = M.local_temporal_features(enc, per_video, params)
        enc_np = np.stack([e.data for e in enc], axis=1)
        want0 = scripted_relation(params, 2, np.concatenate([enc_np[:1, 0], enc_np[:1, 1]], axis=1))
        want1 = scripted_relation(params, 2, np.concatenate([enc_np[1:, 1], enc_np[1:, 2]], axis=1))
        assert np.max(np.abs(lts[0].data[0] - want0[0])) < 1e-12
        assert np.max(np.abs(lts[0].data[1] - want1[0])) < 1e-12


class TestAggregate:
    def test_unit_weights_match_unweighted(self):
        rng = np.random.default_rng(7)
        lts = [Tensor(rng.normal(size=(3, 4))) for _ in range(2)]
        plain = M.aggregate_overall(lts)
        weighted = M.aggregate_overall(lts, np.ones((3, 2)))
        assert np.max(np.abs(plain.data - weighted.data)) < 1e-12

    def test_mean_example(self):
        lts = [Tensor([[2.0, 0.0]]), Tensor([[0.0, 2.0]])]
        assert np.allclose(M.aggregate_overall(lts).data, [[1.0, 1.0]])

    def test_weighted_example(self):
        lts = [Tensor([[2.0, 0.0]]), Tensor([[0.0, 2.0]])]
        out = M.aggregate_overall(lts, np.array([[2.0, 0.0]]))
        assert np.allclose(out.data, [[2.0, 0.0]])


class TestClassify:
    def test_eval_before_train_raises(self):
        params = tiny_model()
        with pytest.raises(RuntimeError, match="train-mode"):
            M.classify(Tensor(np.zeros((2, params.d))), params, mode="eval")

    def test_zero_features_zero_bias_uniform(self):
        params = tiny_model()
        params.bot_b = Tensor(np.zeros_like(params.bot_b.data), requires_grad=True)
        params.bn_initialized = True  # fresh running stats: mean 0, var 1
        logits = M.classify(Tensor(np.zeros((2, params.d))), params, mode="eval")
        assert np.allclose(logits.data, logits.data[:, :1], atol=1e-12)

    def test_eval_matches_scripted_forward(self):
        params = tiny_model(seed=11)
        rng = np.random.default_rng(8)
        params.bn_mean = rng.normal(size=params.d_b)
        params.bn_var = rng.uniform(0.5, 2.0, size=params.d_b)
        params.bn_initialized = True
        x = rng.normal(size=(4, params.d))
        logits = M.classify(Tensor(x), params, mode="eval")
        h = x @ params.bot_w.data + params.bot_b.data
        hat = (h - params.bn_mean) / np.sqrt(params.bn_var + M.BN_EPS)
        normed = hat * params.bn_gamma.data + params.bn_beta.data
        v = params.wn_v.data
        w_eff = v * (params.wn_g.data / np.linalg.norm(v, axis=1, keepdims=True))
        expected = normed @ w_eff.T + params.wn_b.data
        assert np.max(np.abs(logits.data - expected)) < 1e-12

    def test_train_mode_updates_running_stats_frozen_does_not(self):
        params = tiny_model()
        x = Tensor(np.random.default_rng(9).normal(size=(8, params.d)))
        before = params.bn_mean.copy()
        M.classify(x, params, mode="train")
        assert not np.array_equal(params.bn_mean, before)
        frozen_before = params.bn_mean.copy()
        M.classify(x, params, mode="train", frozen=True)
        assert np.array_equal(params.bn_mean, frozen_before)

    def test_weight_norm_row_norms_equal_magnitude(self):
        params = tiny_model(seed=13)
        v = params.wn_v.data
        w_eff = v * (params.wn_g.data / np.linalg.norm(v, axis=1, keepdims=True))
        assert np.max(np.abs(np.linalg.norm(w_eff, axis=1) - params.wn_g.data.reshape(-1))) < 1e-10


class TestModelState:
    def test_copy_is_bitwise(self):
        params = tiny_model(seed=21)
        M.classify(Tensor(np.random.default_rng(0).normal(size=(4, params.d))), params, mode="train")
        clone = params.copy()
        for (name_a, a), (name_b, b) in zip(params.named_parameters(), clone.named_parameters()):
            assert name_a == name_b
            assert a.data.tobytes() == b.data.tobytes()
        assert params.bn_mean.tobytes() == clone.bn_mean.tobytes()
        clone.enc_w1.data[0, 0] += 1.0
        assert params.enc_w1.data[0, 0] != clone.enc_w1.data[0, 0]

    def test_freeze_scopes(self):
        params = tiny_model()
        params.freeze_head("last_layer_only")
        assert not params.wn_v.requires_grad
        assert params.bot_w.requires_grad
        params = tiny_model()
        params.freeze_head("head_all")
        for _, t in params.head_parameters("head_all"):
            assert not t.requires_grad
        assert params.enc_w1.requires_grad
        with pytest.raises(ValueError):
            params.head_parameters("bogus")

    def test_checkpoint_roundtrip_value_exact(self, tmp_path):
        params = tiny_model(k=4, d_in=6, n_classes=5, seed=33)
        M.classify(Tensor(np.random.default_rng(1).normal(size=(4, params.d))), params, mode="train")
        params.aggregation = "entropy_weighted"
        path = tmp_path / "model.json"
        M.save_checkpoint(params, path)
        loaded = M.load_checkpoint(path)
        for (name_a, a), (_, b) in zip(params.named_parameters(), loaded.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), name_a
        assert loaded.bn_mean.tobytes() == params.bn_mean.tobytes()
        assert loaded.bn_var.tobytes() == params.bn_var.tobytes()
        assert loaded.bn_initialized == params.bn_initialized
        assert loaded.aggregation == "entropy_weighted"
        assert (loaded.k, loaded.d_in, loaded.n_classes) == (4, 6, 5)
        M.save_checkpoint(loaded, tmp_path / "again.json")
        assert (tmp_path / "model.json").read_bytes() == (tmp_path / "again.json").read_bytes()

    def test_checkpoint_version_check(self, tmp_path):
        params = tiny_model()
        path = tmp_path / "model.json"
        M.save_checkpoint(params, path)
        doc = path.read_text().replace('"format_version": 1', '"format_version": 99')
        path.write_text(doc)
        with pytest.raises(ValueError, match="format_version"):
            M.load_checkpoint(path)


def test_eval_forward_is_permutation_invariant():
    params = tiny_model(k=4, d_in=5, n_classes=3, seed=3)
    M.classify(Tensor(np.random.default_rng(2).normal(size=(6, params.d))), params, mode="train")
    rng = np.random.default_rng(10)
    frames = rng.normal(size=(5, 4, 5))
    ids = [f"v{i}" for i in range(5)]

    def forward(frames, ids):
        with no_grad():
            enc = M.encode_frames(frames, params)
            clip_sets = [M.eval_clip_set(i, params.k, params.m_max) for i in ids]
            lts = M.local_temporal_features(enc, clip_sets, params)
            overall = M.aggregate_overall(lts)
            return M.classify(overall, params, mode="eval").data

    base = forward(frames, ids)
    perm = np.array([3, 0, 4, 1, 2])
    permuted = forward(frames[perm], [ids[i] for i in perm])
    # BLAS kernels pick lanes by row position, so equality holds to rounding,
    # not bitwise
    assert np.max(np.abs(base[perm] - permuted)) < 1e-12
