import math

import numpy as np
import pytest

from grouprec import dmtl, numerics as nm
from grouprec.dataio import FeatureMatrix
from grouprec.grouping import GroupRating, GroupRatingsTable
from helpers import numeric_grad, rel_error


def identity_params(c=2):
    I = np.eye(2)
    return dmtl.DmtlParams(
        W_u=I.copy(), b_u=np.zeros(2), W_i=I.copy(), b_i=np.zeros(2),
        W_concat=I.copy(), b_concat=np.zeros(2), W_attn=I.copy(), b_attn=np.zeros(2),
        W_score=I.copy(), b_score=np.zeros(2), W_shared=I.copy(), b_shared=np.zeros(2),
        W_profile=np.eye(c, 2), b_profile=np.zeros(c),
        w_rec=np.zeros(c), w_item=np.zeros(2), b_rec=np.zeros(()),
    )


def random_params(seed, d_u=6, d_i=5, h1=4, h_attn=3, h2=4, c=3):
    cfg = dmtl.DmtlConfig(h1=h1, h_attn=h_attn, h2=h2, n_classes=c, seed=seed)
    return dmtl.DmtlParams.initialize(d_u, d_i, cfg), cfg


class TestForward:
    def test_hand_traced_identity_weights(self):
        t = dmtl.forward(identity_params(), np.array([1.0, -1.0]), np.array([2.0, 0.0]))
        assert np.allclose(t.h_u, [1.0, 0.0])
        assert np.allclose(t.h_i, [2.0, 0.0])
        assert np.allclose(t.h_concat, [3.0, 0.0])
        e3 = math.exp(3.0)
        alpha0 = e3 / (e3 + 1.0)
        assert np.allclose(t.alpha, [alpha0, 1.0 - alpha0])
        assert np.allclose(t.alpha, [0.9526, 0.0474], atol=5e-5)
        assert np.allclose(t.h_attn_item, [2.0 * alpha0, 0.0])
        assert np.allclose(t.h_combined, [1.0 + 2.0 * alpha0, 0.0])
        assert np.allclose(t.h_combined, [2.9052, 0.0], atol=5e-5)

    def test_zero_item_features(self):
        params, _ = random_params(0)
        t = dmtl.forward(params, np.random.default_rng(1).normal(size=6), np.zeros(5))
        assert np.allclose(t.h_i, 0.0)
        assert np.allclose(t.h_attn_item, 0.0)
        assert np.allclose(t.h_combined, t.h_u)

    def test_alpha_sums_to_one(self):
        params, _ = random_params(2)
        rng = np.random.default_rng(3)
        for _ in range(25):
            t = dmtl.forward(params, rng.normal(size=6), rng.normal(size=5))
            assert abs(t.alpha.sum() - 1.0) < 1e-9
            assert (t.alpha >= 0).all()

    def test_batched_matches_single(self):
        params, _ = random_params(4)
        rng = np.random.default_rng(5)
        Xu = rng.normal(size=(7, 6))
        Xi = rng.normal(size=(7, 5))
        batched = dmtl.forward(params, Xu, Xi)
        for r in range(7):
            single = dmtl.forward(params, Xu[r], Xi[r])
            assert np.allclose(batched.z[r], single.z, atol=1e-12)
            assert np.isclose(batched.r_hat[r], single.r_hat)

    def test_shape_mismatch(self):
        params, _ = random_params(6)
        with pytest.raises(nm.ShapeError):
            dmtl.forward(params, np.zeros(7), np.zeros(5))


class TestAggregateGroup:
    def traces(self, params, n, seed):
        rng = np.random.default_rng(seed)
        x_i = rng.normal(size=5)
        return [dmtl.forward(params, rng.normal(size=6), x_i) for _ in range(n)]

    def test_singleton_equals_forward(self):
        params, _ = random_params(7)
        (t,) = self.traces(params, 1, 8)
        logits, r_hat = dmtl.aggregate_group(params, [t])
        assert np.allclose(logits, t.logits, atol=1e-12)
        assert np.isclose(r_hat, float(t.r_hat))

    def test_identical_members_idempotent(self):
        params, _ = random_params(9)
        (t,) = self.traces(params, 1, 10)
        logits, r_hat = dmtl.aggregate_group(params, [t, t, t])
        assert np.allclose(logits, t.logits, atol=1e-12)
        assert np.isclose(r_hat, float(t.r_hat))

    def test_three_members_match_head_averaging(self):
        params, _ = random_params(11)
        ts = self.traces(params, 3, 12)
        logits, r_hat = dmtl.aggregate_group(params, ts)
        assert np.abs(logits - np.mean([t.logits for t in ts], axis=0)).max() < 1e-9
        assert abs(r_hat - np.mean([t.r_hat for t in ts])) < 1e-9

    def test_empty_group_rejected(self):
        params, _ = random_params(13)
        with pytest.raises(nm.DomainError):
            dmtl.aggregate_group(params, [])


def toy_problem(seed, n_groups=5, users_per_group=2, n_items=16, n_entries=50,
                d_u=6, d_i=5, planted=True):
    """Random features; targets from a planted linear map when requested,
    otherwise pure noise uncorrelated with the group labels."""
    rng = np.random.default_rng(seed)
    n_users = n_groups * users_per_group
    Xu = FeatureMatrix(rng.normal(size=(n_users, d_u)))
    Xi = FeatureMatrix(rng.normal(size=(n_items, d_i)))
    a = rng.normal(size=d_u)
    b = rng.normal(size=d_i)
    entries = []
    seen = set()
    while len(entries) < n_entries:
        g = int(rng.integers(n_groups))
        item = int(rng.integers(n_items))
        if (g, item) in seen:
            continue
        seen.add((g, item))
        members = tuple(range(g * users_per_group, (g + 1) * users_per_group))
        if planted:
            r = float(np.mean([Xu.values[m] @ a for m in members]) + Xi.values[item] @ b + 3.0)
        else:
            r = float(rng.normal(loc=3.0))
        entries.append(GroupRating(g, item, r, len(members), members))
    entries.sort(key=lambda e: (e.group, e.item))
    return GroupRatingsTable(entries, n_groups, (1.0, 5.0)), Xu, Xi


class TestLoss:
    def test_lambda_zero_is_rec_loss_exactly(self):
        table, Xu, Xi = toy_problem(14)
        params, _ = random_params(15, c=5)
        batch = dmtl.build_batch(table.entries, Xu, Xi)
        p = params.to_dict()
        _, l_rec, _ = dmtl._graph_loss(p, batch, 0.0)
        assert dmtl.loss(params, batch, 0.0) == float(l_rec)

    def test_joint_is_sum_of_parts(self):
        table, Xu, Xi = toy_problem(16)
        params, _ = random_params(17, c=5)
        batch = dmtl.build_batch(table.entries, Xu, Xi)
        p = params.to_dict()
        total, l_rec, l_prof = dmtl._graph_loss(p, batch, 0.7)
        assert np.isclose(float(total), float(l_rec) + 0.7 * float(l_prof), atol=1e-12)

    def test_hand_computed_single_tuple(self):
        # uniform logits over C=20 and a rating error of exactly 1
        cfg = dmtl.DmtlConfig(h1=4, h_attn=3, h2=4, n_classes=20, seed=18)
        params = dmtl.DmtlParams.initialize(6, 5, cfg)
        params.W_profile[:] = 0.0
        params.b_profile[:] = 0.0
        params.w_item[:] = 0.0
        params.b_rec = np.asarray(3.0)
        rng = np.random.default_rng(19)
        Xu = FeatureMatrix(rng.normal(size=(2, 6)))
        Xi = FeatureMatrix(rng.normal(size=(2, 5)))
        entry = GroupRating(0, 0, 4.0, 1, (0,))
        batch = dmtl.build_batch([entry], Xu, Xi)
        assert np.isclose(dmtl.loss(params, batch, 1.0), 1.0 + math.log(20.0))

    def test_negative_lambda_rejected(self):
        table, Xu, Xi = toy_problem(20)
        params, _ = random_params(21, c=5)
        with pytest.raises(Exception):
            dmtl.loss(params, dmtl.build_batch(table.entries, Xu, Xi), -0.1)

    def test_label_out_of_range(self):
        table, Xu, Xi = toy_problem(22)
        params, _ = random_params(23, c=2)  # labels go up to 4
        with pytest.raises(IndexError):
            dmtl.loss(params, dmtl.build_batch(table.entries, Xu, Xi), 0.5)


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_full_loss_matches_finite_differences(self, seed):
        cfg = dmtl.DmtlConfig(h1=4, h_attn=4, h2=4, n_classes=3, seed=seed)
        rng = np.random.default_rng(100 + seed)
        Xu = FeatureMatrix(rng.normal(size=(6, 8)))
        Xi = FeatureMatrix(rng.normal(size=(5, 8)))
        entries = [
            GroupRating(0, 0, 4.0, 2, (0, 1)),
            GroupRating(1, 2, 2.5, 3, (2, 3, 4)),
            GroupRating(2, 4, 3.5, 1, (5,)),
        ]
        batch = dmtl.build_batch(entries, Xu, Xi)
        params = dmtl.DmtlParams.initialize(8, 8, cfg)
        # jitter the zero biases so no ReLU pre-activation sits exactly on the
        # kink, where the subgradient convention and central differences differ
        for name in dmtl._PARAM_NAMES:
            arr = getattr(params, name)
            arr += rng.normal(scale=0.01, size=arr.shape)
        nodes = {k: nm.Param(v, k) for k, v in params.to_dict().items()}
        total, _, _ = dmtl._graph_loss(nodes, batch, 0.5)
        nm.backward(total)
        base = params.to_dict()
        for name in dmtl._PARAM_NAMES:
            def f(arr, name=name):
                trial = dict(base)
                trial[name] = arr
                t, _, _ = dmtl._graph_loss(trial, batch, 0.5)
                return float(t)

            fd = numeric_grad(f, base[name].copy())
            got = nodes[name].grad
            got = got if got is not None else np.zeros_like(base[name])
            assert rel_error(got, fd) < 1e-4, f"gradient mismatch for {name}"


class TestTrain:
    def test_planted_model_mse_drops(self):
        table, Xu, Xi = toy_problem(24, planted=True)
        cfg = dmtl.DmtlConfig(h1=16, h_attn=8, h2=16, n_classes=5, lam=0.2,
                              learning_rate=3e-3, epochs=200, batch_size=16, seed=0)
        _, history = dmtl.train(cfg, table, Xu, Xi)
        assert history[-1]["rec_loss"] < 0.10 * history[0]["rec_loss"]

    def test_lambda_zero_decouples_tasks(self):
        table, Xu, Xi = toy_problem(25, planted=True)
        cfg = dmtl.DmtlConfig(h1=16, h_attn=8, h2=16, n_classes=5, lam=0.0,
                              learning_rate=3e-3, epochs=150, batch_size=16, seed=1)
        params, history = dmtl.train(cfg, table, Xu, Xi)
        assert history[-1]["rec_loss"] < 0.3 * history[0]["rec_loss"]
        batch = dmtl.build_batch(table.entries, Xu, Xi)

        def pooled_logits(ps):
            p = ps.to_dict()
            logits, _ = dmtl.pair_outputs(
                p,
                dmtl._embed_user(p, Xu.values[batch.member_users]),
                dmtl._embed_item(p, Xi.values[batch.items[batch.segments]]),
            )
            return dmtl.segment_mean(logits, batch.segments, batch.n_tuples)

        acc_untrained_head = (pooled_logits(params).argmax(axis=1) == batch.labels).mean()

        cfg_on = dmtl.DmtlConfig(h1=16, h_attn=8, h2=16, n_classes=5, lam=1.0,
                                 learning_rate=3e-3, epochs=150, batch_size=16, seed=1)
        params_on, _ = dmtl.train(cfg_on, table, Xu, Xi)
        acc_trained_head = (pooled_logits(params_on).argmax(axis=1) == batch.labels).mean()
        assert acc_trained_head > 0.8
        assert acc_untrained_head < 0.6

    def test_same_seed_bit_identical(self):
        table, Xu, Xi = toy_problem(26)
        cfg = dmtl.DmtlConfig(h1=8, h_attn=4, h2=8, n_classes=5, epochs=5,
                              batch_size=16, seed=7)
        p1, h1 = dmtl.train(cfg, table, Xu, Xi)
        p2, h2 = dmtl.train(cfg, table, Xu, Xi)
        assert h1 == h2
        for name in dmtl._PARAM_NAMES:
            assert np.array_equal(getattr(p1, name), getattr(p2, name))

    def test_rec_loss_at_step_zero_independent_of_lambda(self):
        table, Xu, Xi = toy_problem(27)
        params, _ = random_params(28, c=5)
        batch = dmtl.build_batch(table.entries, Xu, Xi)
        p = params.to_dict()
        _, rec0, _ = dmtl._graph_loss(p, batch, 0.0)
        _, rec1, _ = dmtl._graph_loss(p, batch, 2.0)
        assert float(rec0) == float(rec1)

    def test_divergence_reported_with_epoch_and_lr(self):
        table, Xu, Xi = toy_problem(29)
        Xu.values[0, 0] = np.nan
        cfg = dmtl.DmtlConfig(h1=8, h_attn=4, h2=8, n_classes=5, epochs=5,
                              batch_size=16, seed=2, learning_rate=0.05)
        with pytest.raises(dmtl.DivergenceError, match=r"epoch 0.*0\.05"):
            dmtl.train(cfg, table, Xu, Xi)


class TestRecommend:
    def test_saturation_returns_full_ranking(self):
        params, _ = random_params(30)
        rng = np.random.default_rng(31)
        Xu = FeatureMatrix(rng.normal(size=(4, 6)))
        Xi = FeatureMatrix(rng.normal(size=(9, 5)))
        out = dmtl.recommend_top_k(params, [0, 1], np.arange(9), 50, Xu, Xi)
        assert len(out) == 9
        assert sorted(out.tolist()) == list(range(9))

    def test_ties_broken_by_item_index(self):
        params = identity_params()
        params.w_rec[:] = 0.0
        params.w_item[:] = 0.0
        params.b_rec = np.asarray(5.0)
        rng = np.random.default_rng(32)
        Xu = FeatureMatrix(rng.normal(size=(2, 2)))
        Xi = FeatureMatrix(rng.normal(size=(6, 2)))
        out = dmtl.recommend_top_k(params, [0], np.array([4, 1, 3]), 2, Xu, Xi)
        assert out.tolist() == [1, 3]

    def test_matches_sort_oracle(self):
        params, _ = random_params(33)
        rng = np.random.default_rng(34)
        Xu = FeatureMatrix(rng.normal(size=(3, 6)))
        Xi = FeatureMatrix(rng.normal(size=(5, 5)))
        cands = np.arange(5)
        scores = dmtl.score_group_items(params, [0, 2], cands, Xu, Xi)
        oracle = [item for _, item in sorted(zip(-scores, cands))]
        out = dmtl.recommend_top_k(params, [0, 2], cands, 5, Xu, Xi)
        assert out.tolist() == oracle

    def test_positive_affine_transform_preserves_ranking(self):
        params, _ = random_params(35)
        rng = np.random.default_rng(36)
        Xu = FeatureMatrix(rng.normal(size=(3, 6)))
        Xi = FeatureMatrix(rng.normal(size=(8, 5)))
        scaled = dmtl.DmtlParams.from_dict(params.to_dict())
        scaled.w_rec = params.w_rec * 2.5
        scaled.w_item = params.w_item * 2.5
        scaled.b_rec = np.asarray(float(params.b_rec) * 2.5 + 7.0)
        a = dmtl.recommend_top_k(params, [1], np.arange(8), 8, Xu, Xi)
        b = dmtl.recommend_top_k(scaled, [1], np.arange(8), 8, Xu, Xi)
        assert a.tolist() == b.tolist()

    def test_score_pairs_consistent_with_forward(self):
        params, _ = random_params(37)
        rng = np.random.default_rng(38)
        Xu = FeatureMatrix(rng.normal(size=(4, 6)))
        Xi = FeatureMatrix(rng.normal(size=(5, 5)))
        scores = dmtl.score_group_items(params, [1, 3], np.arange(5), Xu, Xi)
        for item in range(5):
            traces = [dmtl.forward(params, Xu.values[m], Xi.values[item]) for m in (1, 3)]
            _, r_hat = dmtl.aggregate_group(params, traces)
            assert np.isclose(scores[item], r_hat, atol=1e-9)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params, cfg = random_params(39)
        path = tmp_path / "model.npz"
        dmtl.save_checkpoint(path, cfg, params)
        cfg2, params2 = dmtl.load_checkpoint(path)
        assert cfg2 == cfg
        for name in dmtl._PARAM_NAMES:
            assert np.array_equal(getattr(params, name), getattr(params2, name))
