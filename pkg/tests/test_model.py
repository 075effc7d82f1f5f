import numpy as np
import pytest

from geocl import autodiff as ad
from geocl import model
from geocl.autodiff import Tensor
from geocl.errors import ContractViolation
from geocl.product import FactorSpec, MixedSpace


def euclidean_space(dim=4):
    return MixedSpace((FactorSpec(0, 1, dim, 0.0),))


def mixed_space():
    return MixedSpace((FactorSpec(0, 1, 2, -1.0), FactorSpec(1, 3, 4, 1.0)))


class TestBackbone:
    def test_feature_shape_and_determinism(self):
        bb = model.Backbone(5, 8, 4)
        params = bb.init_params(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(7, 5))
        f1 = model.features_np(params, x)
        f2 = model.features_np(params, x)
        assert f1.shape == (7, 4)
        np.testing.assert_array_equal(f1, f2)

    def test_diff_path_matches_numpy(self):
        bb = model.Backbone(5, 8, 4)
        params = bb.init_params(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(3, 5))
        t_params = {k: Tensor(v) for k, v in params.items()}
        np.testing.assert_allclose(
            model.features_t(t_params, x).value, model.features_np(params, x), atol=1e-12)

    def test_input_dim_checked(self):
        bb = model.Backbone(5, 8, 4)
        params = bb.init_params(np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            model.features_np(params, np.zeros((2, 6)))


class TestDistanceLogits:
    def test_euclidean_closed_form(self):
        space = euclidean_space()
        rng = np.random.default_rng(2)
        f = rng.normal(size=(3, 4))
        w = rng.normal(size=(5, 4))
        got = model.sq_dist_matrix_np(f, w, space)
        want = 4.0 * ((f[:, None, :] - w[None, :, :]) ** 2).sum(-1)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_diff_path_matches_numpy(self):
        space = mixed_space()
        rng = np.random.default_rng(3)
        f = rng.normal(0.0, 0.3, (4, 4))
        w = rng.normal(0.0, 0.3, (3, 4))
        got = model.sq_dist_matrix_t(Tensor(f), Tensor(w), space).value
        want = model.sq_dist_matrix_np(f, w, space)
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_softmax_oracle(self):
        # distances^2 (1, 4) -> logits (-1, -4) -> p = (0.95257, 0.04743)
        space = euclidean_space(dim=2)
        f = np.array([[0.0, 0.0]])
        w = np.array([[0.5, 0.0], [0.0, 1.0]])  # 4||f-w||^2 = 1 and 4
        p = model.class_probs_np(f, w, space)
        np.testing.assert_allclose(p[0], [0.95257, 0.04743], atol=1e-5)

    def test_ce_rejects_unknown_label(self):
        space = euclidean_space(dim=2)
        with pytest.raises(ContractViolation):
            model.ce_loss_t(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))),
                            np.array([3]), space)

    def test_weighted_distance(self):
        space = mixed_space()
        rng = np.random.default_rng(4)
        f = rng.normal(0.0, 0.3, (2, 4))
        w = rng.normal(0.0, 0.3, (2, 4))
        wts = np.array([2.0, 0.5])
        got = model.sq_dist_matrix_np(f, w, space, weights=wts)
        per = [model.sq_dist_matrix_np(f, w, MixedSpace((fac,))) for fac in space.factors]
        np.testing.assert_allclose(got, 2.0 * per[0] + 0.5 * per[1], atol=1e-10)


class TestAngularRegularization:
    def test_zero_when_unchanged(self):
        space = mixed_space()
        feats = np.random.default_rng(5).normal(0.0, 0.3, (6, 4))
        cos, valid = model.cosine_matrix_np(model.tangent_concat_np(feats, space))
        loss = model.angular_reg_loss_t(Tensor(feats), space, cos, valid)
        assert float(loss.value) == pytest.approx(0.0, abs=1e-12)

    def test_curvature_invariance(self):
        # snapshot cosines are identical whatever curvatures the factors carry
        feats = np.random.default_rng(6).normal(0.0, 0.3, (8, 4))
        mats = []
        for ka, kb in [(-1.0, 1.0), (0.0, 0.0), (-2.0, 0.5)]:
            space = MixedSpace((FactorSpec(0, 1, 2, ka), FactorSpec(1, 3, 4, kb)))
            cos, _ = model.cosine_matrix_np(model.tangent_concat_np(feats, space))
            mats.append(cos)
        assert np.abs(mats[0] - mats[1]).max() <= 1e-9
        assert np.abs(mats[0] - mats[2]).max() <= 1e-9

    def test_positive_when_rotated(self):
        space = euclidean_space(dim=2)
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        cos, valid = model.cosine_matrix_np(model.tangent_concat_np(feats, space))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = feats.copy()
        moved[0] = feats[0] @ rot.T  # rotate one point only: pairwise angles change
        loss = model.angular_reg_loss_t(Tensor(moved), space, cos, valid)
        assert float(loss.value) > 1e-4

    def test_degenerate_rows_masked(self):
        space = euclidean_space(dim=2)
        feats = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        tangents = model.tangent_concat_np(feats, space)
        cos, valid = model.cosine_matrix_np(tangents)
        assert not valid[0, 1] and valid[1, 2]
        loss = model.angular_reg_loss_t(Tensor(feats), space, cos, valid)
        assert np.isfinite(float(loss.value))


class TestNeighborRobustness:
    def setup_method(self):
        # two tight same-class pairs far apart, one cross-class intruder
        self.labels = np.array([0, 0, 1, 1])
        self.sq = np.array([
            [0.0, 1.0, 9.0, 25.0],
            [1.0, 0.0, 2.0, 25.0],
            [9.0, 2.0, 0.0, 1.0],
            [25.0, 25.0, 1.0, 0.0],
        ])

    def test_tau2_is_same_class_mean(self):
        # same-class squared distances: (0,1)=1 and (2,3)=1 -> mean 1.0
        assert model.tau2_same_class_mean(self.sq, self.labels) == pytest.approx(1.0)

    def test_neighbor_sets(self):
        tau2 = 2.5
        within, between = model.neighbor_sets(self.sq, self.labels, tau2)
        assert within[0, 1] and within[2, 3]
        assert between[1, 2] and not between[0, 2]
        assert not within.diagonal().any()

    def test_affinity_signs(self):
        aff = model.affinity_matrix(self.sq, self.labels, 2.5)
        assert aff[0, 1] == 1.0 and aff[2, 3] == 1.0
        assert aff[1, 2] == -1.0 and aff[2, 1] == -1.0
        assert aff[0, 3] == 0.0

    def test_loss_attracts_and_repels(self):
        space = euclidean_space(dim=2)
        feats = np.array([[0.0, 0.0], [0.1, 0.0], [0.2, 0.0], [3.0, 0.0]])
        labels = np.array([0, 0, 1, 1])
        sq = model.sq_dist_matrix_np(feats, feats, space)
        aff = model.affinity_matrix(sq, labels, model.tau2_same_class_mean(sq, labels))
        t = Tensor(feats, requires_grad=True)
        loss = model.neighbor_robustness_loss_t(t, space, aff)
        loss.backward()
        # the between-class pair (1, 2) contributes with negative sign:
        # moving point 2 away from point 1 lowers the loss
        assert t.grad[2][0] < 0

    def test_repulsion_cap_zeroes_far_pairs(self):
        space = euclidean_space(dim=2)
        feats = np.array([[0.0, 0.0], [10.0, 0.0]])
        aff = np.array([[0.0, -1.0], [-1.0, 0.0]])
        loss = model.neighbor_robustness_loss_t(Tensor(feats), space, aff,
                                                repulsion_cap=4.0)
        assert float(loss.value) == pytest.approx(0.0, abs=1e-12)


class TestTotalLoss:
    def test_weighted_sum(self):
        ce = Tensor(np.array(2.0))
        g = Tensor(np.array(0.5))
        l = Tensor(np.array(0.25))
        out = model.total_loss_t(ce, 2.0, g, 4.0, l)
        assert float(out.value) == pytest.approx(2.0 + 1.0 + 1.0)

    def test_none_terms_skipped(self):
        ce = Tensor(np.array(2.0))
        assert float(model.total_loss_t(ce, 1.0, None, 1.0, None).value) == 2.0


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        bb = model.Backbone(5, 8, 4)
        params = bb.init_params(np.random.default_rng(0))
        classifier = np.random.default_rng(1).normal(size=(3, 4))
        factors = [FactorSpec(0, 1, 2, -1.0), FactorSpec(1, 3, 4, 1.0)]
        path = tmp_path / "ckpt.json"
        model.save_checkpoint(path, bb, params, classifier, factors,
                              kmag=np.array([1.0, 0.5]), signs=np.array([-1.0, 1.0]),
                              weights=np.array([0.7, 0.3]), rng_state={"step": 3})
        loaded = model.load_checkpoint(path)
        assert loaded["backbone"] == bb
        np.testing.assert_array_equal(loaded["classifier"], classifier)
        for k in params:
            np.testing.assert_array_equal(loaded["params"][k], params[k])
        assert loaded["factors"] == factors
        assert loaded["rng_state"] == {"step": 3}

    def test_version_checked(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99}')
        with pytest.raises(ContractViolation):
            model.load_checkpoint(path)
