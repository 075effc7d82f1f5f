import numpy as np
import pytest

from geocl import autodiff as ad
from geocl.errors import ContractViolation


def scalar(x):
    return ad.Tensor(np.array(x), requires_grad=True)


class TestBasics:
    def test_linear_gradient_exact(self):
        # d/dx (3x + 2) = 3, exact for a linear map
        x = scalar(1.7)
        y = ad.sum_(x * 3.0 + 2.0)
        y.backward()
        assert abs(x.grad - 3.0) <= 1e-10

    def test_chain_and_fanout(self):
        # f = x^2 + x * x -> f' = 4x
        x = scalar(0.5)
        y = ad.sum_(ad.square(x) + x * x)
        y.backward()
        assert x.grad == pytest.approx(2.0, abs=1e-12)

    def test_broadcasting_unbroadcast(self):
        a = ad.Tensor(np.ones((3, 4)), requires_grad=True)
        b = ad.Tensor(np.ones(4), requires_grad=True)
        ad.sum_(a * b).backward()
        assert a.grad.shape == (3, 4)
        assert b.grad.shape == (4,)
        np.testing.assert_allclose(b.grad, 3.0)

    def test_nonscalar_backward_rejected(self):
        t = ad.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ContractViolation):
            t.backward()

    def test_matmul(self):
        rng = np.random.default_rng(0)
        a = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        ad.sum_(a @ b).backward()
        np.testing.assert_allclose(a.grad, np.ones((2, 2)) @ b.value.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.value.T @ np.ones((2, 2)), atol=1e-12)


class TestElementwiseGradients:
    @pytest.mark.parametrize("op,ref", [
        (ad.tanh, lambda x: 1 - np.tanh(x) ** 2),
        (ad.tan, lambda x: 1 / np.cos(x) ** 2),
        (ad.arctan, lambda x: 1 / (1 + x ** 2)),
        (ad.arctanh, lambda x: 1 / (1 - x ** 2)),
        (ad.exp, np.exp),
        (ad.square, lambda x: 2 * x),
    ])
    def test_closed_form(self, op, ref):
        x = ad.Tensor(np.array([0.1, -0.3, 0.45]), requires_grad=True)
        ad.sum_(op(x)).backward()
        np.testing.assert_allclose(x.grad, ref(x.value), atol=1e-10)

    def test_sqrt_and_log(self):
        x = ad.Tensor(np.array([0.25, 4.0]), requires_grad=True)
        ad.sum_(ad.sqrt(x)).backward()
        np.testing.assert_allclose(x.grad, 0.5 / np.sqrt(x.value), atol=1e-12)
        y = ad.Tensor(np.array([0.5, 2.0]), requires_grad=True)
        ad.sum_(ad.log(y)).backward()
        np.testing.assert_allclose(y.grad, 1 / y.value, atol=1e-12)

    def test_norm_zero_safe(self):
        x = ad.Tensor(np.zeros((1, 3)), requires_grad=True)
        ad.sum_(ad.norm(x)).backward()
        assert np.all(np.isfinite(x.grad))

    def test_clip_max_blocks_gradient_in_clamp(self):
        x = ad.Tensor(np.array([0.5, 2.0]), requires_grad=True)
        ad.sum_(ad.clip_max(x, 1.0)).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 0.0])


class TestHuber:
    def test_values_at_branch(self):
        a = ad.Tensor(np.array([0.5, 3.0, 1.0]))
        b = ad.Tensor(np.zeros(3))
        out = ad.huber(a, b).value
        np.testing.assert_allclose(out, [0.125, 2.5, 0.5], atol=1e-12)

    def test_gradient_both_branches(self):
        a = ad.Tensor(np.array([0.5, -3.0]), requires_grad=True)
        ad.sum_(ad.huber(a, ad.Tensor(np.zeros(2)))).backward()
        np.testing.assert_allclose(a.grad, [0.5, -1.0], atol=1e-12)


class TestSoftmaxCE:
    def test_logsumexp_stability(self):
        x = ad.Tensor(np.array([[1000.0, 1001.0]]))
        out = ad.logsumexp(x).value
        assert out == pytest.approx(1001.0 + np.log(1 + np.e ** -1), abs=1e-9)

    def test_cross_entropy_oracle(self):
        # logits (-1, -4): p = (0.95257, 0.04743); -log p0 = 0.04859
        logits = ad.Tensor(np.array([[-1.0, -4.0]]), requires_grad=True)
        loss = ad.cross_entropy(logits, np.array([0]))
        assert float(loss.value) == pytest.approx(0.04859, abs=1e-5)
        loss.backward()
        p = np.exp([-1.0, -4.0])
        p /= p.sum()
        np.testing.assert_allclose(logits.grad[0], p - np.array([1.0, 0.0]), atol=1e-10)


class TestGradcheck:
    def test_distance_style_loss(self):
        def build(t):
            d2 = ad.sqnorm(t["x"] - t["w"], keepdims=False)
            return ad.sum_(ad.sqrt(d2 + 1e-12))

        err = ad.gradcheck(
            build,
            lambda rng: {"x": rng.normal(size=(3, 4)), "w": rng.normal(size=(3, 4))},
            trials=2, rng=0,
        )
        assert err <= 1e-6

    def test_transcendental_chain(self):
        def build(t):
            return ad.sum_(ad.arctan(ad.tanh(t["v"]) * 0.9))

        err = ad.gradcheck(build, lambda rng: {"v": rng.normal(size=5)}, trials=3, rng=1)
        assert err <= 1e-6

    def test_deterministic_given_seed(self):
        def build(t):
            return ad.sum_(ad.square(t["v"]))

        runs = [ad.gradcheck(build, lambda rng: {"v": rng.normal(size=4)}, rng=42)
                for _ in range(2)]
        assert runs[0] == runs[1]
