import numpy as np
import pytest

from lenslessid import autodiff as ad
from lenslessid.autodiff import Tensor, grad_check
from lenslessid.errors import ContractError


def rnd(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def test_sum_of_squares_gradient():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_product_gradient_closed_form():
    report = grad_check(lambda x, y: (x * y).sum(), [np.array(2.0), np.array(3.0)], tol=1e-6)
    assert report["passed"]
    np.testing.assert_allclose(report["analytic"][0], 3.0, atol=1e-12)
    np.testing.assert_allclose(report["analytic"][1], 2.0, atol=1e-12)


def test_constant_function_zero_gradients():
    report = grad_check(lambda x: (x * 0.0).sum() + Tensor(np.array(1.5)), [rnd((3, 2))])
    assert report["passed"]
    np.testing.assert_allclose(report["analytic"][0], 0.0)


def test_detached_tensor_gets_zero_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x.detach()
    loss = (x.sum() + (y * y).sum())
    loss.backward()
    np.testing.assert_allclose(x.grad, [1.0, 1.0])  # only the direct path


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2).backward()


def test_composite_conv_relu_sum_matches_finite_differences():
    x0 = rnd((1, 1, 6, 6), seed=1)
    w0 = rnd((2, 1, 3, 3), seed=2)
    b0 = rnd((2,), seed=3)

    def f(x, w, b):
        return ad.conv2d(x, w, b, stride=1, padding=1).relu().sum()

    report = grad_check(f, [x0, w0, b0], eps=1e-4, tol=1e-4)
    assert report["passed"], report["per_parameter_rel_error"]


ELEMENTWISE_CASES = {
    "add": lambda x, y: (x + y).sum(),
    "sub": lambda x, y: (x - y).sum(),
    "mul": lambda x, y: (x * y).sum(),
    "div": lambda x, y: (x / (y * y + 1.0)).sum(),
    "broadcast_mul": lambda x, y: (x * y.reshape(1, 4)).sum(),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE_CASES))
def test_elementwise_ops_match_finite_differences(name):
    f = ELEMENTWISE_CASES[name]
    report = grad_check(f, [rnd((3, 4), seed=10), rnd((3, 4) if "broadcast" not in name else (4,), seed=11)])
    assert report["passed"], (name, report["max_rel_error"])


UNARY_CASES = {
    "exp": lambda x: x.exp().sum(),
    "log": lambda x: (x * x + 1.0).log().sum(),
    "sqrt": lambda x: (x * x + 0.5).sqrt().sum(),
    "sigmoid": lambda x: x.sigmoid().sum(),
    "relu": lambda x: (x + 0.05).relu().sum(),  # offset keeps values off the kink
    "abs": lambda x: (x + 0.05).abs().sum(),
    "pow": lambda x: ((x * x + 1.0) ** 1.5).sum(),
    "clip": lambda x: x.clip(-0.5, 0.5).mean(),
    "neg": lambda x: (-x).sum(),
    "reshape": lambda x: (x.reshape(4, 3) * 2.0).sum(),
    "transpose": lambda x: (x.transpose((1, 0)) * x.transpose((1, 0))).sum(),
    "slice": lambda x: (x[1:, :2] * 3.0).sum(),
    "pad": lambda x: (x.pad2d((1, 2, 0, 1)) ** 2).sum(),
    "mean_axis": lambda x: x.mean(axis=0).sum(),
    "sum_keepdims": lambda x: (x.sum(axis=1, keepdims=True) * x).sum(),
}


@pytest.mark.parametrize("name", sorted(UNARY_CASES))
def test_unary_ops_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x0 = rng.normal(size=(3, 4))
    if name == "clip":  # keep samples away from the clip boundaries
        x0 = np.where(np.abs(np.abs(x0) - 0.5) < 0.05, x0 + 0.2, x0)
    report = grad_check(UNARY_CASES[name], [x0])
    assert report["passed"], (name, report["max_rel_error"])


STRUCTURED_CASES = {
    "matmul": lambda x, y: (x @ y).sum(),
    "gather": lambda x, y: (ad.gather_rows(x, np.array([0, 2, 2, 1])) * y[:1, :1]).sum(),
    "concat": lambda x, y: ad.concat_rows([x, y * 2.0]).sum(),
}


@pytest.mark.parametrize("name", sorted(STRUCTURED_CASES))
def test_structured_ops_match_finite_differences(name):
    report = grad_check(STRUCTURED_CASES[name], [rnd((3, 4), seed=20), rnd((4, 3), seed=21)
                                                 if name == "matmul" else rnd((3, 4), seed=21)])
    assert report["passed"], (name, report["max_rel_error"])


def test_conv2d_stride_and_pool_and_upsample_gradients():
    def f(x, w):
        y = ad.conv2d(x, w, None, stride=2, padding=1)
        y = ad.avg_pool2d(y, 2)
        y = ad.upsample_nearest2d(y, 2)
        return (y * y).sum()

    report = grad_check(f, [rnd((2, 2, 8, 8), seed=30), rnd((3, 2, 3, 3), seed=31)])
    assert report["passed"], report["per_parameter_rel_error"]


def test_fft_conv_gradients():
    def f(x, k):
        return (ad.fft_conv2d_same(x, k) ** 2).sum()

    report = grad_check(f, [rnd((1, 2, 5, 6), seed=40), rnd((3, 3), seed=41)])
    assert report["passed"], report["per_parameter_rel_error"]


def test_gather_windows_gradients():
    centers = np.array([[2, 3], [4, 1]])

    def f(x):
        return (ad.gather_windows(x, centers, (3, 3)) ** 2).sum()

    report = grad_check(f, [rnd((2, 1, 6, 7), seed=50)])
    assert report["passed"], report["max_rel_error"]


def test_logsumexp_and_normalize_gradients():
    def f(x):
        return (ad.logsumexp_rows(x) * 2.0).sum() + ad.l2_normalize_rows(x + 3.0).sum()

    report = grad_check(f, [rnd((4, 5), seed=60)])
    assert report["passed"], report["max_rel_error"]


def test_l2_normalize_unit_norm_and_degenerate():
    x = Tensor(rnd((5, 8), seed=70))
    norms = np.linalg.norm(ad.l2_normalize_rows(x).data, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-6)
    with pytest.raises(ContractError):
        ad.l2_normalize_rows(Tensor(np.zeros((2, 4))))


def test_forward_backward_determinism():
    def run():
        x = Tensor(rnd((4, 4), seed=80), requires_grad=True)
        w = Tensor(rnd((4, 4), seed=81), requires_grad=True)
        loss = ((x @ w).sigmoid() * x).sum()
        loss.backward()
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a, b = run(), run()
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    assert np.array_equal(a[2], b[2])


def test_dtype_follows_inputs():
    assert (Tensor(np.ones(3, dtype=np.float32)) * 2).dtype == np.float32
    assert (Tensor(np.ones(3, dtype=np.float64)) * 2).dtype == np.float64


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    loss = (x * x + x * 3.0).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])
