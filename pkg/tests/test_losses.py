import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from uplme.errors import InvalidInputError, NonFiniteLossError
from uplme.losses import (
    LossWeights,
    alignment_loss,
    alignment_loss_grad,
    beta_nll,
    beta_nll_grad,
    rescale_labels,
    total_loss,
    variance_penalty,
    variance_penalty_grad,
)


def ref_beta_nll(y, y_hat, s2, beta):
    total = 0.0
    for a, b, v in zip(y, y_hat, s2):
        total += v**beta * (math.log(v) + (a - b) ** 2 / v)
    return 0.5 * total


def ref_penalty(y, y_hat, s2, alpha, eps):
    sq = 0.0
    for a, b, v in zip(y, y_hat, s2):
        sq += (math.exp(-alpha * (a - b) ** 2) * v) ** 2
    return math.sqrt(sq + eps) / len(y)


def central_diff(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def _f(t):
    return float(t)


class TestRescale:
    def test_midpoint(self):
        assert rescale_labels(4.0, 1, 7) == 0.0

    def test_endpoints(self):
        assert rescale_labels(7.0, 1, 7) == 1.0
        assert rescale_labels(1.0, 1, 7) == -1.0

    def test_interior(self):
        assert rescale_labels(2.5, 1, 7) == pytest.approx(-0.5, abs=1e-15)

    def test_vector_and_tensor(self):
        np.testing.assert_allclose(rescale_labels([1.0, 4.0, 7.0], 1, 7), [-1, 0, 1])
        t = rescale_labels(torch.tensor([1.0, 7.0], dtype=torch.float64), 1, 7)
        assert t.tolist() == [-1.0, 1.0]

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            rescale_labels([7.5], 1, 7)

    def test_degenerate_bounds(self):
        with pytest.raises(InvalidInputError):
            rescale_labels([1.0], 3, 3)

    @given(st.floats(-100, 100), st.floats(0.1, 100), st.floats(0, 1))
    def test_affine_under_bound_change(self, lo, span, u):
        # moving the scale by an affine map leaves the rescaled value unchanged
        y = lo + u * span
        a, b = 2.5, -3.0
        assert rescale_labels(y, lo, lo + span) == pytest.approx(
            rescale_labels(a * y + b, a * lo + b, a * (lo + span) + b), abs=1e-9
        )


class TestBetaNLL:
    def test_zero_error_unit_variance(self):
        assert _f(beta_nll([1.0], [1.0], [1.0], 0.5)) == 0.0

    def test_worked_example(self):
        assert _f(beta_nll([3.0], [1.0], [4.0], 0.5)) == pytest.approx(2.386294, abs=1e-6)

    def test_beta_zero_is_gaussian_nll(self):
        assert _f(beta_nll([3.0], [1.0], [4.0], 0.0)) == pytest.approx(1.193147, abs=1e-6)

    def test_additive_over_concatenation(self):
        rng = np.random.default_rng(0)
        y, p, v = rng.normal(size=8), rng.normal(size=8), rng.uniform(0.1, 3, size=8)
        whole = _f(beta_nll(y, p, v))
        parts = _f(beta_nll(y[:3], p[:3], v[:3])) + _f(beta_nll(y[3:], p[3:], v[3:]))
        assert whole == pytest.approx(parts, rel=1e-14)

    def test_mean_reduction(self):
        y, p, v = [1.0, 2.0], [0.0, 0.5], [1.0, 2.0]
        assert _f(beta_nll(y, p, v, reduction="mean")) == pytest.approx(_f(beta_nll(y, p, v)) / 2)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(InvalidInputError):
            beta_nll([1.0], [1.0], [0.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            beta_nll([1.0, 2.0], [1.0], [1.0])

    def test_weight_is_detached(self):
        # autograd must match the gradient with sigma2**beta frozen, not the full derivative
        y, p, v = np.array([2.0]), np.array([0.5]), np.array([1.7])
        v_t = torch.tensor(v, requires_grad=True)
        beta_nll(torch.tensor(y), torch.tensor(p), v_t, 0.5).backward()
        w = v**0.5
        frozen = central_diff(lambda x: 0.5 * w[0] * (math.log(x[0]) + (y[0] - p[0]) ** 2 / x[0]), v)
        full = central_diff(lambda x: ref_beta_nll(y, p, x, 0.5), v)
        assert v_t.grad.item() == pytest.approx(frozen[0], rel=1e-7)
        assert abs(v_t.grad.item() - full[0]) > 1e-3


class TestVariancePenalty:
    def test_zero_variance(self):
        assert _f(variance_penalty([1.0, 2.0], [0.0, 5.0], [0.0, 0.0], 1.0)) <= math.sqrt(1e-12)

    def test_single_element(self):
        assert _f(variance_penalty([1.0], [1.0], [2.0], 1.0)) == pytest.approx(2.0, abs=1e-9)

    def test_large_error_ignored(self):
        assert _f(variance_penalty([0.0, 10.0], [0.0, 0.0], [2.0, 3.0], 1.0)) == pytest.approx(1.0, abs=1e-9)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(InvalidInputError):
            variance_penalty([1.0], [1.0], [1.0], 0.0)

    @pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
    def test_homogeneous_in_variance(self, c):
        rng = np.random.default_rng(1)
        y, p, v = rng.normal(size=6), rng.normal(size=6), rng.uniform(0.1, 2, size=6)
        base = _f(variance_penalty(y, p, v, 1.0, norm_eps=0.0))
        assert _f(variance_penalty(y, p, c * v, 1.0, norm_eps=0.0)) == pytest.approx(c * base, rel=1e-12)

    @given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=8), st.integers(0, 7), st.floats(0.01, 3.0))
    def test_monotone_in_each_variance(self, v, idx, bump):
        v = np.array(v)
        idx %= len(v)
        y = np.linspace(-1, 1, len(v))
        p = np.zeros(len(v))
        before = _f(variance_penalty(y, p, v, 1.0))
        v2 = v.copy()
        v2[idx] += bump
        assert _f(variance_penalty(y, p, v2, 1.0)) >= before - 1e-15


class TestAlignment:
    def test_perfect(self):
        assert _f(alignment_loss([0.3, -0.2], [0.3, -0.2])) == 0.0

    def test_worked_example(self):
        assert _f(alignment_loss([0.5, -0.5], [1.0, -1.0])) == pytest.approx(0.25)

    def test_maximal(self):
        assert _f(alignment_loss([-1.0], [1.0])) == 4.0

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            alignment_loss([0.1, 0.2], [0.1])


class TestTotal:
    def test_tuned_weights(self):
        w = LossWeights(lambda1=9.110462266012783, lambda2=5.5635098435909764)
        value = total_loss({"nll": 2.0, "pen": 1.0, "align": 0.25}, w)
        assert value == pytest.approx(2.0 + 9.110462266012783 + 0.25 * 5.5635098435909764, rel=1e-15)
        assert value == pytest.approx(12.501339, abs=1e-6)

    def test_ablation_reduces_to_nll(self):
        w = LossWeights(lambda1=0.0, lambda2=0.0)
        assert total_loss({"nll": 3.5, "pen": 7.0, "align": 2.0}, w) == 3.5

    def test_zero_parts(self):
        assert total_loss({"nll": 0.0, "pen": 0.0, "align": 0.0}, LossWeights()) == 0.0

    @pytest.mark.parametrize("bad", ["nll", "pen", "align"])
    def test_nonfinite_component_named(self, bad):
        parts = {"nll": 1.0, "pen": 1.0, "align": 1.0}
        parts[bad] = float("nan")
        with pytest.raises(NonFiniteLossError) as err:
            total_loss(parts, LossWeights())
        assert err.value.component == bad

    def test_linear_in_lambdas(self):
        parts = {"nll": 1.3, "pen": 0.7, "align": 0.2}
        f = lambda l1, l2: total_loss(parts, LossWeights(lambda1=l1, lambda2=l2))
        assert f(2.0, 3.0) - f(1.0, 3.0) == pytest.approx(parts["pen"], rel=1e-12)
        assert f(2.0, 3.0) - f(2.0, 2.0) == pytest.approx(parts["align"], rel=1e-12)


class TestLossWeights:
    @pytest.mark.parametrize("kwargs", [{"alpha": 0.0}, {"lambda1": -1.0}, {"beta": 1.5},
                                        {"var_floor": 0.0}, {"reduction": "max"}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            LossWeights(**kwargs)


class TestGradients:
    """Closed-form and autograd gradients against central differences."""

    @pytest.mark.parametrize("seed", range(10))
    def test_beta_nll(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        y, p, v = rng.normal(size=n), rng.normal(size=n), rng.uniform(0.2, 3.0, size=n)
        w = v**0.5
        g_mean, g_var = beta_nll_grad(y, p, v, 0.5)
        # finite differences with the beta weight frozen at its current value
        fd_mean = central_diff(lambda x: 0.5 * np.sum(w * (np.log(v) + (y - x) ** 2 / v)), p)
        fd_var = central_diff(lambda x: 0.5 * np.sum(w * (np.log(x) + (y - p) ** 2 / x)), v)
        np.testing.assert_allclose(g_mean, fd_mean, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(g_var, fd_var, rtol=1e-4, atol=1e-8)
        pt, vt = torch.tensor(p, requires_grad=True), torch.tensor(v, requires_grad=True)
        beta_nll(torch.tensor(y), pt, vt, 0.5).backward()
        np.testing.assert_allclose(pt.grad.numpy(), g_mean, rtol=1e-12)
        np.testing.assert_allclose(vt.grad.numpy(), g_var, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_variance_penalty(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        y, p, v = rng.normal(size=n), rng.normal(size=n), rng.uniform(0.2, 3.0, size=n)
        g_mean, g_var = variance_penalty_grad(y, p, v, 1.5)
        fd_mean = central_diff(lambda x: ref_penalty(y, x, v, 1.5, 1e-12), p)
        fd_var = central_diff(lambda x: ref_penalty(y, p, x, 1.5, 1e-12), v)
        np.testing.assert_allclose(g_mean, fd_mean, rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(g_var, fd_var, rtol=1e-4, atol=1e-8)
        pt, vt = torch.tensor(p, requires_grad=True), torch.tensor(v, requires_grad=True)
        variance_penalty(torch.tensor(y), pt, vt, 1.5).backward()
        np.testing.assert_allclose(pt.grad.numpy(), g_mean, rtol=1e-10)
        np.testing.assert_allclose(vt.grad.numpy(), g_var, rtol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_alignment(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 9))
        s, yp = rng.uniform(-1, 1, size=n), rng.uniform(-1, 1, size=n)
        fd = central_diff(lambda x: np.mean((x - yp) ** 2), s)
        np.testing.assert_allclose(alignment_loss_grad(s, yp), fd, rtol=1e-4, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_kernels_match_reference(n, seed):
    rng = np.random.default_rng(seed)
    y, p, v = rng.normal(size=n) * 3, rng.normal(size=n) * 3, rng.uniform(1e-3, 5, size=n)
    assert _f(beta_nll(y, p, v, 0.5)) == pytest.approx(ref_beta_nll(y, p, v, 0.5), rel=1e-12, abs=1e-12)
    assert _f(variance_penalty(y, p, v, 1.0)) == pytest.approx(ref_penalty(y, p, v, 1.0, 1e-12), rel=1e-12)
