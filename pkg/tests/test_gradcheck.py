"""The finite-difference harness itself: error metric, FD accuracy, and the
ability to actually catch a wrong backward pass."""

import numpy as np
import pytest
import torch

from plane4d.gradcheck import (
    COMPONENTS,
    DEFAULT_SEEDS,
    central_differences,
    check_component,
    component_tolerance,
    relative_error,
    run_gradient_suite,
)


class TestRelativeError:
    def test_scale_invariant(self):
        assert relative_error([1.0], [1.0 + 1e-6]) == pytest.approx(1e-6, rel=1e-5)
        assert relative_error([1e3], [1e3 * (1 + 1e-6)]) == pytest.approx(1e-6, rel=1e-5)

    def test_zero_agreement(self):
        assert relative_error(np.zeros(4), np.zeros(4)) == 0.0

    def test_small_denominator_guard(self):
        # Both sides below 1e-8: the guard keeps noise from exploding.
        assert abs(relative_error([1e-12], [0.0]) - 1e-4) < 1e-12

    def test_takes_worst_entry(self):
        a = np.array([1.0, 2.0, 3.0])
        n = np.array([1.0, 2.2, 3.0])
        assert abs(relative_error(a, n) - 0.2 / 2.2) < 1e-12


class TestCentralDifferences:
    def test_exact_on_quadratic(self):
        # Central differences are exact (to roundoff) for quadratics.
        rng = np.random.default_rng(81)
        a = torch.as_tensor(rng.uniform(0.5, 2.0, 5), dtype=torch.float64)
        b = torch.as_tensor(rng.uniform(-1.0, 1.0, 5), dtype=torch.float64)
        x = torch.as_tensor(rng.uniform(-1.0, 1.0, 5), dtype=torch.float64)
        x.requires_grad_(True)

        def closure():
            return (a * x**2 + b * x).sum()

        (numeric,) = central_differences(closure, [x])
        expected = (2.0 * a * x.detach() + b).numpy()
        assert np.abs(numeric - expected).max() < 1e-9

    def test_restores_parameters(self):
        x = torch.tensor([0.3, -0.7], dtype=torch.float64, requires_grad=True)
        before = x.detach().clone()
        central_differences(lambda: (x**2).sum(), [x])
        assert torch.equal(x.detach(), before)


class TestHarness:
    def test_correct_ops_pass(self):
        for name in ("bilerp", "losses", "regularizers", "composite"):
            err = check_component(name, seed=0)
            assert err < component_tolerance(name), f"{name}: {err}"

    def test_wrong_backward_is_caught(self):
        """A backward pass off by 2x must produce a large relative error."""

        class DoubledGrad(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                ctx.save_for_backward(x)
                return (x**2).sum()

            @staticmethod
            def backward(ctx, grad_out):
                (x,) = ctx.saved_tensors
                return grad_out * 4.0 * x  # should be 2x

        x = torch.tensor([0.5, -1.2, 2.0], dtype=torch.float64, requires_grad=True)
        value = DoubledGrad.apply(x)
        value.backward()
        analytic = x.grad.numpy().copy()
        (numeric,) = central_differences(lambda: DoubledGrad.apply(x), [x])
        assert relative_error(analytic, numeric) > 0.4

    def test_unknown_component(self):
        with pytest.raises(KeyError, match="unknown component"):
            check_component("warp", seed=0)

    def test_suite_subset(self):
        results = run_gradient_suite(seeds=(0, 1), components=("bilerp", "losses"))
        assert set(results) == {"bilerp", "losses"}
        for name, summary in results.items():
            assert len(summary["errors"]) == 2
            assert summary["max_error"] == max(summary["errors"])
            assert summary["max_error"] < component_tolerance(name)
            assert summary["seconds"] >= 0

    def test_registry_and_tolerances(self):
        assert set(COMPONENTS) == {
            "bilerp", "fused_query", "posenc", "mlp", "decoder",
            "composite", "losses", "regularizers", "end_to_end",
        }
        assert len(DEFAULT_SEEDS) >= 20
        assert component_tolerance("end_to_end") == 1e-4
        assert component_tolerance("bilerp") == 1e-5
