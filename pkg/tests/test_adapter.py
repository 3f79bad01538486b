import math

import numpy as np
import pytest

from cascast.adapter import (
    AdapterConfig,
    PromptEncoder,
    adapt,
    fnv1a,
    init_adapter,
    inject,
    load_template,
    log_popularity,
    mape,
    msle,
    popularity_from_log,
    predict_log_popularity,
    project,
    token_loss,
)
from cascast.autograd import Tape, Tensor, backward

CFG = AdapterConfig(token_dim=12, model_dim=6, init_seed=1)


def fd_check(build_loss, param, h=1e-5):
    """Central-difference gradient of a scalar builder w.r.t. one tensor."""
    tape = Tape()
    loss = build_loss(tape)
    backward(tape, loss)
    analytic = param.grad.copy()
    param.zero_grad()

    fd = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    fdf = fd.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = build_loss(Tape()).values.item()
        flat[i] = keep - h
        dn = build_loss(Tape()).values.item()
        flat[i] = keep
        fdf[i] = (up - dn) / (2 * h)
    denom = max(np.abs(fd).max(), 1e-12)
    return np.abs(analytic - fd).max() / denom


class TestShapes:
    def test_projector_output_width(self):
        params = init_adapter(CFG)
        tape = Tape()
        out = project(tape, params, Tensor(np.ones((3, 12))))
        assert out.values.shape == (3, 6)

    def test_adapter_output_width(self):
        params = init_adapter(CFG)
        tape = Tape()
        out = adapt(tape, params, Tensor(np.ones((3, 6))))
        assert out.values.shape == (3, 12)

    def test_head_scalar_output(self):
        params = init_adapter(CFG)
        tape = Tape()
        out = predict_log_popularity(tape, params, Tensor(np.ones((1, 12))))
        assert out.values.shape == (1, 1)

    def test_dim_mismatches_rejected(self):
        params = init_adapter(CFG)
        tape = Tape()
        with pytest.raises(ValueError, match="projector"):
            project(tape, params, Tensor(np.ones((2, 5))))
        with pytest.raises(ValueError, match="adapter"):
            adapt(tape, params, Tensor(np.ones((2, 5))))
        with pytest.raises(ValueError, match="head"):
            predict_log_popularity(tape, params, Tensor(np.ones((1, 5))))

    def test_zero_params_zero_output(self):
        params = init_adapter(CFG)
        for _, t in params.named():
            t.values[:] = 0.0
        tape = Tape()
        out = project(tape, params, Tensor(np.random.default_rng(0).standard_normal((2, 12))))
        np.testing.assert_array_equal(out.values, 0.0)

    def test_all_tensors_trainable(self):
        params = init_adapter(CFG)
        assert all(t.requires_grad for _, t in params.named())

    def test_default_hidden_width(self):
        assert CFG.hidden == 12
        assert AdapterConfig(token_dim=4, model_dim=9).hidden == 9


class TestGradients:
    def test_projector_weight_gradient(self):
        params = init_adapter(CFG)
        x = Tensor(np.random.default_rng(2).standard_normal((3, 12)) * 0.5)
        target = Tensor(np.random.default_rng(3).standard_normal((3, 6)))

        def build(tape):
            out = project(tape, params, x)
            return tape.mse_sum(out, target)

        assert fd_check(build, params["proj.1.w"]) <= 1e-4

    def test_adapter_weight_gradient(self):
        params = init_adapter(CFG)
        x = Tensor(np.random.default_rng(4).standard_normal((2, 6)))
        target = Tensor(np.random.default_rng(5).standard_normal((2, 12)))

        def build(tape):
            out = adapt(tape, params, x)
            return tape.mse_sum(out, target)

        assert fd_check(build, params["adpt.2.w"]) <= 1e-4

    def test_head_weight_gradient(self):
        params = init_adapter(CFG)
        x = Tensor(np.random.default_rng(6).standard_normal((1, 12)))
        target = Tensor(np.array([[2.5]]))

        def build(tape):
            out = predict_log_popularity(tape, params, x)
            return tape.mse_sum(out, target)

        assert fd_check(build, params["head.1.w"]) <= 1e-4


class TestInject:
    def test_zero_prompt_identity(self):
        tape = Tape()
        z = Tensor(np.random.default_rng(7).standard_normal((4, 6)))
        out = inject(tape, z, Tensor(np.zeros((4, 6))))
        np.testing.assert_array_equal(out.values, z.values)

    def test_inject_then_negate_roundtrips(self):
        tape = Tape()
        z = Tensor(np.random.default_rng(8).standard_normal((4, 6)))
        p = np.random.default_rng(9).standard_normal((4, 6))
        out = inject(tape, inject(tape, z, Tensor(p)), Tensor(-p))
        np.testing.assert_allclose(out.values, z.values, atol=1e-15)

    def test_constant_prompt_leaves_z_gradient(self):
        z_vals = np.random.default_rng(10).standard_normal((3, 6))
        p = np.random.default_rng(11).standard_normal((3, 6))
        target = np.zeros((3, 6))
        grads = []
        for prompt in (np.zeros((3, 6)), p):
            z = Tensor(z_vals, requires_grad=True)
            tape = Tape()
            out = inject(tape, z, Tensor(prompt))
            # pure offset: d(out)/dz is identity either way
            loss = tape.mse_sum(out, Tensor(out.values - (z_vals - target)))
            backward(tape, loss)
            grads.append(z.grad.copy())
        np.testing.assert_allclose(grads[0], grads[1], atol=1e-12)

    def test_shape_mismatch_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError, match="prompt"):
            inject(tape, Tensor(np.zeros((2, 6))), Tensor(np.zeros((3, 6))))


class TestTokenLoss:
    def test_perfect_prediction_zero(self):
        tape = Tape()
        t = Tensor(np.random.default_rng(12).standard_normal((5, 8)))
        assert token_loss(tape, t, Tensor(t.values.copy())).values.item() == 0.0

    def test_closed_form_half_errors(self):
        # N=2: one supervised position, S=4, all diffs 0.5 -> 4 * 0.25 = 1.0
        tape = Tape()
        t_hat = Tensor(np.zeros((1, 4)))
        t_true = Tensor(np.full((1, 4), 0.5))
        assert token_loss(tape, t_hat, t_true).values.item() == pytest.approx(1.0)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(13)
        base = rng.standard_normal((3, 7))
        t_true = Tensor(np.zeros((3, 7)))
        tape = Tape()
        l1 = token_loss(tape, Tensor(base), t_true).values.item()
        l3 = token_loss(tape, Tensor(3.0 * base), t_true).values.item()
        assert l3 == pytest.approx(9.0 * l1)

    def test_symmetry(self):
        rng = np.random.default_rng(14)
        a, b = Tensor(rng.standard_normal((2, 5))), Tensor(rng.standard_normal((2, 5)))
        tape = Tape()
        ab = token_loss(tape, a, b).values.item()
        ba = token_loss(tape, b, a).values.item()
        assert ab == pytest.approx(ba)

    def test_empty_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError):
            token_loss(tape, Tensor(np.zeros((0, 4))), Tensor(np.zeros((0, 4))))


class TestPopularityTransforms:
    def test_log_one_maps_to_one(self):
        assert popularity_from_log(1.0) == 1

    def test_log_zero_clamps_to_one(self):
        assert popularity_from_log(0.0) == 1
        assert popularity_from_log(-3.0) == 1

    def test_round_trip_exact_powers(self):
        for count in (1, 3, 7, 15, 100):
            assert popularity_from_log(log_popularity(count)) == count


class TestMetrics:
    def test_msle_perfect(self):
        counts = [1, 5, 9]
        preds = [log_popularity(c) for c in counts]
        assert msle(preds, counts) == 0.0

    def test_msle_single_item(self):
        assert msle([1.0], [3]) == pytest.approx(1.0)

    def test_msle_mean_of_two(self):
        assert msle([log_popularity(3) + 1.0, log_popularity(7)], [3, 7]) == pytest.approx(0.5)

    def test_mape_perfect(self):
        counts = [2, 4, 10]
        assert mape([log_popularity(c) for c in counts], counts) == 0.0

    def test_mape_arithmetic(self):
        expected = abs(2.0 - math.log2(7)) / math.log2(8)
        assert mape([2.0], [6]) == pytest.approx(expected, abs=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            msle([], [])
        with pytest.raises(ValueError):
            msle([1.0], [0])
        with pytest.raises(ValueError):
            mape([1.0, 2.0], [3])


class TestPromptEncoder:
    def make(self, template="This is the n-th information cascade token."):
        return PromptEncoder(template, model_dim=6, vocab=64, seed=0)

    def test_deterministic(self):
        enc = self.make()
        np.testing.assert_array_equal(enc.encode(3), enc.encode(3))

    def test_index_changes_vector(self):
        enc = self.make()
        assert not np.array_equal(enc.encode(1), enc.encode(2))

    def test_empty_template_zero_vector(self):
        enc = PromptEncoder("", model_dim=6, vocab=64, seed=0)
        np.testing.assert_array_equal(enc.encode(1), np.zeros(6))

    def test_norm_bound(self):
        enc = self.make()
        for n in (1, 2, 5):
            count = enc.counts(n).sum()
            col_norm = np.linalg.norm(enc.projection, axis=1).max()
            bound = count * col_norm / math.sqrt(enc.vocab)
            assert np.linalg.norm(enc.encode(n)) <= bound + 1e-9

    def test_render_replaces_index(self):
        enc = self.make()
        assert "4-th" in enc.render(4)
        assert "n-th" not in enc.render(4)

    def test_index_must_be_positive(self):
        with pytest.raises(ValueError):
            self.make().render(0)

    def test_encode_rows_shape(self):
        rows = self.make().encode_rows(1, 7)
        assert rows.shape == (7, 6)

    def test_fnv1a_reference_values(self):
        # published FNV-1a 32-bit digests
        assert fnv1a("") == 2166136261
        assert fnv1a("a") == 0xE40C292C
        assert fnv1a("foobar") == 0xBF9CF968

    def test_shipped_templates_load(self):
        for name in ("weibo", "twitter", "aps", "synthetic"):
            text = load_template(name)
            assert "n-th information cascade token" in text
            assert text.startswith("<|Start_prompt|>")
