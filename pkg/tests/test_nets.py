"""Network construction, schedule, parameter accounting and checkpoints."""

import numpy as np
import pytest

from vesselflow import autodiff as ad
from vesselflow import nets

# Combined sizes of the split velocity/pressure pair for the two width
# families, plus the single-network variant, keyed by (depth, total width).
SPLIT_SIZES = {
    (6, 60): 8583, (8, 60): 12703, (10, 60): 16823, (12, 60): 20943, (14, 60): 25063,
    (6, 30): 2293, (8, 30): 3353, (10, 30): 4413, (12, 30): 5473, (14, 30): 6533,
}
SINGLE_SIZES = {(12, 30): 9513}


class TestParamCount:
    @pytest.mark.parametrize("arch,want", sorted(SPLIT_SIZES.items()))
    def test_split_family(self, arch, want):
        depth, total = arch
        assert nets.split_param_count(depth, total) == want

    @pytest.mark.parametrize("arch,want", sorted(SINGLE_SIZES.items()))
    def test_single_network(self, arch, want):
        depth, width = arch
        assert nets.single_param_count(depth, width) == want

    def test_all_sigmoid_same_size(self):
        # Activation choice does not change the parameter count.
        alt = nets.build(12, 20, 3, 2, seed=0)
        sig = nets.build(12, 20, 3, 2, seed=0, schedule="sigmoid")
        assert nets.param_count(alt) == nets.param_count(sig)

    def test_count_matches_formula(self):
        net = nets.build(5, 7, 3, 2, seed=1)
        want = 7 * 4 + 7 * 8 * 3 + 2 * 8
        assert nets.param_count(net) == want == len(net.theta)


class TestSchedule:
    def test_tags(self):
        net = nets.build(6, 4, 3, 1, seed=0)
        assert net.activations == ["sigmoid", "relu", "sigmoid", "relu", "sigmoid", "none"]

    def test_all_sigmoid_variant(self):
        net = nets.build(6, 4, 3, 1, seed=0, schedule="sigmoid")
        assert net.activations == ["sigmoid"] * 5 + ["none"]

    def test_even_layers_are_exact_relu(self):
        net = nets.build(4, 5, 2, 1, seed=3)
        x = np.array([0.4, -0.7])
        h = 1.0 / (1.0 + np.exp(-(net.weight(0) @ x + net.bias(0))))
        pre2 = net.weight(1) @ h + net.bias(1)
        h2 = np.maximum(pre2, 0.0)
        h3 = 1.0 / (1.0 + np.exp(-(net.weight(2) @ h2 + net.bias(2))))
        out = net.weight(3) @ h3 + net.bias(3)
        assert nets.FieldNetwork.evaluate(net, x[None, :])[0] == pytest.approx(out, rel=1e-15)

    def test_depth_below_two_rejected(self):
        with pytest.raises(ValueError):
            nets.build(1, 4, 3, 1, seed=0)


class TestForward:
    def test_zero_final_layer_gives_zero_output(self):
        net = nets.build(4, 6, 3, 2, seed=5)
        nets.zero_init_output(net)
        tape = ad.Tape()
        out = net.forward(tape, [tape.scalar(v) for v in (0.3, -1.0, 0.5)])
        assert [o.value for o in out] == [0.0, 0.0]

    def test_zero_init_gradient_wrt_input_is_zero(self):
        net = nets.build(4, 6, 3, 1, seed=5)
        nets.zero_init_output(net)
        tape = ad.Tape()
        leaves = [tape.scalar(v) for v in (0.3, -1.0, 0.5)]
        out = net.forward(tape, leaves)[0]
        g, _ = tape.backward_values(out, wrt=leaves)
        assert [float(v) for v in g] == [0.0, 0.0, 0.0]

    def test_zero_init_final_bias_grad_of_squared_output(self):
        # output is 0, so d(out^2)/db_final = 2*out = 0 by the chain rule
        net = nets.build(3, 4, 2, 1, seed=2)
        nets.zero_init_output(net)
        tape = ad.Tape()
        out = net.forward(tape, [tape.scalar(0.2), tape.scalar(0.8)])[0]
        g = ad.param_grad(out * out, net.name)
        b_final_index = len(net.theta) - 1
        assert g[b_final_index] == 0.0

    def test_two_layer_hand_case(self):
        # depth 2, widths 1/1/1, all parameters set by hand:
        # out = w2 * sigmoid(w1 * x + b1) + b2
        net = nets.build(2, 1, 1, 1, seed=0, name="tiny")
        net.weight(0)[:] = 1.0
        net.bias(0)[:] = 1.0
        net.weight(1)[:] = 2.0
        net.bias(1)[:] = -0.5
        tape = ad.Tape()
        out = net.forward(tape, [tape.scalar(0.0)])[0]
        want = 2.0 * (1.0 / (1.0 + np.exp(-1.0))) - 0.5
        assert out.value == pytest.approx(want, rel=1e-15)

    def test_recorded_forward_matches_numpy_forward(self):
        net = nets.build(12, 20, 3, 2, seed=11)
        pts = np.random.default_rng(0).uniform(-1, 1, size=(40, 3))
        ref = net.evaluate(pts)
        tape = ad.Tape()
        leaves = [tape.batch(pts[:, i]) for i in range(3)]
        out = net.forward(tape, leaves)
        got = np.stack([o.value for o in out], axis=1)
        assert np.allclose(got, ref, rtol=1e-13, atol=1e-13)

    def test_input_dimension_checked(self):
        net = nets.build(3, 4, 3, 1, seed=0)
        tape = ad.Tape()
        with pytest.raises(ValueError):
            net.forward(tape, [tape.scalar(0.0)])


class TestDerivatives:
    def test_second_derivatives_match_fd_away_from_kinks(self):
        net = nets.build(12, 30 * 2 // 3, 3, 2, seed=7)
        rng = np.random.default_rng(42)

        def u_z(r, z, t):
            tape = r.tape
            return net.forward(tape, [r, z, t])[0]

        def feval(pt):
            return float(net.evaluate(np.asarray(pt)[None, :])[0, 0])

        checked = 0
        while checked < 12:
            pt = rng.uniform(-1.0, 1.0, size=3)
            if net.relu_margin(pt) < 1e-6:
                continue
            for i in range(3):
                got = ad.second_derivative(u_z, pt, i, i)
                h = 1e-4
                hi, lo = pt.copy(), pt.copy()
                hi[i] += h
                lo[i] -= h
                want = (feval(hi) - 2 * feval(pt) + feval(lo)) / h**2
                assert got == pytest.approx(want, rel=1e-3, abs=1e-6)
            checked += 1


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        u = nets.build(6, 8, 3, 2, seed=1, name="u")
        p = nets.build(6, 4, 3, 1, seed=2, name="p", schedule="sigmoid")
        path = tmp_path / "ckpt.npz"
        extras = {"adam_m_u": np.random.default_rng(0).normal(size=len(u.theta))}
        nets.save_networks(path, {"u": u, "p": p}, extras)
        loaded, got_extras = nets.load_networks(path)
        assert np.array_equal(loaded["u"].theta, u.theta)
        assert np.array_equal(loaded["p"].theta, p.theta)
        assert loaded["p"].schedule == "sigmoid"
        assert loaded["u"].widths == u.widths
        assert np.array_equal(got_extras["adam_m_u"], extras["adam_m_u"])

    def test_loaded_network_evaluates_identically(self, tmp_path):
        net = nets.build(5, 6, 3, 1, seed=9, name="d")
        path = tmp_path / "one.npz"
        nets.save_networks(path, {"d": net})
        loaded, _ = nets.load_networks(path)
        pts = np.random.default_rng(1).uniform(-1, 1, size=(10, 3))
        assert np.array_equal(loaded["d"].evaluate(pts), net.evaluate(pts))
