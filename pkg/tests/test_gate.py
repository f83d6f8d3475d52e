import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tableroute.errors import (
    CheckpointIntegrityError,
    DimensionMismatchError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
)
from tableroute.gate import (
    CANONICAL_DIMS,
    GateInput,
    GateParameters,
    backward,
    backward_batch,
    concat_input,
    forward,
    forward_batch,
    init_gate,
    load_checkpoint,
    pack_gradients,
    pack_parameters,
    save_checkpoint,
    unpack_parameters,
)
from tableroute.numerics import OptimizerState, softmax
from tableroute.paths import INPUT_DIM, QUESTION_DIM, TEXT_DIM, VISION_DIM


def toy_params(seed=0, d_in=20, d_h=6, d_out=3, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return GateParameters(
        W1=rng.normal(0, 0.5, (d_h, d_in)).astype(dtype),
        b1=rng.normal(0, 0.1, d_h).astype(dtype),
        W2=rng.normal(0, 0.5, (d_out, d_h)).astype(dtype),
        b2=rng.normal(0, 0.1, d_out).astype(dtype),
    )


class TestInit:
    def test_canonical_parameter_count(self):
        params = init_gate(seed=0)
        assert params.param_count == 2_589_699

    def test_xavier_bounds_and_zero_biases(self):
        params = init_gate(seed=1)
        assert np.abs(params.W1).max() <= 0.024057
        assert np.abs(params.W2).max() <= np.sqrt(6.0 / (256 + 3)) + 1e-6
        assert not params.b1.any()
        assert not params.b2.any()

    def test_deterministic_per_seed(self):
        a, b = init_gate(seed=42), init_gate(seed=42)
        np.testing.assert_array_equal(a.W1, b.W1)
        np.testing.assert_array_equal(a.W2, b.W2)
        c = init_gate(seed=43)
        assert not np.array_equal(a.W1, c.W1)


class TestConcat:
    def test_zero_components(self):
        gi = GateInput(np.zeros(QUESTION_DIM), np.zeros(TEXT_DIM), np.zeros(VISION_DIM))
        x = concat_input(gi)
        assert x.shape == (INPUT_DIM,)
        assert not x.any()

    def test_ordering_question_first(self):
        gi = GateInput(np.ones(QUESTION_DIM), np.zeros(TEXT_DIM), np.zeros(VISION_DIM))
        x = concat_input(gi)
        assert x[:QUESTION_DIM].all()
        assert not x[QUESTION_DIM:].any()

    def test_wrong_dim_names_component(self):
        gi = GateInput(np.zeros(383), np.zeros(TEXT_DIM), np.zeros(VISION_DIM))
        with pytest.raises(DimensionMismatchError, match="question_embedding"):
            concat_input(gi)


class TestForward:
    def test_zero_params_give_zero_logits(self):
        params = GateParameters(
            np.zeros((6, 20)), np.zeros(6), np.zeros((3, 6)), np.zeros(3)
        )
        z, _ = forward(params, np.random.default_rng(0).normal(size=20))
        np.testing.assert_array_equal(z, np.zeros(3))

    def test_eval_deterministic_and_seed_independent(self):
        params = toy_params()
        x = np.random.default_rng(1).normal(size=20)
        z1, _ = forward(params, x, mode="eval", rng_seed=1)
        z2, _ = forward(params, x, mode="eval", rng_seed=999)
        np.testing.assert_array_equal(z1, z2)

    def test_train_seeded_determinism(self):
        params = toy_params()
        x = np.random.default_rng(2).normal(size=20)
        z1, c1 = forward(params, x, mode="train", rng_seed=7)
        z2, c2 = forward(params, x, mode="train", rng_seed=7)
        np.testing.assert_array_equal(z1, z2)
        np.testing.assert_array_equal(c1.mask_scale, c2.mask_scale)

    def test_train_masks_vary_with_seed(self):
        params = toy_params(d_h=64)
        x = np.random.default_rng(3).normal(size=20)
        _, c1 = forward(params, x, mode="train", rng_seed=1)
        _, c2 = forward(params, x, mode="train", rng_seed=2)
        assert not np.array_equal(c1.mask_scale, c2.mask_scale)

    def test_batch_matches_single(self):
        params = toy_params()
        X = np.random.default_rng(4).normal(size=(5, 20))
        Z, _ = forward_batch(params, X, mode="eval")
        for i in range(5):
            z, _ = forward(params, X[i])
            np.testing.assert_allclose(Z[i], z, rtol=1e-12)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            forward(toy_params(), np.zeros(21))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_temperature_never_changes_argmax(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=3)
        for tau in (0.1, 0.5, 1.0, 2.0, 10.0):
            assert np.argmax(softmax(z, tau)) == np.argmax(z)


def finite_difference_grads(params, x, dl_dz, mode="eval", rng_seed=0, h=1e-5):
    """Central differences of L = dl_dz . z(theta) w.r.t. every parameter."""
    flat = pack_parameters(params).copy()
    dims = params.dims
    grads = np.zeros_like(flat)
    for i in range(flat.size):
        for sign, store in ((+1, 0), (-1, 1)):
            bumped = flat.copy()
            bumped[i] += sign * h
            p = unpack_parameters(bumped, dims)
            z, _ = forward(p, x, mode=mode, rng_seed=rng_seed)
            if sign > 0:
                up = float(np.dot(dl_dz, z))
            else:
                down = float(np.dot(dl_dz, z))
        grads[i] = (up - down) / (2 * h)
    return grads


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        params = toy_params()
        x = np.random.default_rng(5).normal(size=20)
        _, cache = forward(params, x)
        grads = backward(params, cache, np.zeros(3))
        assert not pack_gradients(grads).any()

    def test_output_bias_gradient_is_upstream(self):
        params = toy_params()
        x = np.random.default_rng(6).normal(size=20)
        _, cache = forward(params, x)
        dl_dz = np.array([0.3, -1.2, 0.9])
        grads = backward(params, cache, dl_dz)
        np.testing.assert_array_equal(grads.db2, dl_dz)

    @pytest.mark.parametrize("mode,rng_seed", [("eval", 0), ("train", 11)])
    def test_matches_finite_differences(self, mode, rng_seed):
        params = toy_params(seed=8)
        x = np.random.default_rng(9).normal(size=20)
        dl_dz = np.array([0.7, -0.2, 0.5])
        _, cache = forward(params, x, mode=mode, rng_seed=rng_seed)
        analytic = pack_gradients(backward(params, cache, dl_dz))
        numeric = finite_difference_grads(params, x, dl_dz, mode=mode, rng_seed=rng_seed)
        denom = np.maximum(np.abs(numeric), 1e-8)
        rel = np.abs(analytic - numeric) / denom
        mask = np.abs(numeric) > 1e-10
        assert rel[mask].max() < 1e-4

    def test_mutated_cache_rejected(self):
        params = toy_params()
        x = np.random.default_rng(10).normal(size=20)
        _, cache = forward(params, x)
        cache.x[0] += 1.0
        with pytest.raises(InvalidArgumentError, match="mutated"):
            backward(params, cache, np.ones(3))

    def test_batch_backward_sums_singles(self):
        params = toy_params()
        X = np.random.default_rng(11).normal(size=(4, 20))
        dZ = np.random.default_rng(12).normal(size=(4, 3))
        Z, cache = forward_batch(params, X, mode="eval")
        batch = pack_gradients(backward_batch(params, cache, dZ))
        acc = np.zeros_like(batch)
        for i in range(4):
            _, c = forward(params, X[i])
            acc += pack_gradients(backward(params, c, dZ[i]))
        np.testing.assert_allclose(batch, acc, rtol=1e-10, atol=1e-12)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        params = init_gate(seed=5)
        opt = OptimizerState.for_size(params.param_count, weight_decay=0.01)
        opt.first_moment[:] = np.random.default_rng(0).normal(size=params.param_count)
        opt.step_count = 17
        path = tmp_path / "gate.ckpt"
        save_checkpoint(path, params, opt, {"note": "round trip"})
        loaded, opt2, meta = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.W1, params.W1)
        np.testing.assert_array_equal(loaded.b1, params.b1)
        np.testing.assert_array_equal(loaded.W2, params.W2)
        np.testing.assert_array_equal(loaded.b2, params.b2)
        np.testing.assert_array_equal(opt2.first_moment, opt.first_moment)
        assert opt2.step_count == 17
        assert meta == {"note": "round trip"}

    def test_truncated_file_is_integrity_error(self, tmp_path):
        path = tmp_path / "gate.ckpt"
        save_checkpoint(path, init_gate(seed=0))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_corrupted_byte_is_integrity_error(self, tmp_path):
        path = tmp_path / "gate.ckpt"
        save_checkpoint(path, init_gate(seed=0))
        blob = bytearray(path.read_bytes())
        blob[100] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_wrong_dims_is_incompatible(self, tmp_path):
        small = init_gate(seed=0, input_dim=INPUT_DIM, hidden_dim=128)
        path = tmp_path / "small.ckpt"
        save_checkpoint(path, small)
        with pytest.raises(IncompatibleCheckpointError):
            load_checkpoint(path)
        # explicit dims accept it
        loaded, _, _ = load_checkpoint(path, expected_dims=(INPUT_DIM, 128, 3))
        assert loaded.dims == (INPUT_DIM, 128, 3)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_canonical_dims_constant(self):
        assert CANONICAL_DIMS == (10112, 256, 3)
