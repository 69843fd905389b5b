"""Slot refinement: attention normalizations, carryover, equivariance."""

import numpy as np
import pytest

import slotforge.tensor as T
from slotforge.frontend import DenseTokens
from slotforge.slots import SlotAttention, SlotHeads, SlotState
from slotforge.tensor import Tensor


def dense_from(rng, n=12, d=16):
    return DenseTokens(Tensor(rng.standard_normal((n, d))), 1, n)


def make_attn(seed=0, d=16, slots=4, steps=3, residual_mlp=True):
    return SlotAttention(np.random.default_rng(seed), width=d, num_slots=slots,
                         refine_steps=steps, residual_mlp=residual_mlp)


class TestInitSlots:
    def test_sigma_zero_limit_collapses_to_mu(self):
        attn = make_attn()
        attn.init_log_sigma.data[...] = -40.0
        state = attn.init_slots(None, rng_seed=5)
        assert np.allclose(state.slots.data, np.tile(attn.init_mu.data, (4, 1)), atol=1e-15)

    def test_carryover_is_bitwise_copy(self):
        attn = make_attn()
        prev = SlotState(Tensor(np.random.default_rng(1).standard_normal((4, 16))), 2, "random")
        state = attn.init_slots(prev, rng_seed=99, t=3)
        assert state.init_mode == "carryover"
        assert state.slots.data.tobytes() == prev.slots.data.tobytes()

    def test_missing_previous_state_rejected(self):
        with pytest.raises(ValueError):
            make_attn().init_slots(None, rng_seed=0, t=1)

    def test_seeded_init_reproducible_bitwise(self):
        attn = SlotAttention(np.random.default_rng(7), width=4, num_slots=2)
        a = attn.init_slots(None, rng_seed=42).slots.data
        b = attn.init_slots(None, rng_seed=42).slots.data
        assert a.tobytes() == b.tobytes()
        c = attn.init_slots(None, rng_seed=43).slots.data
        assert a.tobytes() != c.tobytes()


class TestRefineStep:
    def test_identical_slots_symmetric_input_uniform_attention(self):
        attn = make_attn()
        state = SlotState(Tensor(np.tile([1.0] * 16, (4, 1))), 0, "random")
        dense = dense_from(np.random.default_rng(2))
        _, maps = attn.refine_step(state, dense)
        assert np.allclose(maps.attn, 0.25, atol=1e-12)

    def test_single_input_token(self):
        attn = make_attn()
        rng = np.random.default_rng(3)
        dense = DenseTokens(Tensor(rng.standard_normal((1, 16))), 1, 1)
        state = attn.init_slots(None, rng_seed=1)
        _, maps = attn.refine_step(state, dense)
        assert np.allclose(maps.weights, 1.0, atol=1e-12)

    def test_normalizations_hold_each_step(self):
        attn = make_attn(steps=4)
        rng = np.random.default_rng(4)
        dense = dense_from(rng)
        state = attn.init_slots(None, rng_seed=2)
        for _ in range(4):
            state, maps = attn.refine_step(state, dense)
            assert np.all(np.abs(maps.attn.sum(axis=1) - 1.0) <= 1e-9)
            assert np.all(np.abs(maps.weights.sum(axis=0) - 1.0) <= 1e-9)

    def test_full_step_gradient_all_params(self):
        attn = make_attn(d=6, slots=3, steps=1)
        rng = np.random.default_rng(5)
        dense = DenseTokens(Tensor(rng.standard_normal((5, 6))), 1, 5)
        slots0 = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        params = attn.params().tensors() + [slots0, dense.tokens]
        dense.tokens.requires_grad = True

        def f():
            out, _ = attn.refine_step(SlotState(slots0, 0, "random"), dense)
            return T.mean(T.mul(out.slots, out.slots))

        assert T.finite_diff_check(f, params) <= 1e-4

    def test_slot_permutation_equivariance_zero_mlp(self):
        attn = make_attn(residual_mlp=False)
        rng = np.random.default_rng(6)
        dense = dense_from(rng)
        slots = rng.standard_normal((4, 16))
        perm = [2, 0, 3, 1]
        out_a, _ = attn.refine_step(SlotState(Tensor(slots), 0, "random"), dense)
        out_b, _ = attn.refine_step(SlotState(Tensor(slots[perm]), 0, "random"), dense)
        assert np.allclose(out_a.slots.data[perm], out_b.slots.data, atol=1e-12)


class TestEncodeFrame:
    def test_t1_equals_single_refine_after_init(self):
        attn = make_attn(steps=1)
        rng = np.random.default_rng(7)
        dense = dense_from(rng)
        state, _ = attn.encode_frame(dense, None, rng_seed=11, t=0)
        manual = attn.init_slots(None, rng_seed=11)
        manual, _ = attn.refine_step(manual, dense)
        assert np.array_equal(state.slots.data, manual.slots.data)

    def test_carryover_disabled_rerandomizes_each_frame(self):
        attn = make_attn()
        rng = np.random.default_rng(8)
        dense = dense_from(rng)
        state_a, _ = attn.encode_frame(dense, None, rng_seed=20, t=0, carryover=False)
        state_b, _ = attn.encode_frame(dense, state_a, rng_seed=21, t=1, carryover=False)
        assert state_b.init_mode == "random"
        assert not np.array_equal(state_a.slots.data, state_b.slots.data)

    def test_carryover_enabled_chains_states(self):
        attn = make_attn()
        rng = np.random.default_rng(9)
        dense = dense_from(rng)
        state0, _ = attn.encode_frame(dense, None, rng_seed=30, t=0)
        state1, _ = attn.encode_frame(dense, state0, rng_seed=31, t=1)
        assert state1.init_mode == "carryover"
        assert state1.t == 1

    def test_refine_steps_validated(self):
        with pytest.raises(ValueError):
            make_attn(steps=0)


class TestSlotHeads:
    def test_output_contracts(self):
        rng = np.random.default_rng(10)
        heads = SlotHeads(np.random.default_rng(11), width=16, grid_cells=9)
        preds = heads(Tensor(rng.standard_normal((5, 16))))
        assert preds.boxes.shape == (5, 4)
        assert np.all((preds.boxes.data > 0) & (preds.boxes.data < 1))
        assert preds.objectness.shape == (5, 1)
        assert preds.mask_logits.shape == (5, 9)
