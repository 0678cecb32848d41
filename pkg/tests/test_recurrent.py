import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpumem.numerics import ConfigError, ShapeError, Tensor, grad_check, make_rng, mul, sum_all
from gpumem.recurrent import BiGruParams, GruParams, bigru_forward, flip_sequence, gru_cell, gru_sequence


def seeded_params(D, H, seed, bias_scale=0.5):
    rng = make_rng(seed, 42)
    p = GruParams.init(D, H, rng)
    for b in (p.b_z, p.b_r, p.b_h):
        b.data[:] = rng.normal(0.0, bias_scale, H)
    return p


def zero_params(D, H):
    p = GruParams.init(D, H, make_rng(0))
    for t in p.named().values():
        t.data[...] = 0.0
    return p


def oracle_cell(x, h, p):
    """Straight-line numpy evaluation of the gate equations."""
    a = {k: v.data for k, v in p.named().items()}
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    z = sig(a["W_z"] @ x + a["U_z"] @ h + a["b_z"])
    r = sig(a["W_r"] @ x + a["U_r"] @ h + a["b_r"])
    cand = np.tanh(a["W_h"] @ x + a["U_h"] @ (r * h) + a["b_h"])
    return (1.0 - z) * h + z * cand


def oracle_sequence(seq, p, reversed=False):
    T = seq.shape[0]
    h = np.zeros(p.hidden_size)
    out = np.zeros((T, p.hidden_size))
    for t in (range(T - 1, -1, -1) if reversed else range(T)):
        h = oracle_cell(seq[t], h, p)
        out[t] = h
    return out


# ---- gru_cell

def test_zero_params_halve_previous_state():
    p = zero_params(3, 2)
    v = np.array([0.8, -0.4])
    out = gru_cell(Tensor([1.0, 2.0, 3.0]), Tensor(v), p).data
    np.testing.assert_array_equal(out, 0.5 * v)


def test_zero_state_is_fixed_point_of_zero_params():
    p = zero_params(2, 2)
    assert gru_cell(Tensor([5.0, -7.0]), Tensor(np.zeros(2)), p).data.tolist() == [0.0, 0.0]


@pytest.mark.parametrize("seed", range(5))
def test_cell_matches_straight_line_oracle(seed):
    p = seeded_params(2, 2, seed)
    rng = make_rng(seed, 1)
    x, h = rng.normal(size=2), rng.uniform(-1, 1, 2)
    np.testing.assert_allclose(gru_cell(Tensor(x), Tensor(h), p).data, oracle_cell(x, h, p), rtol=0, atol=1e-12)


def test_cell_shape_mismatch():
    p = seeded_params(3, 2, 0)
    with pytest.raises(ShapeError):
        gru_cell(Tensor(np.zeros(2)), Tensor(np.zeros(2)), p)
    with pytest.raises(ShapeError):
        gru_cell(Tensor(np.zeros(3)), Tensor(np.zeros(3)), p)


def test_params_validate_catches_mixed_sizes():
    p = seeded_params(3, 2, 0)
    p.U_r = Tensor(np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        p.validate()


def test_update_gate_convention():
    # large positive z bias drives z -> 1, so the state becomes the candidate
    p = zero_params(1, 1)
    p.b_z.data[:] = 40.0
    p.b_h.data[:] = 0.3
    out = gru_cell(Tensor([0.0]), Tensor([0.9]), p).data
    np.testing.assert_allclose(out, [np.tanh(0.3)], atol=1e-12)


def test_init_biases_are_zero_and_matrices_bounded():
    p = GruParams.init(4, 3, make_rng(1))
    for name in ("b_z", "b_r", "b_h"):
        assert not getattr(p, name).data.any()
    limit = np.sqrt(6.0 / 7.0)
    assert np.abs(p.W_z.data).max() <= limit
    assert np.abs(p.U_h.data).max() <= np.sqrt(6.0 / 6.0)


# ---- gru_sequence

def test_single_step_is_direction_free():
    p = seeded_params(2, 3, 1)
    seq = Tensor(make_rng(1).normal(size=(1, 2)))
    cell = gru_cell(seq[0], Tensor(np.zeros(3)), p).data
    np.testing.assert_array_equal(gru_sequence(seq, p, reversed=False).data[0], cell)
    np.testing.assert_array_equal(gru_sequence(seq, p, reversed=True).data[0], cell)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("reversed", [False, True])
def test_sequence_matches_unrolled_oracle(seed, reversed):
    p = seeded_params(2, 2, seed)
    seq = make_rng(seed, 2).normal(size=(3, 2))
    np.testing.assert_allclose(gru_sequence(Tensor(seq), p, reversed=reversed).data,
                               oracle_sequence(seq, p, reversed), atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_reflection_symmetry(T, seed):
    p = seeded_params(3, 4, seed)
    seq = Tensor(make_rng(seed).normal(size=(T, 3)))
    fwd = gru_sequence(seq, p, reversed=False).data
    back_on_flipped = gru_sequence(flip_sequence(seq), p, reversed=True).data
    np.testing.assert_allclose(back_on_flipped, fwd[::-1], atol=1e-12, rtol=0)


def test_empty_sequence():
    with pytest.raises(ConfigError):
        gru_sequence(Tensor(np.zeros((0, 2))), seeded_params(2, 2, 0))


def test_batched_sequence_matches_per_row():
    p = seeded_params(3, 4, 3)
    batch = make_rng(3).normal(size=(5, 6, 3))
    out = gru_sequence(Tensor(batch), p).data
    for b in range(5):
        np.testing.assert_allclose(out[b], oracle_sequence(batch[b], p), atol=1e-12, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1), st.floats(0.1, 30.0))
def test_states_stay_in_unit_box(T, seed, scale):
    rng = make_rng(seed)
    p = seeded_params(3, 4, seed, bias_scale=scale)
    for t in p.named().values():
        t.data *= scale
    out = gru_sequence(Tensor(rng.normal(0, scale, (T, 3))), p).data
    assert np.abs(out).max() <= 1.0


def test_sequence_gradient_T8():
    for seed in range(3):
        p = seeded_params(3, 4, seed)
        seq = Tensor(make_rng(seed, 8).normal(size=(8, 3)))
        C = make_rng(seed, 9).normal(size=(8, 4))
        f = lambda: sum_all(mul(gru_sequence(seq, p), C))
        assert grad_check(f, [seq, *p.named().values()]) < 1e-4


# ---- bigru

def test_bigru_forward_half_is_forward_sequence():
    rng = make_rng(5)
    p = BiGruParams.init(3, 4, rng)
    seq = Tensor(rng.normal(size=(6, 3)))
    out = bigru_forward(seq, p).data
    assert out.shape == (6, 8)
    np.testing.assert_array_equal(out[:, :4], gru_sequence(seq, p.forward).data)
    np.testing.assert_array_equal(out[:, 4:], gru_sequence(seq, p.backward, reversed=True).data)


def test_palindrome_with_shared_weights():
    p0 = seeded_params(2, 3, 7)
    p = BiGruParams(p0, p0)
    half = make_rng(7).normal(size=(3, 2))
    seq = np.concatenate([half, half[::-1]])
    out = bigru_forward(Tensor(seq), p).data
    T = len(seq)
    for t in range(T):
        np.testing.assert_allclose(out[t, :3], out[T - 1 - t, 3:], atol=1e-12, rtol=0)


def test_direction_realignment_with_swapped_params():
    rng = make_rng(11)
    p = BiGruParams.init(3, 4, rng)
    swapped = BiGruParams(p.backward, p.forward)
    seq = Tensor(rng.normal(size=(5, 3)))
    a = bigru_forward(flip_sequence(seq), swapped).data
    b = bigru_forward(seq, p).data[::-1]
    np.testing.assert_allclose(a, np.concatenate([b[:, 4:], b[:, :4]], axis=1), atol=1e-12, rtol=0)


@pytest.mark.parametrize("seed", range(3))
def test_bigru_gradient(seed):
    p = BiGruParams(seeded_params(3, 4, seed), seeded_params(3, 4, seed + 100))
    seq = Tensor(make_rng(seed, 3).normal(size=(5, 3)))
    C = make_rng(seed, 4).normal(size=(5, 8))
    assert grad_check(lambda: sum_all(mul(bigru_forward(seq, p), C)), [seq, *p.named().values()]) < 1e-4


def test_bigru_names_are_unique_and_prefixed():
    names = list(BiGruParams.init(2, 2, make_rng(0)).named("bigru.").keys())
    assert len(names) == len(set(names)) == 18
    assert all(n.startswith(("bigru.fwd.", "bigru.bwd.")) for n in names)
