"""Streaming moment statistics: EMA recurrences, bias correction, SNR.

Oracles: closed-form EMA of a constant stream (m after t steps of constant g
is g·(1−β1^t), so the bias-corrected m̂ recovers g exactly), and a direct
python re-simulation of the recurrence for random streams.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from splatctl.errors import (
    AlignmentError,
    PoisonedGradientError,
    UndefinedCorrectionError,
)
from splatctl.moments import (
    MomentConfig,
    MomentState,
    batch_update,
    bias_corrected,
    carry_state,
    fresh_state,
    intrinsic_snr,
    momentum_norms,
    poisoned_mask,
    update,
)

CFG = MomentConfig()


# ---------------------------------------------------------------------------
# EMA recurrence and bias correction


@given(
    gx=st.floats(-10, 10, allow_nan=False),
    gy=st.floats(-10, 10, allow_nan=False),
    t=st.integers(1, 200),
)
def test_constant_stream_bias_correction_recovers_g(gx, gy, t):
    g = np.array([gx, gy])
    state = fresh_state()
    for _ in range(t):
        state = update(state, g, CFG)
    # raw m carries the (1 - beta1^t) startup deficit; m_hat removes it
    np.testing.assert_allclose(state.m, g * (1 - CFG.beta1**t), rtol=1e-12, atol=1e-12)
    m_hat, v_hat = bias_corrected(state, CFG)
    np.testing.assert_allclose(m_hat, g, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(v_hat, g * g, rtol=1e-9, atol=1e-12)


def test_update_matches_direct_recurrence(rng):
    state = fresh_state()
    m = np.zeros(2)
    v = np.zeros(2)
    for _ in range(50):
        g = rng.standard_normal(2)
        state = update(state, g, CFG)
        m = CFG.beta1 * m + (1 - CFG.beta1) * g
        v = CFG.beta2 * v + (1 - CFG.beta2) * g * g
    np.testing.assert_allclose(state.m, m, rtol=1e-12)
    np.testing.assert_allclose(state.v, v, rtol=1e-12)
    assert state.steps == 50


def test_update_rejects_nonfinite():
    state = fresh_state()
    with pytest.raises(PoisonedGradientError):
        update(state, np.array([np.nan, 0.0]), CFG)
    with pytest.raises(PoisonedGradientError):
        update(state, np.array([0.0, np.inf]), CFG)


def test_bias_correction_undefined_at_zero_steps():
    with pytest.raises(UndefinedCorrectionError):
        bias_corrected(fresh_state(), CFG)
    batch = fresh_state(3)
    batch.steps[:2] = 1
    with pytest.raises(UndefinedCorrectionError):
        bias_corrected(batch, CFG)  # one row still unseen


# ---------------------------------------------------------------------------
# batch semantics


def test_batch_update_equals_per_row_updates(rng):
    n = 7
    batch = fresh_state(n)
    singles = [fresh_state() for _ in range(n)]
    for _ in range(20):
        grads = rng.standard_normal((n, 2))
        batch = batch_update(batch, grads, CFG)
        singles = [update(s, g, CFG) for s, g in zip(singles, grads)]
    for i, s in enumerate(singles):
        np.testing.assert_allclose(batch.m[i], s.m, rtol=1e-12)
        np.testing.assert_allclose(batch.v[i], s.v, rtol=1e-12)
        assert batch.steps[i] == s.steps


def test_batch_update_flags_and_skips_poisoned_rows():
    state = fresh_state(3)
    good = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
    state = batch_update(state, good, CFG)
    poisoned = np.array([[1.0, 0.0], [np.nan, 2.0], [3.0, np.inf]])
    np.testing.assert_array_equal(poisoned_mask(poisoned), [False, True, True])
    after = batch_update(state, poisoned, CFG)
    # clean row advances
    assert after.steps[0] == 2 and after.m[0, 0] > state.m[0, 0]
    # poisoned rows pass through untouched
    np.testing.assert_array_equal(after.m[1:], state.m[1:])
    np.testing.assert_array_equal(after.v[1:], state.v[1:])
    np.testing.assert_array_equal(after.steps[1:], state.steps[1:])
    assert np.all(np.isfinite(after.m)) and np.all(np.isfinite(after.v))


def test_batch_update_shape_mismatch():
    with pytest.raises(AlignmentError):
        batch_update(fresh_state(3), np.zeros((4, 2)), CFG)


# ---------------------------------------------------------------------------
# SNR


def test_snr_constant_stream_is_one():
    # acceptance criterion 1 at unit scale: for any constant nonzero stream
    # SNR = ||g|| / (||g|| + eps) -> 1 at every t >= 1
    state = fresh_state()
    g = np.array([0.3, -0.4])
    for _ in range(10):
        state = update(state, g, CFG)
        assert abs(intrinsic_snr(state, CFG) - 1.0) < 1e-6


def test_snr_alternating_stream_decays():
    # zero-mean signed stream: m cancels while v keeps the power
    state = fresh_state()
    for k in range(400):
        g = np.array([1.0, 0.0]) * (1 if k % 2 == 0 else -1)
        state = update(state, g, CFG)
    assert intrinsic_snr(state, CFG) < 0.1


def test_snr_scale_invariant(rng):
    grads = rng.standard_normal((60, 2))
    a, b = fresh_state(), fresh_state()
    for g in grads:
        a = update(a, g, CFG)
        b = update(b, g * 1e6, CFG)
    np.testing.assert_allclose(
        intrinsic_snr(a, CFG), intrinsic_snr(b, CFG), rtol=1e-6
    )


@given(st.integers(0, 2**31))
def test_snr_bounded_by_consistency(seed):
    # ||m_hat||_2 <= sqrt(||v_hat||_1) for any real stream (Jensen), so the
    # intrinsic SNR lives in [0, ~1]
    rng = np.random.default_rng(seed)
    state = fresh_state()
    for _ in range(rng.integers(1, 60)):
        state = update(state, rng.standard_normal(2) * rng.uniform(0, 10), CFG)
    snr = intrinsic_snr(state, CFG)
    assert 0.0 <= snr <= 1.0 + 1e-9


def test_momentum_norms_matches_manual(rng):
    state = fresh_state(5)
    for _ in range(9):
        state = batch_update(state, rng.standard_normal((5, 2)), CFG)
    m_hat, _ = bias_corrected(state, CFG)
    np.testing.assert_allclose(
        momentum_norms(state, CFG), np.sqrt((m_hat**2).sum(axis=1)), rtol=1e-12
    )


# ---------------------------------------------------------------------------
# carry / reindex


def test_carry_state_reindexes_and_freshens():
    state = fresh_state(3)
    state.m[:] = [[1, 1], [2, 2], [3, 3]]
    state.v[:] = [[4, 4], [5, 5], [6, 6]]
    state.steps[:] = [10, 20, 30]
    out = carry_state(state, np.array([2, -1, 0], np.int64))
    np.testing.assert_array_equal(out.m, [[3, 3], [0, 0], [1, 1]])
    np.testing.assert_array_equal(out.v, [[6, 6], [0, 0], [4, 4]])
    np.testing.assert_array_equal(out.steps, [30, 0, 10])


def test_fresh_state_shapes_and_row_view():
    single = fresh_state()
    assert single.m.shape == (2,) and single.steps == 0
    batch = fresh_state(4)
    assert batch.m.shape == (4, 2) and batch.steps.shape == (4,)
    row = batch.row(2)
    row.m[0] = 9.0
    assert batch.m[2, 0] == 0.0


def test_moment_config_validation():
    with pytest.raises(ValueError):
        MomentConfig(beta1=1.0)
    with pytest.raises(ValueError):
        MomentConfig(beta2=0.0)
    with pytest.raises(ValueError):
        MomentConfig(epsilon=0.0)
