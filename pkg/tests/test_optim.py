import math

import numpy as np
import pytest

from satmamba.harness.optim import AdamW, lr_at_epoch
from satmamba.ndgrad import Tensor


def test_single_step_matches_hand_computation():
    w = Tensor(np.array([[1.0, -2.0]], dtype=np.float64), requires_grad=True)
    w.grad = np.array([[0.5, 0.25]])
    opt = AdamW([("w", w)], lr=0.1, betas=(0.9, 0.999), eps=1e-8,
                weight_decay=0.0)
    opt.step()
    g = np.array([[0.5, 0.25]])
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    expected = np.array([[1.0, -2.0]]) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(w.data, expected, rtol=1e-12)


def test_weight_decay_only_on_matrices():
    w = Tensor(np.ones((2, 2), dtype=np.float64), requires_grad=True)
    b = Tensor(np.ones(2, dtype=np.float64), requires_grad=True)
    w.grad = np.zeros((2, 2))
    b.grad = np.zeros(2)
    opt = AdamW([("w", w), ("b", b)], lr=0.5, weight_decay=0.1)
    opt.step()
    assert np.allclose(w.data, 1.0 - 0.5 * 0.1)  # decayed
    assert np.allclose(b.data, 1.0)              # untouched


def test_params_without_grad_skipped():
    w = Tensor(np.ones(3, dtype=np.float64), requires_grad=True)
    opt = AdamW([("w", w)], lr=1.0)
    opt.step()
    assert np.allclose(w.data, 1.0)


def test_state_roundtrip():
    w = Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
    opt = AdamW([("w", w)], lr=0.01)
    for _ in range(3):
        w.grad = np.full((2, 3), 0.3, dtype=np.float32)
        opt.step()
    arrays = opt.state_arrays()
    w2 = Tensor(w.data.copy(), requires_grad=True)
    opt2 = AdamW([("w", w2)], lr=0.01)
    opt2.load_state_arrays({k: v.copy() for k, v in arrays.items()})
    w.grad = np.full((2, 3), -0.2, dtype=np.float32)
    w2.grad = np.full((2, 3), -0.2, dtype=np.float32)
    opt.step()
    opt2.step()
    assert w.data.tobytes() == w2.data.tobytes()


def test_schedule_warmup_then_cosine():
    base = 1e-3
    lrs = [lr_at_epoch(e, 100, 10, base) for e in range(100)]
    # linear warmup reaches base exactly at the last warmup epoch
    assert lrs[0] == pytest.approx(base / 10)
    assert lrs[9] == pytest.approx(base)
    # cosine decays monotonically afterwards
    assert all(a >= b - 1e-15 for a, b in zip(lrs[10:], lrs[11:]))
    assert lrs[55] == pytest.approx(
        0.5 * base * (1 + math.cos(math.pi * 45 / 90)))
    assert lrs[-1] < 0.01 * base


def test_schedule_rejects_bad_warmup():
    with pytest.raises(ValueError):
        lr_at_epoch(0, 10, 20, 1e-3)
