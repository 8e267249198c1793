import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htr_transfer.ctc import (CtcInfeasibleError, collapse_path, ctc_bruteforce, ctc_forward_backward,
                              extend_labels, greedy_decode, min_frames)
from htr_transfer.tensor import softmax_rows

from conftest import numeric_grad, rel_error

A, B, BLANK = 0, 1, 2


def random_instance(rng):
    k = int(rng.integers(2, 5))  # alphabet of 1..3 plus blank
    t = int(rng.integers(1, 9))
    while True:
        labels = [int(c) for c in rng.integers(0, k - 1, size=int(rng.integers(0, t + 1)))]
        if min_frames(labels) <= t:
            return rng.normal(scale=2.0, size=(t, k)), labels


def test_collapse_rules():
    assert collapse_path([A, A, BLANK, B, B], BLANK) == [A, B]
    assert collapse_path([BLANK] * 4, BLANK) == []
    assert collapse_path([A, BLANK, A], BLANK) == [A, A]
    with pytest.raises(ValueError):
        collapse_path([3], BLANK)


def test_extend_labels():
    assert extend_labels([], BLANK).tolist() == [BLANK]
    assert extend_labels([A, B], BLANK).tolist() == [BLANK, A, BLANK, B, BLANK]
    assert extend_labels([A, A], BLANK).tolist() == [BLANK, A, BLANK, A, BLANK]


def test_single_frame_hand_case():
    loss, _ = ctc_forward_backward(np.zeros((1, 2)), [0])
    assert abs(loss - (-math.log(0.5))) <= 1e-12
    assert abs(loss - 0.693147) < 1e-6


def test_two_frame_hand_case():
    # paths aa, a-, -a out of four equiprobable ones
    loss, _ = ctc_forward_backward(np.zeros((2, 2)), [0])
    assert abs(loss - (-math.log(0.75))) <= 1e-12
    assert abs(loss - 0.287682) < 1e-6


def test_bruteforce_hand_cases():
    assert abs(ctc_bruteforce(np.full((1, 2), 0.5), [0]) + math.log(0.5)) <= 1e-12
    assert abs(ctc_bruteforce(np.full((2, 2), 0.5), [0]) + math.log(0.75)) <= 1e-12


def test_bruteforce_empty_target_uniform():
    k = 3
    assert ctc_bruteforce(np.full((3, k), 1 / k), []) == pytest.approx(-3 * math.log(1 / k), abs=1e-12)


def test_bruteforce_infeasible():
    with pytest.raises(CtcInfeasibleError):
        ctc_bruteforce(np.full((2, 3), 1 / 3), [A, A])


def test_bruteforce_too_large():
    with pytest.raises(ValueError):
        ctc_bruteforce(np.full((20, 3), 1 / 3), [A])


def test_dp_matches_bruteforce_on_random_instances():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        logits, labels = random_instance(rng)
        dp, _ = ctc_forward_backward(logits, labels)
        worst = max(worst, abs(dp - ctc_bruteforce(softmax_rows(logits), labels)))
    assert worst <= 1e-9


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(25):
        logits, labels = random_instance(rng)
        _, grad = ctc_forward_backward(logits, labels)
        num = numeric_grad(lambda: ctc_forward_backward(logits, labels)[0], logits)
        assert rel_error(grad, num) <= 1e-4


def test_input_len_masks_trailing_frames():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 3))
    loss, grad = ctc_forward_backward(logits, [A, B], input_len=4)
    ref, ref_grad = ctc_forward_backward(logits[:4], [A, B])
    assert loss == ref
    assert np.array_equal(grad[:4], ref_grad) and not grad[4:].any()


def test_infeasible_target_raises():
    with pytest.raises(CtcInfeasibleError):
        ctc_forward_backward(np.zeros((2, 3)), [A, A])
    with pytest.raises(CtcInfeasibleError):
        ctc_forward_backward(np.zeros((5, 3)), [A, B], input_len=1)


def test_alpha_beta_consistency():
    rng = np.random.default_rng(3)
    for _ in range(30):
        logits, labels = random_instance(rng)
        _, _, tab = ctc_forward_backward(logits, labels, return_tables=True)
        per_t = np.logaddexp.reduce(tab.alpha + tab.beta - tab.log_py[:, tab.extended], axis=1)
        assert np.allclose(per_t, tab.log_prob, atol=1e-9, rtol=0)


def test_loss_nonnegative_and_zero_for_certain_path():
    rng = np.random.default_rng(4)
    for _ in range(50):
        logits, labels = random_instance(rng)
        assert ctc_forward_backward(logits, labels)[0] >= 0
    sure = np.full((3, 3), -1e4)
    sure[[0, 1, 2], [A, BLANK, B]] = 0.0
    assert ctc_forward_backward(sure, [A, B])[0] == pytest.approx(0.0, abs=1e-12)


def one_hot(path, k, hot=5.0):
    x = np.zeros((len(path), k))
    x[np.arange(len(path)), path] = hot
    return x


def test_greedy_decode_cases():
    assert greedy_decode(one_hot([A, A, BLANK, B], 3)) == [A, B]
    # every frame ties; lowest index (A) wins and repeats collapse
    assert greedy_decode(np.zeros((4, 3))) == [A]
    assert greedy_decode(one_hot([A, BLANK, B, B], 3), input_len=2) == [A]


def test_greedy_decode_shift_invariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(7, 4))
    shifted = x + rng.normal(size=(7, 1)) * 10
    assert greedy_decode(x) == greedy_decode(shifted)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=0, max_size=8), st.data())
def test_greedy_decode_inverts_collapse_preimages(labels, data):
    # any frame path that collapses to `labels`, one-hot encoded, decodes back
    path = []
    for i, c in enumerate(labels):
        if i and labels[i - 1] == c:
            path.append(3)
        path += [c] * data.draw(st.integers(1, 3))
        path += [3] * data.draw(st.integers(0, 2))
    if not path:
        path = [3]
    assert collapse_path(path, 3) == labels
    assert greedy_decode(one_hot(path, 4)) == labels
