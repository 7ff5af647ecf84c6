import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asca.classifiers import Posterior
from asca.errors import Infeasible, NotInDictionary, SizeError, TooLarge
from asca.guessing import (P_CLAMP, GuessInstance, GuessOutcome, guess_curve,
                           guess_log_likelihood, rank_pin, rank_pin_bruteforce, rank_word,
                           sort_candidates)
from asca.layouts import PIN_KEYS

K = PIN_KEYS


def random_instance(rng, n=None, L=None, quantized=False):
    L = L or int(rng.integers(1, 4))
    n = n or int(rng.integers(L, 9))
    p = rng.uniform(0.02, 0.98, n)
    if quantized:  # coarse values produce many exact ties
        p = rng.choice([0.2, 0.5, 0.8], n)
        c = rng.choice([1.0, 2.0, 4.0], (n, 10))
        c /= c.sum(axis=1, keepdims=True)
    else:
        c = rng.dirichlet(np.full(10, 0.5), n)
    idx = tuple(sorted(rng.choice(n, L, replace=False).tolist()))
    keys = tuple(K[i] for i in rng.integers(0, 10, L))
    return GuessInstance(p, c, K, L, idx, keys)


def direct_product_ll(inst, sel, keys):
    prod = 1.0
    for n in range(inst.n):
        prod *= inst.p_tap[n] if n in sel else 1.0 - inst.p_tap[n]
    for n, k in zip(sel, keys):
        prod *= inst.posteriors[n, K.index(k)]
    return math.log(prod)


def test_worked_likelihood_example():
    c = np.full((3, 10), 0.05)
    c[0, 3], c[1, 7] = 0.6, 0.5
    inst = GuessInstance([0.9, 0.8, 0.2], c, K, 2)
    ll = guess_log_likelihood(inst, (0, 1), (K[3], K[7]))
    assert ll == pytest.approx(math.log(0.1728), abs=1e-12)


def test_one_hot_certain_taps_are_maximal():
    c = np.eye(10)[[1, 4, 7]]
    inst = GuessInstance([1.0, 1.0, 1.0], c, K, 3, (0, 1, 2), (K[1], K[4], K[7]))
    ll = guess_log_likelihood(inst, (0, 1, 2), inst.truth_keys)
    assert ll == pytest.approx(0.0, abs=1e-8)
    assert inst.p_tap.max() == 1 - P_CLAMP
    assert rank_pin(inst).rank == 1


def test_likelihood_matches_direct_product(rng):
    for _ in range(100):
        inst = random_instance(rng)
        ll = guess_log_likelihood(inst, inst.truth_indices, inst.truth_keys)
        assert ll == pytest.approx(direct_product_ll(inst, inst.truth_indices,
                                                     inst.truth_keys), abs=1e-12)


def test_sort_candidates_examples():
    c = np.array([[0.6] + [0.4 / 9] * 9, [0.9] + [0.1 / 9] * 9])
    assert sort_candidates(GuessInstance([0.9, 0.5], c, K, 1)) == [0, 1]
    same = np.full((3, 10), 0.1)
    assert sort_candidates(GuessInstance([0.5, 0.5, 0.5], same, K, 1)) == [0, 1, 2]
    assert sort_candidates(GuessInstance([0.3], same[:1], K, 1)) == [0]


def test_sort_key_value():
    # key p max c / (1 - p): 0.9 * 0.6 / 0.1 = 5.4, 0.5 * 0.9 / 0.5 = 0.9
    c = np.array([[0.6] + [0.4 / 9] * 9, [0.9] + [0.1 / 9] * 9])
    inst = GuessInstance([0.9, 0.5], c, K, 1)
    from asca.guessing import _scores
    assert np.exp(_scores(inst).max(axis=1)) == pytest.approx([5.4, 0.9])


def test_dominant_truth_ranks_first():
    n, L = 7, 3
    p = np.full(n, P_CLAMP)
    c = np.full((n, 10), 0.1)
    truth = (1, 3, 5)
    for i, k in zip(truth, (2, 9, 0)):
        p[i] = 1.0
        c[i] = np.eye(10)[k]
    inst = GuessInstance(p, c, K, L, truth, (K[2], K[9], K[0]))
    out = rank_pin(inst)
    assert out.rank == 1 and not out.exhausted


@pytest.mark.parametrize("L", [1, 2, 3])
def test_uniform_exact_candidates_rank_10_pow_L(L):
    inst = GuessInstance(np.full(L, 0.9), np.full((L, 10), 0.1), K, L, tuple(range(L)),
                         (K[0],) * L)
    assert rank_pin(inst, budget=None).rank == 10 ** L
    assert rank_pin_bruteforce(inst).rank == 10 ** L


def test_search_matches_bruteforce_200_instances(rng):
    for trial in range(200):
        inst = random_instance(rng, quantized=trial % 4 == 0)
        fast = rank_pin(inst, budget=None, pin_rank=True)
        slow = rank_pin_bruteforce(inst)
        assert fast.rank == slow.rank
        assert fast.pin_rank == slow.pin_rank
        assert not fast.exhausted and fast.rank >= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_search_matches_bruteforce_property(seed, quantized):
    inst = random_instance(np.random.default_rng(seed), quantized=quantized)
    assert rank_pin(inst, budget=None).rank == rank_pin_bruteforce(inst).rank


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-6, 6))
def test_rank_invariant_under_uniform_rescaling(seed, e):
    inst = random_instance(np.random.default_rng(seed))
    # every guess picks exactly L rows, so scaling all c by a multiplies each likelihood by a^L
    scaled = GuessInstance(inst.p_tap, inst.posteriors * 2.0 ** e, K, inst.pin_length,
                           inst.truth_indices, inst.truth_keys)
    assert rank_pin(scaled, budget=None).rank == rank_pin(inst, budget=None).rank


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 20.0), st.booleans())
def test_raising_truth_cells_never_raises_rank(seed, factor, quantized):
    inst = random_instance(np.random.default_rng(seed), quantized=quantized)
    c = inst.posteriors.copy()
    for i, k in zip(inst.truth_indices, inst.truth_keys):
        c[i, K.index(k)] *= factor
    boosted = GuessInstance(inst.p_tap, c, K, inst.pin_length, inst.truth_indices,
                            inst.truth_keys)
    assert rank_pin(boosted, budget=None).rank <= rank_pin(inst, budget=None).rank


def test_tie_counts_later_truth_twice():
    c = np.full((2, 10), 0.1)
    inst = GuessInstance([0.5, 0.5], c, K, 1, (1,), (K[0],))
    assert rank_pin_bruteforce(inst).rank == 20
    one_hot = np.eye(10)[[4, 4]]
    inst = GuessInstance([0.5, 0.5], one_hot, K, 1, (1,), (K[4],))
    assert rank_pin_bruteforce(inst).rank == 2 == rank_pin(inst).rank


def test_single_candidate_one_hot():
    inst = GuessInstance([0.7], np.eye(10)[[3]], K, 1, (0,), (K[3],))
    assert rank_pin_bruteforce(inst).rank == 1


def test_errors():
    inst = GuessInstance([0.5], np.full((1, 10), 0.1), K, 2)
    with pytest.raises(Infeasible):
        rank_pin(inst)
    with pytest.raises(Infeasible):
        rank_pin_bruteforce(inst)
    big = GuessInstance(np.full(20, 0.5), np.full((20, 10), 0.1), K, 5, (0, 1, 2, 3, 4),
                        (K[0],) * 5)
    with pytest.raises(TooLarge):
        rank_pin_bruteforce(big)
    with pytest.raises(SizeError):
        GuessInstance([0.5, 0.5], np.full((2, 10), 0.1), K, 2, (1, 0), (K[0], K[0]))
    with pytest.raises(SizeError):
        GuessInstance([0.5], np.full((2, 10), 0.1), K, 1)


def test_budget_exhaustion():
    inst = GuessInstance(np.full(3, 0.9), np.full((3, 10), 0.1), K, 3, (0, 1, 2), (K[0],) * 3)
    out = rank_pin(inst, budget=100)
    assert out.exhausted and out.rank == 101
    out = rank_pin(inst, budget=1000)
    assert not out.exhausted and out.rank == 1000
    assert rank_pin(inst, budget=999).exhausted


def test_parallel_equals_serial(rng):
    for _ in range(30):
        inst = random_instance(rng, n=int(rng.integers(5, 12)), L=int(rng.integers(2, 5)))
        for budget in (50, 3000, None):
            a = rank_pin(inst, budget=budget)
            b = rank_pin(inst, budget=budget, parallel="force", threads=4)
            assert a == b


def test_guess_curve():
    outs = [GuessOutcome(1, 0.0), GuessOutcome(5, 0.0), None, GuessOutcome(3001, 0.0, True)]
    g, solved = guess_curve(outs, max_guesses=10)
    assert g.tolist() == list(range(1, 11))
    assert solved[0] == 0.25 and solved[4] == 0.5 and solved[-1] == 0.5
    assert np.all(np.diff(solved) >= 0)
    _, empty = guess_curve([], max_guesses=3)
    assert empty.tolist() == [0.0, 0.0, 0.0]
    _, pins = guess_curve([GuessOutcome(8, 0.0, False, 2)], 3, use_pin_rank=True)
    assert pins.tolist() == [0.0, 1.0, 1.0]


WORDS = ["cat", "dog", "cot", "act", "tame", "team", "meat", "a"]
LETTERS = tuple("abcdefghijklmnopqrstuvwxyz")


def _rows(word, hot=True):
    if not hot:
        return [Posterior(np.full(26, 1 / 26), LETTERS) for _ in word]
    return [Posterior(np.eye(26)[LETTERS.index(ch)], LETTERS) for ch in word]


def test_word_rank_cases():
    assert rank_word(_rows("cat"), WORDS, "cat") == 1
    assert rank_word(_rows("team", hot=False), WORDS, "team") == 3
    assert rank_word(_rows("a", hot=False), WORDS, "a") == 1
    with pytest.raises(NotInDictionary):
        rank_word(_rows("cab"), WORDS, "cab")
    with pytest.raises(SizeError):
        rank_word(_rows("ca"), WORDS, "cat")
    with pytest.raises(SizeError):
        rank_word([np.full(26, 1 / 26)] * 3, WORDS, "cat")
    raw = [np.eye(26)[LETTERS.index(ch)] for ch in "dog"]
    assert rank_word(raw, WORDS, "dog", labels=LETTERS) == 1


def test_word_rank_brute_force(rng):
    for _ in range(50):
        word = WORDS[int(rng.integers(0, 7))]
        rows = rng.dirichlet(np.ones(26), len(word))
        score = lambda w: sum(math.log(rows[i, LETTERS.index(ch)]) for i, ch in enumerate(w))
        expect = sum(1 for w in WORDS if len(w) == len(word) and score(w) >= score(word) - 1e-9)
        assert rank_word(list(rows), WORDS, word, labels=LETTERS) == expect
