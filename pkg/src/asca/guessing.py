"""Likelihood-ranked guessing of PINs and dictionary words.

A guess picks which ``L`` candidates (in time order) are the real taps and
which key each one is.  Its log-likelihood is

    sum_{n chosen} [ln p_n + ln c_{n,k_n}] + sum_{n not chosen} ln(1 - p_n)

and the rank of the truth is the number of guesses at least as likely as it
(truth included).  Writing ``w_{n,i} = ln p_n - ln(1 - p_n) + ln c_{n,i}``
the likelihood is a constant plus the sum of the chosen ``w``, so the
search sorts candidates by ``max_i w_{n,i}`` (the log of
``p_n max_i c_{n,i} / (1 - p_n)``) and drops a branch as soon as even its
best completion falls below the truth.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import Infeasible, NotInDictionary, SizeError, TooLarge

P_CLAMP = 1e-9
LOG_FLOOR = 1e-300
TIE_EPS = 1e-9
DEFAULT_BUDGET = 3000
BRUTE_FORCE_LIMIT = 10 ** 7


@dataclass(frozen=True, eq=False)
class GuessInstance:
    """Time-ordered candidates with tap probabilities and key posteriors."""

    p_tap: np.ndarray  # (n,)
    posteriors: np.ndarray  # (n, K)
    labels: tuple
    pin_length: int
    truth_indices: tuple = ()
    truth_keys: tuple = ()

    def __post_init__(self):
        p = np.clip(np.asarray(self.p_tap, dtype=float).ravel(), P_CLAMP, 1.0 - P_CLAMP)
        c = np.atleast_2d(np.asarray(self.posteriors, dtype=float))
        if len(c) != len(p) or c.shape[1] != len(self.labels):
            raise SizeError("one posterior row per candidate, one column per label")
        object.__setattr__(self, "p_tap", p)
        object.__setattr__(self, "posteriors", c)
        object.__setattr__(self, "labels", tuple(self.labels))
        ti = tuple(int(i) for i in self.truth_indices)
        object.__setattr__(self, "truth_indices", ti)
        object.__setattr__(self, "truth_keys", tuple(self.truth_keys))
        if self.pin_length < 1:
            raise SizeError("pin_length must be positive")
        if ti:
            if len(ti) != self.pin_length or len(self.truth_keys) != self.pin_length:
                raise SizeError("truth must pick exactly pin_length candidates")
            if any(b <= a for a, b in zip(ti, ti[1:])):
                raise SizeError("truth indices must be strictly increasing")

    @classmethod
    def from_candidates(cls, candidates, pin_length, truth_indices=(), truth_keys=()):
        """Build from ``(p_tap, Posterior)`` pairs."""
        labels = candidates[0][1].labels if candidates else ()
        p = [pt for pt, _ in candidates]
        c = [post.probabilities for _, post in candidates]
        return cls(np.array(p), np.array(c).reshape(len(p), len(labels)), labels, pin_length,
                   truth_indices, truth_keys)

    @property
    def n(self) -> int:
        return len(self.p_tap)

    def key_index(self, key) -> int:
        return self.labels.index(key)


@dataclass(frozen=True)
class GuessOutcome:
    rank: int
    truth_log_likelihood: float
    exhausted: bool = False
    pin_rank: int | None = None


def _log_c(inst):
    return np.log(np.maximum(inst.posteriors, LOG_FLOOR))


def guess_log_likelihood(instance: GuessInstance, selection, keys) -> float:
    """Log-likelihood of choosing ``selection`` (candidate indices) as ``keys``."""
    chosen = set(int(i) for i in selection)
    lc = _log_c(instance)
    total = 0.0
    for n in range(instance.n):
        if n in chosen:
            total += math.log(instance.p_tap[n])
        else:
            total += math.log(1.0 - instance.p_tap[n])
    for n, k in zip(selection, keys):
        total += lc[int(n), instance.key_index(k)]
    return total


def _scores(inst):
    p = inst.p_tap
    return (np.log(p) - np.log1p(-p))[:, None] + _log_c(inst)


def sort_candidates(instance: GuessInstance) -> list:
    """Candidate indices by ``p max_i c_i / (1 - p)`` descending, ties in time order."""
    key = _scores(instance).max(axis=1)
    return [int(i) for i in np.argsort(-key, kind="stable")]


def _truth_score(inst, w):
    if not inst.truth_indices:
        raise SizeError("instance has no truth")
    return float(sum(w[i, inst.key_index(k)] for i, k in zip(inst.truth_indices, inst.truth_keys)))


def _search_table(inst):
    w = _scores(inst)
    order = sort_candidates(inst)
    key_order = np.argsort(-w[order], axis=1, kind="stable")
    table = np.take_along_axis(w[order], key_order, axis=1)
    prefix = np.concatenate([[0.0], np.cumsum(table[:, 0])])
    return w, order, key_order, table, prefix


def _threads(threads):
    if threads is not None:
        return max(1, int(threads))
    return max(1, int(os.environ.get("ASCA_THREADS", os.cpu_count() or 1)))


def _count_parallel(table, prefix, length, thr, cap, threads):
    """Split on the first (row, key) pick; each branch counts independently."""
    n, k = table.shape
    lim = thr - 2 * TIE_EPS
    tasks = []
    for i in range(n - length + 1):
        if prefix[i + length] - prefix[i] < lim:
            break
        for j in range(k):
            v = 0.0 + table[i, j]
            if v + (prefix[i + length] - prefix[i + 1]) < lim:
                break
            tasks.append((i, v))

    def run(task):
        i, v = task
        if length == 1:
            return 1 if v >= thr - TIE_EPS else 0
        return kernels.count_guesses(table, prefix, length - 1, thr, TIE_EPS, cap, i + 1, v)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        counts = list(pool.map(run, tasks))
    return sum(min(c, cap + 1) for c in counts)


def _enumerate_pins(inst, order, key_order, table, prefix, thr):
    """Distinct key strings among guesses scoring >= thr (small counts only)."""
    n, length = len(order), inst.pin_length
    lim, leaf = thr - 2 * TIE_EPS, thr - TIE_EPS
    pins = set()

    def rec(start, depth, part, picks):
        r = length - depth
        for i in range(start, n - r + 1):
            if part + prefix[i + r] - prefix[i] < lim:
                return
            for j in range(table.shape[1]):
                v = part + table[i, j]
                if v + prefix[i + r] - prefix[i + 1] < lim:
                    break
                nxt = picks + ((order[i], inst.labels[key_order[i, j]]),)
                if r == 1:
                    if v >= leaf:
                        pins.add(tuple(k for _, k in sorted(nxt)))
                else:
                    rec(i + 1, depth + 1, v, nxt)

    rec(0, 0, 0.0, ())
    return len(pins)


def rank_pin(instance: GuessInstance, budget=DEFAULT_BUDGET, parallel=False, threads=None,
             pin_rank=False) -> GuessOutcome:
    """Rank of the truth among all (timing, key) guesses, via pruned search.

    Counting stops past ``budget``; the outcome is then flagged exhausted and
    reports ``rank = budget + 1``.  ``budget=None`` searches without limit.
    """
    length = instance.pin_length
    if instance.n < length:
        raise Infeasible(f"{instance.n} candidates for a length-{length} input")
    w, order, key_order, table, prefix = _search_table(instance)
    thr = _truth_score(instance, w)
    cap = budget if budget is not None else np.iinfo(np.int64).max - 1
    if parallel and _threads(threads) > 1 or parallel == "force":
        count = _count_parallel(table, prefix, length, thr, cap, _threads(threads))
    else:
        count = kernels.count_guesses(table, prefix, length, thr, TIE_EPS, cap)
    exhausted = count > cap
    rank = cap + 1 if exhausted else count
    truth_ll = guess_log_likelihood(instance, instance.truth_indices, instance.truth_keys)
    pins = None
    if pin_rank and not exhausted:
        pins = _enumerate_pins(instance, order, key_order, table, prefix, thr)
    return GuessOutcome(int(rank), truth_ll, bool(exhausted), pins)


def rank_pin_bruteforce(instance: GuessInstance) -> GuessOutcome:
    """Exact rank by enumerating every selection and key assignment."""
    n, length, k = instance.n, instance.pin_length, len(instance.labels)
    if n < length:
        raise Infeasible(f"{n} candidates for a length-{length} input")
    total = math.comb(n, length) * k ** length
    if total > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"{total} guesses exceed the brute-force limit")
    truth_ll = guess_log_likelihood(instance, instance.truth_indices, instance.truth_keys)
    lp, lq = np.log(instance.p_tap), np.log(1.0 - instance.p_tap)
    lc = _log_c(instance)
    count = 0
    pins = set()
    for sel in itertools.combinations(range(n), length):
        chosen = np.zeros(n, dtype=bool)
        chosen[list(sel)] = True
        base = lp[chosen].sum() + lq[~chosen].sum()
        grid = np.zeros(())
        for i in sel:
            grid = np.add.outer(grid, lc[i])
        hit = base + grid >= truth_ll - TIE_EPS
        count += int(hit.sum())
        for combo in zip(*np.nonzero(hit)):
            pins.add(tuple(instance.labels[c] for c in combo))
    return GuessOutcome(count, truth_ll, False, len(pins))


def guess_curve(outcomes, max_guesses=DEFAULT_BUDGET, use_pin_rank=False):
    """Cumulative fraction of instances solved within ``g`` guesses, ``g = 1..max``.

    ``outcomes`` may contain ``None`` for instances that are unsolvable (a
    true tap without any candidate); those never count as solved.
    """
    ranks = []
    for o in outcomes:
        if o is None or o.exhausted:
            ranks.append(math.inf)
        else:
            ranks.append(o.pin_rank if use_pin_rank and o.pin_rank is not None else o.rank)
    ranks = np.array(ranks, dtype=float)
    g = np.arange(1, max_guesses + 1)
    if len(ranks) == 0:
        return g, np.zeros(len(g))
    solved = (ranks[None, :] <= g[:, None]).sum(axis=1) / len(ranks)
    return g, solved


def word_log_likelihood(posteriors, word, labels) -> float:
    total = 0.0
    for row, ch in zip(posteriors, word):
        if ch not in labels:
            return -math.inf
        total += math.log(max(float(row[labels.index(ch)]), LOG_FLOOR))
    return total


def rank_word(posteriors, dictionary, truth_word, labels=None) -> int:
    """Number of same-length dictionary words at least as likely as the truth.

    ``posteriors`` holds one Posterior (or probability row, with ``labels``)
    per true tap.
    """
    rows = []
    for p in posteriors:
        if hasattr(p, "probabilities"):
            labels = labels or p.labels
            rows.append(p.probabilities)
        else:
            rows.append(np.asarray(p, dtype=float))
    if labels is None:
        raise SizeError("labels required for raw posterior rows")
    labels = tuple(labels)
    if len(rows) != len(truth_word):
        raise SizeError("one posterior per letter of the truth word")
    words = set(dictionary)
    if truth_word not in words:
        raise NotInDictionary(truth_word)
    same = sorted(w for w in words if len(w) == len(truth_word))
    lc = np.log(np.maximum(np.array(rows), LOG_FLOOR))
    index = {ch: i for i, ch in enumerate(labels)}
    truth_ll = float(sum(lc[n, index[ch]] for n, ch in enumerate(truth_word)))
    count = 0
    for w in same:
        if any(ch not in index for ch in w):
            continue
        ll = sum(lc[n, index[ch]] for n, ch in enumerate(w))
        if ll >= truth_ll - TIE_EPS:
            count += 1
    return count
