import numpy as np
import pytest

from asca.errors import ConfigError
from asca.pipeline import (CorpusConfig, classifier_input, load_words, pin_attack,
                           render_sessions, select_mics, word_training_keys)


def test_sessions_are_reproducible():
    a = render_sessions(CorpusConfig(), 2, seed=5)
    b = render_sessions(CorpusConfig(), 2, seed=5)
    assert all(np.array_equal(x.rec.samples, y.rec.samples) for x, y in zip(a, b))
    assert a[0].tap_keys() == b[0].tap_keys() and len(a[0].tap_keys()) == 12


def test_select_mics():
    s = render_sessions(CorpusConfig(), 1, seed=0)[0]
    assert select_mics(s.rec, 2).channel_count == 2
    assert select_mics(s.rec, 1).channel_count == 1
    assert np.array_equal(select_mics(s.rec, 2).samples[1], s.rec.samples[3])


def test_tdoa_features_appended():
    s = render_sessions(CorpusConfig(), 1, seed=0)[0]
    frames = s.true_frames()[0]
    plain = classifier_input("lda", s.rec, frames)
    extra = classifier_input("lda", s.rec, frames, tdoa=True)
    assert extra.size == plain.size + 15
    with pytest.raises(ConfigError):
        classifier_input("conv", s.rec, frames, tdoa=True)


@pytest.mark.parametrize("tdoa,mics", [(False, 6), (True, 6), (False, 2), (False, 1)])
def test_small_attack_runs(tdoa, mics):
    rep, (det, clf) = pin_attack(12, 4, pin_length=4, seed=3, tdoa=tdoa, budget=100, mics=mics)
    assert rep.recall is not None and 0 <= rep.recall <= 1
    assert len(rep.guess_outcomes) == 4
    assert rep.topk[0] <= rep.topk[1] <= rep.topk[2]
    assert 0.0 <= rep.solved_within(10) <= rep.solved_within(100) <= 1.0


def test_word_training_covers_all_letters():
    words = load_words()
    assert len(words) > 100 and all(w.isalpha() and w.islower() for w in words)
    seqs = word_training_keys(words, 5, 12, np.random.default_rng(0))
    seen = [k for s in seqs for k in s]
    assert all(seen.count(ch) >= 2 for ch in "abcdefghijklmnopqrstuvwxyz")
