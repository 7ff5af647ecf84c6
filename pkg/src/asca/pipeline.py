"""End-to-end attack pipeline on synthetic sessions.

A session is one rendered recording of a victim typing a key sequence.
Training sessions are labelled from ground truth (standing in for the
automatic labelling of real recordings); test sessions go through candidate
generation, tap scoring, key classification and likelihood-ranked guessing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import ArrayGeometry, MultichannelRecording
from .classifiers import ConvConfig, ConvModel, Posterior, conv_train, lda_train, posterior_batch
from .detection import (DETECTOR_LABELS, MATCH_TOLERANCE, MIC_SUBSETS, NOT_TAP, TAP,
                        conv_input, energy_candidates, eval_detection,
                        match_events, score_candidates)
from .doa import delay_features
from .errors import ConfigError, Infeasible
from .features import tap_mfcc
from .guessing import GuessInstance, rank_pin
from .keyclass import classify_taps, confusion, topk_accuracy
from .layouts import LETTER_KEYS, PIN_KEYS, layout_by_name
from .synth import DEFAULT_SEPARATION, random_schedule, render_scene, scene_for_layout

NOISE_NEGATIVES = 4  # random background windows per training session
NEGATIVE_CLEARANCE = 0.06  # seconds kept between a background window and any tap


@dataclass(frozen=True)
class CorpusConfig:
    layout: str = "pin"
    device: str = "nokia5.1"
    orientation: str | None = None
    snr_db: float = 15.0
    separation: float = DEFAULT_SEPARATION
    device_seed: int = 0
    range_m: float = 0.15
    azimuth: float = -math.pi / 2
    snr_ref_range: float | None = None
    noise_kind: str = "pink"
    clutter_rate: float = 2.0
    decoy_rate: float = 0.0
    taps_per_session: int = 12
    gap: tuple = (0.25, 0.6)
    sync_chirp: bool = False

    def key_layout(self):
        return layout_by_name(self.layout, self.device, self.orientation)


@dataclass(frozen=True, eq=False)
class Session:
    rec: MultichannelRecording
    truth: object  # GroundTruth
    keys: tuple
    seed: int

    def true_frames(self):
        """Per-tap per-channel arrival frames (rounded)."""
        return [tuple(int(round(a)) for a in t.arrivals) for t in self.truth.true_taps]

    def true_times(self):
        fs = self.rec.sample_rate
        return [t.arrivals[0] / fs for t in self.truth.true_taps]

    def tap_keys(self):
        return [t.key for t in self.truth.true_taps]


@dataclass(frozen=True, eq=False)
class LabeledRecording:
    """A recording with known tap frames (channel 0) and keys, e.g. from a manifest."""

    rec: MultichannelRecording
    taps: tuple  # (frame, key)

    def true_frames(self):
        return [(int(f),) * self.rec.channel_count for f, _ in self.taps]

    def true_times(self):
        return [f / self.rec.sample_rate for f, _ in self.taps]

    def tap_keys(self):
        return [k for _, k in self.taps]


def key_sequence(layout, n, rng, weights=None):
    keys = list(layout.keys)
    idx = rng.choice(len(keys), size=n, p=weights)
    return [keys[i] for i in idx]


def render_session(config: CorpusConfig, keys, seed: int) -> Session:
    layout = config.key_layout()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C4E]))
    schedule = random_schedule(keys, rng, start=0.4, gap=config.gap)
    spec = scene_for_layout(layout, schedule, range_m=config.range_m, azimuth=config.azimuth,
                            separation=config.separation, device_seed=config.device_seed,
                            snr_db=config.snr_db, snr_ref_range=config.snr_ref_range,
                            noise_kind=config.noise_kind, clutter_rate=config.clutter_rate,
                            decoy_rate=config.decoy_rate, sync_chirp=config.sync_chirp,
                            rng_seed=int(seed))
    rec, gt = render_scene(spec)
    return Session(rec, gt, tuple(keys), int(seed))


def render_sessions(config: CorpusConfig, n_sessions: int, seed: int, keys_per_session=None,
                    key_weights=None) -> list:
    """``n_sessions`` sessions with random key sequences; seeds derive from ``seed``."""
    layout = config.key_layout()
    ss = np.random.SeedSequence(int(seed))
    out = []
    for child in ss.spawn(n_sessions):
        s = int(child.generate_state(1)[0])
        rng = np.random.default_rng(child)
        n = keys_per_session or config.taps_per_session
        out.append(render_session(config, key_sequence(layout, n, rng, key_weights), s))
    return out


def select_mics(rec: MultichannelRecording, mics) -> MultichannelRecording:
    if mics is None:
        return rec
    chans = MIC_SUBSETS[int(mics)] if not isinstance(mics, (tuple, list)) else tuple(mics)
    if max(chans) >= rec.channel_count:
        raise ConfigError(f"recording has {rec.channel_count} channels, need {chans}")
    return rec.select(chans)


def match_candidates(candidates, session: Session, tolerance=MATCH_TOLERANCE) -> dict:
    """``truth tap index -> candidate index``."""
    fs = session.rec.sample_rate
    return match_events([c.center_frame / fs for c in candidates], session.true_times(),
                        tolerance)


def _background_frames(session, rng, count, avoid):
    fs = session.rec.sample_rate
    lo, hi = 1024, session.rec.frames - 1024
    busy = np.array(list(session.true_times()) + [a / fs for a in avoid])
    out = []
    for _ in range(count * 20):
        if len(out) == count or hi <= lo:
            break
        f = int(rng.integers(lo, hi))
        if busy.size == 0 or np.min(np.abs(busy - f / fs)) > NEGATIVE_CLEARANCE:
            out.append(f)
    return out


@dataclass
class TrainingData:
    det_x: list = field(default_factory=list)
    det_y: list = field(default_factory=list)
    key_x: list = field(default_factory=list)
    key_y: list = field(default_factory=list)


def mic_geometry(mics, sample_rate):
    """Hexagon geometry restricted to the channels kept by ``select_mics``."""
    geo = ArrayGeometry.hexagon(sample_rate=sample_rate)
    if mics is None:
        return geo
    return geo.subset(MIC_SUBSETS[int(mics)] if not isinstance(mics, (tuple, list)) else mics)


def classifier_input(kind, rec, frames, tdoa=False, geometry=None):
    """Key-classifier features; ``tdoa`` appends all pair delays (LDA only)."""
    if kind == "conv":
        if tdoa:
            raise ConfigError("TDoA features are only supported for LDA classifiers")
        return conv_input(rec, frames)
    x = tap_mfcc(rec, frames, n_windows=1).values
    if tdoa and rec.channel_count > 1:
        x = np.concatenate([x, delay_features(rec, frames[0], geometry=geometry)])
    return x


def detector_input(kind, rec, frames):
    from .detection import DETECTION_MFCC_WINDOWS
    if kind == "conv":
        return conv_input(rec, frames)
    return tap_mfcc(rec, frames, n_windows=DETECTION_MFCC_WINDOWS).values


def collect_training(sessions, mics=6, detector_kind="lda", classifier_kind="lda",
                     seed=0, tdoa=False) -> TrainingData:
    """Labelled detection and key examples from ground-truth-labelled sessions.

    Positives are candidates matched to true taps; negatives are unmatched
    candidates plus a few random background windows.
    """
    data = TrainingData()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD47A]))
    for s in sessions:
        rec = select_mics(s.rec, mics)
        geo = mic_geometry(mics, rec.sample_rate) if tdoa else None
        cands = energy_candidates(rec)
        hits = match_candidates(cands, s)
        matched = set(hits.values())
        keys = s.tap_keys()
        for ti, ci in hits.items():
            frames = cands[ci].per_channel_frames
            data.det_x.append(detector_input(detector_kind, rec, frames))
            data.det_y.append(TAP)
            data.key_x.append(classifier_input(classifier_kind, rec, frames, tdoa, geo))
            data.key_y.append(keys[ti])
        for ci, c in enumerate(cands):
            if ci not in matched:
                data.det_x.append(detector_input(detector_kind, rec, c.per_channel_frames))
                data.det_y.append(NOT_TAP)
        avoid = [c.center_frame for c in cands]
        for f in _background_frames(s, rng, NOISE_NEGATIVES, avoid):
            frames = (f,) * rec.channel_count
            data.det_x.append(detector_input(detector_kind, rec, frames))
            data.det_y.append(NOT_TAP)
    return data


def fit(kind, X, y, labels, seed=0, conv_config=None):
    if kind == "conv":
        cfg = conv_config or ConvConfig(seed=int(seed))
        return conv_train(np.stack(X), y, cfg, label_order=labels)
    if kind == "lda":
        return lda_train(np.stack([np.ravel(x) for x in X]), y, label_order=labels)
    raise ConfigError(f"unknown classifier kind {kind!r}")


def train_models(sessions, layout, mics=6, detector_kind="lda", classifier_kind="lda", seed=0,
                 conv_config=None, tdoa=False):
    """``(detector, classifier)`` trained on ground-truth-labelled sessions."""
    data = collect_training(sessions, mics, detector_kind, classifier_kind, seed, tdoa)
    detector = fit(detector_kind, data.det_x, data.det_y, DETECTOR_LABELS, seed, conv_config)
    classifier = fit(classifier_kind, data.key_x, data.key_y, tuple(layout.keys), seed,
                     conv_config)
    return detector, classifier


@dataclass(frozen=True, eq=False)
class AnalyzedSession:
    session: Session
    candidates: list  # scored, with posteriors
    hits: dict  # truth index -> candidate index

    def guess_instance(self, layout_keys=None):
        """GuessInstance over all candidates, or None when a true tap was missed."""
        keys = self.session.tap_keys()
        if len(self.hits) < len(keys) or not self.candidates:
            return None
        labels = self.candidates[0].posterior.labels
        p = np.array([c.p_tap for c in self.candidates])
        post = np.stack([c.posterior.probabilities for c in self.candidates])
        idx = sorted(self.hits.items())
        truth_idx = [ci for _, ci in idx]
        if any(b <= a for a, b in zip(truth_idx, truth_idx[1:])):
            return None
        return GuessInstance(p, post, labels, len(keys), tuple(truth_idx),
                             tuple(keys[ti] for ti, _ in idx))


def analyze_session(session: Session, detector, classifier, layout, mics=6,
                    tdoa=False) -> AnalyzedSession:
    """Candidates with tap probabilities and key posteriors; ``detector=None`` gives p = 0.5."""
    rec = select_mics(session.rec, mics)
    geo = mic_geometry(mics, rec.sample_rate) if tdoa else None
    cands = energy_candidates(rec)
    if detector is None:
        cands = [replace(c, p_tap=0.5) for c in cands]
    else:
        cands = score_candidates(detector, cands, rec)
    if cands:
        kind = "conv" if isinstance(classifier, ConvModel) else "lda"
        feats = np.stack([np.ravel(classifier_input(kind, rec, c.per_channel_frames, tdoa, geo))
                          for c in cands])
        posts = classify_taps(classifier, feats, layout)
        cands = [replace(c, posterior=p, classification_features=f)
                 for c, p, f in zip(cands, posts, feats)]
    return AnalyzedSession(session, cands, match_candidates(cands, session))


@dataclass(frozen=True)
class AttackReport:
    precision: float | None
    recall: float | None
    topk: tuple  # top-1, top-2, top-3 on detected true taps
    n_keys: int
    guess_outcomes: tuple  # one per test session, None when unsolvable
    confusion: object

    def solved_within(self, g: int) -> float:
        ok = [o is not None and not o.exhausted and o.rank <= g for o in self.guess_outcomes]
        return float(np.mean(ok)) if ok else 0.0


def evaluate_attack(analyzed, layout, budget=3000, guess=True, p_threshold=0.5,
                    parallel=False) -> AttackReport:
    """Pooled detection metrics, key top-k on matched taps, and per-session ranks."""
    tp = pred = actual = 0
    posts, truth = [], []
    outcomes = []
    for a in analyzed:
        fs = a.session.rec.sample_rate
        m = eval_detection(a.candidates, a.session.true_times(), p_threshold=p_threshold,
                           sample_rate=fs)
        tp, pred, actual = tp + m.true_positives, pred + m.predicted, actual + m.actual
        keys = a.session.tap_keys()
        for ti, ci in a.hits.items():
            posts.append(a.candidates[ci].posterior)
            truth.append(keys[ti])
        if guess:
            inst = a.guess_instance()
            if inst is None:
                outcomes.append(None)
            else:
                try:
                    outcomes.append(rank_pin(inst, budget=budget, parallel=parallel))
                except Infeasible:
                    outcomes.append(None)
    topk = tuple(topk_accuracy(posts, truth, k) if posts else None for k in (1, 2, 3))
    cm = confusion(posts, truth, tuple(layout.keys))
    return AttackReport(tp / pred if pred else None, tp / actual if actual else None, topk,
                        len(posts), tuple(outcomes), cm)


def pin_corpus(config=CorpusConfig(), n_train_sessions=40, n_test=40, pin_length=5, seed=0):
    """``(train, test)`` sessions: random-key training sessions and fresh PIN entries."""
    ss = np.random.SeedSequence(int(seed))
    train_seed, test_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    train = render_sessions(config, n_train_sessions, train_seed)
    test = render_sessions(config, n_test, test_seed, keys_per_session=pin_length)
    return train, test


def attack_corpus(train, test, layout, mics=6, detector_kind="lda", classifier_kind="lda",
                  seed=0, budget=3000, guess=True, parallel=False, tdoa=False):
    detector, classifier = train_models(train, layout, mics, detector_kind, classifier_kind,
                                        seed, tdoa=tdoa)
    analyzed = [analyze_session(s, detector, classifier, layout, mics, tdoa) for s in test]
    report = evaluate_attack(analyzed, layout, budget=budget, guess=guess, parallel=parallel)
    return report, (detector, classifier)


def pin_attack(n_train_sessions=40, n_test=40, pin_length=5, config=CorpusConfig(), seed=0,
               mics=6, detector_kind="lda", classifier_kind="lda", budget=3000, guess=True,
               tdoa=False):
    """Train on random-key sessions and attack ``n_test`` fresh PIN entries."""
    train, test = pin_corpus(config, n_train_sessions, n_test, pin_length, seed)
    return attack_corpus(train, test, config.key_layout(), mics, detector_kind,
                         classifier_kind, seed, budget, guess, tdoa=tdoa)


def perfect_detection_posteriors(session: Session, classifier, layout, mics=6) -> list:
    """Key posteriors at the ground-truth tap positions (detection assumed perfect)."""
    rec = select_mics(session.rec, mics)
    kind = "conv" if isinstance(classifier, ConvModel) else "lda"
    chans = MIC_SUBSETS[int(mics)] if mics is not None else range(session.rec.channel_count)
    frames = [tuple(f[c] for c in chans) for f in session.true_frames()]
    feats = np.stack([np.ravel(classifier_input(kind, rec, fr)) for fr in frames])
    return classify_taps(classifier, feats, layout)


def posteriors_from_model(model, X) -> list:
    return [Posterior(p, model.labels) for p in posterior_batch(model, X)]


@dataclass(frozen=True)
class SweepPoint:
    range_m: float
    peak_snr_db: float
    recall: float | None
    precision: float | None


def measured_peak_snr(sessions) -> float:
    """Mean over taps of the highest per-bucket SNR on the nearest channel."""
    from .features import snr_profile
    vals = []
    for s in sessions:
        fs = s.rec.sample_rate
        frames = s.true_frames()
        starts = [f[0] for f in frames]
        regions = []
        prev = 0
        for f in starts:
            regions.append((prev, f - int(0.06 * fs)))
            prev = f + int(0.06 * fs)
        regions.append((prev, s.rec.frames))
        prof = snr_profile(s.rec, frames, regions)
        vals.append(float(np.max(prof.max(axis=1))))
    return float(np.mean(vals))


def distance_sweep(ranges=(0.15, 0.30, 0.55), n_train=20, n_test=20, seed=0, snr_db=8.0,
                   ref_range=0.15, mics=6, pooled=True, base=CorpusConfig()):
    """Detection quality versus device range with 1/r tap decay.

    ``pooled`` trains one detector on all ranges; otherwise each range has
    its own detector trained at that range.
    """
    layout = base.key_layout()
    cfgs = [replace(base, range_m=r, snr_db=snr_db, snr_ref_range=ref_range) for r in ranges]
    ss = np.random.SeedSequence(int(seed))
    seeds = [[int(c.generate_state(1)[0]) for c in child.spawn(2)]
             for child in ss.spawn(len(cfgs))]
    train = [render_sessions(c, n_train, s[0]) for c, s in zip(cfgs, seeds)]
    test = [render_sessions(c, n_test, s[1]) for c, s in zip(cfgs, seeds)]
    if pooled:
        det, clf = train_models([x for t in train for x in t], layout, mics, seed=seed)
        models = [(det, clf)] * len(cfgs)
    else:
        models = [train_models(t, layout, mics, seed=seed) for t in train]
    out = []
    for r, sessions, (det, clf) in zip(ranges, test, models):
        rep = evaluate_attack([analyze_session(s, det, clf, layout, mics) for s in sessions],
                              layout, guess=False)
        out.append(SweepPoint(r, measured_peak_snr(sessions), rep.recall, rep.precision))
    return out


DEFAULT_LAYOUT_KEYS = {"pin": PIN_KEYS, "word": LETTER_KEYS}


def load_words(path=None) -> list:
    """Dictionary words (lower case, one per line, ``#`` comments)."""
    if path is None:
        from importlib.resources import files
        text = files("asca").joinpath("data/words.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    words = [w.strip().lower() for w in text.splitlines()]
    return [w for w in words if w and not w.startswith("#")]


def word_training_keys(words, n_sessions, taps_per_session, rng, labels=LETTER_KEYS):
    """Letter sequences drawn from dictionary text, so letter frequencies are skewed.

    Any letter seen fewer than twice is appended so every class can be trained.
    """
    seqs = []
    for _ in range(n_sessions):
        letters = []
        while len(letters) < taps_per_session:
            letters.extend(words[int(rng.integers(len(words)))])
        seqs.append(letters[:taps_per_session])
    counts = {k: 0 for k in labels}
    for seq in seqs:
        for k in seq:
            counts[k] += 1
    extra = [k for k in labels for _ in range(max(0, 2 - counts[k]))]
    for i in range(0, len(extra), taps_per_session):
        seqs.append(extra[i:i + taps_per_session])
    return seqs


def word_corpus(config=CorpusConfig(layout="word"), n_train_sessions=60, n_test=60, seed=0,
                words=None):
    """``(train, test, test_words)``; each test session types one dictionary word."""
    words = words or load_words()
    ss = np.random.SeedSequence(int(seed))
    a, b = ss.spawn(2)
    rng = np.random.default_rng(a)
    seqs = word_training_keys(words, n_train_sessions, config.taps_per_session, rng)
    train = [render_session(config, seq, int(c.generate_state(1)[0]))
             for seq, c in zip(seqs, a.spawn(len(seqs)))]
    rng_t = np.random.default_rng(b)
    test_words = [words[int(rng_t.integers(len(words)))] for _ in range(n_test)]
    test = [render_session(config, tuple(w), int(c.generate_state(1)[0]))
            for w, c in zip(test_words, b.spawn(n_test))]
    return train, test, test_words


def train_key_classifier_perfect(sessions, layout, mics=6, kind="lda", seed=0):
    """Key classifier trained on features at ground-truth tap positions."""
    X, y = [], []
    for s in sessions:
        rec = select_mics(s.rec, mics)
        chans = MIC_SUBSETS[int(mics)] if mics is not None else range(s.rec.channel_count)
        for key, f in zip(s.tap_keys(), s.true_frames()):
            X.append(classifier_input(kind, rec, tuple(f[c] for c in chans)))
            y.append(key)
    return fit(kind, X, y, tuple(layout.keys), seed)


def word_attack(config=CorpusConfig(layout="word"), n_train_sessions=60, n_test=60, seed=0,
                mics=6, kind="lda", words=None):
    """Dictionary ranks of test words under perfect detection."""
    from .guessing import rank_word
    words = words or load_words()
    layout = config.key_layout()
    train, test, test_words = word_corpus(config, n_train_sessions, n_test, seed, words)
    clf = train_key_classifier_perfect(train, layout, mics, kind, seed)
    ranks = []
    for s, w in zip(test, test_words):
        ranks.append(rank_word(perfect_detection_posteriors(s, clf, layout, mics), words, w))
    return ranks, clf
