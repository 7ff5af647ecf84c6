"""Command-line front end.

Exit status: 0 on success, 1 on an operational error (bad file, failed
labelling, ...), 2 on a usage error.  Every command that uses randomness
takes a required ``--seed``; outputs are byte-identical for identical
inputs, flags and seed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import __version__
from .audio import ArrayGeometry, load_wav, save_wav
from .classifiers import load_model, save_model
from .detection import (DETECTOR_LABELS, MIC_SUBSETS, TAP, TapCandidate, energy_candidates,
                        eval_detection, score_candidates)
from .errors import AscaError, ConfigError, NotInDictionary
from .guessing import guess_curve, rank_pin, rank_word
from .keyclass import classify_taps, confusion, topk_accuracy
from .labeling import format_touch_events, label_recording, read_touch_events, victim_events
from .layouts import layout_by_name
from .manifest import DatasetManifest, ManifestEntry, parse_config, read_config
from .pipeline import (CorpusConfig, LabeledRecording, analyze_session, collect_training,
                       distance_sweep, fit, key_sequence, load_words, pin_attack,
                       render_session, select_mics)


def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _emit(lines, out=None):
    text = "".join(f"{line}\n" for line in lines)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _overrides(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        out.update(parse_config(p))
    return out


def _scene_config(args) -> dict:
    cfg = read_config(args.spec) if getattr(args, "spec", None) else {}
    cfg.update(_overrides(getattr(args, "set", None)))
    return cfg


def _corpus_config(cfg: dict) -> CorpusConfig:
    known = {f.name for f in fields(CorpusConfig)}
    kw = {}
    for k, v in cfg.items():
        if k == "range_cm":
            kw["range_m"] = float(v) / 100.0
        elif k == "azimuth_deg":
            kw["azimuth"] = math.radians(float(v))
        elif k in ("gap_min", "gap_max"):
            continue
        elif k in known:
            kw[k] = v
    if "gap_min" in cfg or "gap_max" in cfg:
        kw["gap"] = (float(cfg.get("gap_min", 0.25)), float(cfg.get("gap_max", 0.6)))
    return replace(CorpusConfig(), **kw)


SCENE_ONLY = {"keys", "sessions", "pin_length", "range_cm", "azimuth_deg", "gap_min", "gap_max",
              "train_sessions"}


def _check_keys(cfg):
    known = {f.name for f in fields(CorpusConfig)} | SCENE_ONLY
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys {unknown}")


def _load_manifest(path):
    return DatasetManifest.read(path)


def _labeled(manifest: DatasetManifest, mics=None):
    out = []
    for e in manifest.usable():
        rec = load_wav(manifest.resolve(e))
        out.append((e, LabeledRecording(rec, e.taps)))
    return out


def _entry_layout(entry):
    return layout_by_name(entry.entry_kind, entry.device, entry.orientation)


# --- subcommands -----------------------------------------------------------


def cmd_synth(args):
    cfg = _scene_config(args)
    _check_keys(cfg)
    corpus = _corpus_config(cfg)
    layout = corpus.key_layout()
    n = int(cfg.get("sessions", args.sessions))
    stem, ext = os.path.splitext(args.out)
    ext = ext or ".wav"
    manifest_path = args.manifest or stem + ".jsonl"
    ss = np.random.SeedSequence(int(args.seed))
    entries = []
    for i, child in enumerate(ss.spawn(n)):
        rng = np.random.default_rng(child)
        seed = int(child.generate_state(1)[0])
        if cfg.get("keys"):
            keys = list(str(cfg["keys"]))
        else:
            count = int(cfg.get("pin_length", corpus.taps_per_session))
            keys = key_sequence(layout, count, rng)
        sess = render_session(corpus, keys, seed)
        path = args.out if n == 1 else f"{stem}_{i:03d}{ext}"
        save_wav(sess.rec, path, encoding=args.encoding)
        taps = [(int(round(t.arrivals[0])), t.key) for t in sess.truth.true_taps]
        extra = {"seed": seed, "keys": "".join(keys)}
        if sess.truth.sync_offset is not None:
            events_path = os.path.splitext(path)[0] + ".events.txt"
            with open(events_path, "w") as fh:
                fh.write(format_touch_events(victim_events(sess.truth)))
            extra["events"] = os.path.basename(events_path)
        rel = os.path.relpath(path, os.path.dirname(os.path.abspath(manifest_path)))
        entries.append(ManifestEntry(rel, corpus.device, round(corpus.range_m * 100, 3),
                                     layout.orientation, "table", corpus.layout
                                     if corpus.layout in ("pin", "word") else "pin",
                                     tuple(taps), "ground-truth", extra))
    DatasetManifest(entries).write(manifest_path)
    _emit([f"wrote\t{n}", f"manifest\t{manifest_path}"])
    return 0


def _noise_regions(frames, total, fs, guard=0.06):
    g = int(guard * fs)
    regions, prev = [], 0
    for f in sorted(frames):
        regions.append((prev, f - g))
        prev = f + g
    regions.append((prev, total))
    return regions


def cmd_snr(args):
    from .features import snr_profile
    m = _load_manifest(args.manifest)
    profiles = []
    for e, lr in _labeled(m):
        frames = [f for f, _ in e.taps]
        profiles.append(snr_profile(lr.rec, frames,
                                    _noise_regions(frames, lr.rec.frames, lr.rec.sample_rate)))
    if not profiles:
        raise ConfigError("manifest has no labelled taps")
    prof = np.mean(profiles, axis=0)
    lines = ["channel\t" + "\t".join(f"{750 * b}-{750 * (b + 1)}Hz" for b in range(16))]
    for ch, row in enumerate(prof):
        lines.append(f"{ch}\t" + "\t".join(f"{v:.3f}" for v in row))
    _emit(lines, args.out)
    return 0


def _train_data(args):
    m = _load_manifest(args.manifest)
    sessions = [lr for _, lr in _labeled(m)]
    if not sessions:
        raise ConfigError("manifest has no labelled entries")
    layout = _entry_layout(m.usable()[0])
    return sessions, layout


def cmd_train_detector(args):
    sessions, _ = _train_data(args)
    data = collect_training(sessions, args.mics, args.kind, args.kind, args.seed)
    model = fit(args.kind, data.det_x, data.det_y, DETECTOR_LABELS, args.seed)
    save_model(model, args.out)
    _emit([f"examples\t{len(data.det_y)}", f"taps\t{data.det_y.count(TAP)}",
           f"model\t{args.out}"])
    return 0


def cmd_train_classifier(args):
    sessions, layout = _train_data(args)
    data = collect_training(sessions, args.mics, args.kind, args.kind, args.seed)
    model = fit(args.kind, data.key_x, data.key_y, tuple(layout.keys), args.seed)
    save_model(model, args.out)
    _emit([f"examples\t{len(data.key_y)}", f"classes\t{len(model.labels)}",
           f"model\t{args.out}"])
    return 0


def _candidate_record(wav, c: TapCandidate, fs):
    d = {"wav": wav, "frame": c.center_frame, "time": round(c.center_frame / fs, 6),
         "per_channel_frames": list(c.per_channel_frames),
         "strength": round(c.strength, 6)}
    if c.p_tap is not None:
        d["p_tap"] = float(c.p_tap)
    if c.posterior is not None:
        d["posterior"] = c.posterior.as_dict()
    return json.dumps(d, sort_keys=True)


def cmd_detect(args):
    rec = select_mics(load_wav(args.wav), args.mics)
    cands = energy_candidates(rec, threshold_factor=args.threshold)
    if args.model:
        cands = score_candidates(load_model(args.model), cands, rec)
    _emit([_candidate_record(os.path.basename(args.wav), c, rec.sample_rate) for c in cands],
          args.out)
    return 0


def _read_candidates(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_classify(args):
    from .pipeline import classifier_input
    from .classifiers import ConvModel
    rec = select_mics(load_wav(args.wav), args.mics)
    model = load_model(args.model)
    kind = "conv" if isinstance(model, ConvModel) else "lda"
    recs = _read_candidates(args.candidates)
    if not recs:
        _emit([], args.out)
        return 0
    feats = np.stack([np.ravel(classifier_input(kind, rec, tuple(r["per_channel_frames"])))
                      for r in recs])
    posts = classify_taps(model, feats, model.labels)
    lines = []
    for r, p in zip(recs, posts):
        r = dict(r)
        r["posterior"] = p.as_dict()
        r["top3"] = [str(k) for k in p.top(3)]
        lines.append(json.dumps(r, sort_keys=True))
    _emit(lines, args.out)
    return 0


def _analyze_entries(m, classifier, detector, mics):
    return [(e, analyze_session(lr, detector, classifier, classifier.labels, mics))
            for e, lr in _labeled(m)]


def cmd_guess_pin(args):
    m = _load_manifest(args.manifest)
    classifier = load_model(args.model)
    detector = load_model(args.detector) if args.detector else None
    rows, outcomes = ["wav\trank\texhausted\tpin_rank"], []
    for e, a in _analyze_entries(m, classifier, detector, args.mics):
        inst = a.guess_instance()
        if inst is None:
            outcomes.append(None)
            rows.append(f"{e.wav}\tundetected\t\t")
            continue
        o = rank_pin(inst, budget=args.budget, parallel=args.parallel, pin_rank=True)
        outcomes.append(o)
        rows.append(f"{e.wav}\t{o.rank}\t{int(o.exhausted)}\t{_fmt(o.pin_rank)}")
    g, frac = guess_curve(outcomes, args.budget)
    curve = ["guesses\tfraction_solved"] + [f"{int(a)}\t{b:.6f}" for a, b in zip(g, frac)]
    _emit(curve, args.out)
    if args.ranks:
        _emit(rows, args.ranks)
    return 0


def cmd_guess_word(args):
    from .pipeline import perfect_detection_posteriors
    m = _load_manifest(args.manifest)
    model = load_model(args.model)
    words = load_words(args.dictionary)
    missing = sorted(set("".join(words)) - {str(k) for k in model.labels})
    if missing:
        raise ConfigError(f"classifier labels do not cover dictionary letters {missing}")
    rows = ["wav\tword\trank"]
    ranks = []
    for e, lr in _labeled(m):
        word = "".join(lr.tap_keys())
        posts = perfect_detection_posteriors(lr, model, model.labels, args.mics)
        try:
            r = rank_word(posts, words, word)
        except NotInDictionary:
            rows.append(f"{e.wav}\t{word}\tnot-in-dictionary")
            continue
        ranks.append(r)
        rows.append(f"{e.wav}\t{word}\t{r}")
    within = float(np.mean(np.array(ranks) <= 10)) if ranks else None
    rows.append(f"# within_10\t{_fmt(within)}")
    _emit(rows, args.out)
    return 0


def cmd_doa(args):
    from .doa import doa_histogram, estimate_azimuth, histogram_report, measure_all
    from .errors import AmbiguousDirection, NoPeak
    m = _load_manifest(args.manifest)
    az, keys = [], []
    skipped = 0
    for e, lr in _labeled(m):
        geo = ArrayGeometry.hexagon(sample_rate=lr.rec.sample_rate)
        for f, k in e.taps:
            try:
                ms = measure_all(lr.rec, f, geometry=geo)
                az.append(estimate_azimuth(ms, geo)[0])
                keys.append(k)
            except (NoPeak, AmbiguousDirection):
                skipped += 1
    hist = doa_histogram(az, keys)
    _emit([histogram_report(hist), f"# skipped\t{skipped}"], args.out)
    return 0


def cmd_label(args):
    rec = load_wav(args.wav)
    events = read_touch_events(args.events)
    outcome = label_recording(rec, events, tolerance=args.tolerance)
    lines = [f"matched_fraction\t{outcome.matched_fraction:.6f}",
             f"failure\t{outcome.failure.name if outcome.failure else 'none'}"]
    if outcome.ok and args.out:
        e = ManifestEntry(os.path.relpath(args.wav, os.path.dirname(os.path.abspath(args.out))),
                          args.device, args.distance_cm, args.orientation, "table", args.kind,
                          tuple((lab.frame, lab.key) for lab in outcome.labels), "auto")
        DatasetManifest([e]).write(args.out)
    _emit(lines)
    if not outcome.ok:
        sys.stderr.write(f"labelling failed: {outcome.failure.name}\n")
        return 1
    return 0


def _eval_detection(args):
    m = _load_manifest(args.manifest)
    if not args.candidates:
        raise ConfigError("--task detection needs --candidates")
    by_wav = {}
    for r in _read_candidates(args.candidates):
        by_wav.setdefault(r.get("wav"), []).append(r)
    tp = pred = actual = 0
    for e in m.entries:
        fs = load_wav(m.resolve(e)).sample_rate if args.sample_rate is None else args.sample_rate
        names = dict.fromkeys((os.path.basename(e.wav), e.wav))
        recs = [r for n in names for r in by_wav.get(n, [])]
        preds = [r["time"] for r in recs if r.get("p_tap", 1.0) >= args.p_threshold]
        met = eval_detection(preds, [f / fs for f, _ in e.taps], tolerance=args.tolerance)
        tp, pred, actual = tp + met.true_positives, pred + met.predicted, actual + met.actual
    return [f"precision\t{_fmt(tp / pred if pred else None)}",
            f"recall\t{_fmt(tp / actual if actual else None)}",
            f"true_positives\t{tp}", f"predicted\t{pred}", f"actual\t{actual}"]


def _eval_classification(args):
    from .pipeline import perfect_detection_posteriors
    m = _load_manifest(args.manifest)
    model = load_model(args.model)
    posts, truth = [], []
    for e, lr in _labeled(m):
        posts += perfect_detection_posteriors(lr, model, model.labels, args.mics)
        truth += lr.tap_keys()
    lines = [f"top{k}\t{_fmt(topk_accuracy(posts, truth, k) if posts else None)}"
             for k in (1, 2, 3)]
    lines.append(confusion(posts, truth, model.labels).report())
    return lines


def _eval_attack(args):
    cfg = _scene_config(args)
    corpus = _corpus_config(cfg)
    rep, _ = pin_attack(int(cfg.get("train_sessions", 40)), args.test_sessions,
                        int(cfg.get("pin_length", 5)), corpus, args.seed, args.mics, args.kind,
                        args.kind, args.budget, tdoa=args.tdoa)
    g, frac = guess_curve(rep.guess_outcomes, args.budget)
    return [f"precision\t{_fmt(rep.precision)}", f"recall\t{_fmt(rep.recall)}",
            f"top1\t{_fmt(rep.topk[0])}", f"top2\t{_fmt(rep.topk[1])}",
            f"top3\t{_fmt(rep.topk[2])}", f"within_10\t{_fmt(rep.solved_within(10))}",
            f"within_{args.budget}\t{_fmt(float(frac[-1]))}"]


def _eval_sweep(args):
    pts = distance_sweep(seed=args.seed, mics=args.mics, pooled=not args.per_distance)
    lines = ["range_cm\tpeak_snr_db\trecall\tprecision"]
    for p in pts:
        lines.append(f"{p.range_m * 100:.1f}\t{p.peak_snr_db:.3f}\t{_fmt(p.recall)}\t"
                     f"{_fmt(p.precision)}")
    return lines


def cmd_eval(args):
    if args.sweep == "distance":
        lines = _eval_sweep(args)
    elif args.task == "detection":
        lines = _eval_detection(args)
    elif args.task == "classification":
        lines = _eval_classification(args)
    elif args.task == "attack":
        lines = _eval_attack(args)
    else:
        raise ConfigError("eval needs --task or --sweep")
    _emit(lines, args.out)
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest
    results = run_selftest(args.seed)
    _emit([f"{'PASS' if ok else 'FAIL'}\t{name}\t{detail}" for name, ok, detail in results])
    return 0 if all(ok for _, ok, _ in results) else 1


# --- parser ----------------------------------------------------------------


def _mics(v):
    n = int(v)
    if n not in MIC_SUBSETS:
        raise argparse.ArgumentTypeError(f"--mics must be one of {sorted(MIC_SUBSETS)}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asca", description="Acoustic tap side-channel toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, seed_required=False, mics=False, help=None):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, required=seed_required)
        if mics:
            sp.add_argument("--mics", type=_mics, default=6)
        return sp

    sp = add("synth", cmd_synth, True, help="render scenes to WAV plus manifest")
    sp.add_argument("--spec")
    sp.add_argument("--out", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--sessions", type=int, default=1)
    sp.add_argument("--encoding", choices=("float32", "pcm16"), default="float32")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")

    sp = add("snr", cmd_snr, help="per-bucket tap SNR profile")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")

    for name, fn in (("train-detector", cmd_train_detector),
                     ("train-classifier", cmd_train_classifier)):
        sp = add(name, fn, True, True)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--kind", choices=("lda", "conv"), default="lda")

    sp = add("detect", cmd_detect, mics=True, help="candidate taps, optionally scored")
    sp.add_argument("--wav", required=True)
    sp.add_argument("--model")
    sp.add_argument("--threshold", type=float, default=3.0)
    sp.add_argument("--out")

    sp = add("classify", cmd_classify, mics=True)
    sp.add_argument("--wav", required=True)
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out")

    sp = add("guess-pin", cmd_guess_pin, mics=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--detector")
    sp.add_argument("--budget", type=int, default=3000)
    sp.add_argument("--parallel", action="store_true")
    sp.add_argument("--out")
    sp.add_argument("--ranks")

    sp = add("guess-word", cmd_guess_word, mics=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--dictionary")
    sp.add_argument("--out")

    sp = add("doa", cmd_doa)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out")

    sp = add("label", cmd_label)
    sp.add_argument("--wav", required=True)
    sp.add_argument("--events", required=True)
    sp.add_argument("--tolerance", type=float, default=0.025)
    sp.add_argument("--out")
    sp.add_argument("--device", default="nokia5.1")
    sp.add_argument("--distance-cm", type=float, default=15.0)
    sp.add_argument("--orientation", default="portrait")
    sp.add_argument("--kind", choices=("pin", "word"), default="pin")

    sp = add("eval", cmd_eval, mics=True)
    sp.add_argument("--task", choices=("detection", "classification", "attack"))
    sp.add_argument("--sweep", choices=("distance",))
    sp.add_argument("--per-distance", action="store_true")
    sp.add_argument("--tdoa", action="store_true", help="append pair delays to LDA key features")
    sp.add_argument("--manifest")
    sp.add_argument("--candidates")
    sp.add_argument("--model")
    sp.add_argument("--kind", choices=("lda", "conv"), default="lda")
    sp.add_argument("--spec")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--test-sessions", type=int, default=40)
    sp.add_argument("--budget", type=int, default=3000)
    sp.add_argument("--p-threshold", type=float, default=0.5)
    sp.add_argument("--tolerance", type=float, default=0.025)
    sp.add_argument("--sample-rate", type=float)
    sp.add_argument("--out")

    add("selftest", cmd_selftest, True, help="run the built-in oracle checks")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    needs_seed = args.command == "eval" and (args.sweep or args.task == "attack")
    if needs_seed and args.seed is None:
        sys.stderr.write("asca eval: error: --seed is required for synthetic evaluations\n")
        return 2
    try:
        return args.func(args)
    except (AscaError, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"asca {args.command}: error: {exc}\n")
        return 1


def main():  # pragma: no cover
    sys.exit(run())
