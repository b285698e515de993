"""Command-line entry point orchestrating the annotation and experiment
pipelines. Configuration precedence: flags > config file > defaults."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import corpus, evalharness, features, ranking, seqnet
from .service import AnnotationService, GoldPair, ServiceError, create_app


def _load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    config = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SystemExit(f"config {path}:{lineno}: expected key=value")
        config[key.strip()] = value.strip()
    return config


def _apply_config(args: argparse.Namespace, parser_defaults: dict,
                  config: dict[str, str]) -> None:
    for key, raw in config.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise SystemExit(f"unknown config key: {key}")
        current = getattr(args, attr)
        default = parser_defaults.get(attr)
        if current != default:
            continue  # flag was given explicitly; flags win
        if isinstance(default, int) and default is not None:
            setattr(args, attr, int(raw))
        elif isinstance(default, float) and default is not None:
            setattr(args, attr, float(raw))
        else:
            setattr(args, attr, raw)


def _read_rated_manifest(path: str) -> corpus.CorpusManifest:
    manifest = corpus.read_manifest(path)
    if not manifest.clips:
        raise SystemExit(f"manifest {path} is empty")
    return manifest


def _clip_windows(manifest: corpus.CorpusManifest,
                  spec: features.WindowSpec) -> dict[str, list[np.ndarray]]:
    out = {}
    for clip in manifest.clips:
        samples = corpus.clip_samples(clip)
        fm = features.frame_descriptors(samples, clip_id=clip.id)
        out[clip.id] = [w.values for w in features.make_windows(fm, spec)]
    return out


def _ratings(manifest: corpus.CorpusManifest, dimension: str) -> dict[str, float]:
    out = {}
    for clip in manifest.clips:
        value = clip.arousal if dimension == "arousal" else clip.valence
        if value is None:
            raise SystemExit(f"clip {clip.id} has no {dimension} rating")
        out[clip.id] = value
    return out


def cmd_ingest(args) -> int:
    tag = corpus.CorpusTag(args.corpus)
    bounds = (args.min_duration, args.max_duration)
    clips = []
    for wav in args.files:
        clips.append(corpus.ingest_clip(wav, tag, bounds))
        print(f"ingested {wav}: {clips[-1].duration:.2f}s")
    manifest = corpus.CorpusManifest(tag, tuple(clips), bounds)
    corpus.write_manifest(manifest, args.manifest)
    print(f"wrote {len(clips)} clips to {args.manifest}")
    return 0


def cmd_extract_features(args) -> int:
    manifest = _read_rated_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for clip in manifest.clips:
        samples = corpus.clip_samples(clip)
        fm = features.frame_descriptors(samples, clip_id=clip.id)
        features.write_feature_matrix(fm, out_dir / f"{clip.id}.fmx")
        summary = features.summarize_feature_sets(fm, samples)
        np.savetxt(out_dir / f"{clip.id}.summary.txt", summary.combined)
    print(f"extracted features for {len(manifest.clips)} clips into {out_dir}")
    return 0


def cmd_import_embeddings(args) -> int:
    manifest = _read_rated_manifest(args.manifest)
    emb_dir = Path(args.embeddings)
    missing = []
    for clip in manifest.clips:
        path = emb_dir / f"{clip.id}.emb"
        if not path.exists():
            missing.append(clip.id)
            continue
        seq = evalharness.import_embeddings(path, clip.id)
        evalharness.trim_ends(seq)
    if missing:
        print(f"missing embeddings for: {', '.join(missing)}", file=sys.stderr)
        return 1
    print(f"validated embeddings for {len(manifest.clips)} clips")
    return 0


def cmd_train_ser(args) -> int:
    manifest = _read_rated_manifest(args.manifest)
    ratings = _ratings(manifest, args.dimension)
    windows = _clip_windows(manifest, features.WindowSpec())
    normalized, _, _, _ = features.minmax_normalize(
        [features.FeatureMatrix(c, w, features.FRAME_DESCRIPTOR_NAMES[:])
         for c, wins in windows.items() for w in wins]
    )
    dataset = [(m.values, ratings[m.clip_id]) for m in normalized]
    input_dim = dataset[0][0].shape[1]
    config = seqnet.TrainConfig(epochs=args.epochs, seed=args.seed)
    model, history = seqnet.train(dataset, input_dim, hidden_dim=args.hidden,
                                  head=seqnet.LINEAR, config=config)
    seqnet.save_model(model, args.out)
    print(f"trained SER model (best epoch {history.best_epoch}) -> {args.out}")
    return 0


def cmd_sed_experiment(args) -> int:
    manifest = _read_rated_manifest(args.manifest)
    emb_dir = Path(args.embeddings)
    sequences = {}
    for clip in manifest.clips:
        seq = evalharness.import_embeddings(emb_dir / f"{clip.id}.emb", clip.id)
        sequences[clip.id] = evalharness.trim_ends(seq).vectors
    ratings = {dim: _ratings(manifest, dim) for dim in ("arousal", "valence")}
    config = evalharness.TransferConfig(seed=args.seed, n_repeats=args.repeats)
    report = evalharness.run_transfer_experiment(sequences, ratings, config)
    evalharness.write_report(report, args.out)
    print(f"wrote SED transfer report -> {args.out}")
    return 0


def cmd_ser_experiment(args) -> int:
    manifest = _read_rated_manifest(args.manifest)
    model = seqnet.load_model(args.model)
    windows = _clip_windows(manifest, features.WindowSpec())
    sequences = {
        clip_id: np.vstack([seqnet.embed(model, w) for w in wins])
        for clip_id, wins in windows.items()
    }
    ratings = {dim: _ratings(manifest, dim) for dim in ("arousal", "valence")}
    config = evalharness.TransferConfig(seed=args.seed, n_repeats=args.repeats)
    report = evalharness.run_transfer_experiment(sequences, ratings, config)
    evalharness.write_report(report, args.out)
    print(f"wrote SER transfer report -> {args.out}")
    return 0


def cmd_classify(args) -> int:
    spec = features.WindowSpec()
    train_windows: dict[str, list[np.ndarray]] = {}
    train_labels: dict[str, float] = {}
    for path, label in ((args.negative_manifest, 0.0), (args.positive_manifest, 1.0)):
        manifest = _read_rated_manifest(path)
        wins = _clip_windows(manifest, spec)
        train_windows.update(wins)
        train_labels.update({c: label for c in wins})
    test_manifest = _read_rated_manifest(args.test_manifest)
    test_windows = _clip_windows(test_manifest, spec)
    config = evalharness.ClassifyConfig(
        seed=args.seed,
        train=seqnet.TrainConfig(epochs=args.epochs, seed=args.seed),
    )
    report = evalharness.run_classification_experiment(
        train_windows, train_labels, test_windows, config)
    evalharness.write_report(report, args.out)
    print(f"wrote classification report -> {args.out}")
    return 0


def cmd_feature_analysis(args) -> int:
    manifest = _read_rated_manifest(args.manifest)
    ratings = _ratings(manifest, args.dimension)
    summaries = {}
    for clip in manifest.clips:
        samples = corpus.clip_samples(clip)
        fm = features.frame_descriptors(samples, clip_id=clip.id)
        summaries[clip.id] = features.summarize_feature_sets(fm, samples)
    config = evalharness.FeatureAnalysisConfig(seed=args.seed,
                                               n_repeats=args.repeats)
    report = evalharness.run_feature_analysis(summaries, ratings, config)
    evalharness.write_report(report, args.out)
    print(f"wrote feature-analysis report -> {args.out}")
    return 0


def cmd_simulate_annotators(args) -> int:
    n = args.n
    clip_ids = [f"clip{i:04d}" for i in range(n)]
    true_values = {cid: float(n - i) for i, cid in enumerate(clip_ids)}
    clips = {cid: f"{cid}.wav" for cid in clip_ids}
    gold = [(f"gold{i}a", f"gold{i}b", f"gold{i}a") for i in range(5)]

    service = AnnotationService(args.log)
    dim = ranking.Dimension(args.dimension)
    service.create_campaign(
        args.campaign, dim, clips,
        [GoldPair(ranking.ComparisonKey(a, b, dim), c) for a, b, c in gold],
        seed=args.seed, gold_rate=10**9,  # pure simulation: no gold checks
    )
    rng = np.random.default_rng(args.seed)
    sessions = []
    for i in range(args.annotators):
        session = service.create_session(args.campaign, f"sim-{i}")
        # quiz answers are always correct in simulation
        for _ in range(5):
            task = service.next_task(session.id)
            pair_gold = next(
                g for g in service.sessions[session.id].quiz_pairs
                if {g.key.left, g.key.right} == {task["clip_a"], task["clip_b"]}
            )
            service.submit_task(session.id, pair_gold.correct)
        sessions.append(session.id)

    while service.campaigns[args.campaign].status.value != "complete":
        advanced = False
        for sid in sessions:
            task = service.next_task(sid)
            if task.get("status") != "task":
                continue
            a, b = task["clip_a"], task["clip_b"]
            winner = a if true_values[a] > true_values[b] else b
            if args.noise > 0 and rng.random() < args.noise:
                winner = b if winner == a else a
            service.submit_task(sid, winner)
            advanced = True
        if not advanced:
            raise SystemExit("simulation stalled: no assignable tasks")
    print(f"campaign {args.campaign} complete; log at {args.log}")
    return 0


def cmd_export(args) -> int:
    service = AnnotationService.replay(args.log)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        (out_dir / "rankings.csv").write_text(
            service.export_rankings_csv(args.campaign), encoding="utf-8")
        (out_dir / "ratings.csv").write_text(
            service.export_ratings_csv(args.campaign), encoding="utf-8")
    except ServiceError as exc:
        print(f"skipping ranking exports: {exc}", file=sys.stderr)
    report = service.export_reliability(args.campaign)
    (out_dir / "reliability.txt").write_text(
        f"unanimous_rate={report.unanimous_rate!r}\n"
        f"pairwise_rate={report.pairwise_rate!r}\n"
        f"alpha={report.alpha!r}\n", encoding="utf-8")
    (out_dir / "judgments.jsonl").write_text(
        service.export_judgments(args.campaign), encoding="utf-8")
    print(f"exports written to {out_dir}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    service = AnnotationService.replay(args.log)
    app = create_app(service)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="musemer")
    parser.add_argument("--config", help="key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate WAVs and write a manifest")
    p.add_argument("files", nargs="+")
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus", default="CUSTOM")
    p.add_argument("--min-duration", type=float, default=8.0)
    p.add_argument("--max-duration", type=float, default=20.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("extract-features", help="frame descriptors + summaries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("import-embeddings", help="validate .emb files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.set_defaults(func=cmd_import_embeddings)

    p = sub.add_parser("train-ser", help="train the LSTM regressor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dimension", choices=["arousal", "valence"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train_ser)

    p = sub.add_parser("sed-experiment", help="imported embeddings -> SVR")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_sed_experiment)

    p = sub.add_parser("ser-experiment", help="LSTM embeddings -> SVR")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_ser_experiment)

    p = sub.add_parser("classify", help="binary corpus classifier")
    p.add_argument("--negative-manifest", required=True)
    p.add_argument("--positive-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("feature-analysis", help="feature-set regression + RFE")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dimension", choices=["arousal", "valence"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_feature_analysis)

    p = sub.add_parser("simulate-annotators", help="drive a synthetic campaign")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--annotators", type=int, default=3)
    p.add_argument("--campaign", default="sim")
    p.add_argument("--dimension", choices=["arousal", "valence"], default="arousal")
    p.add_argument("--log", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_simulate_annotators)

    p = sub.add_parser("export", help="replay a log and write exports")
    p.add_argument("--log", required=True)
    p.add_argument("--campaign", default="sim")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--log", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {a.dest: a.default for a in parser._actions}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                defaults.update({a.dest: a.default for a in sub._actions})
    _apply_config(args, defaults, _load_config(args.config))
    try:
        return args.func(args)
    except (corpus.CorpusError, features.FeatureError, evalharness.EvalError,
            ranking.RankingError, seqnet.SeqNetError, ServiceError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
