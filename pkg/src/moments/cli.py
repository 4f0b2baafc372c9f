"""``moments`` command line: one subcommand per pipeline stage or analysis.

Every subcommand writes its artifacts to ``--out`` (JSON and CSV), embeds
the configuration hash, input hashes and tool version in each JSON artifact,
and finishes with a ``run.json`` manifest listing what it wrote.  Failures
print a one-line JSON error to stderr and exit with 2 (configuration),
3 (data) or 4 (internal error).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (
    ALL_COMBINATIONS,
    MODALITIES,
    SLICES,
    canonical_combo,
    confidence_pairs,
    contribution,
    metrics_report,
    read_logit_records,
    read_predictions,
    record_contribution,
    reliable_type_filter,
    write_csv,
)
from .config import PipelineConfig, file_hash, load_config
from .errors import ConfigError, EmptySlice, InfeasiblePlacement, MomentsError, ParseError
from .media_io import (
    FrameSpan,
    RawFrameSource,
    TimeSpan,
    VideoFrameSource,
    VideoMeta,
    probe,
    read_transcript,
)

log = logging.getLogger("moments")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # report usage errors through the JSON error path
        raise ConfigError(f"{self.prog}: {message}")


class _JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({"level": record.levelname, "logger": record.name, "msg": record.getMessage()})


class Run:
    """Collects artifacts of one subcommand invocation and their provenance."""

    def __init__(self, command: str, out: str, cfg: PipelineConfig, inputs: Sequence[str | None]):
        self.command = command
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.inputs = {str(p): file_hash(p) for p in inputs if p}
        self.artifacts: list[str] = []

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.cfg.hash(), "input_hashes": self.inputs,
                "tool_version": __version__, "command": self.command}

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({**payload, "provenance": self.provenance}, indent=2, sort_keys=True) + "\n")
        return p

    def csv(self, name: str, rows, fields=None) -> Path:
        p = self.path(name)
        write_csv(rows, p, fields)
        return p

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        return p

    def finish(self) -> None:
        artifacts = {name: file_hash(self.out / name) for name in self.artifacts}
        (self.out / "run.json").write_text(json.dumps(
            {**self.provenance, "config": self.cfg.to_dict(), "artifacts": artifacts},
            indent=2, sort_keys=True, default=str) + "\n")


# -- helpers -------------------------------------------------------------------


def _frame_source(path: str, args, downscale):
    """Raw ``.gray`` files need geometry (from flags or a sibling ``truth.json``)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    if p.suffix == ".gray":
        width, height, fps = args.width, args.height, args.fps
        truth = p.parent / "truth.json"
        if None in (width, height, fps) and truth.exists():
            info = json.loads(truth.read_text())
            width, height, fps = width or info["width"], height or info["height"], fps or info["fps"]
        if None in (width, height, fps):
            raise ConfigError(f"{path}: raw frames need --width, --height and --fps")
        return RawFrameSource(p, int(width), int(height), Fraction(str(fps)))
    return VideoFrameSource(p, downscale=downscale)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _load_alignment(path: str):
    from .localizer import AlignmentResult

    payload = _read_json(path)
    try:
        return AlignmentResult.from_json(payload["alignment"]), payload
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: not an alignment artifact ({exc})") from exc


def _im_timespans(alignment) -> list[TimeSpan]:
    fps = Fraction(alignment.g_fps)
    return [TimeSpan(float(m.start / fps), float(m.end / fps)) for m in alignment.moments]


def _read_manifests(paths: Sequence[str]):
    from .extractor import read_manifest

    records = []
    for p in paths:
        records.extend(read_manifest(p)[1])
    return records


# -- subcommands -----------------------------------------------------------------


def cmd_localize(args, cfg: PipelineConfig) -> None:
    from .localizer import localize, score_against_truth

    run = Run("localize", args.out, cfg, [args.h, args.g, args.truth])
    h = _frame_source(args.h, args, args.downscale)
    g = _frame_source(args.g, args, args.downscale)
    result = localize(h, g, cfg.localize, cfg.ssim)
    payload = {
        "h": args.h,
        "g": args.g,
        "g_duration": float(Fraction(g.frame_count) / g.fps),
        "alignment": result.to_json(),
    }
    if args.truth:
        truth = _read_json(args.truth)
        spans = [FrameSpan(int(s), int(e)) for s, e in truth["spans"]]
        rows = score_against_truth(result.moments, spans, g.fps)
        payload["evaluation"] = {"spans": rows, "min_iou": min((r["iou"] for r in rows), default=None)}
        run.csv("evaluation.csv", [{**r, "truth": r["truth"], "match": r["match"]} for r in rows])
    run.json("alignment.json", payload)
    run.csv("moments.csv", [{"start_frame": m.start, "end_frame": m.end,
                             "start_s": float(m.start / g.fps), "end_s": float(m.end / g.fps)}
                            for m in result.moments])
    run.finish()
    log.info("localized %d moments; %.0f%% of H seconds well localized",
             len(result.moments), 100 * result.localized_fraction)


def cmd_sample_nim(args, cfg: PipelineConfig) -> None:
    from .sampler import fit_gamma_mle, place_nonimportant, sample_durations

    run = Run("sample-nim", args.out, cfg, args.alignments)
    games = []
    for path in args.alignments:
        alignment, payload = _load_alignment(path)
        games.append((path, float(payload["g_duration"]), _im_timespans(alignment)))
    durations = [s.duration for _, _, spans in games for s in spans]
    params = fit_gamma_mle(durations)
    s = cfg.sampler
    out_games = []
    for i, (path, g_duration, im) in enumerate(games):
        draws = sample_durations(params, len(im), [cfg.seed, i], (s.clamp_min, s.clamp_max))
        unplaced = []
        try:
            nim = place_nonimportant(g_duration, im, draws, [cfg.seed, i], s.margin, s.longest_first)
        except InfeasiblePlacement as exc:
            log.warning("%s: %s", path, exc)
            nim, unplaced = exc.placed, exc.unplaced
        out_games.append({"alignment": path, "g_duration": g_duration,
                          "im_spans": [[x.start, x.end] for x in im],
                          "nim_spans": [[x.start, x.end] for x in nim], "unplaced": unplaced})
    run.json("nim.json", {"gamma": {"shape": params.shape, "scale": params.scale}, "games": out_games})
    run.finish()


def cmd_extract(args, cfg: PipelineConfig) -> None:
    from .extractor import build_moments, evs_lag_report

    run = Run("extract", args.out, cfg, [args.alignment, args.nim, args.transcript, args.source])
    alignment, payload = _load_alignment(args.alignment)
    nim_payload = _read_json(args.nim)
    nim_spans = []
    for game in nim_payload.get("games", []):
        if Path(game["alignment"]).resolve() == Path(args.alignment).resolve() or len(nim_payload["games"]) == 1:
            nim_spans = [TimeSpan(float(a), float(b)) for a, b in game["nim_spans"]]
            break
    transcript = read_transcript(args.transcript) if args.transcript else None
    if args.source:
        meta = probe(args.source)
    else:
        fps = Fraction(alignment.g_fps)
        duration = float(payload["g_duration"])
        meta = VideoMeta(payload.get("g", ""), fps, int(round(duration * fps)), duration, 0, 0)
    provenance = {"config_hash": cfg.hash(), "alignment_hash": file_hash(args.alignment),
                  "tool_version": __version__}
    game_id = args.game_id or Path(args.alignment).parent.name or "game"
    records, manifest = build_moments(alignment, nim_spans, transcript, meta, run.out, game_id,
                                      args.source, cfg.extract.evs, provenance)
    run.artifacts.append(manifest.name)
    if (run.out / "rejects.jsonl").exists():
        run.artifacts.append("rejects.jsonl")
    if transcript is not None:
        run.json("evs_lag.json", {"records": evs_lag_report(records, transcript)})
    run.finish()
    log.info("wrote %d records", len(records))


def cmd_stats(args, cfg: PipelineConfig) -> None:
    from .sampler import duration_summary, fit_gamma_mle

    run = Run("stats", args.out, cfg, args.manifests)
    records = _read_manifests(args.manifests)
    rows = [{"class": s.class_name, "modality": s.modality, "count": s.count,
             "mean": s.mean, "min": s.min, "max": s.max} for s in duration_summary(records)]
    payload = {"durations": rows}
    im = [r.video_span.duration for r in records if r.label == 1]
    if len(im) >= 2 and len(set(im)) > 1:
        g = fit_gamma_mle(im)
        payload["im_video_gamma"] = {"shape": g.shape, "scale": g.scale}
    run.json("stats.json", payload)
    run.csv("stats.csv", rows)
    if args.html:
        from .report import bar_chart, html_report

        charts = [bar_chart([{"metric": f"{r['class']} {r['modality']}", "value": r["mean"]} for r in rows],
                            "Mean duration (s)", lo_key=None, hi_key=None)]
        run.text("stats.html", html_report("Moment durations", charts, [("Durations", rows)]))
    run.finish()


def cmd_metrics(args, cfg: PipelineConfig) -> None:
    run = Run("metrics", args.out, cfg, [args.predictions])
    pred = read_predictions(args.predictions)
    m = cfg.metrics
    rows = metrics_report(pred.preds, pred.labels, pred.scores, m.B, m.level, cfg.seed, args.score_source)
    run.json("metrics.json", {"metrics": rows, "n": len(pred.ids), "B": m.B, "level": m.level})
    run.csv("metrics.csv", rows, ["metric", "value", "ci_lo", "ci_hi"])
    if args.html:
        from .report import bar_chart, html_report

        run.text("metrics.html", html_report("Classification metrics",
                                             [bar_chart(rows, f"Metrics with {m.level:.0%} bootstrap CI")],
                                             [("Metrics", rows)]))
    run.finish()


def cmd_contrib(args, cfg: PipelineConfig) -> None:
    run = Run("contrib", args.out, cfg, [args.logits])
    records = read_logit_records(args.logits)
    if not records:
        raise ParseError(f"{args.logits}: no records")
    if args.combos:
        combos = sorted({canonical_combo(c) for c in args.combos.split(",")})
    else:
        combos = sorted(records[0].entries, key=ALL_COMBINATIONS.index)
    modalities = [mod for mod in MODALITIES if any(mod in c for c in combos)]
    reports = []
    for mod in modalities:
        for sl in SLICES:
            try:
                rep = contribution(records, mod, combos, sl, args.normalized)
            except EmptySlice:
                continue
            reports.append({"modality": rep.modality, "class_slice": rep.class_slice,
                            "score": rep.score, "n": rep.n})
    per_record = [{"moment_id": r.moment_id, "ground_truth": r.ground_truth,
                   **{mod: record_contribution(r, mod, combos, args.normalized) for mod in modalities}}
                  for r in records]
    unimodal = [mod for mod in modalities if mod in combos]
    reliable = reliable_type_filter(records, args.threshold, unimodal) if unimodal else []
    pairs = confidence_pairs(records) if any(len(c) > 1 for c in combos) and unimodal else []
    run.json("contrib.json", {"combinations": combos, "normalized": args.normalized,
                              "contributions": reports, "per_record": per_record,
                              "reliable": {"threshold": args.threshold, "unimodal": unimodal,
                                           "moment_ids": [r.moment_id for r in reliable]},
                              "confidence_pairs": pairs})
    run.csv("contrib.csv", reports, ["modality", "class_slice", "score", "n"])
    if pairs:
        run.csv("confidence_pairs.csv", pairs)
    if args.html:
        from .report import bar_chart, html_report, scatter_chart

        charts = [bar_chart([{"metric": f"{r['modality']} {r['class_slice']}", "value": r["score"]} for r in reports],
                            "Modality contribution", lo_key=None, hi_key=None)]
        if pairs:
            charts.append(scatter_chart([(p["best_unimodal_dz"], p["best_multimodal_dz"], p["ground_truth"])
                                         for p in pairs], "Confidence", "best unimodal dZ", "best multimodal dZ"))
        run.text("contrib.html", html_report("Modality contributions", charts, [("Contributions", reports)]))
    run.finish()


def _evaluate(run: Run, model, records, fm, cfg: PipelineConfig, name: str) -> list[dict]:
    from .baselines import predict_logreg

    labels_by_id = {r.id: r.label for r in records}
    preds, probs = predict_logreg(model, fm)
    labels = np.array([labels_by_id[i] for i in fm.row_ids])
    rows = [{"moment_id": i, "label": int(y), "pred": int(p), "score": float(s)}
            for i, y, p, s in zip(fm.row_ids, labels, preds, probs)]
    run.text(f"{name}_predictions.jsonl", "".join(json.dumps(r) + "\n" for r in rows))
    m = cfg.metrics
    scores = probs if len(set(labels.tolist())) == 2 else None
    return metrics_report(preds, labels, scores, m.B, m.level, cfg.seed, "probability")


def cmd_baseline(args, cfg: PipelineConfig) -> None:
    from .baselines import featurize, load_model, save_model, split_3to1, train_logreg

    b = cfg.baseline
    if args.action == "train":
        run = Run("baseline train", args.out, cfg, [*args.manifests, args.embeddings])
        records = _read_manifests(args.manifests)
        train_ids, test_ids = split_3to1([r.id for r in records], [r.label for r in records], cfg.seed)
        by_id = {r.id: r for r in records}
        train_recs = [by_id[i] for i in train_ids]
        test_recs = [by_id[i] for i in test_ids]
        seed_spec = None
        if args.modality == "text":
            seed_spec = {"n_lo": b.n_lo, "n_hi": b.n_hi, "min_df": b.min_df, "max_features": b.max_features}
            from .baselines import NgramVectorizer

            vec = NgramVectorizer(**seed_spec).fit([r.transcript_text for r in train_recs])
            seed_spec = vec.spec()
        elif args.modality == "audio":
            seed_spec = {"kind": "mfcc", "pool": b.pool}
        fm_train, spec = featurize(train_recs, args.modality, seed_spec, args.embeddings)
        model = train_logreg(fm_train, [r.label for r in train_recs], b.l2, b.max_iter, b.tol,
                             {**spec, "modality": args.modality})
        save_model(model, run.path("model.json"))
        fm_test, _ = featurize(test_recs, args.modality, spec, args.embeddings)
        rows = _evaluate(run, model, records, fm_test, cfg, "test")
        run.json("split.json", {"train": train_ids, "test": test_ids})
        run.json("metrics.json", {"metrics": rows, "split": "test", "converged": model.converged,
                                  "n_iter": model.n_iter, "train_loss": model.loss})
        run.csv("metrics.csv", rows, ["metric", "value", "ci_lo", "ci_hi"])
    else:
        run = Run("baseline eval", args.out, cfg, [args.model, *args.manifests, args.embeddings])
        model = load_model(args.model)
        records = _read_manifests(args.manifests)
        modality = model.feature_spec.get("modality")
        if modality is None:
            raise ParseError(f"{args.model}: model has no modality in its feature spec")
        fm, _ = featurize(records, modality, model.feature_spec, args.embeddings)
        rows = _evaluate(run, model, records, fm, cfg, "eval")
        run.json("metrics.json", {"metrics": rows, "split": "eval"})
        run.csv("metrics.csv", rows, ["metric", "value", "ci_lo", "ci_hi"])
    run.finish()


def _parse_segment(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError as exc:
        raise ConfigError(f"segment must look like START:END, got {text!r}") from exc


def cmd_synth(args, cfg: PipelineConfig) -> None:
    from .synthcorpus import SynthSpec, write_corpus

    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
        spec = SynthSpec(seed=cfg.seed, g_duration=args.duration, fps=args.fps, frame_size=(h, w),
                         highlight_segments=[_parse_segment(s) for s in args.segment],
                         overlay_kinds=tuple(args.overlay), noise_sigma=args.noise)
    except ValueError as exc:
        if isinstance(exc, MomentsError):
            raise
        raise ConfigError(str(exc)) from exc
    run = Run("synth generate", args.out, cfg, [])
    write_corpus(spec, run.out)
    run.artifacts += ["game.gray", "highlight.gray", "truth.json"]
    run.finish()


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="override the configured worker count")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--log-format", choices=("text", "json"), default="json")

    parser = _Parser(prog="moments", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"moments {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("localize", parents=[common], help="find the highlight reel's moments in the full game")
    p.add_argument("h", help="highlight reel (video or raw .gray frames)")
    p.add_argument("g", help="full game (video or raw .gray frames)")
    p.add_argument("--truth", help="ground-truth JSON to score the result against")
    p.add_argument("--threshold", type=float, help="similarity threshold for well-localized seconds")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--fps", type=str)
    p.add_argument("--downscale", type=int, default=256, help="decoded frame height for videos")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("sample-nim", parents=[common], help="fit durations and place non-important spans")
    p.add_argument("alignments", nargs="+", help="alignment.json files from localize")
    p.set_defaults(func=cmd_sample_nim)

    p = sub.add_parser("extract", parents=[common], help="build moment records and the manifest")
    p.add_argument("alignment")
    p.add_argument("--nim", required=True, help="nim.json from sample-nim")
    p.add_argument("--transcript", help="ASR transcript JSON")
    p.add_argument("--source", help="full-game video to cut clips from")
    p.add_argument("--game-id")
    p.add_argument("--evs", type=float, help="audio extension past the video end, seconds")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", parents=[common], help="duration summaries of manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--html", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("metrics", parents=[common], help="MCC, accuracy, F1, ROC AUC with bootstrap CIs")
    p.add_argument("predictions", help="CSV or JSONL with moment_id,label,pred[,score]")
    p.add_argument("--score-source", help="what the score column holds (for the report)")
    p.add_argument("--B", type=int, help="bootstrap resamples")
    p.add_argument("--html", action="store_true")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("contrib", parents=[common], help="modality contributions and confidence pairs")
    p.add_argument("logits", help="logit records JSONL")
    p.add_argument("--combos", help="comma-separated combinations (default: those of the first record)")
    p.add_argument("--normalized", action="store_true", help="average instead of sum per side")
    p.add_argument("--threshold", type=float, default=3.0, help="dZ threshold for reliable moments")
    p.add_argument("--html", action="store_true")
    p.set_defaults(func=cmd_contrib)

    p = sub.add_parser("baseline", help="logistic-regression baselines")
    bsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("train", "eval"):
        q = bsub.add_parser(action, parents=[common])
        if action == "eval":
            q.add_argument("model", help="model.json from baseline train")
        q.add_argument("manifests", nargs="+")
        if action == "train":
            q.add_argument("--modality", choices=("text", "audio", "video"), required=True)
            q.add_argument("--l2", type=float)
        q.add_argument("--embeddings", help="frame-embedding JSONL (video modality)")
        q.add_argument("--B", type=int, help="bootstrap resamples for the test metrics")
        q.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synth", help="synthetic corpora")
    ssub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = ssub.add_parser("generate", parents=[common], help="write a synthetic game, reel and truth")
    q.add_argument("--duration", type=float, default=60.0)
    q.add_argument("--fps", type=int, default=5)
    q.add_argument("--size", default="64x96", help="HEIGHTxWIDTH")
    q.add_argument("--segment", action="append", default=[], help="START:END in seconds (repeatable)")
    q.add_argument("--overlay", action="append", default=[], choices=("Scorecard", "AdBanner", "Watermark"))
    q.add_argument("--noise", type=float, default=0.0)
    q.set_defaults(func=cmd_synth)
    return parser


def _overrides(args) -> dict[str, dict]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "": {k: v for k, v in (("seed", get("seed")), ("workers", get("workers"))) if v is not None},
        "localize": {"sim_threshold": get("threshold") if args.command == "localize" else None,
                     "workers": get("workers")},
        "metrics": {"B": get("B")},
        "extract": {"evs": get("evs")},
        "baseline": {"l2": get("l2")},
    }


def _configure_logging(level: str, fmt: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if fmt == "json" else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    logging.captureWarnings(True)


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level, args.log_format)
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ValueError as exc:  # bad log level
        return _fail(EXIT_CONFIG, exc)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (MomentsError, FileNotFoundError, IsADirectoryError, KeyError) as exc:
        return _fail(EXIT_DATA, exc)
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
