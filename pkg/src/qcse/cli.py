"""``qcse`` command line: synth, mkdata, train, enhance, eval, report, config.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (diverged training).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import synth
from .audio import AudioClip, AudioError, load_wav, resample, save_wav
from .calibrator import (SEGMENT_SECONDS, MixSpec, SkipItem, build_targets, histogram_weights,
                         read_manifest, read_targets, write_targets)
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .enhancer import SEPARATOR_RATE, SpectralSeparator, check_attenuation, db_to_gain
from .evalkit import EvalError, build_report, export_plotdata, quality_report, validate_report
from .quality import ApsProxy
from .regressor.estimator import AttenuationRegressor, predict_attenuation
from .regressor.features import FEATURE_RATE, extract_features
from .regressor.serialize import ModelFormatError, load_model, save_model
from .regressor.training import TrainingDiverged

log = logging.getLogger("qcse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
AUDIO_SUFFIXES = ("mix", "speech_est", "speech", "background")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def worker_count() -> int:
    raw = os.environ.get("QCSE_THREADS")
    if raw is None:
        return max(os.cpu_count() or 1, 1)
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"QCSE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("QCSE_THREADS must be >= 1")
    return n


def _separator(cfg: PipelineConfig) -> SpectralSeparator:
    return SpectralSeparator.from_config(cfg.separator)


def _oracle(cfg: PipelineConfig) -> ApsProxy:
    return ApsProxy.from_config(cfg.quality)


def audio_path(data_dir, item_id: str, kind: str) -> Path:
    return Path(data_dir) / "audio" / f"{item_id}.{kind}.wav"


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args, cfg: PipelineConfig) -> int:
    """Write a synthetic corpus plus train/test manifests over disjoint source files."""
    out = Path(args.out)
    n_pairs = args.train_pairs + args.test_pairs
    paths = synth.write_corpus(out / "corpus", n_pairs, n_pairs, args.duration, args.seed)
    pairs = list(zip(paths["speech"], paths["background"]))
    segments = tuple(range(int(args.duration // cfg.data.segment_seconds)))
    if not segments:
        raise UsageError("--duration is shorter than one segment")
    # interleave the split so both halves see every background family
    test_idx = set(np.linspace(0, n_pairs - 1, args.test_pairs).round().astype(int).tolist()) \
        if args.test_pairs else set()
    train = [p for i, p in enumerate(pairs) if i not in test_idx]
    test = [p for i, p in enumerate(pairs) if i in test_idx]
    n_train = synth.write_manifest(out / "train.jsonl", train, segments=segments)
    n_test = synth.write_manifest(out / "test.jsonl", test, segments=segments)
    print(f"wrote {n_pairs} speech and {n_pairs} background files to {out / 'corpus'}")
    print(f"train manifest: {n_train} items, test manifest: {n_test} items")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mkdata

def cmd_mkdata(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    try:
        specs = read_manifest(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc}") from exc

    def write_audio(item, result):
        if not (result.accepted or cfg.data.keep_discarded):
            return
        for kind, clip in zip(AUDIO_SUFFIXES, (item.x, item.sep.speech_est, item.s, item.b)):
            save_wav(audio_path(out, item.spec.item_id, kind), clip, "float32")

    rows, skipped = build_targets(specs, _oracle(cfg), cfg.linesearch, _separator(cfg),
                                  keep_discarded=cfg.data.keep_discarded, workers=worker_count(),
                                  on_item=write_audio, segment_seconds=cfg.data.segment_seconds)
    write_targets(out / "targets.csv", rows)
    with open(out / "skipped.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("item_id", "reason"))
        w.writerows((spec.item_id, reason) for spec, reason in skipped)
    n_discarded = sum(reason.startswith("discarded") for _, reason in skipped)
    print(f"accepted {sum(r.result.accepted for r in rows)}  discarded {n_discarded}  "
          f"skipped {len(skipped) - n_discarded}  -> {out / 'targets.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def load_training_set(data_dir, pool):
    data_dir = Path(data_dir)
    try:
        rows = read_targets(data_dir / "targets.csv")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {data_dir / 'targets.csv'}: {exc}") from exc
    feats, targets = [], []
    for row in rows:
        item_id = row.spec.item_id
        clips = []
        for kind in ("mix", "speech_est"):
            path = audio_path(data_dir, item_id, kind)
            if not path.exists():
                raise DataError(f"missing audio for {item_id}: {path}")
            clips.append(load_wav(path))
        feats.append(extract_features(*clips, pool=pool))
        targets.append(row.result.h_star)
    if not feats:
        raise DataError(f"no training items in {data_dir / 'targets.csv'}")
    return np.stack(feats).astype(np.float32), np.asarray(targets), rows


def make_regressor(cfg: PipelineConfig, seed: int) -> AttenuationRegressor:
    n, t = cfg.network, cfg.train
    return AttenuationRegressor(n.architecture, tuple(n.filters), n.dense_units, n.dropout,
                                n.output_bias_init, t.batch_size, t.momentum, t.nesterov,
                                t.lr_main, t.epochs_main, t.lr_refine, t.epochs_refine, seed)


def cmd_train(args, cfg: PipelineConfig) -> int:
    seed = cfg.seed if args.seed is None else args.seed
    pool = tuple(cfg.features.pool)
    X, h, _ = load_training_set(args.data, pool)
    weights = None
    if cfg.data.use_weights:
        weights = histogram_weights(h, cfg.data.weight_bin_width, cfg.data.weight_eps)
    est = make_regressor(cfg, seed)
    est.fit(X, h, weights,
            callback=lambda epoch, loss: log.info("epoch %d weighted mse %.4f", epoch, loss))
    bundle = est.bundle({"pool": list(pool), "n_train": int(h.size)})
    model = Path(args.model)
    model.parent.mkdir(parents=True, exist_ok=True)
    save_model(bundle.network, bundle.stats, model, bundle.meta)
    history = Path(args.history) if args.history else model.with_suffix(".history.csv")
    schedule = est.train_config().schedule()
    with open(history, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "lr", "weighted_mse"))
        w.writerows((i, repr(lr), repr(v)) for i, (lr, v) in enumerate(zip(schedule, est.history_)))
    final = est.history_[-1] if est.history_ else float("nan")
    print(f"trained on {h.size} items, final weighted mse {final:.4f} -> {model}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# enhance

def segment_attenuations(x48: AudioClip, s48: AudioClip, bundle, segment_seconds=SEGMENT_SECONDS):
    """One prediction per full segment; a trailing partial segment reuses the last one.

    Inputs shorter than one segment are zero-padded to a single segment.
    """
    seg_len = int(round(segment_seconds * x48.sample_rate))
    n_full = len(x48) // seg_len
    pool = tuple(bundle.meta.get("pool", (1, 1)))
    h = []
    for k in range(max(n_full, 1)):
        xs = np.zeros(seg_len)
        ss = np.zeros(seg_len)
        chunk = slice(k * seg_len, min((k + 1) * seg_len, len(x48)))
        xs[: chunk.stop - chunk.start] = x48.samples[chunk]
        ss[: chunk.stop - chunk.start] = s48.samples[chunk]
        x12 = resample(x48.with_samples(xs), FEATURE_RATE)
        s12 = resample(s48.with_samples(ss), FEATURE_RATE)
        h.append(predict_attenuation(bundle.network, bundle.stats, x12, s12, pool))
    if n_full and len(x48) > n_full * seg_len:
        h.append(h[-1])
    return h, seg_len


def cmd_enhance(args, cfg: PipelineConfig) -> int:
    if (args.h is None) == (args.model is None):
        raise UsageError("enhance needs exactly one of --model or --h")
    clip = load_wav(args.input)
    x48 = resample(clip, SEPARATOR_RATE)
    sep = _separator(cfg).separate(x48)
    if args.h is not None:
        try:
            h_values = [check_attenuation(args.h)]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        seg_len = max(len(x48), 1)
    else:
        try:
            bundle = load_model(args.model)
        except OSError as exc:
            raise DataError(f"cannot read model {args.model}: {exc}") from exc
        h_values, seg_len = segment_attenuations(x48, sep.speech_est, bundle,
                                                 cfg.data.segment_seconds)
    gains = np.repeat([db_to_gain(h) for h in h_values], seg_len)[: len(x48)]
    y48 = sep.speech_est.samples + gains * sep.background_est.samples
    y = resample(x48.with_samples(y48), clip.sample_rate)
    peak = float(np.max(np.abs(y.samples))) if len(y) else 0.0
    if peak > 1.0 and args.format == "pcm16":
        log.warning("output peaks at %.3f and will clip in PCM16", peak)
    save_wav(args.output, y, args.format)
    for k, h in enumerate(h_values):
        print(f"segment {k}: h = {h:.2f} dB")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / report

def evaluate(specs, bundle, cfg: PipelineConfig, baseline: bool = False, workers: int = 1):
    oracle = _oracle(cfg)
    seen = []
    rows, skipped = build_targets(specs, oracle, cfg.linesearch, _separator(cfg),
                                  keep_discarded=cfg.data.keep_discarded, workers=workers,
                                  on_item=lambda item, res: seen.append(item),
                                  segment_seconds=cfg.data.segment_seconds)
    kept = {id(r.spec) for r in rows}
    items = [item for item in seen if id(item.spec) in kept]
    pool = tuple(bundle.meta.get("pool", (1, 1)))
    pred = np.array([predict_attenuation(bundle.network, bundle.stats, it.x, it.sep.speech_est,
                                         pool) for it in items])
    target = np.array([r.result.h_star for r in rows])
    qstats = quality_report(items, pred, oracle, cfg.linesearch.q_target, workers)
    qstats.pop("scores")
    base = bundle.meta.get("train_target_mean") if baseline else None
    report = build_report(pred, target, [r.spec for r in rows], qstats, base)
    return report, rows, skipped


def cmd_eval(args, cfg: PipelineConfig) -> int:
    try:
        specs = read_manifest(args.manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc}") from exc
    try:
        bundle = load_model(args.model)
    except OSError as exc:
        raise DataError(f"cannot read model {args.model}: {exc}") from exc
    report, rows, skipped = evaluate(specs, bundle, cfg, args.baseline, worker_count())
    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    validate_report(data)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_targets(out / "targets.csv", rows)
    export_plotdata(report, out / "plots")
    print(f"evaluated {report.n} items ({len(skipped)} not used) -> {out / 'report.json'}")
    _print_summary(data)
    return EXIT_OK


def _fmt(v, spec=".3f"):
    return "n/a" if v is None else format(v, spec)


def _print_summary(d: dict) -> None:
    reg = d["regression"]
    print(f"MAE {_fmt(d['mae'])} dB  MSE {_fmt(d['mse'])} dB^2  rho {_fmt(d['pearson_rho'])} "
          f"(p={_fmt(d['p_value'], '.2g')})")
    print(f"regression slope {_fmt(reg['slope'])} intercept {_fmt(reg['intercept'])} "
          f"r^2 {_fmt(reg['r_squared'])}")
    if d.get("baseline_mae") is not None:
        print(f"mean-predictor baseline MAE {_fmt(d['baseline_mae'])} dB")
    q = d.get("quality_stats")
    if q and q.get("n"):
        print(f"output quality mean {_fmt(q['mean'], '.2f')} std {_fmt(q['std'], '.2f')} "
              f"MAE vs {q['q_target']:g}: {_fmt(q['mae_vs_target'], '.2f')}")
    for g in d["per_snr"]:
        print(f"  SNR {g['snr_db']:+g} dB: n={g['n']} MAE {g['mae']:.3f} (std {g['std']:.3f})")


def cmd_report(args, cfg: PipelineConfig) -> int:
    from .evalkit import EvalReport
    import jsonschema

    try:
        data = json.loads(Path(args.report).read_text(encoding="utf-8"))
        validate_report(data)
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise DataError(f"invalid report {args.report}: {exc}") from exc
    _print_summary(data)
    if args.plots:
        export_plotdata(EvalReport.from_dict(data), args.plots)
        print(f"plot data -> {args.plots}")
    return EXIT_OK


def cmd_config(args, cfg: PipelineConfig) -> int:
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="qcse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus and manifests")
    p.add_argument("--out", required=True)
    p.add_argument("--train-pairs", type=int, default=8)
    p.add_argument("--test-pairs", type=int, default=2)
    p.add_argument("--duration", type=float, default=4.0, help="seconds per source file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mkdata", parents=[common], help="mix, calibrate and store targets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mkdata)

    p = sub.add_parser("train", parents=[common], help="train the attenuation regressor")
    p.add_argument("--data", required=True, help="directory written by mkdata")
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--history", help="loss-history CSV (default: next to the model)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", parents=[common], help="attenuate the background of a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--model")
    p.add_argument("--h", type=float, help="fixed attenuation in dB instead of a model")
    p.add_argument("--format", choices=("pcm16", "float32"), default="pcm16")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on a test manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--baseline", action="store_true",
                   help="include the training-mean predictor's MAE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="summarise a report.json")
    p.add_argument("report")
    p.add_argument("--plots", help="re-export plot data to this directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", parents=[common], help="print the effective configuration")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config, args.overrides)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SkipItem, AudioError, ModelFormatError, EvalError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
