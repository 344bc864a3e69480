"""Command-line entry point tying the pipeline stages together.

Subcommands: synth, preprocess, segment, pretrain, transfer, finetune,
train-ae, features, train-shallow, predict, ensemble, evaluate, report.
Every run writes its artifacts under ``--out`` along with a ``config.txt``
snapshot of the effective configuration; with a fixed seed two identical
snapshots produce identical model files.

Exit codes: 0 success, 1 pipeline failure (diagnostic on stderr), 2 bad usage.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import classifiers as cls_mod
from . import corpus as corpus_mod
from . import ensemble as ens
from . import features as feat_mod
from . import pcgnet
from .config import RunConfig
from .dsp import (BINARY, THREE_CLASS, Recording, default_filterbank, mel_spectrogram,
                  remove_spikes, resample, threshold_db)
from .errors import ParameterError
from .segmentation import SegmentationConfig, export_states_csv, extract_cycles, segment
from .wavio import read_wav, write_wav


def _run_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.snapshot(out / "config.txt")
    return out


def _load_manifold(audio_dir, manifest, source="corpus"):
    return corpus_mod.load_corpus(audio_dir, manifest, source=source)


def _prepare_recording(rec: Recording, cfg: RunConfig) -> Recording:
    rec = resample(rec, cfg.rate)
    return remove_spikes(rec)


def _recording_cycles(rec: Recording, cfg: RunConfig, use_filters: bool, parent: str):
    states = segment(rec, SegmentationConfig())
    filters = default_filterbank(cfg.rate, cfg.kernel_len - 1) if use_filters else None
    return extract_cycles(rec, states, filters, parent=parent)


def _corpus_cycles(corpus, cfg: RunConfig, use_filters: bool, binarize: bool):
    cycles, labels = [], []
    for entry in corpus.entries:
        rec = _prepare_recording(entry.load(), cfg)
        label = entry.label
        if binarize and label in ("mild", "severe"):
            label = "abnormal"
        for cyc in _recording_cycles(rec, cfg, use_filters, Path(entry.path).name):
            cycles.append(cyc)
            labels.append(label)
    return cycles, labels


def _clip(rec: Recording, seconds: float) -> Recording:
    n = int(seconds * rec.rate)
    return rec if rec.samples.size <= n else rec.with_samples(rec.samples[:n])


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg):
    out = _run_dir(args, cfg)
    manifest = corpus_mod.write_synth_corpus(
        out, n=args.n if args.n is not None else cfg.synth_n,
        seed=cfg.seed, duration=cfg.synth_duration,
        bpm_range=(cfg.synth_bpm_low, cfg.synth_bpm_high),
        snr_db=cfg.synth_snr_db, rate=cfg.synth_rate)
    print(f"wrote synthetic corpus with manifest {manifest}")
    return 0


def cmd_preprocess(args, cfg):
    out = _run_dir(args, cfg)
    corpus = _load_manifold(args.audio, args.manifest)
    rows = []
    for entry in corpus.entries:
        rec = _prepare_recording(entry.load(), cfg)
        name = Path(entry.path).name
        write_wav(out / name, rec, fmt="float32")
        rows.append((name, entry.label))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label"])
        writer.writerows(rows)
    print(f"preprocessed {len(rows)} recordings at {cfg.rate:.0f} Hz into {out}")
    return 0


def cmd_segment(args, cfg):
    out = _run_dir(args, cfg)
    corpus = _load_manifold(args.audio, args.manifest)
    for entry in corpus.entries:
        rec = _prepare_recording(entry.load(), cfg)
        states = segment(rec, SegmentationConfig())
        name = Path(entry.path).stem
        export_states_csv(states, out / f"{name}_states.csv")
    print(f"segmented {len(corpus.entries)} recordings into {out}")
    return 0


def cmd_pretrain(args, cfg):
    out = _run_dir(args, cfg)
    corpus = _load_manifold(args.audio, args.manifest)
    use_filters = cfg.front_variant() is None
    cycles, labels = _corpus_cycles(corpus, cfg, use_filters, binarize=True)
    train_cfg = pcgnet.TrainConfig(epochs=cfg.epochs, lr=cfg.pretrain_lr,
                                   batch_size=cfg.batch_size, dropout=cfg.dropout,
                                   seed=cfg.seed, stop_at_uar=cfg.stop_at_uar)
    model, log = pcgnet.pretrain_binary(cycles, labels, train_cfg,
                                        front=cfg.front_variant(), seed=cfg.seed)
    pcgnet.save_model(model, out / "binary_model.pcgm")
    log.write_csv(out / "pretrain_metrics.csv")
    print(f"pretrained on {len(cycles)} cycles; final UAR {log.rows[-1].uar:.3f}")
    return 0


def cmd_transfer(args, cfg):
    out = _run_dir(args, cfg)
    model = pcgnet.load_model(args.model)
    new = pcgnet.transfer_head(model, hidden=cfg.hidden_widths(), classes=THREE_CLASS,
                               freeze_front=cfg.freeze_front, seed=cfg.seed + 1)
    pcgnet.save_model(new, out / "transferred_model.pcgm")
    print(f"transferred features into a {cfg.hidden} head "
          f"(frozen={cfg.freeze_front}) -> {out / 'transferred_model.pcgm'}")
    return 0


def cmd_finetune(args, cfg):
    out = _run_dir(args, cfg)
    model = pcgnet.load_model(args.model)
    corpus = _load_manifold(args.audio, args.manifest)
    use_filters = model.front_variant is None
    cycles, labels = _corpus_cycles(corpus, cfg, use_filters, binarize=False)
    train_cfg = pcgnet.TrainConfig(epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size,
                                   dropout=cfg.dropout, seed=cfg.seed,
                                   stop_at_uar=cfg.stop_at_uar)
    model, log = pcgnet.finetune(model, cycles, labels, train_cfg)
    pcgnet.save_model(model, out / "finetuned_model.pcgm")
    log.write_csv(out / "finetune_metrics.csv")
    print(f"fine-tuned on {len(cycles)} cycles; final UAR {log.rows[-1].uar:.3f}")
    return 0


def _threshold_specs(corpus, cfg, floor):
    specs = []
    for entry in corpus.entries:
        rec = _clip(entry.load(), cfg.clip_seconds)
        spec = mel_spectrogram(rec, bands=cfg.bands, window=cfg.window, hop=cfg.hop)
        specs.append(threshold_db(spec, floor))
    return specs


def cmd_train_ae(args, cfg):
    out = _run_dir(args, cfg)
    corpus = _load_manifold(args.audio, args.manifest)
    ae_cfg = ae.AutoencoderConfig(epochs=cfg.ae_epochs, lr=cfg.ae_lr, seed=cfg.seed,
                                  frame_step=cfg.ae_frame_step)
    for floor in cfg.threshold_list():
        specs = _threshold_specs(corpus, cfg, floor)
        model, losses = ae.train_autoencoder(specs, ae_cfg, hidden=cfg.ae_hidden)
        tag = f"{int(floor)}"
        ae.save_autoencoder(model, out / f"autoencoder_{tag}db.pcgm")
        with open(out / f"autoencoder_{tag}db_loss.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            writer.writerows(enumerate(losses))
        print(f"threshold {floor:+.0f} dB: loss {losses[0]:.5f} -> {losses[-1]:.5f}")
    return 0


def cmd_features(args, cfg):
    out = _run_dir(args, cfg)
    corpus = _load_manifold(args.audio, args.manifest)
    if args.kind == "acoustic":
        rows = []
        for entry in corpus.entries:
            rec = _prepare_recording(entry.load(), cfg)
            rows.append((Path(entry.path).name, feat_mod.extract_acoustic_features(rec)))
        feat_mod.export_acoustic_csv(rows, out / "acoustic_features.csv")
        print(f"wrote {len(rows)} acoustic feature rows")
        return 0
    # autoencoder features: one model per threshold, fused per recording
    models = {}
    for floor in cfg.threshold_list():
        path = Path(args.ae_models) / f"autoencoder_{int(floor)}db.pcgm"
        models[floor] = ae.load_autoencoder(path)
    rows = []
    for entry in corpus.entries:
        rec = _clip(entry.load(), cfg.clip_seconds)
        spec = mel_spectrogram(rec, bands=cfg.bands, window=cfg.window, hop=cfg.hop)
        feats = [ae.extract_feature(models[floor], threshold_db(spec, floor),
                                    frame_step=cfg.ae_frame_step)
                 for floor in cfg.threshold_list()]
        name = Path(entry.path).name
        rows.extend((name, f) for f in feats)
        if [f.threshold for f in feats] == list(ae.THRESHOLD_ORDER):
            rows.append((name, ae.fuse_features(*feats)))
    ae.export_features_csv(rows, out / "autoencoder_features.csv")
    print(f"wrote autoencoder features for {len(corpus.entries)} recordings")
    return 0


def _read_feature_csv(path, threshold=None):
    names, vectors = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_threshold = header[1] == "threshold"
        for row in reader:
            if has_threshold:
                if threshold is not None and row[1] != threshold:
                    continue
                names.append(row[0])
                vectors.append([float(v) for v in row[2:]])
            else:
                names.append(row[0])
                vectors.append([float(v) for v in row[1:]])
    return names, np.asarray(vectors)


def cmd_train_shallow(args, cfg):
    out = _run_dir(args, cfg)
    names, X = _read_feature_csv(args.features, threshold=args.threshold)
    label_map = {}
    with open(args.manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            label_map[row["filename"].strip()] = row["label"].strip().lower()
    missing = [n for n in names if n not in label_map]
    if missing:
        raise ParameterError(f"no labels for feature rows: {missing[:5]}")
    y = [label_map[n] for n in names]
    if args.kind == "svm":
        model = cls_mod.train_svm(X, y, C=cfg.svm_c, tol=cfg.svm_tol, seed=cfg.seed)
    else:
        model = cls_mod.train_lda(X, y, shrinkage=cfg.lda_shrinkage)
    cls_mod.save_linear_model(model, out / f"{args.kind}_model.pcgm")
    preds = [cls_mod.predict(model, x)[0] for x in X]
    _, metrics = ens.evaluate(preds, y)
    print(f"trained {args.kind} on {len(y)} rows; training UAR {metrics['uar']:.3f}")
    return 0


def _write_predictions(rows, classes, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "predicted"] + [f"score_{c}" for c in classes])
        for name, label, scores in rows:
            writer.writerow([name, label] + [f"{s:.6f}" for s in scores])


def _read_predictions(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        classes = tuple(h.removeprefix("score_") for h in header[2:])
        for row in reader:
            rows.append((row[0], row[1], np.asarray([float(v) for v in row[2:]])))
    return classes, rows


def cmd_predict(args, cfg):
    out = _run_dir(args, cfg)
    model = pcgnet.load_model(args.model)
    corpus = _load_manifold(args.audio, args.manifest)
    use_filters = model.front_variant is None
    rows = []
    for entry in corpus.entries:
        rec = _prepare_recording(entry.load(), cfg)
        cycles = _recording_cycles(rec, cfg, use_filters, Path(entry.path).name)
        label, posterior = pcgnet.predict_recording(model, cycles)
        rows.append((Path(entry.path).name, label, posterior))
    _write_predictions(rows, model.classes, out / "predictions.csv")
    print(f"predicted {len(rows)} recordings -> {out / 'predictions.csv'}")
    return 0


def cmd_ensemble(args, cfg):
    out = _run_dir(args, cfg)
    voters = [_read_predictions(p) for p in args.pred]
    stage1 = dict()
    if args.stage1:
        _, stage1_rows = _read_predictions(args.stage1)
        stage1 = {name: label for name, label, _ in stage1_rows}
    by_file = {}
    for vi, (classes, rows) in enumerate(voters):
        for name, label, scores in rows:
            posterior = scores if abs(scores.sum() - 1.0) <= 1e-6 else None
            by_file.setdefault(name, []).append(
                ens.VoterOutput(voter=f"v{vi}", label=label, posterior=posterior))
    rows = []
    for name in sorted(by_file):
        votes = by_file[name]
        if args.stage1:
            label = ens.hierarchical_decide(stage1[name], votes, mode=args.stage2_mode)
        else:
            label = ens.majority_vote(votes, classes=THREE_CLASS)
        rows.append((name, label, np.zeros(len(THREE_CLASS))))
    _write_predictions(rows, THREE_CLASS, out / "ensemble_predictions.csv")
    print(f"fused {len(voters)} voters over {len(rows)} recordings")
    return 0


def cmd_evaluate(args, cfg):
    out = _run_dir(args, cfg)
    _, pred_rows = _read_predictions(args.pred)
    truth = {}
    with open(args.truth, newline="") as fh:
        for row in csv.DictReader(fh):
            key = "label" if "label" in row else "predicted"
            truth[row["filename"].strip()] = row[key].strip().lower()
    preds, truths = [], []
    for name, label, _ in pred_rows:
        if name not in truth:
            raise ParameterError(f"no truth label for {name}")
        preds.append(label)
        truths.append(truth[name])
    cm, metrics = ens.evaluate(preds, truths)
    ens.write_metrics_csv(metrics, out / "metrics.csv")
    ens.write_confusion_csv(cm, out / "confusion.csv")
    print(ens.format_report(metrics, cm))
    print(f"UAR {metrics['uar']:.4f}")
    return 0


def cmd_report(args, cfg):
    out = _run_dir(args, cfg)
    rows = []
    for spec in args.metrics:
        name, _, path = spec.partition("=")
        if not path:
            raise ParameterError(f"--metrics expects name=metrics.csv, got {spec!r}")
        values = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                values[row["metric"]] = float(row["value"])
        rows.append({
            "model": name,
            "dataset": args.dataset,
            "features": "",
            "classifier": "",
            "uar_dev_percent": f"{100.0 * values.get('uar', 0.0):.2f}",
            "acc_dev_percent": f"{100.0 * values.get('accuracy', 0.0):.2f}",
            "uar_test_percent": "",
        })
    ens.write_model_table(rows, out / "model_table.csv")
    for row in rows:
        print(f"{row['model']:<24} UAR(dev) {row['uar_dev_percent']}%  "
              f"Acc(dev) {row['acc_dev_percent']}%")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcgkit",
                                     description="Phonocardiogram classification toolkit")
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, **arguments):
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, help="run directory")
        for flag, kwargs in arguments.items():
            p.add_argument(f"--{flag.replace('_', '-')}", **kwargs)
        p.set_defaults(handler=handler)
        return p

    add("synth", cmd_synth, n=dict(type=int, default=None, help="number of recordings"))
    add("preprocess", cmd_preprocess, audio=dict(required=True), manifest=dict(required=True))
    add("segment", cmd_segment, audio=dict(required=True), manifest=dict(required=True))
    add("pretrain", cmd_pretrain, audio=dict(required=True), manifest=dict(required=True))
    add("transfer", cmd_transfer, model=dict(required=True))
    add("finetune", cmd_finetune, audio=dict(required=True), manifest=dict(required=True),
        model=dict(required=True))
    add("train-ae", cmd_train_ae, audio=dict(required=True), manifest=dict(required=True))
    add("features", cmd_features, audio=dict(required=True), manifest=dict(required=True),
        kind=dict(choices=("acoustic", "autoencoder"), default="acoustic"),
        ae_models=dict(default=None, help="directory holding autoencoder_*.pcgm"))
    add("train-shallow", cmd_train_shallow, features=dict(required=True),
        manifest=dict(required=True), kind=dict(choices=("svm", "lda"), default="svm"),
        threshold=dict(default=None, help="feature threshold tag filter, e.g. -60.0"))
    add("predict", cmd_predict, audio=dict(required=True), manifest=dict(required=True),
        model=dict(required=True))
    add("ensemble", cmd_ensemble,
        pred=dict(nargs="+", required=True, help="prediction CSVs to fuse"),
        stage1=dict(default=None, help="binary predictions gating the hierarchy"),
        stage2_mode=dict(choices=("redistribute", "abstain"), default="redistribute"))
    add("evaluate", cmd_evaluate, pred=dict(required=True), truth=dict(required=True))
    add("report", cmd_report, metrics=dict(nargs="+", required=True,
                                           help="name=metrics.csv entries"),
        dataset=dict(default="devel"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = []
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ParameterError(f"--set expects KEY=VALUE, got {item!r}")
            overrides.append((key.strip(), value.strip()))
        cfg = RunConfig(file_path=args.config, overrides=overrides)
        return args.handler(args, cfg)
    except Exception as exc:  # uniform diagnostics, non-zero exit
        print(f"pcgkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
