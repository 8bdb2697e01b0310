"""Command-line surface wiring the pipeline together: corpus synthesis,
inventory building, splicing, training and adaptation, decoding, forced
alignment, confidence training, and metric reports.

Every subcommand is deterministic given its inputs and --seed; reports are
JSON with sorted keys, written to stdout or --out."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from decimal import Decimal
from functools import partial
from pathlib import Path

import numpy as np

from . import confidence as conf
from . import corpus as corpus_mod
from . import splicer as splicer_mod
from . import word_timing as timing_mod
from .errors import (
    ConfigurationError,
    DataError,
    InfeasibleAlignmentError,
    LexiconError,
)
from .io_utils import (
    atomic_write_text,
    dump_json,
    format_ctm_row,
    read_ctm,
    read_jsonl,
    read_wav,
    write_ctm,
    write_json,
)
from .numcore import derive_seed, make_rng
from .transducer import (
    TRAIN_MODES,
    TrainingExample,
    adapt,
    beam_search,
    build_model,
    ci_phone_forward,
    encode,
    group_pieces_into_words,
    load_checkpoint,
    read_nbest_jsonl,
    run_training,
    save_checkpoint,
    write_nbest_jsonl,
)

logger = logging.getLogger("rnntkit")


@dataclass(frozen=True)
class Config:
    """Flat tunables shared across subcommands; file keys and --set overrides
    use these exact names."""

    # model topology
    hidden_dim: int = 32
    lower_layers: int = 1
    upper_layers: int = 2
    prediction_layers: int = 1
    embed_dim: int = 16
    joint_dim: int = 32
    branch_layers: int = 1
    # decoding
    beam_width: int = 8
    nbest: int = 4
    max_symbols: int = 3
    # training
    train_mode: str = "mtl"
    steps: int = 200
    lr: float = 0.05
    batch_size: int = 1
    alpha: float = 0.1
    freeze_lower: int = 1
    # splicing
    mix_ratio: float = 1.0
    on_unresolvable: str = "abort"
    # corpus synthesis
    num_utterances: int = 40
    word_order: str = "ascending"
    noise: float = 0.25
    silence_prob: float = 0.3
    min_words: int = 2
    max_words: int = 4
    min_frames: int = 2
    max_frames: int = 5
    sample_rate: int = 256
    feature_dim: int = 8
    # confidence
    weight_mode: str = "posterior"
    conf_hidden_dim: int = 16
    conf_epochs: int = 200
    conf_lr: float = 0.1
    conf_batch_size: int = 16
    # alignment
    optional_silence: bool = True


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(Config)}


def _coerce(key: str, raw: str):
    kind = _CONFIG_FIELDS[key]
    if kind in (bool, "bool"):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: {raw!r} is not a boolean")
    caster = {int: int, float: float, str: str,
              "int": int, "float": float, "str": str}[kind]
    try:
        return caster(raw.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{key}: {raw!r} is not a {caster.__name__}") from exc


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; blank lines and # comments ignored."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(config_path=None, overrides=()) -> Config:
    """Defaults, then the config file, then --set overrides."""
    values: dict = {}
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    cfg = Config(**values)
    if cfg.train_mode not in TRAIN_MODES:
        raise ConfigurationError(f"train_mode must be one of {TRAIN_MODES}")
    if cfg.word_order not in corpus_mod.WORD_ORDERS:
        raise ConfigurationError(f"word_order must be one of {corpus_mod.WORD_ORDERS}")
    if cfg.weight_mode not in conf.WEIGHT_MODES:
        raise ConfigurationError(f"weight_mode must be one of {conf.WEIGHT_MODES}")
    if cfg.beam_width < cfg.nbest or cfg.nbest < 1:
        raise ConfigurationError("need beam_width >= nbest >= 1")
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    if cfg.freeze_lower < 0:
        raise ConfigurationError("freeze_lower must be >= 0")
    if cfg.mix_ratio < 0:
        raise ConfigurationError("mix_ratio must be >= 0")
    return cfg


def _log_run(command: str, seed: int, cfg: Config) -> None:
    resolved = " ".join(f"{f.name}={getattr(cfg, f.name)}"
                        for f in dataclasses.fields(Config))
    logger.info("command=%s seed=%d %s", command, seed, resolved)


def _emit_report(report: dict, out_path=None) -> None:
    text = dump_json(report)
    if out_path is None:
        sys.stdout.write(text + "\n")
    else:
        atomic_write_text(out_path, text + "\n")


# ---------------------------------------------------------------------------
# shared data plumbing


def _resolve_manifest_paths(rows, base_dir: Path) -> list[dict]:
    out = []
    for row in rows:
        row = dict(row)
        p = Path(row["audio_path"])
        if not p.is_absolute():
            row["audio_path"] = str((base_dir / p).resolve())
        out.append(row)
    return out


def load_manifest_rows(manifest_path) -> list[dict]:
    manifest_path = Path(manifest_path)
    return _resolve_manifest_paths(read_jsonl(manifest_path), manifest_path.parent)


def _features_for_row(row: dict, feature_dim: int) -> np.ndarray:
    samples, _ = read_wav(row["audio_path"])
    return corpus_mod.features_from_samples(samples, feature_dim)


def _phone_rows_by_utt(corpus_dir: Path) -> dict[str, list]:
    rows: dict[str, list] = {}
    ctm = corpus_dir / corpus_mod.PHONE_CTM_FILE
    if ctm.exists():
        for row in read_ctm(ctm):
            rows.setdefault(row.utt_id, []).append(row)
    return rows


def examples_from_manifest(rows, meta: corpus_mod.CorpusMeta,
                           phone_rows: dict[str, list] | None = None) -> list[TrainingExample]:
    """TrainingExamples with frame-wise phone targets where alignment rows
    exist for the utterance (synthetic rows only; spliced rows have none)."""
    vocab = meta.vocab
    examples = []
    for row in rows:
        features = _features_for_row(row, meta.feature_dim)
        targets = corpus_mod.tokenize_text(row["text"].split(), vocab)
        phone_targets = None
        if phone_rows is not None and row["utt_id"] in phone_rows:
            phone_targets = corpus_mod.frame_targets_from_rows(
                phone_rows[row["utt_id"]], meta.frame_shift,
                features.shape[0], meta)
        examples.append(TrainingExample(
            features=features, targets=targets, phone_targets=phone_targets,
            utt_id=row["utt_id"], origin=row.get("origin", "real")))
    return examples


def _corpus_spec_from_config(cfg: Config, seed: int) -> corpus_mod.SyntheticCorpusSpec:
    return corpus_mod.SyntheticCorpusSpec(
        noise=cfg.noise, min_words=cfg.min_words, max_words=cfg.max_words,
        min_frames=cfg.min_frames, max_frames=cfg.max_frames,
        num_utterances=cfg.num_utterances, word_order=cfg.word_order,
        silence_prob=cfg.silence_prob, seed=seed,
        sample_rate=cfg.sample_rate, feature_dim=cfg.feature_dim)


def _decode_one(item, model, beam_width, n, max_symbols):
    utt_id, features = item
    return beam_search(features, model, beam_width=beam_width, n=n,
                       max_symbols=max_symbols, utt_id=utt_id)


def decode_manifest(rows, meta, model, cfg: Config, jobs: int = 1):
    items = [(row["utt_id"], _features_for_row(row, meta.feature_dim))
             for row in rows]
    worker = partial(_decode_one, model=model, beam_width=cfg.beam_width,
                     n=cfg.nbest, max_symbols=cfg.max_symbols)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, items))
    return [worker(item) for item in items]


def _nbest_and_refs(nbest_path, corpus_dir):
    nbests = read_nbest_jsonl(nbest_path)
    meta = corpus_mod.load_corpus_meta(corpus_dir)
    refs = {row["utt_id"]: row["text"].split()
            for row in corpus_mod.load_manifest(corpus_dir)}
    missing = [nb.utt_id for nb in nbests if nb.utt_id not in refs]
    if missing:
        raise DataError(f"utterances missing from the reference manifest: {missing}")
    return nbests, meta, refs


def _feature_rows(nbests, meta, refs, mode: str):
    """(utt_id, word_index, WordFeatures, label) rows for every top-1 word."""
    rows = []
    vocab = meta.vocab
    for nb in nbests:
        if not nb.hyps:
            continue
        feats = conf.word_features(nb, vocab, mode)
        hyp_words = [f.word for f in feats]
        labels = conf.label_words(hyp_words, refs[nb.utt_id])
        for idx, (f, label) in enumerate(zip(feats, labels)):
            rows.append((nb.utt_id, idx, f, label))
    return rows


def _feature_matrix(rows):
    x = np.array([f.vector() for _, _, f, _ in rows], dtype=np.float64)
    y = np.array([label for _, _, _, label in rows], dtype=np.float64)
    return x, y


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_corpus(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("make-corpus", args.seed, cfg)
    spec = _corpus_spec_from_config(cfg, args.seed)
    out_dir = Path(args.out_dir)
    corpus_mod.make_corpus(spec, out_dir)
    return {"out_dir": str(out_dir), "utterances": spec.num_utterances,
            "words": list(spec.words)}


def cmd_build_inventory(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("build-inventory", args.seed, cfg)
    inv = splicer_mod.build_inventory(
        args.alignments, Path(args.audio_dir).resolve(), args.level)
    splicer_mod.save_inventory(inv, args.out_file)
    table = inv.word_map if args.level == splicer_mod.WORD_LEVEL else inv.phone_map
    return {"out": str(args.out_file), "level": args.level, "units": len(table),
            "segments": sum(len(refs) for refs in table.values())}


def cmd_splice(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("splice", args.seed, cfg)
    inventory = splicer_mod.load_inventory(args.inventory[0])
    for extra in args.inventory[1:]:
        inventory = inventory.merged(splicer_mod.load_inventory(extra))
    lexicon = splicer_mod.Lexicon.from_file(args.lexicon)
    texts = []
    for line in Path(args.texts).read_text().splitlines():
        if line.strip():
            texts.append(tuple(line.split()))
    real_rows = load_manifest_rows(args.real_manifest) if args.real_manifest else []
    rng = make_rng(derive_seed(args.seed, "splice"))
    rows, skipped = splicer_mod.build_adaptation_set(
        texts, inventory, lexicon, real_rows, cfg.mix_ratio, rng,
        args.out_dir, on_unresolvable=cfg.on_unresolvable)
    origins = [r["origin"] for r in rows]
    return {"out_dir": str(args.out_dir), "spliced": origins.count("spliced"),
            "real": origins.count("real"),
            "skipped": [" ".join(t) for t in skipped]}


def cmd_train(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("train", args.seed, cfg)
    corpus_dir = Path(args.corpus)
    meta = corpus_mod.load_corpus_meta(corpus_dir)
    rows = _resolve_manifest_paths(corpus_mod.load_manifest(corpus_dir), corpus_dir)
    needs_phones = cfg.train_mode in ("mtl", "ce-branch-only")
    phone_rows = _phone_rows_by_utt(corpus_dir) if needs_phones else None
    examples = examples_from_manifest(rows, meta, phone_rows)
    model = build_model(
        meta.vocab, input_dim=meta.feature_dim, hidden_dim=cfg.hidden_dim,
        lower_layers=cfg.lower_layers, upper_layers=cfg.upper_layers,
        prediction_layers=cfg.prediction_layers, embed_dim=cfg.embed_dim,
        joint_dim=cfg.joint_dim, phones=meta.phones,
        branch_layers=cfg.branch_layers, seed=derive_seed(args.seed, "init"))
    model, history = run_training(
        model, examples, mode=cfg.train_mode, steps=cfg.steps, lr=cfg.lr,
        seed=derive_seed(args.seed, "train"), batch_size=cfg.batch_size,
        alpha=cfg.alpha)
    out_dir = Path(args.out_dir)
    save_checkpoint(model, out_dir)
    losses = [h.total for h in history]
    write_json(out_dir / "history.json", {"total_loss": losses})
    return {"out_dir": str(out_dir), "steps": len(history),
            "first_loss": losses[0], "final_loss": losses[-1]}


def cmd_adapt(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("adapt", args.seed, cfg)
    meta = corpus_mod.load_corpus_meta(args.corpus)
    rows = load_manifest_rows(args.manifest)
    examples = examples_from_manifest(rows, meta, phone_rows=None)
    model = load_checkpoint(args.model)
    adapted = adapt(model, examples, freeze_lower=cfg.freeze_lower, lr=cfg.lr,
                    steps=cfg.steps, seed=derive_seed(args.seed, "adapt"),
                    batch_size=cfg.batch_size)
    out_dir = Path(args.out_dir)
    save_checkpoint(adapted, out_dir)
    return {"out_dir": str(out_dir), "steps": cfg.steps,
            "frozen_lower_layers": cfg.freeze_lower}


def cmd_decode(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("decode", args.seed, cfg)
    corpus_dir = Path(args.corpus)
    meta = corpus_mod.load_corpus_meta(corpus_dir)
    if args.manifest:
        rows = load_manifest_rows(args.manifest)
    else:
        rows = _resolve_manifest_paths(corpus_mod.load_manifest(corpus_dir), corpus_dir)
    model = load_checkpoint(args.model)
    nbests = decode_manifest(rows, meta, model, cfg, jobs=args.jobs)
    write_nbest_jsonl(args.out_file, nbests, meta.vocab)
    return {"out": str(args.out_file), "utterances": len(nbests),
            "beam_width": cfg.beam_width, "nbest": cfg.nbest}


def cmd_align(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("align", args.seed, cfg)
    corpus_dir = Path(args.corpus)
    meta = corpus_mod.load_corpus_meta(corpus_dir)
    rows = {row["utt_id"]: row for row in _resolve_manifest_paths(
        corpus_mod.load_manifest(corpus_dir), corpus_dir)}
    model = load_checkpoint(args.model)
    lexicon = splicer_mod.Lexicon.from_simple(meta.lexicon)
    shift = meta.frame_shift
    lines = []
    aligned = 0
    skipped = []
    for nb in read_nbest_jsonl(args.nbest):
        if nb.utt_id not in rows:
            raise DataError(f"{nb.utt_id} missing from the corpus manifest")
        if not nb.hyps or not nb.top.token_ids:
            continue
        words = [w for w, _ in group_pieces_into_words(nb.top.token_ids, meta.vocab,
                                                       strict=False)]
        features = _features_for_row(rows[nb.utt_id], meta.feature_dim)
        lower, _ = encode(features, model)
        pg = ci_phone_forward(lower, model)
        try:
            seq = timing_mod.expand_to_phones(words, lexicon, cfg.optional_silence,
                                              meta.phones)
            result = timing_mod.viterbi_align(pg, seq)
        except (LexiconError, InfeasibleAlignmentError) as exc:
            logger.info("skipping %s: %s", nb.utt_id, exc)
            skipped.append(nb.utt_id)
            continue
        for w in result.words:
            start = w.start_frame * shift
            dur = (w.end_frame + 1 - w.start_frame) * shift
            lines.append(format_ctm_row(nb.utt_id, float(start), float(dur), w.word))
        aligned += 1
    write_ctm(args.out_file, lines)
    return {"out": str(args.out_file), "utterances": aligned, "words": len(lines),
            "skipped": skipped}


def _ctm_triples_by_utt(path) -> dict[str, list]:
    out: dict[str, list] = {}
    for row in read_ctm(path):
        out.setdefault(row.utt_id, []).append(
            (row.unit, float(row.start), float(row.end)))
    return out


def cmd_timing_eval(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("timing-eval", args.seed, cfg)
    hyp = _ctm_triples_by_utt(args.hyp)
    ref = _ctm_triples_by_utt(args.ref)
    shared = [u for u in ref if u in hyp]
    if not shared:
        raise DataError("no common utterances between the two alignment files")
    hyp_all, ref_all = [], []
    for utt in shared:
        hyp_words = [w for w, _, _ in hyp[utt]]
        ref_words = [w for w, _, _ in ref[utt]]
        if hyp_words != ref_words:
            logger.info("skipping %s: word sequences differ", utt)
            continue
        hyp_all.extend(hyp[utt])
        ref_all.extend(ref[utt])
    metrics = timing_mod.timing_metrics_from_pairs(hyp_all, ref_all)
    return {
        "ave_st_ms": metrics.ave_st_ms,
        "ave_et_ms": metrics.ave_et_ms,
        "pct_ws_lt_200": metrics.pct_ws_lt_200,
        "pct_we_lt_200": metrics.pct_we_lt_200,
        "words": metrics.words,
    }


def cmd_conf_train(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("conf-train", args.seed, cfg)
    if args.features:
        rows = conf.read_feature_csv(args.features)
    else:
        nbests, meta, refs = _nbest_and_refs(args.nbest, args.corpus)
        rows = _feature_rows(nbests, meta, refs, cfg.weight_mode)
    if args.csv_out:
        conf.write_feature_csv(args.csv_out, rows)
    x, y = _feature_matrix(rows)
    clf = conf.train_classifier(
        x, y, hidden_dim=cfg.conf_hidden_dim, epochs=cfg.conf_epochs,
        lr=cfg.conf_lr, batch_size=cfg.conf_batch_size, seed=args.seed)
    conf.save_classifier(clf, args.out_dir)
    return {"out_dir": str(args.out_dir), "examples": len(rows),
            "positives": int(y.sum()), "negatives": int((1 - y).sum())}


def cmd_conf_eval(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("conf-eval", args.seed, cfg)
    if args.features:
        rows = conf.read_feature_csv(args.features)
    else:
        nbests, meta, refs = _nbest_and_refs(args.nbest, args.corpus)
        rows = _feature_rows(nbests, meta, refs, cfg.weight_mode)
    if args.csv_out:
        conf.write_feature_csv(args.csv_out, rows)
    x, y = _feature_matrix(rows)
    clf = conf.load_classifier(args.classifier)
    return conf.evaluation_report(clf, x, y)


def cmd_wer(args) -> dict:
    cfg = resolve_config(args.config, args.set)
    _log_run("wer", args.seed, cfg)
    nbests, meta, refs = _nbest_and_refs(args.nbest, args.corpus)
    vocab = meta.vocab
    errors = 0
    ref_words = 0
    per_utt = {}
    for nb in nbests:
        hyp_words = ([w for w, _ in group_pieces_into_words(
            nb.top.token_ids, vocab, strict=False)] if nb.hyps else [])
        ref = refs[nb.utt_id]
        dist = conf.edit_distance(hyp_words, ref)
        errors += dist
        ref_words += len(ref)
        per_utt[nb.utt_id] = dist / len(ref) if ref else 0.0
    if ref_words == 0:
        raise DataError("reference contains no words")
    return {"wer": errors / ref_words, "errors": errors,
            "ref_words": ref_words, "utterances": len(nbests),
            "per_utt": per_utt}


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="flat key=value config file")
    sub.add_argument("--seed", type=int, default=0, help="master random seed")
    sub.add_argument("--jobs", type=int, default=1, help="utterance-level parallelism")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    sub.add_argument("--out", default=None, help="write the JSON report here "
                     "instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnntkit",
                                     description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("make-corpus", help="synthesize a toy aligned corpus")
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_make_corpus)

    p = subs.add_parser("build-inventory", help="cut segments from an aligned corpus")
    p.add_argument("--alignments", required=True, help="CTM file")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--level", required=True,
                   choices=[splicer_mod.WORD_LEVEL, splicer_mod.PHONE_LEVEL])
    p.add_argument("--inventory-out", dest="out_file", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_inventory)

    p = subs.add_parser("splice", help="build a spliced adaptation set")
    p.add_argument("--inventory", required=True, nargs="+")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--texts", required=True, help="one transcript per line")
    p.add_argument("--real-manifest", default=None)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_splice)

    p = subs.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("adapt", help="adapt a model on a manifest, lower layers frozen")
    p.add_argument("--corpus", required=True, help="corpus dir providing meta")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_adapt)

    p = subs.add_parser("decode", help="beam-search decode a manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--manifest", default=None, help="defaults to the corpus manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--nbest-out", dest="out_file", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("align", help="second-pass word timings for decoded output")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--nbest", required=True)
    p.add_argument("--ctm-out", dest="out_file", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_align)

    p = subs.add_parser("timing-eval", help="score hypothesis timings against reference")
    p.add_argument("--hyp", required=True, help="hypothesis CTM")
    p.add_argument("--ref", required=True, help="reference CTM")
    _add_common(p)
    p.set_defaults(func=cmd_timing_eval)

    p = subs.add_parser("conf-train", help="train the word confidence classifier")
    p.add_argument("--features", default=None, help="feature CSV to train from")
    p.add_argument("--nbest", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--csv-out", default=None)
    p.add_argument("--out-dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_conf_train)

    p = subs.add_parser("conf-eval", help="evaluate confidence AUPR")
    p.add_argument("--features", default=None)
    p.add_argument("--nbest", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--csv-out", default=None)
    p.add_argument("--classifier", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_conf_eval)

    p = subs.add_parser("wer", help="word error rate of decoded output")
    p.add_argument("--nbest", required=True)
    p.add_argument("--corpus", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_wer)

    return parser


def _validate_sources(args) -> None:
    if args.command in ("conf-train", "conf-eval"):
        from_csv = args.features is not None
        from_decode = args.nbest is not None and args.corpus is not None
        if not from_csv and not from_decode:
            raise ConfigurationError(
                "need either --features or both --nbest and --corpus")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate_sources(args)
        report = args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        sys.stderr.write(f"rnntkit {args.command}: {type(exc).__name__}: {exc}\n")
        return 1
    _emit_report(report, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
