"""Command-line entry point: ``python -m unitvc <command> ...``.

Exit codes: 0 success, 1 partial failure (some inputs failed), 2 usage or
configuration error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import conversion, evaluation, features, training
from .adapters import read_embedding_file
from .config import SystemConfig
from .signal_features import load_waveform, save_waveform
from .synth import toy_corpus
from .units import UnitVocabulary, fit_vocabulary

log = logging.getLogger("unitvc")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2
CACHE_ENV = "UNITVC_CACHE"
VOCAB_FILE = "_vocab.npz"
CHECKPOINT_FILE = "latest.pt"
TRAIN_LOG = "train_log.jsonl"


class UsageError(Exception):
    pass


# -- manifests -----------------------------------------------------------------

def read_manifest(path):
    """Entries ``(id, wav_path, label)`` from a tab-separated manifest.

    Each line is ``wav`` or ``id<TAB>wav[<TAB>label]``; ``#`` starts a comment.
    Relative WAV paths resolve against the manifest's directory.
    """
    path = Path(path)
    entries = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) == 1:
            wav = cols[0]
            utt_id, label = Path(wav).stem, ""
        elif len(cols) in (2, 3):
            utt_id, wav = cols[0], cols[1]
            label = cols[2] if len(cols) == 3 else ""
        else:
            raise UsageError(f"{path}:{lineno}: expected 1 to 3 tab-separated columns")
        entries.append((utt_id, str(path.parent / wav), label))
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        raise UsageError(f"{path}: duplicate utterance ids")
    return entries


def read_pairs(path):
    """Eval pairs ``(id, reference_wav, converted_wav)``; id column optional."""
    path = Path(path)
    pairs = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) == 2:
            cols = [f"pair{len(pairs):04d}"] + cols
        if len(cols) != 3:
            raise UsageError(f"{path}:{lineno}: expected [id<TAB>]reference<TAB>converted")
        pairs.append((cols[0], str(path.parent / cols[1]), str(path.parent / cols[2])))
    return pairs


# -- helpers -------------------------------------------------------------------

def load_config(args):
    try:
        cfg = SystemConfig.load(args.config) if args.config else (
            SystemConfig.toy() if args.toy else SystemConfig())
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load config: {exc}") from exc
    if args.seed is not None:
        cfg.train.seed = cfg.units.seed = cfg.adapters.seed = args.seed
    return cfg


def cache_dir(args):
    path = args.cache or os.environ.get(CACHE_ENV)
    if not path:
        raise UsageError(f"no cache directory: pass --cache or set {CACHE_ENV}")
    return Path(path)


def cache_fingerprint(cfg, vocab):
    """Feature-config hash tied to the vocabulary the units were quantized with."""
    tag = vocab.digest()[:8] if vocab is not None else "adapter"
    return f"{cfg.feature_fingerprint()}-{tag}"


def load_vocab(cache):
    path = cache / VOCAB_FILE
    return UnitVocabulary.load(path) if path.is_file() else None


# -- commands ------------------------------------------------------------------

def cmd_config(args):
    cfg = load_config(args)
    text = cfg.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"# fingerprint {cfg.fingerprint()}", file=sys.stderr)
    return EXIT_OK


def cmd_make_toy(args):
    """Write the bundled synthetic corpus and a manifest for it."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, wave in enumerate(toy_corpus(args.n, seed=args.seed or 0, duration=args.duration)):
        name = f"toy{i:03d}"
        save_waveform(out / f"{name}.wav", wave)
        lines.append(f"{name}\t{name}.wav\tspk{i % 5}")
    (out / "manifest.tsv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines)} utterances to {out}")
    return EXIT_OK


def cmd_extract(args):
    cfg = load_config(args)
    cache = cache_dir(args)
    cache.mkdir(parents=True, exist_ok=True)
    entries = read_manifest(args.manifest)
    failed = []

    waves = {}
    for utt_id, path, _label in entries:
        try:
            waves[utt_id] = load_waveform(path, cfg.features.sample_rate)
        except (OSError, ValueError) as exc:
            failed.append((utt_id, str(exc)))

    vocab = load_vocab(cache)
    if vocab is None and not cfg.adapters.unit_command:
        if not waves:
            raise UsageError("no readable audio to fit the unit vocabulary on")
        vocab = fit_vocabulary(list(waves.values()), cfg.units.vocab_size, cfg.features,
                               seed=cfg.units.seed, max_iter=cfg.units.kmeans_iters)
        vocab.save(cache / VOCAB_FILE)
        print(f"fitted {vocab.size}-unit vocabulary")
    elif vocab is not None and vocab.size != cfg.units.vocab_size:
        raise UsageError(f"cached vocabulary has {vocab.size} units, config asks for "
                         f"{cfg.units.vocab_size}; use a fresh cache directory")
    fingerprint = cache_fingerprint(cfg, vocab)

    done = skipped = 0
    for utt_id, path, label in entries:
        if utt_id not in waves:
            continue
        wave = waves[utt_id]
        _, meta_path = features.record_paths(cache, utt_id)
        if meta_path.is_file():
            try:
                meta = features.read_meta(meta_path)
                if (meta["content_hash"] == features.content_hash(wave.samples)
                        and meta["fingerprint"] == fingerprint and meta.get("label", "") == label):
                    skipped += 1
                    continue
            except (ValueError, KeyError):
                pass  # unreadable sidecar: recompute
        try:
            feats = features.extract_utterance(wave, cfg, vocab, utt_id, wav_path=path, label=label)
            features.save_record(cache, feats, fingerprint)
            done += 1
        except Exception as exc:  # per-file failure is reported, others continue
            failed.append((utt_id, str(exc)))

    print(f"extracted {done}, unchanged {skipped}, failed {len(failed)}")
    for utt_id, reason in failed:
        print(f"  FAILED {utt_id}: {reason}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_train(args):
    cfg = load_config(args)
    cache = cache_dir(args)
    vocab = load_vocab(cache)
    if vocab is None and not cfg.adapters.unit_command:
        raise UsageError(f"{cache} has no unit vocabulary; run extract first")
    try:
        records = features.load_cache(cache, cache_fingerprint(cfg, vocab))
    except ValueError as exc:
        raise UsageError(f"cache does not match config: {exc}") from exc
    if not records:
        raise UsageError(f"no cache records in {cache}")

    ckpt_dir = Path(args.checkpoints)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    latest = ckpt_dir / CHECKPOINT_FILE
    if latest.is_file():
        try:
            state = training.load_checkpoint(latest, cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if vocab is not None and state.vocab is not None and state.vocab.digest() != vocab.digest():
            raise UsageError("checkpoint vocabulary differs from the cache vocabulary")
        print(f"resuming from step {state.step}")
    else:
        state = training.ModelState.create(cfg, vocab)

    steps = args.steps if args.steps is not None else cfg.train.steps
    trainer = training.Trainer(state)
    reports = training.fit(trainer, records, steps, log_path=ckpt_dir / TRAIN_LOG,
                           checkpoint_dir=ckpt_dir, checkpoint_every=args.checkpoint_every)
    if reports:
        last = reports[-1]
        print(f"step {state.step}: recon_l1 {last.recon_l1:.4f} total_gen {last.total_gen:.4f}")
    skipped = sum(r.skipped for r in reports)
    if skipped:
        print(f"{skipped} steps skipped on non-finite values", file=sys.stderr)
    return EXIT_OK


def _load_state(args, cfg=None):
    try:
        return training.load_checkpoint(args.checkpoint, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_convert(args):
    cfg = load_config(args) if args.config else None
    attrs, default_source = conversion.PRESETS[args.transfer]
    source = args.prosody_source or ("gt" if default_source == conversion.GROUND_TRUTH else "predicted")
    if source == "gt" and conversion.RHYTHM in attrs:
        raise UsageError("--prosody-source gt cannot be combined with rhythm transfer "
                         f"(--transfer {args.transfer})")
    state = _load_state(args, cfg)
    entry = {"source": args.source, "target": args.target, "transfer": args.transfer,
            "prosody_source": source}
    req = conversion.request_from_entry(entry, state)
    result = conversion.convert(req, state, seed=args.seed or 0)
    wave = conversion.render_waveform(result.mel, state.config, seed=args.seed)
    out = Path(args.out)
    conversion.write_output(out.parent, out.stem, result, wave)
    if args.save_mel:
        np.save(out.with_suffix(".mel.npy"), result.mel)
    print(f"wrote {out} ({result.n_frames} frames)")
    return EXIT_OK


def cmd_batch_convert(args):
    cfg = load_config(args) if args.config else None
    state = _load_state(args, cfg)
    manifest = json.loads(Path(args.manifest).read_text())
    report = conversion.batch_convert(manifest, state, args.out, seed=args.seed or 0)
    (Path(args.out) / "batch_report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"converted {len(report['succeeded'])}, failed {len(report['failed'])}")
    return EXIT_PARTIAL if report["failed"] else EXIT_OK


def cmd_eval(args):
    cfg = load_config(args)
    if args.checkpoint:
        cfg = _load_state(args, None).config
    pairs = read_pairs(args.pairs)
    embeddings = None
    if args.ref_embeddings or args.conv_embeddings:
        if not (args.ref_embeddings and args.conv_embeddings):
            raise UsageError("--ref-embeddings and --conv-embeddings go together")
        embeddings = (read_embedding_file(args.ref_embeddings),
                      read_embedding_file(args.conv_embeddings))
    report = evaluation.evaluate_pairs(pairs, cfg.features, embeddings)
    if args.report:
        report.save(args.report)
    print(report.summary())
    return EXIT_OK


def cmd_export_embeddings(args):
    cfg = load_config(args) if args.config else None
    state = _load_state(args, cfg)
    entries = read_manifest(args.manifest)
    n = evaluation.export_attribute_embeddings(entries, args.kind, state, args.out)
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--toy", action="store_true", help="start from the small CPU config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="unitvc", description="Unit-based voice conversion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config", parents=[common], help="print the configuration")
    p.add_argument("--dump", action="store_true", help="print every key with its value (default)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("make-toy", parents=[common], help="write the synthetic toy corpus")
    p.add_argument("out")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--duration", type=float, default=1.0)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("extract", parents=[common], help="build the feature cache")
    p.add_argument("manifest")
    p.add_argument("--cache", help=f"cache directory (default: ${CACHE_ENV})")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train or resume from the cache")
    p.add_argument("--cache", help=f"cache directory (default: ${CACHE_ENV})")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--steps", type=int, help="steps to run now (default: train.steps)")
    p.add_argument("--checkpoint-every", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", parents=[common], help="convert one utterance")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transfer", choices=sorted(conversion.PRESETS), default="speaker")
    p.add_argument("--prosody-source", choices=("gt", "predicted"))
    p.add_argument("--save-mel", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("batch-convert", parents=[common], help="convert a JSON list of requests")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_batch_convert)

    p = sub.add_parser("eval", parents=[common], help="prosody PCC and embedding cosine")
    p.add_argument("pairs")
    p.add_argument("--checkpoint", help="take feature settings from this checkpoint")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--ref-embeddings")
    p.add_argument("--conv-embeddings")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embeddings", parents=[common], help="dump attribute vectors")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=("p", "r", "s"), default="p")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
