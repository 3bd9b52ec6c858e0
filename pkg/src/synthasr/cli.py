"""Command-line entry point.

Exit status: 0 on success, 1 for bad arguments or configuration, 2 when a
processing stage fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dsp
from .augment import SPEED_FACTORS, silence_remove, speed_perturb
from .pipeline.config import ConfigError, load_config
from .pipeline.features import (FeatureConfig, augment_features, corpus_stats, featurize, load_features,
                                stats_from_dict, stats_to_dict)
from .pipeline.manifest import CorpusManifest, ManifestError, Record, ingest
from .pipeline.mixing import MixPlan, MixPolicy, build_training_mix
from .pipeline.parallel import worker_count
from .pipeline.report import ReportRow, write_report
from .text import DEFAULT_VOCAB, BpeModel, TokenVocab, bpe_learn, normalize_text, word_frequencies

log = logging.getLogger("synthasr")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _normalized(root, kind, manifest, stats):
    uids = [r.utterance_id for r in manifest]
    return [dsp.apply_norm(f, stats).data.astype(np.float32) for f in load_features(root, kind, uids)]


# -- subcommands -------------------------------------------------------------

def cmd_featurize(a):
    manifest = ingest(a.manifest)
    featurize(manifest, a.out, a.kinds, FeatureConfig())
    ids = [r.utterance_id for r in manifest]
    stats = {k: stats_to_dict(corpus_stats(a.out, k, ids)) for k in a.kinds}
    Path(a.out, "stats.json").write_text(json.dumps(stats))
    print(f"featurized {len(manifest)} utterances into {a.out}")


def cmd_augment(a):
    manifest = ingest(a.manifest)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.mode == "specaug":
        work = out / "features"
        featurize(manifest, work, ("mfcc",), FeatureConfig())
        stats = corpus_stats(work, "mfcc", [r.utterance_id for r in manifest])
        for rec, f in zip(manifest, _normalized(work, "mfcc", manifest, stats)):
            aug = augment_features(dsp.FeatureMatrix(f, "mfcc"), a.seed, rec.utterance_id)
            dsp.write_features(out / f"{rec.utterance_id}.fea", aug)
        print(f"wrote {len(manifest)} augmented feature files to {out}")
        return
    records = []
    for rec in manifest:
        w = dsp.read_wav(rec.audio_path)
        variants = ([(f"sp{f:g}", speed_perturb(w, f)) for f in a.factors] if a.mode == "speed"
                    else [("trim", silence_remove(w))])
        for tag, v in variants:
            if len(v) == 0:
                log.warning("%s: nothing left after %s", rec.utterance_id, tag)
                continue
            uid = f"{rec.utterance_id}-{tag}"
            path = out / f"{uid}.wav"
            dsp.write_wav(path, v)
            records.append(Record(uid, str(path.resolve()), rec.transcript, rec.speaker_id,
                                  dsp.wav_duration(path), rec.origin))
    CorpusManifest(records, []).save(out / "manifest.jsonl")
    print(f"wrote {len(records)} utterances to {out}")


def _tts_data(manifest, workdir):
    featurize(manifest, workdir, ("log_mel", "linear_mag"), FeatureConfig())
    ids = [r.utterance_id for r in manifest]
    return {k: corpus_stats(workdir, k, ids) for k in ("log_mel", "linear_mag")}


def cmd_train_tts(a):
    from .tts import TrainConfig, TtsConfig, TtsExample, train_tts

    manifest = ingest(a.manifest)
    work = Path(a.out).with_suffix(".features")
    stats = _tts_data(manifest, work)
    mels = _normalized(work, "log_mel", manifest, stats["log_mel"])
    examples = [TtsExample(np.asarray(DEFAULT_VOCAB.encode(normalize_text(r.transcript))), m)
                for r, m in zip(manifest, mels)]
    model_cfg = TtsConfig(dec_hidden=a.dec_hidden, seed=a.seed)
    _, trainer = train_tts(examples, model_cfg, TrainConfig(a.epochs, a.batch_size, a.lr, seed=a.seed))
    trainer.save(a.out, {"model_config": model_cfg.to_dict(), "kind": "tts",
                         "mel_stats": stats_to_dict(stats["log_mel"])})
    print(f"tts loss {trainer.history[0]:.4f} -> {trainer.history[-1]:.4f}; saved {a.out}")


def cmd_train_mel2lin(a):
    from .tts import Mel2LinExample, TrainConfig, train_mel2lin

    manifest = ingest(a.manifest)
    work = Path(a.out).with_suffix(".features")
    stats = _tts_data(manifest, work)
    mels = _normalized(work, "log_mel", manifest, stats["log_mel"])
    lins = _normalized(work, "linear_mag", manifest, stats["linear_mag"])
    net, trainer = train_mel2lin([Mel2LinExample(m, x) for m, x in zip(mels, lins)], a.hidden,
                                 TrainConfig(a.epochs, a.batch_size, a.lr, seed=a.seed))
    trainer.save(a.out, {"hidden": a.hidden, "n_mels": net.n_mels, "n_linear": lins[0].shape[1],
                         "kind": "mel2lin", "linear_stats": stats_to_dict(stats["linear_mag"])})
    print(f"mel2lin loss {trainer.history[0]:.4f} -> {trainer.history[-1]:.4f}; saved {a.out}")


def cmd_synthesize(a):
    from . import nn
    from .pipeline.synthesis import Voice, generate_synthetic, speaker_embeddings
    from .tts import load_mel2lin, load_tts
    from .vocoder import GriffinLimConfig

    tts = load_tts(a.tts)
    mel2lin = load_mel2lin(a.mel2lin)
    mel_stats = stats_from_dict(nn.load_checkpoint(a.tts)[2]["mel_stats"])
    lin_stats = stats_from_dict(nn.load_checkpoint(a.mel2lin)[2]["linear_stats"])
    voice = Voice(tts, mel2lin, lin_stats, max_steps=a.max_steps)
    donors_manifest = ingest(a.donors)
    cfg = FeatureConfig()
    fb = cfg.filterbank()
    donors, seen = [], set()
    for rec in donors_manifest:
        if rec.speaker_id in seen:
            continue
        seen.add(rec.speaker_id)
        mel = dsp.log_mel(dsp.read_wav(rec.audio_path), cfg.stft, fb)
        donors.append((rec.speaker_id, dsp.apply_norm(mel, mel_stats).data))
    donors.sort(key=lambda d: d[0])
    lines = [ln.strip() for ln in Path(a.text).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"{a.text}: no text lines")
    out = Path(a.out)
    manifest = generate_synthetic(lines, voice, speaker_embeddings(voice, donors), out / "wav", a.seed,
                                  GriffinLimConfig(n_iters=a.gl_iters, deemphasis=True))
    manifest.save(out / "synthetic.jsonl")
    print(f"synthesized {len(manifest)} of {len(lines)} lines into {out}")


def cmd_mix(a):
    real = ingest(a.real)
    synth = ingest(a.synth) if a.synth else None
    policy = MixPolicy.parse_ratio(a.ratio, a.hours)
    plan = build_training_mix(real, synth, policy, a.checkpoints, a.seed)
    plan.save(a.out)
    print(f"plan: {a.checkpoints} checkpoints, real {plan.origin_hours('real'):.4f} h, "
          f"synthetic {plan.origin_hours('synthetic'):.4f} h")


def cmd_train_asr(a):
    from .asr import AsrConfig, AttentionAsr, asr_batcher, asr_trainer
    from .pipeline.experiment import Subwords

    real = ingest(a.manifest)
    synth = ingest(a.synth) if a.synth else None
    corpus = CorpusManifest(real.records + (synth.records if synth else []), [])
    work = Path(a.out).with_suffix(".features")
    featurize(corpus, work, ("mfcc",), FeatureConfig())
    stats = corpus_stats(work, "mfcc", [r.utterance_id for r in real])
    if a.bpe:
        bpe = BpeModel.load(a.bpe)
    else:
        bpe = bpe_learn(word_frequencies(normalize_text(r.transcript, append_eos=False) for r in real), a.merges)
    alphabet = sorted({c for r in corpus for c in normalize_text(r.transcript, append_eos=False) if c != " "})
    sub = Subwords(bpe, TokenVocab.from_model(bpe, alphabet))
    feats = _normalized(work, "mfcc", corpus, stats)
    items = {r.utterance_id: (f, sub.encode(r.transcript)) for r, f in zip(corpus, feats)}
    if a.plan:
        plan = MixPlan.load(a.plan)
    else:
        budget = real.hours * a.epochs / a.checkpoints
        plan = build_training_mix(real, None, MixPolicy(1, 0, budget), a.checkpoints, a.seed)
    cfg = AsrConfig(vocab_size=len(sub.vocab), enc_hidden=a.enc_hidden, dec_hidden=a.dec_hidden,
                    att_dim=a.att_dim, seed=a.seed)
    model = AttentionAsr(cfg)
    trainer = asr_trainer(model, a.lr, seed=a.seed)
    if a.init:
        trainer.load(a.init)
        if a.reset_lr:
            trainer.opt.reset_schedule()
    batcher = asr_batcher(cfg)
    for k, uids in enumerate(plan.checkpoints):
        missing = [u for u in uids if u not in items]
        if missing:
            raise ManifestError(f"plan references unknown utterance(s) {missing[:3]}")
        batch_items = []
        for n, uid in enumerate(uids):
            f, t = items[uid]
            if a.spec_aug:
                f = augment_features(dsp.FeatureMatrix(f, "mfcc"), a.seed, uid, k, n).data
            batch_items.append((f, t))
        loss = trainer.run_epoch(batch_items, batcher, a.batch_size)
        print(f"checkpoint {k + 1}/{len(plan.checkpoints)} loss {loss:.4f}")
    trainer.save(a.out, {"model_config": cfg.to_dict(), "kind": "asr", "tokens": sub.vocab.tokens,
                         "bpe_merges": [list(m) for m in bpe.merges], "mfcc_stats": stats_to_dict(stats)})
    print(f"saved {a.out}")


def cmd_decode(a):
    from . import nn
    from .asr import NgramLM, beam_search, corpus_wer, load_asr
    from .pipeline.experiment import Subwords

    model = load_asr(a.model)
    meta = nn.load_checkpoint(a.model)[2]
    if "tokens" not in meta:
        raise ConfigError(f"{a.model}: checkpoint lacks the subword inventory")
    sub = Subwords(BpeModel([tuple(m) for m in meta["bpe_merges"]]), TokenVocab(meta["tokens"]))
    stats = stats_from_dict(meta["mfcc_stats"])
    lm = NgramLM.load(a.lm) if a.lm else None
    manifest = ingest(a.manifest)
    work = Path(a.out).with_suffix(".features")
    featurize(manifest, work, ("mfcc",), FeatureConfig())
    results, pairs = [], []
    for rec, f in zip(manifest, _normalized(work, "mfcc", manifest, stats)):
        hyp = sub.decode(beam_search(model, f, a.beam, lm, a.lm_weight))
        ref = normalize_text(rec.transcript, append_eos=False)
        pairs.append((hyp, ref))
        results.append({"utterance_id": rec.utterance_id, "hypothesis": hyp, "reference": ref})
    Path(a.out).write_text("".join(json.dumps(r) + "\n" for r in results))
    w = corpus_wer(pairs)
    print(f"WER {100 * w.rate:.2f}% (S={w.substitutions} I={w.insertions} D={w.deletions} N={w.ref_len})")


def cmd_report(a):
    data = json.loads(Path(a.results).read_text())
    rows = data["rows"] if isinstance(data, dict) else data
    if not rows:
        raise ConfigError("no result rows to report")
    parsed = [ReportRow(*r) if isinstance(r, list) else ReportRow(**r) for r in rows]
    _, txt_path = write_report(parsed, a.out)
    print(txt_path.read_text(), end="")


def cmd_run(a):
    from .pipeline.experiment import run_experiment
    from .pipeline.report import to_table

    cfg = load_config(a.config)
    rows = run_experiment(cfg, a.workdir)
    print(to_table(rows), end="")


def build_parser():
    p = _Parser(prog="synthasr", description="TTS-augmented attention ASR pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("featurize", help="extract features for a manifest or directory")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kinds", nargs="+", default=["mfcc"], choices=list(dsp.FEATURE_KINDS))
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("augment", help="speed perturbation, silence trimming or SpecAugment")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["speed", "silence", "specaug"], default="speed")
    s.add_argument("--factors", type=float, nargs="+", default=list(SPEED_FACTORS))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train-tts", help="train the synthesis network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=25)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=3e-3)
    s.add_argument("--dec-hidden", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_tts)

    s = sub.add_parser("train-mel2lin", help="train the mel-to-linear network")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=15)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=3e-3)
    s.add_argument("--hidden", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_mel2lin)

    s = sub.add_parser("synthesize", help="text lines to WAV files and a synthetic manifest")
    s.add_argument("--text", required=True)
    s.add_argument("--tts", required=True)
    s.add_argument("--mel2lin", required=True)
    s.add_argument("--donors", required=True, help="manifest of speaker reference utterances")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gl-iters", type=int, default=1)
    s.add_argument("--max-steps", type=int, default=200)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("mix", help="plan per-checkpoint real/synthetic training data")
    s.add_argument("--real", required=True)
    s.add_argument("--synth")
    s.add_argument("--ratio", default="3:2")
    s.add_argument("--hours", type=float, required=True, help="audio hours per checkpoint")
    s.add_argument("--checkpoints", type=int, default=17)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("train-asr", help="train the recogniser over a data plan")
    s.add_argument("--manifest", required=True, help="real training data")
    s.add_argument("--synth", help="synthetic data referenced by the plan")
    s.add_argument("--plan")
    s.add_argument("--checkpoints", type=int, default=8)
    s.add_argument("--epochs", type=float, default=4.0, help="real-data epochs when no plan is given")
    s.add_argument("--bpe", help="merges file; learned from the transcripts when absent")
    s.add_argument("--merges", type=int, default=40)
    s.add_argument("--init", help="checkpoint to continue from")
    s.add_argument("--reset-lr", action="store_true")
    s.add_argument("--spec-aug", action="store_true")
    s.add_argument("--enc-hidden", type=int, default=128)
    s.add_argument("--dec-hidden", type=int, default=128)
    s.add_argument("--att-dim", type=int, default=128)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=2e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_asr)

    s = sub.add_parser("decode", help="beam search with optional LM fusion; prints WER")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--lm", help="n-gram table")
    s.add_argument("--lm-weight", type=float, default=0.0)
    s.add_argument("--beam", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("report", help="render WER rows as CSV and a table")
    s.add_argument("--results", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="run the whole experiment from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--workdir", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        worker_count()
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # every other failure is a stage failure
        log.debug("stage failure", exc_info=True)
        print(f"stage failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
