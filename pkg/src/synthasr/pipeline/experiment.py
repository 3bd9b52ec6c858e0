"""The full experiment: corpora, features, subword units, LM, TTS,
synthetic data, two-phase ASR training, decoding with an LM-weight sweep and
the WER report.

Phase 1 trains on real data only. Each condition then starts from the
phase-1 checkpoint with the learning rate reset and trains phase 2 on its
own data plan (real only, or the real:synthetic mix) with SpecAugment on or
off. Every checkpoint of either phase presents the same amount of audio.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import dsp
from ..asr import AsrConfig, AsrStepper, AttentionAsr, NgramLM, asr_batcher, asr_trainer, beam_search, corpus_wer
from ..text import (DEFAULT_VOCAB, BpeModel, TokenVocab, bpe_decode, bpe_encode_sentence, bpe_learn, normalize_text,
                    word_frequencies)
from ..tts import Mel2LinExample, TrainConfig, TtsConfig, TtsExample, train_mel2lin, train_tts
from ..vocoder import GriffinLimConfig
from . import toy
from .config import ExperimentConfig
from .features import FeatureConfig, augment_features, corpus_stats, featurize, load_features, stats_to_dict
from .manifest import CorpusManifest, load_manifest
from .mixing import MixPolicy, build_training_mix
from .report import ReportRow, write_report
from .synthesis import Voice, generate_synthetic, speaker_embeddings

log = logging.getLogger(__name__)

EVAL_SPLITS = ("dev_clean", "dev_other", "test_clean", "test_other")


class StageFailure(RuntimeError):
    def __init__(self, stage, error):
        super().__init__(f"stage {stage!r} failed: {error}")
        self.stage = stage
        self.error = error


@dataclass
class Subwords:
    bpe: BpeModel
    vocab: TokenVocab

    def encode(self, text):
        return self.vocab.encode(bpe_encode_sentence(self.bpe, normalize_text(text, append_eos=False)))

    def decode(self, ids):
        return bpe_decode(self.vocab.decode(ids))


def pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or x.std() == 0 or y.std() == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def select_lm_weight(dev_wers: dict) -> float:
    """Weight with the lowest dev WER; the smallest weight wins ties."""
    return min(dev_wers, key=lambda lam: (dev_wers[lam], lam))


class Experiment:
    def __init__(self, cfg: ExperimentConfig, workdir):
        self.cfg = cfg
        self.root = Path(workdir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.results = {"config": cfg.to_dict(), "stages": [], "status": "running"}
        self.timings = {}
        d = cfg.dsp
        self.features = FeatureConfig(n_mels=d.n_mels, n_mfcc=d.n_mfcc, f_min=d.f_min)

    # -- helpers -------------------------------------------------------------
    def _stage(self, name, fn, *args):
        log.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except Exception as e:  # any failure becomes a partial report
            log.exception("stage %s failed", name)
            self.results["status"] = "failed"
            self.results["failed_stage"] = name
            self.results["error"] = f"{type(e).__name__}: {e}"
            self._write()
            raise StageFailure(name, e) from e
        self.timings[name] = time.perf_counter() - t0
        self.results["stages"].append(name)
        return out

    def _write(self):
        (self.root / "results.json").write_text(json.dumps(self.results, indent=1, sort_keys=True))
        (self.root / "timings.json").write_text(json.dumps(self.timings, indent=1))

    def _feats(self, kind, uids, stats):
        return [dsp.apply_norm(f, stats).data.astype(np.float32)
                for f in load_features(self.root / "features", kind, uids)]

    # -- stages --------------------------------------------------------------
    def corpora(self):
        c = self.cfg.corpora
        if c.toy:
            paths = toy.write_toy_corpus(self.root / "corpus", seed=c.toy_seed)
            srcs = {"train": paths["train"], "text_only": paths["text_only"]}
            srcs.update({s: paths[s.replace("_", "-")] for s in EVAL_SPLITS})
        else:
            srcs = {"train": c.train, "text_only": c.text_only}
            srcs.update({s: getattr(c, s) for s in EVAL_SPLITS if getattr(c, s)})
        self.train = load_manifest(srcs["train"])
        if any(r.origin != "real" for r in self.train):
            raise ValueError("training manifest must hold real data only")
        self.evals = {s: load_manifest(srcs[s]) for s in EVAL_SPLITS if s in srcs}
        self.text_only = [ln.strip() for ln in Path(srcs["text_only"]).read_text().splitlines() if ln.strip()]
        if not self.text_only:
            raise ValueError("text-only data is empty")
        self.results["corpora"] = {
            "train_utterances": len(self.train), "train_hours": self.train.hours,
            "eval_utterances": {s: len(m) for s, m in self.evals.items()},
            "text_only_lines": len(self.text_only),
            "rejected": sum(len(m.rejected) for m in [self.train, *self.evals.values()]),
        }

    def featurize(self):
        root = self.root / "features"
        featurize(self.train, root, ("mfcc", "log_mel", "linear_mag"), self.features)
        for m in self.evals.values():
            featurize(m, root, ("mfcc",), self.features)
        ids = [r.utterance_id for r in self.train]
        self.stats = {k: corpus_stats(root, k, ids) for k in ("mfcc", "log_mel", "linear_mag")}
        (root / "stats.json").write_text(json.dumps({k: stats_to_dict(v) for k, v in self.stats.items()}))

    def subwords(self):
        lines = [normalize_text(r.transcript, append_eos=False) for r in self.train] + \
                [normalize_text(t, append_eos=False) for t in self.text_only]
        bpe = bpe_learn(word_frequencies(lines), self.cfg.asr.bpe_merges)
        alphabet = sorted({ch for ln in lines for ch in ln.replace(" ", "")})
        self.sub = Subwords(bpe, TokenVocab.from_model(bpe, alphabet))
        bpe.save(self.root / "bpe.merges")
        self.sub.vocab.save(self.root / "bpe.vocab")
        self.results["subwords"] = {"merges": len(bpe.merges), "vocab_size": len(self.sub.vocab)}

    def language_model(self):
        seqs = [self.sub.encode(t) for t in self.text_only]
        self.lm = NgramLM.train(seqs, self.cfg.asr.lm_order, len(self.sub.vocab))
        (self.root / "lm").mkdir(exist_ok=True)
        self.lm.save(self.root / "lm" / "ngram.tsv")

    def train_tts(self):
        t = self.cfg.tts
        ids = [r.utterance_id for r in self.train]
        mels = self._feats("log_mel", ids, self.stats["log_mel"])
        examples = [TtsExample(np.asarray(self._char_ids(r.transcript)), m) for r, m in zip(self.train, mels)]
        model_cfg = TtsConfig(dec_hidden=t.dec_hidden, seed=self.cfg.seed)
        model, trainer = train_tts(examples, model_cfg,
                                   TrainConfig(t.epochs, t.batch_size, t.lr, seed=self.cfg.seed))
        (self.root / "models").mkdir(exist_ok=True)
        trainer.save(self.root / "models" / "tts.npz", {"model_config": model_cfg.to_dict(), "kind": "tts",
                                                       "mel_stats": stats_to_dict(self.stats["log_mel"])})
        self.tts, self.mels = model, mels
        self.results["tts"] = {"loss_history": trainer.history}

    def train_mel2lin(self):
        t = self.cfg.tts
        ids = [r.utterance_id for r in self.train]
        lins = self._feats("linear_mag", ids, self.stats["linear_mag"])
        examples = [Mel2LinExample(m, x) for m, x in zip(self.mels, lins)]
        net, trainer = train_mel2lin(examples, t.mel2lin_hidden,
                                     TrainConfig(t.mel2lin_epochs, t.batch_size, t.mel2lin_lr, seed=self.cfg.seed))
        trainer.save(self.root / "models" / "mel2lin.npz",
                     {"hidden": t.mel2lin_hidden, "n_mels": net.n_mels, "n_linear": lins[0].shape[1],
                      "kind": "mel2lin", "linear_stats": stats_to_dict(self.stats["linear_mag"])})
        self.mel2lin = net
        self.results["mel2lin"] = {"loss_history": trainer.history}

    def synthesize(self):
        voice = Voice(self.tts, self.mel2lin, self.stats["linear_mag"], self.features.stft, self.cfg.tts.max_steps)
        # one donor utterance per training speaker, in speaker order
        donors, seen = [], set()
        for rec, mel in zip(self.train, self.mels):
            if rec.speaker_id not in seen:
                seen.add(rec.speaker_id)
                donors.append((rec.speaker_id, mel))
        donors.sort(key=lambda d: d[0])
        speakers = speaker_embeddings(voice, donors)
        gl = GriffinLimConfig(n_iters=self.cfg.tts.gl_iters, deemphasis=True)
        self.synth = generate_synthetic(self.text_only, voice, speakers, self.root / "synthetic" / "wav",
                                        self.cfg.seed, gl)
        self.synth.save(self.root / "synthetic" / "synthetic.jsonl")
        featurize(self.synth, self.root / "features", ("mfcc",), self.features)
        recs = self.synth.records
        self.results["synthetic"] = {
            "utterances": len(recs), "failed": len(self.synth.rejected),
            "truncated": sum(r.truncated for r in recs), "hours": self.synth.hours,
            "duration_char_correlation": pearson([r.duration_s for r in recs], [len(r.transcript) for r in recs]),
        }

    def _char_ids(self, text):
        return DEFAULT_VOCAB.encode(normalize_text(text))

    def _asr_items(self, manifest: CorpusManifest):
        uids = [r.utterance_id for r in manifest]
        feats = self._feats("mfcc", uids, self.stats["mfcc"])
        return {r.utterance_id: (f, self.sub.encode(r.transcript)) for r, f in zip(manifest, feats)}

    def _asr_config(self):
        a = self.cfg.asr
        return AsrConfig(vocab_size=len(self.sub.vocab), n_in=self.cfg.dsp.n_mfcc, enc_hidden=a.enc_hidden,
                         dec_hidden=a.dec_hidden, att_dim=a.att_dim, embed_dim=a.embed_dim,
                         ctc_weight=a.ctc_weight, seed=self.cfg.seed)

    def _run_plan(self, trainer, plan, items, spec_aug, tag):
        a = self.cfg.asr
        params = self.cfg.augment.to_params()
        batcher = asr_batcher(trainer.model.cfg)
        history = []
        for k, uids in enumerate(plan.checkpoints):
            batch_items = []
            for n, uid in enumerate(uids):
                feats, tokens = items[uid]
                if spec_aug:
                    feats = augment_features(dsp.FeatureMatrix(feats, "mfcc"), self.cfg.seed, uid, k, n,
                                             params=params).data
                batch_items.append((feats, tokens))
            history.append(trainer.run_epoch(batch_items, batcher, a.batch_size))
            log.info("%s checkpoint %d/%d loss %.4f", tag, k + 1, len(plan.checkpoints), history[-1])
        return history

    def asr_phase1(self):
        s, a = self.cfg.schedule, self.cfg.asr
        (self.root / "models").mkdir(exist_ok=True)
        self.real_items = self._asr_items(self.train)
        self.budget = self.train.hours * s.phase1_epochs / s.phase1_checkpoints
        plan = build_training_mix(self.train, None, MixPolicy(1, 0, self.budget), s.phase1_checkpoints,
                                  self.cfg.seed)
        model = AttentionAsr(self._asr_config())
        trainer = asr_trainer(model, a.lr, seed=self.cfg.seed, decay=a.lr_decay, decay_every=a.decay_every)
        history = self._run_plan(trainer, plan, self.real_items, False, "phase1")
        self.phase1_ckpt = self.root / "models" / "asr_phase1.npz"
        trainer.save(self.phase1_ckpt, {"model_config": model.cfg.to_dict(), "kind": "asr"})
        self.results["asr_phase1"] = {"loss_history": history, "hours_per_checkpoint": self.budget}

    def asr_phase2(self, cond):
        s, a = self.cfg.schedule, self.cfg.asr
        model = AttentionAsr(self._asr_config())
        trainer = asr_trainer(model, a.lr, seed=self.cfg.seed + 1, decay=a.lr_decay, decay_every=a.decay_every)
        trainer.load(self.phase1_ckpt)
        if s.lr_reset:
            trainer.opt.reset_schedule()
        items = dict(self.real_items)
        if cond.syn_data:
            policy = MixPolicy.parse_ratio(self.cfg.mix.ratio, self.budget)
            items.update(self.synth_items)
            plan = build_training_mix(self.train, self.synth, policy, s.phase2_checkpoints, self.cfg.seed + 1)
        else:
            plan = build_training_mix(self.train, None, MixPolicy(1, 0, self.budget), s.phase2_checkpoints,
                                      self.cfg.seed + 1)
        plan.save(self.root / "models" / f"plan_{cond.name}.json")
        history = self._run_plan(trainer, plan, items, cond.spec_aug, f"phase2[{cond.name}]")
        trainer.save(self.root / "models" / f"asr_{cond.name}.npz", {"model_config": model.cfg.to_dict(),
                                                                      "kind": "asr"})
        self.models[cond.name] = model
        self.results.setdefault("asr_phase2", {})[cond.name] = {
            "loss_history": history, "real_hours": plan.origin_hours("real"),
            "synthetic_hours": plan.origin_hours("synthetic"), "repeats": plan.repeats,
        }

    def decode(self, cond):
        model = self.models[cond.name]
        table = {}
        for split, manifest in self.evals.items():
            refs = [normalize_text(r.transcript, append_eos=False) for r in manifest]
            feats = self._feats("mfcc", [r.utterance_id for r in manifest], self.stats["mfcc"])
            steppers = [AsrStepper(model, f) for f in feats]
            table[split] = {}
            for lam in self.cfg.lm_sweep:
                hyps = [self.sub.decode(beam_search(st, beam_size=self.cfg.asr.beam_size, lm=self.lm,
                                                    lm_weight=lam)) for st in steppers]
                table[split][repr(lam)] = 100.0 * corpus_wer(zip(hyps, refs)).rate
        self.results.setdefault("wer_sweep", {})[cond.name] = table

    def report(self):
        rows = []
        sweep = [repr(x) for x in self.cfg.lm_sweep]
        selected = {}
        for cond in self.cfg.conditions:
            table = self.results["wer_sweep"][cond.name]
            labels = ("Yes" if cond.spec_aug else "No", "GST" if cond.syn_data else "No")
            base = {s: table[s][repr(0.0)] if repr(0.0) in table[s] else None for s in table}
            rows.append(ReportRow(*labels, "N", *(base.get(s) for s in EVAL_SPLITS)))
            if any(x != 0.0 for x in self.cfg.lm_sweep):
                pick = {}
                for kind in ("clean", "other"):
                    dev = table.get(f"dev_{kind}")
                    if dev:
                        pick[kind] = select_lm_weight({lam: dev[lam] for lam in sweep})
                selected[cond.name] = pick
                vals = []
                for s in EVAL_SPLITS:
                    lam = pick.get(s.split("_")[1])
                    vals.append(table[s][lam] if s in table and lam is not None else None)
                rows.append(ReportRow(*labels, "Y", *vals))
        self.results["selected_lm_weight"] = selected
        self.results["rows"] = [r.values() for r in rows]
        write_report(rows, self.root / "report")
        return rows

    # -- driver --------------------------------------------------------------
    def run(self):
        cfg = self.cfg
        self._stage("corpora", self.corpora)
        self._stage("featurize", self.featurize)
        self._stage("subwords", self.subwords)
        self._stage("lm", self.language_model)
        needs_synth = any(c.syn_data for c in cfg.conditions)
        if needs_synth:
            self._stage("train-tts", self.train_tts)
            self._stage("train-mel2lin", self.train_mel2lin)
            self._stage("synthesize", self.synthesize)
            self.synth_items = self._asr_items(self.synth)
        self._stage("asr-phase1", self.asr_phase1)
        self.models = {}
        for cond in cfg.conditions:
            self._stage(f"asr-phase2[{cond.name}]", self.asr_phase2, cond)
            self._stage(f"decode[{cond.name}]", self.decode, cond)
        rows = self._stage("report", self.report)
        self.results["status"] = "ok"
        self._write()
        return rows


def run_experiment(cfg: ExperimentConfig, workdir):
    """Run every stage; returns the report rows. On failure a partial
    ``results.json`` is written and :class:`StageFailure` raised."""
    return Experiment(cfg, workdir).run()


__all__ = ["EVAL_SPLITS", "Experiment", "StageFailure", "Subwords", "pearson", "run_experiment",
           "select_lm_weight"]
