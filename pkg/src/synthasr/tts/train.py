"""Batching and training for the synthesis and mel-to-linear networks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from ..nn.trainer import Trainer
from .model import MelToLinearNet, Tacotron, TtsConfig, stop_targets, tts_loss


@dataclass
class TtsExample:
    ids: np.ndarray          # character indices ending with the end token
    mel: np.ndarray          # normalised log-mel, T x n_mels
    ref: np.ndarray | None = None  # GST reference; defaults to ``mel``


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-3
    optimizer: str = "adam"
    clip_norm: float = 5.0
    seed: int = 0


def pad_to_steps(mel: np.ndarray, r: int) -> np.ndarray:
    """Repeat the last frame until the length is a multiple of ``r``."""
    extra = (-len(mel)) % r
    if extra:
        mel = np.concatenate([mel, np.repeat(mel[-1:], extra, axis=0)])
    return mel


def make_tts_batch(examples, r=3, dtype=np.float32):
    B = len(examples)
    J = max(len(e.ids) for e in examples)
    mels = [pad_to_steps(e.mel, r) for e in examples]
    n_steps = [len(m) // r for m in mels]
    N = max(n_steps)
    n_mels = mels[0].shape[1]
    ids = np.zeros((B, J), dtype=np.int64)
    target = np.zeros((B, N * r, n_mels), dtype)
    frame_mask = np.zeros((B, N * r), dtype)
    stops = np.zeros((B, N), dtype)
    step_mask = np.zeros((B, N), dtype)
    refs = [e.mel if e.ref is None else e.ref for e in examples]
    ref_len = [len(x) for x in refs]
    ref = np.zeros((B, max(ref_len), n_mels), dtype)
    for b, e in enumerate(examples):
        ids[b, :len(e.ids)] = e.ids
        target[b, :len(mels[b])] = mels[b]
        frame_mask[b, :len(mels[b])] = 1
        stops[b, :n_steps[b]] = stop_targets(n_steps[b])
        step_mask[b, :n_steps[b]] = 1
        ref[b, :ref_len[b]] = refs[b]
    return dict(ids=ids, text_lengths=[len(e.ids) for e in examples], mels=target, n_steps=N,
                frame_mask=frame_mask, stops=stops, step_mask=step_mask, ref=ref, ref_lengths=ref_len)


def tts_batch_loss(model: Tacotron, batch):
    spk = model.gst(nn.as_tensor(batch["ref"].astype(model.gst.tokens.dtype)), batch["ref_lengths"])
    pred, stops, _ = model.teacher_forced(batch["ids"], batch["text_lengths"], batch["mels"],
                                          batch["n_steps"], spk)
    return tts_loss(pred, stops, batch["mels"].astype(pred.dtype), batch["stops"].astype(pred.dtype),
                    batch["frame_mask"], batch["step_mask"])


def tts_trainer(model: Tacotron, cfg: TrainConfig) -> Trainer:
    return Trainer(model, tts_batch_loss, cfg.optimizer, cfg.lr, cfg.clip_norm, cfg.seed, name="tts")


def train_tts(examples, model_cfg: TtsConfig = TtsConfig(), cfg: TrainConfig = TrainConfig(),
              checkpoint=None):
    """Teacher-forced training. Returns ``(model, trainer)``; the per-epoch
    mean losses are in ``trainer.history``."""
    if not examples:
        raise ValueError("empty TTS training corpus")
    model = Tacotron(model_cfg)
    trainer = tts_trainer(model, cfg)
    r = model_cfg.frames_per_step
    trainer.fit(examples, lambda ex: make_tts_batch(ex, r), cfg.epochs, cfg.batch_size, checkpoint)
    if checkpoint:
        trainer.save(checkpoint, {"model_config": model_cfg.to_dict(), "kind": "tts"})
    return model, trainer


def load_tts(path) -> Tacotron:
    params, _, meta = nn.load_checkpoint(path)
    model = Tacotron(TtsConfig.from_dict(meta["model_config"]))
    model.load_state_dict(params)
    return model


# mel-to-linear -------------------------------------------------------------

@dataclass
class Mel2LinExample:
    mel: np.ndarray      # normalised log-mel, T x 80
    linear: np.ndarray   # normalised linear magnitude, T x 512


def make_mel2lin_batch(examples, dtype=np.float32):
    B = len(examples)
    lengths = [len(e.mel) for e in examples]
    n = max(lengths)
    mel = np.zeros((B, n, examples[0].mel.shape[1]), dtype)
    lin = np.zeros((B, n, examples[0].linear.shape[1]), dtype)
    mask = np.zeros((B, n, 1), dtype)
    for b, e in enumerate(examples):
        mel[b, :lengths[b]] = e.mel
        lin[b, :lengths[b]] = e.linear
        mask[b, :lengths[b]] = 1
    return dict(mel=mel, linear=lin, mask=mask, lengths=lengths)


def mel2lin_batch_loss(net: MelToLinearNet, batch):
    pred = net(nn.as_tensor(batch["mel"]), batch["lengths"])
    return nn.l1_loss(pred, batch["linear"].astype(pred.dtype), batch["mask"])


def train_mel2lin(examples, hidden=128, cfg: TrainConfig = TrainConfig(), checkpoint=None):
    if not examples:
        raise ValueError("empty mel-to-linear training corpus")
    net = MelToLinearNet(examples[0].mel.shape[1], hidden, examples[0].linear.shape[1], seed=cfg.seed)
    trainer = Trainer(net, mel2lin_batch_loss, cfg.optimizer, cfg.lr, cfg.clip_norm, cfg.seed, name="mel2lin")
    trainer.fit(examples, make_mel2lin_batch, cfg.epochs, cfg.batch_size, checkpoint)
    if checkpoint:
        trainer.save(checkpoint, {"hidden": hidden, "n_mels": net.n_mels,
                                  "n_linear": examples[0].linear.shape[1], "kind": "mel2lin"})
    return net, trainer


def load_mel2lin(path) -> MelToLinearNet:
    params, _, meta = nn.load_checkpoint(path)
    net = MelToLinearNet(meta["n_mels"], meta["hidden"], meta["n_linear"])
    net.load_state_dict(params)
    return net


def evaluate_l1(net: MelToLinearNet, examples) -> tuple[float, float]:
    """Masked L1 of ``net`` and of the all-zero (per-bin mean) predictor on
    normalised targets."""
    batch = make_mel2lin_batch(examples)
    with nn.no_grad():
        model_l1 = float(mel2lin_batch_loss(net, batch).data)
    mask = batch["mask"]
    base = float((np.abs(batch["linear"]) * mask).sum() / (mask.sum() * batch["linear"].shape[-1]))
    return model_l1, base


__all__ = ["TtsExample", "TrainConfig", "make_tts_batch", "tts_batch_loss", "train_tts", "load_tts",
           "Mel2LinExample", "make_mel2lin_batch", "train_mel2lin", "load_mel2lin", "evaluate_l1",
           "tts_trainer"]
