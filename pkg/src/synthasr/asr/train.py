"""Training entry points for the recogniser."""
from __future__ import annotations

from functools import partial

from .. import nn
from ..nn.trainer import Trainer
from .model import AsrConfig, AttentionAsr, asr_loss, make_asr_batch


def asr_trainer(model: AttentionAsr, lr=1e-3, optimizer="adam", clip_norm=5.0, seed=0, decay=1.0,
                decay_every=0) -> Trainer:
    return Trainer(model, asr_loss, optimizer, lr, clip_norm, seed, decay, decay_every, name="asr")


def asr_batcher(cfg: AsrConfig):
    return partial(make_asr_batch, cfg=cfg)


def train_asr(examples, cfg: AsrConfig = AsrConfig(), epochs=10, batch_size=8, lr=1e-3, seed=0):
    """``examples`` are ``(features, tokens)`` pairs. Returns the model and
    its trainer (per-epoch losses in ``trainer.history``)."""
    model = AttentionAsr(cfg)
    trainer = asr_trainer(model, lr=lr, seed=seed)
    trainer.fit(examples, asr_batcher(cfg), epochs, batch_size)
    return model, trainer


def load_asr(path) -> AttentionAsr:
    params, _, meta = nn.load_checkpoint(path)
    model = AttentionAsr(AsrConfig.from_dict(meta["model_config"]))
    model.load_state_dict(params)
    return model


__all__ = ["asr_batcher", "asr_trainer", "load_asr", "train_asr"]
