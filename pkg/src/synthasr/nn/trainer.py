"""Minibatch training loop shared by all models."""
from __future__ import annotations

import logging
import time

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .optim import make_optimizer

log = logging.getLogger(__name__)


class Trainer:
    """Owns a model, its optimiser and a step counter.

    ``loss_fn(model, batch)`` returns a scalar :class:`Tensor`. Batch order
    for epoch ``e`` is drawn from ``default_rng([seed, e])`` so a resumed run
    sees the same batches as an uninterrupted one.
    """

    def __init__(self, model, loss_fn, optimizer="adam", lr=1e-3, clip_norm=5.0, seed=0,
                 decay=1.0, decay_every=0, name="model"):
        self.model = model
        self.loss_fn = loss_fn
        self.opt = make_optimizer(optimizer, model.parameters(), lr=lr, clip_norm=clip_norm,
                                  decay=decay, decay_every=decay_every)
        self.seed = seed
        self.epoch = 0
        self.history = []
        self.name = name

    def train_step(self, batch) -> float:
        self.opt.zero_grad()
        loss = self.loss_fn(self.model, batch)
        loss.backward()
        self.opt.step()
        return float(loss.data)

    def batches(self, n_items, batch_size, epoch=None):
        rng = np.random.default_rng([self.seed, self.epoch if epoch is None else epoch])
        order = rng.permutation(n_items)
        return [order[i:i + batch_size] for i in range(0, n_items, batch_size)]

    def run_epoch(self, items, make_batch, batch_size):
        t0 = time.perf_counter()
        losses, weights = [], []
        for idx in self.batches(len(items), batch_size):
            batch = make_batch([items[i] for i in idx])
            if batch is None:  # every item in it was rejected
                continue
            losses.append(self.train_step(batch))
            weights.append(len(idx))
        self.epoch += 1
        mean = float(np.average(losses, weights=weights)) if losses else float("nan")
        self.history.append(mean)
        log.info("%s epoch %d loss %.4f lr %.2e (%.1fs)", self.name, self.epoch, mean, self.opt.lr,
                 time.perf_counter() - t0)
        return mean

    def fit(self, items, make_batch, epochs, batch_size, checkpoint=None):
        if not items:
            raise ValueError(f"{self.name}: no training data")
        for _ in range(epochs):
            self.run_epoch(items, make_batch, batch_size)
            if checkpoint:
                self.save(checkpoint)
        return self.history

    def save(self, path, meta=None):
        info = {"epoch": self.epoch, "history": self.history, "seed": self.seed}
        info.update(meta or {})
        save_checkpoint(path, self.model.state_dict(), self.opt.state_dict(), info)

    def load(self, path):
        params, opt, meta = load_checkpoint(path)
        self.model.load_state_dict(params)
        self.opt.load_state_dict(opt)
        self.epoch = meta.get("epoch", 0)
        self.history = list(meta.get("history", []))
        return meta
