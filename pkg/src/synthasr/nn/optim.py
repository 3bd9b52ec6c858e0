"""SGD-family optimisers with global-norm clipping and a step-decay learning
rate schedule that can be reset."""
from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, params, lr, clip_norm=5.0, decay=1.0, decay_every=0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.initial_lr = lr
        self.clip_norm = clip_norm
        self.decay = decay
        self.decay_every = decay_every
        self.steps = 0

    @property
    def lr(self):
        if self.decay_every:
            return self.initial_lr * self.decay ** (self.steps // self.decay_every)
        return self.initial_lr

    def reset_schedule(self):
        """Restart the learning-rate schedule from its initial value."""
        self.steps = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def grads(self):
        gs = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if self.clip_norm:
            norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in gs))
            if norm > self.clip_norm:
                gs = [g * (self.clip_norm / norm) for g in gs]
        return gs

    def step(self):
        lr = self.lr
        for i, (p, g) in enumerate(zip(self.params, self.grads())):
            p.data = (p.data - self._update(i, g, lr)).astype(p.data.dtype)
        self.steps += 1

    def state_dict(self):
        return {"steps": np.array(self.steps)}

    def load_state_dict(self, state):
        self.steps = int(state["steps"])


class SGD(Optimizer):
    def __init__(self, params, lr=0.1, momentum=0.0, **kw):
        super().__init__(params, lr, **kw)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, g, lr):
        if not self.momentum:
            return lr * g
        self.velocity[i] = self.momentum * self.velocity[i] + g
        return lr * self.velocity[i]

    def state_dict(self):
        state = super().state_dict()
        state.update({f"velocity.{i}": v for i, v in enumerate(self.velocity)})
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.velocity = [np.array(state[f"velocity.{i}"]) for i in range(len(self.params))]


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, **kw):
        super().__init__(params, lr, **kw)
        self.betas, self.eps = betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        super().step()

    def _update(self, i, g, lr):
        b1, b2 = self.betas
        self.m[i] = b1 * self.m[i] + (1 - b1) * g
        self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
        m_hat = self.m[i] / (1 - b1 ** self.t)
        v_hat = self.v[i] / (1 - b2 ** self.t)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        state = super().state_dict()
        state["t"] = np.array(self.t)
        state.update({f"m.{i}": m for i, m in enumerate(self.m)})
        state.update({f"v.{i}": v for i, v in enumerate(self.v)})
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.t = int(state["t"])
        self.m = [np.array(state[f"m.{i}"]) for i in range(len(self.params))]
        self.v = [np.array(state[f"v.{i}"]) for i in range(len(self.params))]


def sgd_step(params, grads, lr):
    """Plain in-place SGD update, ``p <- p - lr * g``."""
    for p, g in zip(params, grads):
        p.data = (p.data - lr * g).astype(p.data.dtype)


def make_optimizer(name, params, **kw):
    return {"sgd": SGD, "adam": Adam}[name](params, **kw)
