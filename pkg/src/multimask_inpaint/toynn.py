"""Minimal numpy neural-net kit for the in-tree toy backbones.

Layers carry explicit forward/backward passes with cached activations, so
training runs on CPU with no autodiff framework. Only adapter (low-rank)
factors are trainable in this package; base weights stay frozen and are
checksummed to prove it.
"""

import hashlib
import math

import numpy as np
from scipy.special import erf


class Param:
    __slots__ = ("value", "grad", "trainable", "name")

    def __init__(self, value: np.ndarray, trainable: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable
        self.name = name


def trainable_params(params: list[Param]) -> list[Param]:
    return [p for p in params if p.trainable]


def n_params(params: list[Param]) -> int:
    return sum(p.value.size for p in params)


def checksum(params: list[Param]) -> str:
    """sha256 over parameter bytes, order-sensitive."""
    h = hashlib.sha256()
    for p in params:
        h.update(p.value.tobytes())
    return h.hexdigest()


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * phi


class Linear:
    """y = x @ W + b, with an optional trainable low-rank delta.

    The delta is scale * (x @ A) @ B with A (in, r), B (r, out) and
    scale = alpha / r; B starts at zero so the adapter is a no-op until
    trained. Base W and b are frozen unless trainable=True.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, trainable: bool = False,
                 lora_rank: int = 0, lora_alpha: float = 1.0,
                 lora_dropout: float = 0.0, name: str = "linear"):
        init = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.w = Param(init, trainable=trainable, name=f"{name}.w")
        self.b = Param(np.zeros(d_out), trainable=trainable, name=f"{name}.b") if bias else None
        self.lora_a = self.lora_b = None
        self.lora_scale = 0.0
        self.lora_dropout = lora_dropout
        if lora_rank > 0:
            a = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, lora_rank))
            self.lora_a = Param(a, trainable=True, name=f"{name}.lora_a")
            self.lora_b = Param(np.zeros((lora_rank, d_out)), trainable=True,
                                name=f"{name}.lora_b")
            self.lora_scale = lora_alpha / lora_rank
        self.training = False
        self._dropout_rng = None
        self._cache = None

    def set_training(self, mode: bool, rng: np.random.Generator | None = None):
        self.training = mode
        self._dropout_rng = rng

    @property
    def params(self) -> list[Param]:
        out = [self.w] + ([self.b] if self.b is not None else [])
        if self.lora_a is not None:
            out += [self.lora_a, self.lora_b]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.w.value
        if self.b is not None:
            y = y + self.b.value
        drop_mask = None
        x_lora = x
        if self.lora_a is not None:
            if self.training and self.lora_dropout > 0.0 and self._dropout_rng is not None:
                keep = 1.0 - self.lora_dropout
                drop_mask = (self._dropout_rng.random(x.shape) < keep) / keep
                x_lora = x * drop_mask
            y = y + self.lora_scale * (x_lora @ self.lora_a.value) @ self.lora_b.value
        self._cache = (x, x_lora, drop_mask)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, x_lora, drop_mask = self._cache
        flat_x = x.reshape(-1, x.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        if self.w.trainable:
            self.w.grad += flat_x.T @ flat_dy
        if self.b is not None and self.b.trainable:
            self.b.grad += flat_dy.sum(axis=0)
        dx = dy @ self.w.value.T
        if self.lora_a is not None:
            flat_xl = x_lora.reshape(-1, x.shape[-1])
            mid = flat_xl @ self.lora_a.value  # (N, r)
            d_mid = flat_dy @ self.lora_b.value.T * self.lora_scale
            self.lora_a.grad += flat_xl.T @ d_mid
            self.lora_b.grad += mid.T @ (flat_dy * self.lora_scale)
            dx_lora = (d_mid @ self.lora_a.value.T).reshape(x.shape)
            if drop_mask is not None:
                dx_lora = dx_lora * drop_mask
            dx = dx + dx_lora
        return dx


class Gelu:
    def __init__(self):
        self._cache = None

    params: list[Param] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return gelu(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * gelu_grad(self._cache)


class Embedding:
    def __init__(self, n: int, d: int, rng: np.random.Generator,
                 trainable: bool = False, name: str = "emb"):
        self.table = Param(rng.normal(0.0, 0.5, size=(n, d)), trainable=trainable, name=name)

    @property
    def params(self) -> list[Param]:
        return [self.table]

    def forward(self, ids: np.ndarray) -> np.ndarray:
        self._ids = np.asarray(ids)
        return self.table.value[self._ids]

    def backward(self, dy: np.ndarray) -> None:
        if self.table.trainable:
            np.add.at(self.table.grad, self._ids, dy)


class ResidualMLP:
    """x + W2(gelu(W1 x)); base frozen unless stated."""

    def __init__(self, d: int, d_hidden: int, rng: np.random.Generator, name: str = "mlp",
                 lora_rank: int = 0, lora_alpha: float = 1.0, lora_dropout: float = 0.0):
        self.fc1 = Linear(d, d_hidden, rng, lora_rank=lora_rank, lora_alpha=lora_alpha,
                          lora_dropout=lora_dropout, name=f"{name}.fc1")
        self.act = Gelu()
        self.fc2 = Linear(d_hidden, d, rng, lora_rank=lora_rank, lora_alpha=lora_alpha,
                          lora_dropout=lora_dropout, name=f"{name}.fc2")

    @property
    def params(self) -> list[Param]:
        return self.fc1.params + self.fc2.params

    def set_training(self, mode: bool, rng=None):
        self.fc1.set_training(mode, rng)
        self.fc2.set_training(mode, rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x + self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy + self.fc1.backward(self.act.backward(self.fc2.backward(dy)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray,
                  reduction: str = "mean"):
    """Label-masked token cross-entropy; returns (loss, dlogits).

    Positions where mask is false contribute nothing to the loss and get
    exactly zero gradient. Raises if no position is masked in.
    """
    mask = np.asarray(mask, dtype=bool)
    n_active = int(mask.sum())
    if n_active == 0:
        raise ValueError("label mask selects no positions")
    probs = softmax(logits, axis=-1)
    flat = probs.reshape(-1, probs.shape[-1])
    tgt = np.asarray(targets).reshape(-1)
    m = mask.reshape(-1)
    picked = flat[np.arange(flat.size // flat.shape[-1]), tgt]
    nll = -np.log(np.clip(picked, 1e-300, None))
    denom = n_active if reduction == "mean" else 1
    loss = float((nll * m).sum() / denom)
    dflat = flat.copy()
    dflat[np.arange(dflat.shape[0]), tgt] -= 1.0
    dflat *= (m / denom)[:, None]
    return loss, dflat.reshape(logits.shape)


class AdamW:
    """AdamW with decoupled weight decay; operates on trainable params only."""

    def __init__(self, params: list[Param], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = trainable_params(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        for p, m, v in zip(self.params, self._m, self._v):
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p.value -= lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.value)


def global_grad_norm(params: list[Param]) -> float:
    total = 0.0
    for p in trainable_params(params):
        total += float((p.grad ** 2).sum())
    return math.sqrt(total)


def clip_grad_norm(params: list[Param], max_norm: float) -> tuple[float, float]:
    """Scale trainable grads so the global norm is at most max_norm.

    Returns (norm_before, norm_after).
    """
    before = global_grad_norm(params)
    if before > max_norm and before > 0:
        scale = max_norm / before
        for p in trainable_params(params):
            p.grad *= scale
        return before, max_norm
    return before, before


def warmup_constant_lr(step: int, total_steps: int, base_lr: float,
                       warmup_fraction: float = 0.01) -> float:
    """Linear 0 -> base_lr over the first warmup_fraction of steps, then flat.

    lr(0) = 0 and lr reaches base_lr exactly at the end of the warmup.
    """
    warmup_steps = max(1, round(total_steps * warmup_fraction))
    return base_lr * min(1.0, step / warmup_steps)


def sinusoidal_embedding(t: float, d: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard sin/cos timestep features of width d (d even)."""
    half = d // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])
