"""Small numpy network stack with hand-written backward passes.

Convolutions work on channels-first ``(C, M)`` arrays; VAE heads and
embeddings are time-major ``(M, E)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOGVAR_CLAMP = 10.0


class DivergenceError(FloatingPointError):
    """Raised when a NaN/inf gradient or loss shows up during training."""


# ---------------------------------------------------------------- conv1d


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    c_in, m = x.shape
    pad = (kernel - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    cols = np.stack([xp[:, j : j + m] for j in range(kernel)], axis=1)
    return cols.reshape(c_in * kernel, m)


def conv1d_forward(weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Stride-1, same-padded 1-D convolution (cross-correlation).

    Args:
        weight: ``(C_out, C_in, kernel)`` with odd ``kernel``.
        bias: ``(C_out,)``.
        x: ``(C_in, M)``.

    Returns:
        ``(C_out, M)``.
    """
    c_out, c_in, kernel = weight.shape
    if kernel % 2 != 1:
        raise ValueError(f"kernel width must be odd, got {kernel}")
    if x.shape[0] != c_in:
        raise ValueError(f"channel mismatch: layer expects {c_in}, input has {x.shape[0]}")
    return weight.reshape(c_out, c_in * kernel) @ _im2col(x, kernel) + bias[:, None]


def conv1d_backward(weight: np.ndarray, x: np.ndarray, grad_out: np.ndarray):
    """Gradients of ``conv1d_forward`` wrt input, weight and bias."""
    c_out, c_in, kernel = weight.shape
    m = x.shape[1]
    pad = (kernel - 1) // 2
    cols = _im2col(x, kernel)
    grad_w = (grad_out @ cols.T).reshape(weight.shape)
    grad_b = grad_out.sum(axis=1)
    gcols = (weight.reshape(c_out, c_in * kernel).T @ grad_out).reshape(c_in, kernel, m)
    gxp = np.zeros((c_in, m + 2 * pad))
    for j in range(kernel):
        gxp[:, j : j + m] += gcols[:, j]
    return gxp[:, pad : pad + m], grad_w, grad_b


# ---------------------------------------------------------------- stacks


def stack_forward(params: dict, prefix: str, n_layers: int, x: np.ndarray):
    """``n_layers`` ReLU convolutions followed by a linear 1x1 projection."""
    cache = []
    h = x
    for i in range(n_layers):
        a = conv1d_forward(params[f"{prefix}.conv{i}.weight"], params[f"{prefix}.conv{i}.bias"], h)
        cache.append((h, a))
        h = np.maximum(a, 0.0)
    out = conv1d_forward(params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"], h)
    cache.append((h, None))
    return out, cache


def stack_backward(params: dict, prefix: str, n_layers: int, cache, grad_out, grads: dict):
    """Accumulate parameter gradients into ``grads``; return the input gradient."""
    h, _ = cache[-1]
    g, gw, gb = conv1d_backward(params[f"{prefix}.proj.weight"], h, grad_out)
    _accumulate(grads, f"{prefix}.proj.weight", gw)
    _accumulate(grads, f"{prefix}.proj.bias", gb)
    for i in range(n_layers - 1, -1, -1):
        h, a = cache[i]
        g = g * (a > 0)
        g, gw, gb = conv1d_backward(params[f"{prefix}.conv{i}.weight"], h, g)
        _accumulate(grads, f"{prefix}.conv{i}.weight", gw)
        _accumulate(grads, f"{prefix}.conv{i}.bias", gb)
    return g


def _accumulate(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


# ---------------------------------------------------------------- VAE pieces


@dataclass
class VaeHead:
    mu: np.ndarray
    logvar: np.ndarray


def split_head(out: np.ndarray, embed_dim: int) -> tuple[VaeHead, np.ndarray]:
    """Turn a ``(2E, M)`` projection into a head; also return the clamp mask."""
    raw_logvar = out[embed_dim:].T
    inside = np.abs(raw_logvar) <= LOGVAR_CLAMP
    head = VaeHead(out[:embed_dim].T.copy(), np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP))
    return head, inside


def reparameterize(head: VaeHead, noise: np.ndarray) -> np.ndarray:
    return head.mu + np.exp(0.5 * head.logvar) * noise


def kl_standard_normal(head: VaeHead) -> float:
    """KL to N(0, I), summed over embedding dims and averaged over rows."""
    mu, lv = head.mu, head.logvar
    return float(0.5 * np.sum(mu**2 + np.exp(lv) - 1.0 - lv) / mu.shape[0])


def kl_standard_normal_grad(head: VaeHead) -> tuple[np.ndarray, np.ndarray]:
    m = head.mu.shape[0]
    return head.mu / m, 0.5 * (np.exp(head.logvar) - 1.0) / m


def recon_loss_acoustic(recon: np.ndarray, target: np.ndarray) -> float:
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {target.shape}")
    return float(np.mean((recon - target) ** 2))


def recon_loss_acoustic_grad(recon: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (recon - target) / recon.size


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def recon_loss_linguistic(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean cross-entropy of ``(K, V)`` logits against integer targets."""
    logp = _log_softmax(logits)
    return float(-np.mean(logp[np.arange(len(targets)), targets]))


def recon_loss_linguistic_grad(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = np.exp(_log_softmax(logits))
    p[np.arange(len(targets)), targets] -= 1.0
    return p / len(targets)


# ---------------------------------------------------------------- network


@dataclass
class AlignerNetwork:
    """Shapes and vocabulary of the acoustic/linguistic encoder-decoder pair."""

    n_features: int
    vocab: Sequence
    states_per_phoneme: int = 3
    embed_dim: int = 64
    hidden_channels: int = 256
    layers: int = 6
    kernel: int = 3
    mu_init_scale: float = 1e-2
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.vocab = list(self.vocab)
        self._index = {p: i for i, p in enumerate(self.vocab)}
        if len(self._index) != len(self.vocab):
            raise ValueError("duplicate phoneme in vocabulary")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def phoneme_indices(self, phoneme_ids) -> np.ndarray:
        try:
            return np.array([self._index[p] for p in phoneme_ids], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unknown phoneme {exc.args[0]!r}") from None

    def init_params(self, rng: np.random.Generator) -> dict:
        h, e, k = self.hidden_channels, self.embed_dim, self.kernel
        params = {}

        def conv(name, c_out, c_in, width):
            bound = np.sqrt(6.0 / (c_in * width))
            params[f"{name}.weight"] = rng.uniform(-bound, bound, (c_out, c_in, width))
            params[f"{name}.bias"] = np.zeros(c_out)

        def stack(prefix, c_in, c_out):
            for i in range(self.layers):
                conv(f"{prefix}.conv{i}", h, c_in if i == 0 else h, k)
            params[f"{prefix}.proj.weight"] = np.zeros((c_out, h if self.layers else c_in, 1))
            params[f"{prefix}.proj.bias"] = np.zeros(c_out)

        stack("aco_enc", self.n_features, 2 * e)
        stack("lng_enc", h, 2 * e)
        stack("aco_dec", e, self.n_features)
        stack("lng_dec", e, self.vocab_size)
        # Near-zero means give an almost flat initial lattice; exact zeros
        # would be a saddle where the matching gradient vanishes.
        for prefix in ("aco_enc", "lng_enc"):
            w = params[f"{prefix}.proj.weight"]
            bound = self.mu_init_scale * np.sqrt(3.0 / w.shape[1])
            w[:e] = rng.uniform(-bound, bound, w[:e].shape)
        params["lng_in.phoneme"] = rng.standard_normal((self.vocab_size, h))
        params["lng_in.state"] = rng.standard_normal((self.states_per_phoneme, h))
        return params

    # -- encoders

    def encode_acoustic(self, params: dict, features: np.ndarray):
        out, cache = stack_forward(params, "aco_enc", self.layers, np.asarray(features, float).T)
        head, inside = split_head(out, self.embed_dim)
        return head, (cache, inside)

    def encode_acoustic_backward(self, params, cache, g_mu, g_logvar, grads):
        stack_cache, inside = cache
        g_out = np.concatenate([g_mu.T, (g_logvar * inside).T], axis=0)
        stack_backward(params, "aco_enc", self.layers, stack_cache, g_out, grads)

    def linguistic_input(self, params: dict, phoneme_idx, state_idx) -> np.ndarray:
        return (params["lng_in.phoneme"][phoneme_idx] + params["lng_in.state"][state_idx]).T

    def encode_linguistic(self, params: dict, states):
        ph = self.phoneme_indices(states.phoneme_ids)
        st = states.state_indices
        if st.size and st.max() >= self.states_per_phoneme:
            raise ValueError("state index exceeds states_per_phoneme")
        x = self.linguistic_input(params, ph, st)
        out, cache = stack_forward(params, "lng_enc", self.layers, x)
        head, inside = split_head(out, self.embed_dim)
        return head, (cache, inside, ph, st)

    def encode_linguistic_backward(self, params, cache, g_mu, g_logvar, grads):
        stack_cache, inside, ph, st = cache
        g_out = np.concatenate([g_mu.T, (g_logvar * inside).T], axis=0)
        gx = stack_backward(params, "lng_enc", self.layers, stack_cache, g_out, grads).T
        g_ph = np.zeros_like(params["lng_in.phoneme"])
        g_st = np.zeros_like(params["lng_in.state"])
        np.add.at(g_ph, ph, gx)
        np.add.at(g_st, st, gx)
        _accumulate(grads, "lng_in.phoneme", g_ph)
        _accumulate(grads, "lng_in.state", g_st)

    # -- decoders

    def decode_acoustic(self, params: dict, z: np.ndarray):
        out, cache = stack_forward(params, "aco_dec", self.layers, z.T)
        return out.T, cache

    def decode_acoustic_backward(self, params, cache, g_recon, grads) -> np.ndarray:
        return stack_backward(params, "aco_dec", self.layers, cache, g_recon.T, grads).T

    def decode_linguistic(self, params: dict, z: np.ndarray):
        out, cache = stack_forward(params, "lng_dec", self.layers, z.T)
        return out.T, cache

    def decode_linguistic_backward(self, params, cache, g_logits, grads) -> np.ndarray:
        return stack_backward(params, "lng_dec", self.layers, cache, g_logits.T, grads).T


# ---------------------------------------------------------------- optimizer


class ParameterStore:
    """Named parameters plus Adam moments and a step counter."""

    def __init__(self, params: dict):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def copy(self) -> "ParameterStore":
        other = ParameterStore({k: v.copy() for k, v in self.params.items()})
        other.m = {k: v.copy() for k, v in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        other.step = self.step
        return other


def adam_step(store: ParameterStore, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> ParameterStore:
    """Bias-corrected Adam update in place; parameters without a gradient are left alone."""
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"diverged: non-finite gradient for {name}")
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for name in sorted(grads):
        g = grads[name]
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * g * g
        store.params[name] = store.params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
