"""Loss composition, annealed alignment gradients and the optimization loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .annealing import AnnealingSchedule, anneal_occupancy, schedule_sigma
from .decode import BoundarySet, MetricsReport, corpus_metrics, path_to_boundaries
from .dp import forward_backward, viterbi
from .lattice import build_lattice, expand_to_states, log_matching, log_position_prior
from .neural import (
    AlignerNetwork,
    DivergenceError,
    ParameterStore,
    adam_step,
    kl_standard_normal,
    kl_standard_normal_grad,
    recon_loss_acoustic,
    recon_loss_acoustic_grad,
    recon_loss_linguistic,
    recon_loss_linguistic_grad,
    reparameterize,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults are the base model settings."""

    omega: float = 0.01
    w_aco: float = 0.1
    w_lng: float = 0.1
    kl_weight: float = 1.0
    states_per_phoneme: int = 3
    sigma0: float = 30.0
    anneal_rate: float = 0.9
    anneal_interval: int = 1000
    sigma_min: float = 1e-3
    anneal_normalize: bool = True
    use_prior: bool = True
    use_vae: bool = True
    use_annealing: bool = True
    lr: float = 1e-5
    batch_size: int = 4
    max_steps: int = 90_000
    seed: int = 0
    eval_interval: int = 1000
    embed_dim: int = 64
    hidden_channels: int = 256
    layers: int = 6

    def __post_init__(self):
        if self.w_aco < 0 or self.w_lng < 0 or self.kl_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.states_per_phoneme < 1:
            raise ValueError("states_per_phoneme must be >= 1")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.max_steps < 0 or self.eval_interval < 1:
            raise ValueError("max_steps must be >= 0 and eval_interval >= 1")
        self.schedule  # validates the annealing fields

    @property
    def schedule(self) -> AnnealingSchedule:
        return AnnealingSchedule(self.sigma0, self.anneal_rate, self.anneal_interval, self.sigma_min)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


# Desk-scale preset: small network, larger step size, schedule compressed to
# fit a few thousand steps. Everything else keeps the base values.
DESK_OVERRIDES = dict(
    embed_dim=16,
    hidden_channels=32,
    layers=3,
    lr=3e-3,
    omega=0.032,
    max_steps=1500,
    anneal_interval=30,
    eval_interval=500,
)


def desk_config(**changes) -> TrainConfig:
    return TrainConfig(**{**DESK_OVERRIDES, **changes})


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray
    phonemes: list
    frame_shift: float = 0.010
    reference: Optional[BoundarySet] = None


@dataclass
class StepReport:
    step: int
    loss: float
    l_align: float
    l_aco: float
    l_lng: float
    sigma: float


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # (step, MetricsReport)
    n_processed: int = 0
    n_skipped: int = 0
    skipped_ids: list = field(default_factory=list)


def total_loss(l_align: float, l_aco: float, l_lng: float, config: TrainConfig) -> float:
    return l_align + config.w_aco * l_aco + config.w_lng * l_lng


def alignment_backward(lattice, acoustic_emb, linguistic_emb, sigma, config: TrainConfig):
    """Embedding gradients of the forward-sum loss via (annealed) occupancy.

    The lattice gradient ``-gamma`` (or its smoothed version when annealing
    is on) is chained through the log-softmax matching; the prior is a
    constant and contributes nothing.

    Returns:
        ``(grad_acoustic, grad_linguistic, l_align, gamma, gamma_prime)``;
        gradients and loss are per utterance, not length normalized.
    """
    y = np.asarray(acoustic_emb, dtype=np.float64)
    x = np.asarray(linguistic_emb, dtype=np.float64)
    l_align, gamma = forward_backward(lattice)
    if config.use_annealing:
        gamma_p = anneal_occupancy(gamma, sigma, normalize=config.anneal_normalize)
    else:
        gamma_p = gamma
    f = np.exp(log_matching(y, x))
    g_logf = -gamma_p
    g_logits = g_logf - f * g_logf.sum(axis=1, keepdims=True)
    # logits = -||y_t - x_k||^2
    g_d = -g_logits
    grad_y = 2.0 * (y * g_d.sum(axis=1, keepdims=True) - g_d @ x)
    grad_x = 2.0 * (x * g_d.sum(axis=0)[:, None] - g_d.T @ y)
    return grad_y, grad_x, l_align, gamma, gamma_p


def utterance_lattice(net: AlignerNetwork, params: dict, features, states, config: TrainConfig):
    head_a, cache_a = net.encode_acoustic(params, features)
    head_l, cache_l = net.encode_linguistic(params, states)
    if not (np.all(np.isfinite(head_a.mu)) and np.all(np.isfinite(head_l.mu))):
        raise DivergenceError("diverged: non-finite embeddings")
    log_f = log_matching(head_a.mu, head_l.mu)
    prior = log_position_prior(*log_f.shape, config.omega) if config.use_prior else None
    lattice = build_lattice(log_f, prior, use_prior=config.use_prior)
    return lattice, (head_a, cache_a), (head_l, cache_l)


def utterance_gradients(net, params, utt: Utterance, config: TrainConfig, sigma: float,
                        rng: np.random.Generator, grads: dict, scale: float = 1.0):
    """Forward and backward for one utterance; gradients are added into ``grads``."""
    states = expand_to_states(utt.phonemes, config.states_per_phoneme)
    feats = np.asarray(utt.features, dtype=np.float64)
    lattice, (head_a, cache_a), (head_l, cache_l) = utterance_lattice(net, params, feats, states, config)
    n_frames = feats.shape[0]
    g_y, g_x, l_align, _, _ = alignment_backward(lattice, head_a.mu, head_l.mu, sigma, config)
    l_align /= n_frames
    g_mu_a = g_y / n_frames
    g_mu_l = g_x / n_frames
    g_lv_a = np.zeros_like(head_a.logvar)
    g_lv_l = np.zeros_like(head_l.logvar)
    l_aco = l_lng = 0.0
    local: dict = {}

    if config.use_vae:
        e = net.embed_dim
        beta = config.kl_weight

        noise = rng.standard_normal(head_a.mu.shape)
        z = reparameterize(head_a, noise)
        recon, dec_cache = net.decode_acoustic(params, z)
        l_aco = recon_loss_acoustic(recon, feats) + beta * kl_standard_normal(head_a) / e
        g_z = net.decode_acoustic_backward(
            params, dec_cache, config.w_aco * recon_loss_acoustic_grad(recon, feats), local)
        k_mu, k_lv = kl_standard_normal_grad(head_a)
        g_mu_a = g_mu_a + g_z + config.w_aco * beta * k_mu / e
        g_lv_a = g_lv_a + g_z * 0.5 * np.exp(0.5 * head_a.logvar) * noise + config.w_aco * beta * k_lv / e

        targets = net.phoneme_indices(states.phoneme_ids)
        noise = rng.standard_normal(head_l.mu.shape)
        z = reparameterize(head_l, noise)
        logits, dec_cache = net.decode_linguistic(params, z)
        l_lng = recon_loss_linguistic(logits, targets) + beta * kl_standard_normal(head_l) / e
        g_z = net.decode_linguistic_backward(
            params, dec_cache, config.w_lng * recon_loss_linguistic_grad(logits, targets), local)
        k_mu, k_lv = kl_standard_normal_grad(head_l)
        g_mu_l = g_mu_l + g_z + config.w_lng * beta * k_mu / e
        g_lv_l = g_lv_l + g_z * 0.5 * np.exp(0.5 * head_l.logvar) * noise + config.w_lng * beta * k_lv / e

    net.encode_acoustic_backward(params, cache_a, g_mu_a, g_lv_a, local)
    net.encode_linguistic_backward(params, cache_l, g_mu_l, g_lv_l, local)
    for name in sorted(local):
        grads[name] = grads[name] + scale * local[name] if name in grads else scale * local[name]
    return l_align, l_aco, l_lng


def train_step(batch: Sequence[Utterance], store: ParameterStore, net: AlignerNetwork,
               config: TrainConfig, step: int, rng: np.random.Generator) -> StepReport:
    """One optimizer step on a batch; utterance gradients are averaged."""
    sigma = schedule_sigma(step, config.schedule)
    grads: dict = {}
    parts = []
    scale = 1.0 / len(batch)
    try:
        for utt in batch:
            parts.append(utterance_gradients(net, store.params, utt, config, sigma, rng, grads, scale))
    except DivergenceError as exc:
        raise DivergenceError(f"{exc} at step {step} ({utt.utt_id})") from None
    l_align, l_aco, l_lng = (float(np.mean(c)) for c in zip(*parts))
    loss = total_loss(l_align, l_aco, l_lng, config)
    if not np.isfinite(loss):
        raise DivergenceError(f"diverged at step {step}: loss={loss}")
    try:
        adam_step(store, grads, config.lr)
    except DivergenceError as exc:
        raise DivergenceError(f"{exc} (step {step})") from None
    return StepReport(step, loss, l_align, l_aco, l_lng, sigma)


def align_utterance(net: AlignerNetwork, params: dict, features, phonemes,
                    config: TrainConfig, frame_shift: float = 0.010) -> BoundarySet:
    """Decode phoneme boundaries with the posterior-mean embeddings."""
    states = expand_to_states(phonemes, config.states_per_phoneme)
    lattice, _, _ = utterance_lattice(net, params, np.asarray(features, float), states, config)
    path = viterbi(lattice)
    return path_to_boundaries(path.states, states, frame_shift)


def evaluate(net: AlignerNetwork, params: dict, utts: Sequence[Utterance],
             config: TrainConfig) -> Optional[MetricsReport]:
    pairs = {}
    for u in utts:
        if u.reference is None:
            continue
        pred = align_utterance(net, params, u.features, u.phonemes, config, u.frame_shift)
        pairs[u.utt_id] = (pred, u.reference)
    return corpus_metrics(pairs) if pairs else None


def feasible(utt: Utterance, states_per_phoneme: int) -> bool:
    return len(utt.features) >= len(utt.phonemes) * states_per_phoneme


def iter_batches(n_items: int, batch_size: int, rng: np.random.Generator):
    """Endless seeded shuffled minibatches of indices."""
    while True:
        order = rng.permutation(n_items)
        for i in range(0, n_items, batch_size):
            yield order[i : i + batch_size]


def run_training(
    net: AlignerNetwork,
    store: ParameterStore,
    utts: Sequence[Utterance],
    config: TrainConfig,
    dev: Sequence[Utterance] = (),
    on_step: Optional[Callable[[StepReport], None]] = None,
    on_eval: Optional[Callable[[int, Optional[MetricsReport]], None]] = None,
) -> TrainReport:
    """Optimize ``store`` for ``config.max_steps`` steps starting at ``store.step``."""
    report = TrainReport()
    usable = []
    for u in utts:
        if feasible(u, config.states_per_phoneme):
            usable.append(u)
        else:
            logger.warning("skipping %s: %d frames < %d states", u.utt_id,
                           len(u.features), len(u.phonemes) * config.states_per_phoneme)
            report.skipped_ids.append(u.utt_id)
    report.n_processed = len(usable)
    report.n_skipped = len(report.skipped_ids)
    if config.max_steps and not usable:
        raise ValueError("no trainable utterances")
    dev = [u for u in dev if feasible(u, config.states_per_phoneme)]

    rng = np.random.default_rng(config.seed + 1)
    batches = iter_batches(len(usable), config.batch_size, rng)
    for step in range(config.max_steps):
        batch = [usable[i] for i in next(batches)]
        entry = train_step(batch, store, net, config, step, rng)
        report.steps.append(entry)
        if on_step is not None:
            on_step(entry)
        if (step + 1) % config.eval_interval == 0:
            result = evaluate(net, store.params, dev, config) if dev else None
            report.evals.append((step + 1, result))
            if result is not None:
                logger.info("step %d dev %s", step + 1, result.as_kv())
            if on_eval is not None:
                on_eval(step + 1, result)
    return report
