"""Self-check suites: DP oracles, gradient identities, annealing limits, metrics.

Each check returns a :class:`CheckResult`; ``run_all`` runs them in order.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .annealing import anneal_occupancy, gaussian_filter
from .decode import metrics
from .dp import (
    brute_force_best_path,
    brute_force_logsum,
    brute_force_occupancy,
    forward_backward,
    forward_sum,
    viterbi,
)
from .lattice import build_lattice, expand_to_states, log_matching, log_position_prior
from .neural import (
    AlignerNetwork,
    VaeHead,
    conv1d_backward,
    conv1d_forward,
    kl_standard_normal,
    kl_standard_normal_grad,
    recon_loss_acoustic,
    recon_loss_acoustic_grad,
    recon_loss_linguistic,
    recon_loss_linguistic_grad,
    stack_backward,
    stack_forward,
)
from .training import TrainConfig, Utterance, alignment_backward, total_loss, utterance_gradients


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def numerical_gradient(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` wrt every entry of ``array`` (perturbed in place)."""
    grad = np.zeros(array.shape)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def budget_ratio(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-6) -> float:
    """Worst ``|a - n| / max(rtol * max(|a|, |n|), atol)``; values <= 1 pass."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    allowed = np.maximum(rtol * np.maximum(np.abs(a), np.abs(n)), atol)
    return float(np.max(np.abs(a - n) / allowed))


def random_lattice(rng, n_frames, n_states):
    return rng.uniform(-5.0, 0.0, size=(n_frames, n_states))


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    return wrapper


@_timed
def check_dp_oracle(n_cases: int = 1000, seed: int = 0) -> CheckResult:
    """Forward-sum, occupancy and Viterbi against exhaustive path enumeration."""
    rng = np.random.default_rng(seed)
    worst_loss = worst_occ = 0.0
    score_mismatch = path_mismatch = 0
    for _ in range(n_cases):
        n_frames = int(rng.integers(1, 9))
        n_states = int(rng.integers(1, min(n_frames, 5) + 1))
        lb = random_lattice(rng, n_frames, n_states)
        loss, gamma = forward_backward(lb)
        ref = brute_force_logsum(lb)
        worst_loss = max(worst_loss, abs(-loss - ref) / max(abs(ref), 1e-300))
        worst_occ = max(worst_occ, float(np.abs(gamma - brute_force_occupancy(lb)).max()))
        path, best = viterbi(lb), brute_force_best_path(lb)
        score_mismatch += path.log_score != best.log_score
        path_mismatch += not np.array_equal(path.states, best.states)
    ok = worst_loss <= 1e-9 and worst_occ <= 1e-9 and score_mismatch == 0 and path_mismatch == 0
    return CheckResult(
        "dp-oracle",
        ok,
        f"{n_cases} lattices, loss rel {worst_loss:.1e}, occupancy abs {worst_occ:.1e}, "
        f"viterbi score/path mismatches {score_mismatch}/{path_mismatch}",
    )


@_timed
def check_gradient_identity(n_cases: int = 100, seed: int = 1, h: float = 1e-5) -> CheckResult:
    """Finite differences of the loss wrt each log b(t, k) equal minus the occupancy."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        n_frames = int(rng.integers(1, 9))
        n_states = int(rng.integers(1, min(n_frames, 5) + 1))
        lb = random_lattice(rng, n_frames, n_states)
        _, gamma = forward_backward(lb)
        num = numerical_gradient(lambda: forward_sum(lb)[0], lb, h)
        worst = max(worst, float(np.abs(num + gamma).max()))
    return CheckResult("gradient-identity", worst <= 1e-4, f"{n_cases} lattices, max |dL/dlogb + gamma| = {worst:.1e}")


@_timed
def check_embedding_gradients(n_cases: int = 50, seed: int = 2) -> CheckResult:
    """Embedding gradients from alignment_backward against differences of the scalar loss."""
    rng = np.random.default_rng(seed)
    config = TrainConfig(use_annealing=False)
    worst = 0.0
    for i in range(n_cases):
        n_frames = int(rng.integers(1, 7))
        n_states = int(rng.integers(1, min(n_frames, 4) + 1))
        dim = int(rng.integers(1, 9))
        y = rng.standard_normal((n_frames, dim))
        x = rng.standard_normal((n_states, dim))
        use_prior = bool(i % 2)
        prior = log_position_prior(n_frames, n_states, config.omega)

        def loss():
            return forward_sum(build_lattice(log_matching(y, x), prior, use_prior))[0]

        lattice = build_lattice(log_matching(y, x), prior, use_prior)
        gy, gx, _, _, _ = alignment_backward(lattice, y, x, 1.0, config)
        worst = max(worst, budget_ratio(gy, numerical_gradient(loss, y)),
                    budget_ratio(gx, numerical_gradient(loss, x)))
    return CheckResult("embedding-gradients", worst <= 1.0,
                       f"{n_cases} instances, worst error/tolerance {worst:.2e}")


@_timed
def check_annealing_limit(seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_delta = worst_sum = 0.0
    for _ in range(50):
        n_frames = int(rng.integers(2, 30))
        n_states = int(rng.integers(1, min(n_frames, 12) + 1))
        _, gamma = forward_backward(random_lattice(rng, n_frames, n_states))
        worst_delta = max(worst_delta, float(np.abs(anneal_occupancy(gamma, 1e-3) - gamma).max()))
        for sigma in (0.5, 1.0, 3.0, 30.0):
            rows = anneal_occupancy(gamma, sigma).sum(axis=1)
            worst_sum = max(worst_sum, float(np.abs(rows - 1.0).max()))
    spike = np.zeros((1, 7))
    spike[0, 3] = 1.0
    expected = gaussian_filter(1.0, 3)
    spike_err = float(np.abs(anneal_occupancy(spike, 1.0)[0] - expected).max())
    raw = gaussian_filter(1.0, 1, normalize=False)
    raw_err = abs(raw[0] - math.exp(-0.5)) + abs(raw[2] - math.exp(-0.5)) + abs(raw[1] - 1.0)
    ok = worst_delta <= 1e-9 and spike_err <= 1e-9 and raw_err <= 1e-12 and worst_sum <= 1e-9
    return CheckResult(
        "annealing-limit",
        ok,
        f"delta-limit {worst_delta:.1e}, spike {spike_err:.1e}, row sums {worst_sum:.1e}",
    )


@_timed
def check_neural_gradients(seed: int = 4) -> CheckResult:
    """Finite-difference checks for every layer and loss in 64-bit."""
    rng = np.random.default_rng(seed)
    errors = {}

    # conv1d
    w = rng.standard_normal((2, 2, 3))
    b = rng.standard_normal(2)
    x = rng.standard_normal((2, 5))
    r = rng.standard_normal((2, 5))
    loss = lambda: float(np.sum(conv1d_forward(w, b, x) * r))  # noqa: E731
    gx, gw, gb = conv1d_backward(w, x, r)
    errors["conv1d"] = max(budget_ratio(gx, numerical_gradient(loss, x)),
                           budget_ratio(gw, numerical_gradient(loss, w)),
                           budget_ratio(gb, numerical_gradient(loss, b)))

    # ReLU stack with projection
    params = {}
    for i, (co, ci) in enumerate([(5, 3), (5, 5)]):
        params[f"s.conv{i}.weight"] = rng.standard_normal((co, ci, 3))
        params[f"s.conv{i}.bias"] = rng.standard_normal(co)
    params["s.proj.weight"] = rng.standard_normal((4, 5, 1))
    params["s.proj.bias"] = rng.standard_normal(4)
    x = rng.standard_normal((3, 7))
    r = rng.standard_normal((4, 7))
    loss = lambda: float(np.sum(stack_forward(params, "s", 2, x)[0] * r))  # noqa: E731
    _, cache = stack_forward(params, "s", 2, x)
    grads = {}
    gx = stack_backward(params, "s", 2, cache, r, grads)
    err = budget_ratio(gx, numerical_gradient(loss, x))
    for name, p in params.items():
        err = max(err, budget_ratio(grads[name], numerical_gradient(loss, p)))
    errors["conv-stack"] = err

    # KL
    head = VaeHead(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
    g_mu, g_lv = kl_standard_normal_grad(head)
    loss = lambda: kl_standard_normal(head)  # noqa: E731
    errors["kl"] = max(budget_ratio(g_mu, numerical_gradient(loss, head.mu)),
                       budget_ratio(g_lv, numerical_gradient(loss, head.logvar)))

    # reconstruction losses
    recon, target = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    errors["mse"] = budget_ratio(recon_loss_acoustic_grad(recon, target),
                              numerical_gradient(lambda: recon_loss_acoustic(recon, target), recon))
    logits, labels = rng.standard_normal((6, 5)), rng.integers(0, 5, 6)
    errors["cross-entropy"] = budget_ratio(
        recon_loss_linguistic_grad(logits, labels),
        numerical_gradient(lambda: recon_loss_linguistic(logits, labels), logits))

    # linguistic encoder incl. embedding tables, logvar head
    net = AlignerNetwork(n_features=3, vocab=["a", "b", "c"], states_per_phoneme=2,
                         embed_dim=2, hidden_channels=4, layers=2)
    params = net.init_params(rng)
    for name in params:
        params[name] = params[name] + 0.3 * rng.standard_normal(params[name].shape)
    states = expand_to_states(["a", "c", "a"], 2)
    r_mu, r_lv = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))

    def enc_loss():
        head, _ = net.encode_linguistic(params, states)
        return float(np.sum(head.mu * r_mu) + np.sum(head.logvar * r_lv))

    head, cache = net.encode_linguistic(params, states)
    grads = {}
    net.encode_linguistic_backward(params, cache, r_mu, r_lv, grads)
    errors["linguistic-encoder"] = max(
        budget_ratio(grads[n], numerical_gradient(enc_loss, params[n]))
        for n in params if n.startswith(("lng_enc", "lng_in")))

    # whole per-utterance objective: both encoders, reparameterized decoders, KL terms
    config = TrainConfig(use_annealing=False, embed_dim=2, hidden_channels=3, layers=1,
                         states_per_phoneme=2, omega=0.2, w_aco=0.6, w_lng=0.4, kl_weight=0.5)
    net = AlignerNetwork(n_features=3, vocab=["a", "b"], states_per_phoneme=2,
                         embed_dim=2, hidden_channels=3, layers=1)
    params = net.init_params(rng)
    for name in params:
        params[name] = params[name] + 0.3 * rng.standard_normal(params[name].shape)
    utt = Utterance("check", rng.standard_normal((6, 3)), ["a", "b"])

    def utt_loss():
        parts = utterance_gradients(net, params, utt, config, 1.0, np.random.default_rng(0), {})
        return total_loss(*parts, config)

    grads = {}
    utterance_gradients(net, params, utt, config, 1.0, np.random.default_rng(0), grads)
    errors["utterance-objective"] = max(
        budget_ratio(grads[n], numerical_gradient(utt_loss, params[n])) for n in params)

    worst = max(errors.values())
    detail = "error/tolerance " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    return CheckResult("neural-gradients", worst <= 1.0, detail)


@_timed
def check_metric_arithmetic(seed: int = 5) -> CheckResult:
    rep = metrics([0.0, 10.0, 25.0, 60.0])
    exact = (rep.mae_ms, rep.median_ms, rep.tol20_pct, rep.tol50_pct) == (23.75, 17.5, 50.0, 25.0)
    rng = np.random.default_rng(seed)
    nested = True
    for _ in range(200):
        r = metrics(rng.normal(0.0, 40.0, size=int(rng.integers(1, 50))))
        nested &= r.tol20_pct >= r.tol50_pct
    return CheckResult("metric-arithmetic", exact and nested,
                       f"reference row {'exact' if exact else 'WRONG'}, tol20 >= tol50 {'holds' if nested else 'violated'}")


ALL_CHECKS = (
    check_dp_oracle,
    check_gradient_identity,
    check_embedding_gradients,
    check_annealing_limit,
    check_neural_gradients,
    check_metric_arithmetic,
)


def run_all(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for check in ALL_CHECKS:
        res = check()
        echo(res.line())
        ok &= res.passed
    return ok
