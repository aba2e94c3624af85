"""scikit-learn style wrapper around the aligner.

Samples are utterances: either :class:`~vaealign.training.Utterance`
objects or ``(features, phonemes)`` pairs where ``features`` is a
``(T, D)`` array and ``phonemes`` a token sequence.
"""
from __future__ import annotations

from dataclasses import asdict, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .decode import corpus_metrics
from .neural import AlignerNetwork, ParameterStore
from .training import TrainConfig, Utterance, align_utterance, run_training


class VaeAligner(BaseEstimator):
    """Unsupervised phoneme aligner trained with a forward-sum loss.

    ``fit`` learns acoustic and linguistic encoders (optionally VAE
    regularized, with annealed occupancy gradients); ``predict`` returns one
    :class:`~vaealign.decode.BoundarySet` per utterance from Viterbi decoding.
    """

    def __init__(
        self,
        omega=0.01,
        w_aco=0.1,
        w_lng=0.1,
        kl_weight=1.0,
        states_per_phoneme=3,
        sigma0=30.0,
        anneal_rate=0.9,
        anneal_interval=1000,
        sigma_min=1e-3,
        anneal_normalize=True,
        use_prior=True,
        use_vae=True,
        use_annealing=True,
        lr=1e-5,
        batch_size=4,
        max_steps=90_000,
        seed=0,
        eval_interval=1000,
        embed_dim=64,
        hidden_channels=256,
        layers=6,
        frame_shift=0.010,
        mu_init_scale=1e-2,
    ):
        self.omega = omega
        self.w_aco = w_aco
        self.w_lng = w_lng
        self.kl_weight = kl_weight
        self.states_per_phoneme = states_per_phoneme
        self.sigma0 = sigma0
        self.anneal_rate = anneal_rate
        self.anneal_interval = anneal_interval
        self.sigma_min = sigma_min
        self.anneal_normalize = anneal_normalize
        self.use_prior = use_prior
        self.use_vae = use_vae
        self.use_annealing = use_annealing
        self.lr = lr
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.seed = seed
        self.eval_interval = eval_interval
        self.embed_dim = embed_dim
        self.hidden_channels = hidden_channels
        self.layers = layers
        self.frame_shift = frame_shift
        self.mu_init_scale = mu_init_scale

    @classmethod
    def from_config(cls, config: TrainConfig, **kwargs) -> "VaeAligner":
        return cls(**asdict(config), **kwargs)

    def to_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def _validate(self, X) -> list[Utterance]:
        utts = []
        for i, item in enumerate(X):
            if isinstance(item, Utterance):
                u = item
            else:
                feats, phonemes = item
                u = Utterance(f"utt{i:05d}", feats, list(phonemes), self.frame_shift)
            feats = check_array(u.features, dtype=np.float64)
            if len(u.phonemes) == 0:
                raise ValueError(f"{u.utt_id}: empty phoneme sequence")
            utts.append(Utterance(u.utt_id, feats, list(u.phonemes), u.frame_shift, u.reference))
        if not utts:
            raise ValueError("no utterances given")
        dims = {u.features.shape[1] for u in utts}
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
        return utts

    def fit(self, X, y=None, dev=(), on_step=None, on_eval=None):
        """Train on utterances ``X``; ``dev`` utterances with references are scored periodically."""
        config = self.to_config()
        utts = self._validate(X)
        dev_utts = self._validate(dev) if len(dev) else []
        vocab = sorted({p for u in utts for p in u.phonemes})
        self.n_features_in_ = utts[0].features.shape[1]
        self.network_ = AlignerNetwork(
            n_features=self.n_features_in_,
            vocab=vocab,
            states_per_phoneme=config.states_per_phoneme,
            embed_dim=config.embed_dim,
            hidden_channels=config.hidden_channels,
            layers=config.layers,
            mu_init_scale=self.mu_init_scale,
        )
        self.store_ = ParameterStore(self.network_.init_params(np.random.default_rng(config.seed)))
        self.report_ = run_training(
            self.network_, self.store_, utts, config, dev_utts, on_step=on_step, on_eval=on_eval
        )
        return self

    def predict(self, X) -> list:
        check_is_fitted(self, "store_")
        config = self.to_config()
        out = []
        for u in self._validate(X):
            if u.features.shape[1] != self.n_features_in_:
                raise ValueError(
                    f"{u.utt_id}: expected {self.n_features_in_} features, got {u.features.shape[1]}")
            out.append(align_utterance(self.network_, self.store_.params, u.features,
                                       u.phonemes, config, u.frame_shift))
        return out

    def score(self, X, y=None) -> float:
        """Negative boundary MAE in ms; references come from ``y`` or the utterances."""
        utts = self._validate(X)
        refs = list(y) if y is not None else [u.reference for u in utts]
        preds = self.predict(utts)
        pairs = {f"{i:06d}": (p, r) for i, (p, r) in enumerate(zip(preds, refs)) if r is not None}
        return -corpus_metrics(pairs).mae_ms
