"""Autoencoder latent manifolds over curve coefficients.

Curve coefficient matrices are flattened row-major, pushed through a tanh
encoder/decoder pair, and trained full-batch with Adam on mean squared
reconstruction error.  An optional distortion penalty, evaluated on mixup
points between encoded demonstrations, flattens the decoder pullback
metric so latent Euclidean distances track trajectory-space distances.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .basis import CurveModel, CurveParams, evaluate_batch
from .errors import TrainingError
from .geometry import curvegeom_euclidean
from . import nets


def flatten_params(params):
    """Coefficient matrix (n, B) -> vector of length n*B, row-major."""
    coeffs = params.coefficients if isinstance(params, CurveParams) else params
    return np.asarray(coeffs, dtype=float).reshape(-1)


def unflatten_params(vec, dim, n_bases):
    vec = np.asarray(vec, dtype=float)
    if vec.size != dim * n_bases:
        raise ValueError(f"vector length {vec.size} != {dim} * {n_bases}")
    return CurveParams(coefficients=vec.reshape(dim, n_bases))


def mixup_sample(z_a, z_b, rng, extension=0.2):
    """Point on the extended segment between two latents."""
    delta = rng.uniform(-extension, 1.0 + extension)
    return delta * np.asarray(z_a) + (1.0 - delta) * np.asarray(z_b)


@dataclass
class TrainConfig:
    latent_dim: int = 2
    alpha: float = 0.0
    mix_extension: float = 0.2
    mix_batch: int = 16
    epochs: int = 5000
    learning_rate: float = 1e-3
    hidden: tuple = (256, 256, 256)
    seed: int = 0
    trace_mode: str = "exact"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.trace_mode not in ("exact", "hutchinson"):
            raise ValueError(f"unknown trace mode {self.trace_mode!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class ManifoldModel:
    """Trained encoder/decoder pair tied to one curve model."""

    encoder: nets.Mlp
    decoder: nets.Mlp
    curve_model: CurveModel
    config: TrainConfig
    history: dict = field(default_factory=dict)
    metric_use_count: int = 0

    @property
    def latent_dim(self):
        return self.encoder.out_dim

    def encode(self, params):
        vec = flatten_params(params)
        return self.encoder.forward(vec)

    def encode_many(self, dataset):
        x = np.stack([flatten_params(p) for p in dataset])
        return self.encoder.forward(x)

    def decode(self, z):
        vec = self.decoder.forward(np.asarray(z, dtype=float))
        return unflatten_params(vec, self.curve_model.dim,
                                self.curve_model.basis.size)

    def decode_many(self, z_batch):
        z = np.atleast_2d(np.asarray(z_batch, dtype=float))
        flat = self.decoder.forward(z)
        return flat.reshape(len(z), self.curve_model.dim,
                            self.curve_model.basis.size)

    def curve_points(self, z, taus):
        """Trajectory points of the decoded curve, shape (len(taus), n)."""
        stack = self.decode_many(np.asarray(z, dtype=float)[None, :])
        return evaluate_batch(self.curve_model, stack, taus)[0]

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.encoder.save(os.path.join(directory, "encoder.json"))
        self.decoder.save(os.path.join(directory, "decoder.json"))
        with open(os.path.join(directory, "curve_model.json"), "w") as fh:
            json.dump(self.curve_model.to_dict(), fh, indent=1)
        meta = {"config": self.config.to_dict(),
                "metric_use_count": self.metric_use_count}
        with open(os.path.join(directory, "train_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=1)
        write_history_csv(os.path.join(directory, "history.csv"),
                          self.history)

    @classmethod
    def load(cls, directory):
        encoder = nets.Mlp.load(os.path.join(directory, "encoder.json"))
        decoder = nets.Mlp.load(os.path.join(directory, "decoder.json"))
        with open(os.path.join(directory, "curve_model.json")) as fh:
            curve_model = CurveModel.from_dict(json.load(fh))
        with open(os.path.join(directory, "train_meta.json")) as fh:
            meta = json.load(fh)
        config = TrainConfig.from_dict(meta["config"])
        history = read_history_csv(os.path.join(directory, "history.csv"))
        return cls(encoder=encoder, decoder=decoder, curve_model=curve_model,
                   config=config, history=history,
                   metric_use_count=meta.get("metric_use_count", 0))


def write_history_csv(path, history):
    epochs = len(history.get("recon", []))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "recon", "distortion", "total"])
        for e in range(epochs):
            writer.writerow([e, f"{history['recon'][e]:.10e}",
                             f"{history['distortion'][e]:.10e}",
                             f"{history['total'][e]:.10e}"])


def read_history_csv(path):
    history = {"recon": [], "distortion": [], "total": []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            history["recon"].append(float(row["recon"]))
            history["distortion"].append(float(row["distortion"]))
            history["total"].append(float(row["total"]))
    return history


def _dataset_matrix(dataset, model):
    rows = [flatten_params(p) for p in dataset]
    x = np.stack(rows)
    want = model.dim * model.basis.size
    if x.shape[1] != want:
        raise ValueError(f"flattened demonstrations have length {x.shape[1]},"
                         f" curve model expects {want}")
    return x


def train(dataset, model, config=None, metric=None):
    """Fit the latent manifold to fitted curve coefficients.

    dataset: sequence of CurveParams (or (n, B) arrays) for one CurveModel.
    When ``config.alpha`` is zero the metric object is never touched; the
    returned model records its use count as proof.
    """
    if config is None:
        config = TrainConfig()
    x = _dataset_matrix(dataset, model)
    n_data, n_feat = x.shape
    m = config.latent_dim
    sizes_enc = [n_feat, *config.hidden, m]
    sizes_dec = [m, *config.hidden, n_feat]
    encoder = nets.Mlp.create(sizes_enc, seed=config.seed)
    decoder = nets.Mlp.create(sizes_dec, seed=config.seed + 1)
    if metric is None:
        metric = curvegeom_euclidean(model.basis, dim=model.dim)
    rng = np.random.default_rng(config.seed + 2)
    opt_enc = nets.AdamState(encoder, learning_rate=config.learning_rate)
    opt_dec = nets.AdamState(decoder, learning_rate=config.learning_rate)
    history = {"recon": [], "distortion": [], "total": []}
    use_distortion = config.alpha > 0
    for epoch in range(config.epochs):
        enc_acts = encoder.forward_cache(x)
        z = enc_acts[-1]
        dec_acts = decoder.forward_cache(z)
        resid = dec_acts[-1] - x
        recon = float(np.mean(np.sum(resid ** 2, axis=1)))
        dz, dec_grads = decoder.backward(dec_acts, 2.0 * resid / n_data)
        _, enc_grads = encoder.backward(enc_acts, dz)
        dist_value = 0.0
        if use_distortion:
            ia = rng.integers(0, n_data, size=config.mix_batch)
            ib = rng.integers(0, n_data, size=config.mix_batch)
            delta = rng.uniform(-config.mix_extension,
                                1.0 + config.mix_extension,
                                size=config.mix_batch)
            z_mix = delta[:, None] * z[ia] + (1.0 - delta)[:, None] * z[ib]
            dist_value, dist_grads = nets.grad_of_distortion(
                decoder, z_mix, metric)
            dec_grads = nets.add_grads(dec_grads, dist_grads,
                                       scale=config.alpha)
        total = recon + config.alpha * dist_value
        if not np.isfinite(total):
            raise TrainingError(f"non-finite loss at epoch {epoch}: "
                                f"recon {recon}, distortion {dist_value}")
        try:
            nets.check_finite_grads(enc_grads)
            nets.check_finite_grads(dec_grads)
        except TrainingError as err:
            raise TrainingError(f"epoch {epoch}: {err}") from None
        nets.adam_step(opt_enc, encoder, enc_grads)
        nets.adam_step(opt_dec, decoder, dec_grads)
        history["recon"].append(recon)
        history["distortion"].append(dist_value)
        history["total"].append(total)
    return ManifoldModel(encoder=encoder, decoder=decoder, curve_model=model,
                         config=config, history=history,
                         metric_use_count=metric.use_count)
