import numpy as np
import pytest

from motionmanifold.basis import CurveParams
from motionmanifold.errors import TrainingError
from motionmanifold.geometry import curvegeom_euclidean
from motionmanifold.training import (ManifoldModel, TrainConfig,
                                     flatten_params, mixup_sample, train,
                                     unflatten_params)
from conftest import sine_family_fits


def test_flatten_round_trip():
    rng = np.random.default_rng(0)
    w = CurveParams(rng.normal(size=(3, 5)))
    flat = flatten_params(w)
    assert flat.shape == (15,)
    back = unflatten_params(flat, 3, 5)
    assert np.array_equal(back.coefficients, w.coefficients)
    # row-major: coordinate i occupies the i-th block of length B
    assert np.array_equal(flat[:5], w.coefficients[0])


def test_mixup_extends_past_both_endpoints():
    # with endpoints 0 and 1 the sample equals the mixing coefficient
    rng = np.random.default_rng(1)
    draws = np.array([mixup_sample(1.0, 0.0, rng) for _ in range(20000)])
    assert draws.min() >= -0.2 and draws.max() <= 1.2
    assert draws.min() < -0.15 and draws.max() > 1.15   # reaches extensions
    assert abs(draws.mean() - 0.5) < 0.01


def test_mixup_respects_extension_argument():
    rng = np.random.default_rng(2)
    draws = np.array([mixup_sample(1.0, 0.0, rng, extension=0.0)
                      for _ in range(2000)])
    assert draws.min() >= 0.0 and draws.max() <= 1.0


def test_config_validation():
    with pytest.raises(ValueError, match="alpha"):
        TrainConfig(alpha=-0.5)
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="latent"):
        TrainConfig(latent_dim=0)
    with pytest.raises(ValueError, match="trace"):
        TrainConfig(trace_mode="qr")


def test_config_round_trip():
    cfg = TrainConfig(latent_dim=3, alpha=0.01, epochs=7, hidden=(8, 8),
                      seed=5)
    clone = TrainConfig.from_dict(cfg.to_dict())
    assert clone == cfg


def test_training_reduces_reconstruction(arc_family):
    model, fits = arc_family
    cfg = TrainConfig(latent_dim=2, epochs=200, hidden=(32, 32), seed=0)
    m = train(fits, model, cfg)
    h = m.history["recon"]
    assert h[-1] < 0.05 * h[0]
    assert len(h) == 200
    assert np.all(np.array(m.history["distortion"]) == 0.0)


def test_training_is_seed_reproducible(arc_family):
    model, fits = arc_family
    cfg = TrainConfig(latent_dim=2, epochs=50, hidden=(16, 16), seed=3)
    a = train(fits, model, cfg)
    b = train(fits, model, cfg)
    assert a.history["recon"] == b.history["recon"]
    for wa, wb in zip(a.decoder.weights, b.decoder.weights):
        assert np.array_equal(wa, wb)


def test_alpha_zero_never_touches_metric(arc_family):
    model, fits = arc_family
    metric = curvegeom_euclidean(model.basis, dim=model.dim)
    cfg = TrainConfig(latent_dim=2, epochs=20, hidden=(8, 8), seed=0,
                      alpha=0.0)
    m = train(fits, model, cfg, metric=metric)
    assert metric.use_count == 0
    assert m.metric_use_count == 0


def test_alpha_positive_regularizes(arc_family):
    model, fits = arc_family
    metric = curvegeom_euclidean(model.basis, dim=model.dim)
    cfg = TrainConfig(latent_dim=2, epochs=60, hidden=(16, 16), seed=0,
                      alpha=0.1)
    m = train(fits, model, cfg, metric=metric)
    assert metric.use_count > 0
    dist = np.array(m.history["distortion"])
    assert np.all(dist > 0)
    tot = np.array(m.history["total"])
    rec = np.array(m.history["recon"])
    assert np.allclose(tot, rec + 0.1 * dist)


def test_distortion_changes_decoder_not_just_history(arc_family):
    model, fits = arc_family
    base = TrainConfig(latent_dim=2, epochs=40, hidden=(16, 16), seed=0)
    reg = TrainConfig(latent_dim=2, epochs=40, hidden=(16, 16), seed=0,
                      alpha=0.1)
    a = train(fits, model, base)
    b = train(fits, model, reg)
    diff = max(np.abs(wa - wb).max()
               for wa, wb in zip(a.decoder.weights, b.decoder.weights))
    assert diff > 1e-6


def test_nan_dataset_raises_at_first_epoch(arc_family):
    model, fits = arc_family
    poisoned = [CurveParams(f.coefficients.copy()) for f in fits]
    poisoned[0].coefficients[0, 0] = np.nan
    cfg = TrainConfig(latent_dim=2, epochs=10, hidden=(8, 8), seed=0)
    with pytest.raises(TrainingError, match="epoch 0"):
        train(poisoned, model, cfg)


def test_model_save_load_round_trip(tmp_path, small_manifold):
    m, model, fits = small_manifold
    m.save(tmp_path)
    clone = ManifoldModel.load(tmp_path)
    z = m.encode_many(fits)
    assert np.allclose(clone.encode_many(fits), z)
    assert np.allclose(clone.decode_many(z), m.decode_many(z))
    assert clone.config == m.config
    assert clone.history["recon"] == pytest.approx(m.history["recon"])


def test_encode_decode_shapes(small_manifold):
    m, model, fits = small_manifold
    z = m.encode(fits[0])
    assert z.shape == (2,)
    w = m.decode(z)
    assert w.coefficients.shape == (model.dim, model.basis.size)
    zs = m.encode_many(fits)
    stack = m.decode_many(zs)
    assert stack.shape == (len(fits), model.dim, model.basis.size)


def test_curve_points_interpolates_endpoints(small_manifold):
    m, model, fits = small_manifold
    z = m.encode(fits[3])
    pts = m.curve_points(z, np.array([0.0, 1.0]))
    assert np.allclose(pts[0], model.q_start, atol=1e-12)
    assert np.allclose(pts[1], model.q_end, atol=1e-12)


def test_reconstruction_quality_of_trained_model(small_manifold):
    m, model, fits = small_manifold
    x = np.stack([flatten_params(f) for f in fits])
    z = m.encode_many(fits)
    xhat = np.stack([flatten_params(CurveParams(c))
                     for c in m.decode_many(z)])
    rmse = np.sqrt(np.mean((xhat - x) ** 2))
    scale = np.sqrt(np.mean(x ** 2))
    assert rmse < 0.25 * scale
