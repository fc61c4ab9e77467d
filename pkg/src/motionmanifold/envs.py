"""Planar obstacle environments, demonstration synthesis, and evaluation.

Three benchmark layouts share the endpoints q_i = (0, 0), q_f = (1, 0)
and differ in obstacle count and the number of homotopy classes the
demonstrations cover (2, 3, 4).  Demonstrations are cubic splines through
per-class waypoint templates with Gaussian jitter, regenerated until
collision-free.  Success-rate evaluation draws rejection-filtered samples
from a fitted density, decodes them to curves, and collision-checks each
on a dense phase grid; all model kinds run through this one code path.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .basis import BasisSet, CurveModel, TimedTrajectory, evaluate_batch
from .density import (SampleFilter, gmm_fit, kde_build, min_loglik_threshold,
                      rejection_sample)
from .errors import GenerationError
from .training import TrainConfig, train, flatten_params


@dataclass
class Disk:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass
class PlanarEnv:
    obstacles: list
    q_start: np.ndarray
    q_goal: np.ndarray
    bounds: np.ndarray           # ((xmin, xmax), (ymin, ymax))

    def __post_init__(self):
        self.q_start = np.asarray(self.q_start, dtype=float)
        self.q_goal = np.asarray(self.q_goal, dtype=float)
        self.bounds = np.asarray(self.bounds, dtype=float)
        for q in (self.q_start, self.q_goal):
            if collision_check(q, self) > 0:
                raise ValueError("endpoint lies inside an obstacle")

    def to_dict(self):
        return {"obstacles": [{"center": o.center.tolist(),
                               "radius": o.radius} for o in self.obstacles],
                "q_start": self.q_start.tolist(),
                "q_goal": self.q_goal.tolist(),
                "bounds": self.bounds.tolist()}

    @classmethod
    def from_dict(cls, data):
        obstacles = [Disk(center=np.array(o["center"]), radius=o["radius"])
                     for o in data["obstacles"]]
        return cls(obstacles=obstacles, q_start=np.array(data["q_start"]),
                   q_goal=np.array(data["q_goal"]),
                   bounds=np.array(data["bounds"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def collision_check(q, env, t=0.0):
    """Worst-case penetration depth; positive means inside an obstacle."""
    q = np.asarray(q, dtype=float)
    worst = -np.inf
    for obs in env.obstacles:
        worst = max(worst, obs.radius - float(np.linalg.norm(q - obs.center)))
    return worst if np.isfinite(worst) else -1.0


@dataclass
class DemoSpec:
    classes: int
    per_class: int
    noise: float
    peaks: tuple
    samples: int = 80
    duration: float = 1.0

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("need at least one demo per class")
        if len(self.peaks) != self.classes:
            raise ValueError("one peak template per class required")

    @property
    def total(self):
        return self.classes * self.per_class


_ENV_TABLE = {
    "env1": {"obstacles": [((0.5, 0.0), 0.15)],
             "spec": DemoSpec(classes=2, per_class=5, noise=0.02,
                              peaks=(0.35, -0.35))},
    "env2": {"obstacles": [((0.5, 0.22), 0.12), ((0.5, -0.22), 0.12)],
             "spec": DemoSpec(classes=3, per_class=5, noise=0.02,
                              peaks=(0.55, 0.0, -0.55))},
    "env3": {"obstacles": [((0.5, 0.3), 0.09), ((0.5, 0.0), 0.09),
                           ((0.5, -0.3), 0.09)],
             "spec": DemoSpec(classes=4, per_class=5, noise=0.015,
                              peaks=(0.55, 0.15, -0.15, -0.55))},
}

_WAYPOINT_X = np.array([0.0, 0.2, 0.5, 0.8, 1.0])
_WAYPOINT_SHAPE = np.array([0.0, 0.55, 1.0, 0.55, 0.0])


def env_spec(env_id):
    key = env_id.lower()
    if key not in _ENV_TABLE:
        raise ValueError(f"unknown environment {env_id!r}; "
                         f"expected one of {sorted(_ENV_TABLE)}")
    return _ENV_TABLE[key]["spec"]


def _spline_demo(peak, noise, rng, spec):
    ys = peak * _WAYPOINT_SHAPE.copy()
    ys[1:-1] += noise * rng.standard_normal(3)
    spline = CubicSpline(_WAYPOINT_X, ys, bc_type="natural")
    t = np.linspace(0.0, spec.duration, spec.samples)
    x = t / spec.duration
    return TimedTrajectory(times=t,
                           points=np.column_stack([x, spline(x)]))


def _demo_clear(traj, env, margin=0.02, grid_points=500):
    # check on a dense resampling, not just the stored samples
    xs = np.linspace(0.0, 1.0, grid_points)
    pts = np.column_stack([
        np.interp(xs, traj.times / traj.times[-1], traj.points[:, 0]),
        np.interp(xs, traj.times / traj.times[-1], traj.points[:, 1])])
    return max(collision_check(q, env) for q in pts) < -margin


def generate_env(env_id, seed=0):
    """Environment plus collision-free demos, grouped by homotopy class."""
    key = env_id.lower()
    if key not in _ENV_TABLE:
        raise ValueError(f"unknown environment {env_id!r}; "
                         f"expected one of {sorted(_ENV_TABLE)}")
    entry = _ENV_TABLE[key]
    spec = entry["spec"]
    env = PlanarEnv(
        obstacles=[Disk(center=np.array(c), radius=r)
                   for c, r in entry["obstacles"]],
        q_start=np.array([0.0, 0.0]), q_goal=np.array([1.0, 0.0]),
        bounds=np.array([[-0.2, 1.2], [-0.8, 0.8]]))
    rng = np.random.default_rng(seed)
    demos = []
    for peak in spec.peaks:
        for _ in range(spec.per_class):
            for attempt in range(100):
                traj = _spline_demo(peak, spec.noise, rng, spec)
                if _demo_clear(traj, env):
                    demos.append(traj)
                    break
            else:
                raise GenerationError(
                    f"demo for peak {peak} in {env_id} stayed in collision "
                    f"after 100 jitter retries")
    return env, demos


def generate_continuum_demos(count=30, seed=0, peak_range=(-0.5, 0.5)):
    """Obstacle-free demo family whose peak height sweeps a continuum.

    The resulting trajectories fill one connected sheet instead of
    separated clusters, which is the regime where the adaptive kernel
    density is the right latent density model.
    """
    env = PlanarEnv(obstacles=[], q_start=np.array([0.0, 0.0]),
                    q_goal=np.array([1.0, 0.0]),
                    bounds=np.array([[-0.2, 1.2], [-0.8, 0.8]]))
    spec = DemoSpec(classes=1, per_class=count, noise=0.01, peaks=(0.0,))
    rng = np.random.default_rng(seed)
    lo, hi = peak_range
    demos = []
    for peak in np.linspace(lo, hi, count):
        demos.append(_spline_demo(peak, spec.noise, rng, spec))
    return env, demos


def fit_demos(env, demos, n_bases=20):
    """Via-point curve model with shared endpoints, plus per-demo fits."""
    basis = BasisSet.uniform(n_bases, mode="via-point")
    model = CurveModel.via_point(basis, env.q_start, env.q_goal)
    return model, [model.fit(traj) for traj in demos]


# -- model kinds and the shared evaluation path ---------------------------

KINDS = ("vmp-gauss", "vmp-gmm", "mmp++", "immp++")


@dataclass
class ModelBundle:
    """Everything evaluation needs: a density, a decoder, a curve model."""

    kind: str
    density: object
    decode_batch: callable       # (N, d) samples -> (N, n, B) coefficients
    curve_model: CurveModel
    threshold: float
    manifold: object = None      # latent model for the MMP variants
    latents: np.ndarray = None


def build_bundle(kind, env, demos, seed=0, n_bases=20, n_components=None,
                 density_family="gmm", train_config=None, alpha=0.1):
    """Train/fit the artifacts behind one model kind.

    VMP kinds fit their density directly over flattened coefficients;
    the latent kinds train an autoencoder first (alpha = 0 for the plain
    variant, alpha > 0 for the distortion-regularized one).

    The minimum-training-log-density rejection threshold is applied for
    the latent kinds only.  With fewer demos than coefficient
    dimensions, the baseline Gaussian/GMM over coefficients is rank
    deficient up to the ridge, which places every training point far
    above any fresh draw in log-density; a threshold there starves the
    sampler, so the baselines draw from their density directly
    (threshold -inf, same sampling code path).
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected {KINDS}")
    model, fits = fit_demos(env, demos, n_bases=n_bases)
    w = np.stack([flatten_params(p) for p in fits])
    dim, n_b = model.dim, model.basis.size
    if n_components is None:
        n_components = default_components(env)
    if kind == "vmp-gauss":
        density = gmm_fit(w, 1, seed=seed)
        return ModelBundle(kind=kind, density=density,
                           decode_batch=lambda s: s.reshape(-1, dim, n_b),
                           curve_model=model, threshold=-np.inf)
    if kind == "vmp-gmm":
        density = gmm_fit(w, n_components, seed=seed)
        return ModelBundle(kind=kind, density=density,
                           decode_batch=lambda s: s.reshape(-1, dim, n_b),
                           curve_model=model, threshold=-np.inf)
    kind_alpha = 0.0 if kind == "mmp++" else alpha
    if train_config is None:
        cfg = TrainConfig(seed=seed, alpha=kind_alpha)
    else:
        cfg = replace(train_config, seed=seed, alpha=kind_alpha)
    manifold = train(fits, model, cfg)
    z = manifold.encode_many(fits)
    if density_family == "gmm":
        density = gmm_fit(z, n_components, seed=seed)
    elif density_family == "kde":
        density = kde_build(z)
    else:
        raise ValueError(f"unknown density family {density_family!r}")
    threshold = min_loglik_threshold(density, z)
    return ModelBundle(kind=kind, density=density,
                       decode_batch=manifold.decode_many,
                       curve_model=model, threshold=threshold,
                       manifold=manifold, latents=z)


def default_components(env):
    """Mixture size matching the homotopy-class count of the layout."""
    n_obs = len(env.obstacles)
    return {0: 1, 1: 2, 2: 3, 3: 4}.get(n_obs, max(1, n_obs + 1))


def sample_curves(bundle, count, rng, max_attempt_factor=400):
    """Rejection-filtered draws decoded to coefficient stacks."""
    filt = SampleFilter(threshold=bundle.threshold,
                        max_attempts=max_attempt_factor * count)
    result = rejection_sample(bundle.density, filt, rng, count)
    return bundle.decode_batch(np.atleast_2d(result.samples)), result


def success_rate(bundle, env, num_samples, rng, grid_points=500):
    """Fraction of sampled trajectories that never touch an obstacle."""
    stacks, result = sample_curves(bundle, num_samples, rng)
    grid = np.linspace(0.0, 1.0, grid_points)
    pts = evaluate_batch(bundle.curve_model, stacks, grid)  # (N, T, 2)
    collided = np.zeros(len(pts), dtype=bool)
    for obs in env.obstacles:
        dist = np.linalg.norm(pts - obs.center, axis=2)
        collided |= np.any(obs.radius - dist > 0, axis=1)
    rate = 100.0 * float(np.mean(~collided))
    return rate, result.acceptance_rate


@dataclass
class EvalReport:
    kind: str
    env_id: str
    seeds: list
    success_rates: list          # percent, one per seed
    acceptance_rates: list
    num_samples: int = 500

    @property
    def mean(self):
        return float(np.mean(self.success_rates))

    @property
    def std(self):
        return float(np.std(self.success_rates))

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "env", "seed", "num_samples",
                             "success_rate", "acceptance_rate"])
            for s, rate, acc in zip(self.seeds, self.success_rates,
                                    self.acceptance_rates):
                writer.writerow([self.kind, self.env_id, s,
                                 self.num_samples, f"{rate:.4f}",
                                 f"{acc:.6f}"])

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"empty evaluation report {path}")
        return cls(kind=rows[0]["kind"], env_id=rows[0]["env"],
                   seeds=[int(r["seed"]) for r in rows],
                   success_rates=[float(r["success_rate"]) for r in rows],
                   acceptance_rates=[float(r["acceptance_rate"])
                                     for r in rows],
                   num_samples=int(rows[0]["num_samples"]))


def evaluate_success(bundle, env, env_id="", num_samples=500,
                     seeds=(0, 1, 2, 3, 4)):
    """Success-rate protocol: fresh sampling per seed on fixed artifacts."""
    rates, accepts = [], []
    for s in seeds:
        rng = np.random.default_rng(1000 + s)
        rate, acc = success_rate(bundle, env, num_samples, rng)
        rates.append(rate)
        accepts.append(acc)
    return EvalReport(kind=bundle.kind, env_id=env_id, seeds=list(seeds),
                      success_rates=rates, acceptance_rates=accepts,
                      num_samples=num_samples)
