"""Command-line driver for dataset synthesis, fitting, training,
sampling, evaluation, and online replanning experiments.

Every command writes only documented JSON/CSV/SVG formats into --out and
is idempotent for identical inputs and seed; wall-clock timestamps go to
a sidecar run.log, never into result files.  Exit codes: 2 for malformed
configuration, 3 for numerical failures inside the library.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .basis import (BasisSet, CurveModel, CurveParams, TimedTrajectory,
                    load_trajectory_dataset, save_trajectory_dataset)
from .density import (SampleFilter, gmm_fit, kde_build, min_loglik_threshold,
                      rejection_sample, save_density)
from .envs import (PlanarEnv, build_bundle, evaluate_success, fit_demos,
                   generate_continuum_demos, generate_env, sample_curves)
from .errors import (BranchError, DegenerateSupportError,
                     DistortionUndefinedError, GenerationError, MetricError,
                     ReplanInfeasibleError, SamplingStarvedError,
                     SingularFitError, TrainingError)
from .render import render_latent_scatter, render_loss_curves, render_scene
from .replan import (MovingDisk, ReplanConfig, constraint_from_script,
                     run_episode, save_obstacle_script)
from .training import ManifoldModel, TrainConfig, train
from . import basis as basis_mod

_NUMERICAL_ERRORS = (SingularFitError, MetricError, DistortionUndefinedError,
                     TrainingError, BranchError, DegenerateSupportError,
                     SamplingStarvedError, ReplanInfeasibleError,
                     GenerationError, np.linalg.LinAlgError)


class ConfigError(Exception):
    pass


def _log(out_dir, message):
    stamp = time.strftime("%Y-%m-%d %H:%M:%S")
    with open(os.path.join(out_dir, "run.log"), "a") as fh:
        fh.write(f"[{stamp}] {message}\n")


def _write_meta(out_dir, command, args, fields):
    options = {}
    for name in fields:
        value = getattr(args, name)
        if isinstance(value, tuple):
            value = list(value)
        options[name] = value
    meta = {"command": command, "seed": getattr(args, "seed", None),
            "options": options}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def _prepare_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _parse_hidden(text):
    try:
        sizes = tuple(int(part) for part in str(text).split(",") if part)
    except ValueError:
        raise ConfigError(f"field 'hidden': expected comma-separated "
                          f"integers, got {text!r}")
    if not sizes:
        raise ConfigError("field 'hidden': needs at least one layer size")
    return sizes


def save_fits(path, model, fits, objectives):
    data = {"model": model.to_dict(),
            "coefficients": [p.coefficients.tolist() for p in fits],
            "objectives": objectives}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)


def load_fits(path):
    with open(path) as fh:
        data = json.load(fh)
    model = CurveModel.from_dict(data["model"])
    fits = [CurveParams(np.asarray(c, dtype=float))
            for c in data["coefficients"]]
    return model, fits, data.get("objectives", [])


# -- commands -------------------------------------------------------------

def cmd_synth_demos(args):
    out = _prepare_out(args)
    if args.env == "continuum":
        env, demos = generate_continuum_demos(count=args.count,
                                              seed=args.seed)
    else:
        env, demos = generate_env(args.env, seed=args.seed)
    env.save(os.path.join(out, "env.json"))
    save_trajectory_dataset(demos, os.path.join(out, "demos.json"))
    _write_meta(out, "synth-demos", args, ["env", "count"])
    _log(out, f"synth-demos env={args.env} seed={args.seed} "
              f"n={len(demos)}")
    print(f"wrote {len(demos)} demos to {out}")
    return 0


def cmd_fit(args):
    out = _prepare_out(args)
    env = PlanarEnv.load(args.env)
    demos = load_trajectory_dataset(args.demos)
    model, fits = fit_demos(env, demos, n_bases=args.bases)
    objectives = [model.fit_objective(p, traj)
                  for p, traj in zip(fits, demos)]
    save_fits(os.path.join(out, "fits.json"), model, fits, objectives)
    _write_meta(out, "fit", args, ["demos", "env", "bases"])
    _log(out, f"fit demos={args.demos} bases={args.bases}")
    print(f"fitted {len(fits)} curves, max residual "
          f"{max(objectives):.3e}")
    return 0


def cmd_train(args):
    out = _prepare_out(args)
    model, fits, _ = load_fits(args.fits)
    cfg = TrainConfig(latent_dim=args.latent_dim, alpha=args.alpha,
                      epochs=args.epochs, learning_rate=args.learning_rate,
                      hidden=_parse_hidden(args.hidden), seed=args.seed,
                      trace_mode=args.trace_mode)
    manifold = train(fits, model, cfg)
    manifold.save(out)
    z = manifold.encode_many(fits)
    with open(os.path.join(out, "latents.json"), "w") as fh:
        json.dump({"z": z.tolist()}, fh, indent=1)
    _write_meta(out, "train", args,
                ["fits", "alpha", "latent_dim", "epochs", "learning_rate",
                 "hidden", "trace_mode"])
    _log(out, f"train alpha={args.alpha} epochs={args.epochs}")
    print(f"final reconstruction loss "
          f"{manifold.history['recon'][-1]:.6e}")
    return 0


def _density_over(z, family, components, seed):
    if family == "gmm":
        return gmm_fit(z, components, seed=seed)
    if family == "kde":
        return kde_build(z)
    raise ConfigError(f"field 'density': unknown family {family!r}")


def cmd_sample(args):
    out = _prepare_out(args)
    if args.from_params:
        model, fits, _ = load_fits(args.from_params)
        if not 0 <= args.index < len(fits):
            raise ConfigError(f"field 'index': {args.index} outside "
                              f"0..{len(fits) - 1}")
        taus = np.linspace(0.0, 1.0, args.grid)
        pts = model.evaluate(fits[args.index], taus)
        traj = TimedTrajectory(times=taus, points=pts)
        save_trajectory_dataset([traj], os.path.join(out, "samples.json"))
        _write_meta(out, "sample", args, ["from_params", "index", "grid"])
        _log(out, f"sample from_params index={args.index}")
        print(f"wrote reconstructed curve {args.index} to {out}")
        return 0
    manifold = ManifoldModel.load(args.model)
    with open(os.path.join(args.model, "latents.json")) as fh:
        z = np.asarray(json.load(fh)["z"], dtype=float)
    density = _density_over(z, args.density, args.components, args.seed)
    threshold = min_loglik_threshold(density, z)
    rng = np.random.default_rng(args.seed)
    result = rejection_sample(
        density, SampleFilter(threshold=threshold,
                              max_attempts=400 * args.count),
        rng, args.count)
    taus = np.linspace(0.0, 1.0, args.grid)
    stacks = manifold.decode_many(result.samples)
    trajs = []
    for coeffs in stacks:
        pts = manifold.curve_model.evaluate(CurveParams(coeffs), taus)
        trajs.append(TimedTrajectory(times=taus, points=pts))
    save_trajectory_dataset(trajs, os.path.join(out, "samples.json"))
    save_density(os.path.join(out, "density.json"), density)
    _write_meta(out, "sample", args,
                ["model", "density", "components", "count", "grid"])
    _log(out, f"sample n={args.count} acceptance="
              f"{result.acceptance_rate:.3f}")
    print(f"accepted {args.count} of {result.attempts} draws "
          f"(rate {result.acceptance_rate:.3f})")
    return 0


def cmd_eval(args):
    out = _prepare_out(args)
    env, demos = generate_env(args.env, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, hidden=_parse_hidden(args.hidden),
                      seed=args.seed)
    bundle = build_bundle(args.kind, env, demos, seed=args.seed,
                          n_bases=args.bases, alpha=args.alpha,
                          density_family=args.density, train_config=cfg)
    report = evaluate_success(bundle, env, env_id=args.env,
                              num_samples=args.num_samples,
                              seeds=tuple(range(args.seeds)))
    report.save_csv(os.path.join(out, "report.csv"))
    rng = np.random.default_rng(9999)
    stacks, _ = sample_curves(bundle, min(30, args.num_samples), rng)
    grid = np.linspace(0.0, 1.0, 200)
    curves = [basis_mod.evaluate_batch(bundle.curve_model,
                                       stacks[i:i + 1], grid)[0]
              for i in range(len(stacks))]
    render_scene(os.path.join(out, "scene.svg"), env, curves)
    _write_meta(out, "eval", args,
                ["env", "kind", "num_samples", "seeds", "epochs", "alpha",
                 "density", "bases"])
    _log(out, f"eval env={args.env} kind={args.kind} "
              f"mean={report.mean:.2f}")
    print(f"{args.kind} on {args.env}: success "
          f"{report.mean:.2f} +/- {report.std:.2f} %")
    return 0


def default_obstacle_script():
    """Two stacked disks sweep down over the upper corridors, park, leave."""
    stations = [0.0, 1.0, 2.8, 3.5]
    top = MovingDisk(times=stations,
                     centers=[(0.55, 1.6), (0.55, 0.30), (0.55, 0.30),
                              (0.55, 1.6)], radius=0.13)
    low = MovingDisk(times=stations,
                     centers=[(0.55, 1.9), (0.55, 0.10), (0.55, 0.10),
                              (0.55, 1.9)], radius=0.13)
    return [top, low]


def build_replan_fixture(seed=0, epochs=1500, count=30, hidden=(128, 128),
                         with_obstacle=True, control_hz=1000.0,
                         replan_hz=10.0, total_time=5.0, window=1.0):
    """Continuum-demo manifold, adaptive-KDE density, scripted obstacle."""
    env, demos = generate_continuum_demos(count=count, seed=seed)
    model, fits = fit_demos(env, demos)
    cfg = TrainConfig(alpha=0.0, epochs=epochs, hidden=hidden, seed=seed)
    manifold = train(fits, model, cfg)
    z = manifold.encode_many(fits)
    density = kde_build(z)
    threshold = min_loglik_threshold(density, z)
    script = default_obstacle_script() if with_obstacle else []
    constraint = constraint_from_script(script)
    rcfg = ReplanConfig(total_time=total_time, window=window,
                        control_hz=control_hz, replan_hz=replan_hz,
                        threshold=threshold)
    return {"env": env, "demos": demos, "manifold": manifold,
            "density": density, "script": script, "constraint": constraint,
            "config": rcfg, "latents": z}


def cmd_replan(args):
    out = _prepare_out(args)
    fixture = build_replan_fixture(
        seed=args.seed, epochs=args.epochs, count=args.count,
        hidden=_parse_hidden(args.hidden),
        with_obstacle=not args.no_obstacle, control_hz=args.control_hz,
        replan_hz=args.replan_hz, total_time=args.total_time,
        window=args.window)
    trace = run_episode(fixture["manifold"], fixture["density"],
                        fixture["constraint"], fixture["config"],
                        seed=args.seed)
    trace.save_csv(os.path.join(out, "trace.csv"))
    if fixture["script"]:
        save_obstacle_script(os.path.join(out, "obstacles.json"),
                             fixture["script"])
    stride = max(1, len(trace.points) // 400)
    render_scene(os.path.join(out, "scene.svg"), fixture["env"],
                 [trace.points[::stride]], colors=["#1f77b4"],
                 moving_disks=fixture["script"],
                 snapshot_times=np.linspace(1.0, 3.0, 5))
    _write_meta(out, "replan", args,
                ["epochs", "count", "control_hz", "replan_hz", "total_time",
                 "window", "no_obstacle"])
    _log(out, f"replan seed={args.seed} replans={trace.n_replans} "
              f"max_c={trace.max_constraint:.4f}")
    print(f"episode: reached_goal={trace.reached_goal} "
          f"replans={trace.n_replans} "
          f"max_constraint={trace.max_constraint:.5f}")
    return 0


def cmd_export_plot(args):
    out = _prepare_out(args)
    manifold = ManifoldModel.load(args.model)
    render_loss_curves(os.path.join(out, "loss_curves.svg"),
                       manifold.history)
    latents_path = os.path.join(args.model, "latents.json")
    if os.path.exists(latents_path):
        with open(latents_path) as fh:
            z = np.asarray(json.load(fh)["z"], dtype=float)
        density = _density_over(z, args.density, args.components, args.seed)
        rng = np.random.default_rng(args.seed)
        draws = np.atleast_2d(density.sample(rng, count=args.count))
        render_latent_scatter(os.path.join(out, "latent_scatter.svg"), z,
                              extra=draws)
        grid = np.linspace(0.0, 1.0, 200)
        stacks = manifold.decode_many(draws)
        curves = basis_mod.evaluate_batch(manifold.curve_model, stacks,
                                          grid)
        env = PlanarEnv.load(args.env) if args.env else PlanarEnv(
            obstacles=[], q_start=manifold.curve_model.q_start,
            q_goal=manifold.curve_model.q_end,
            bounds=np.array([[-0.2, 1.2], [-0.8, 0.8]]))
        render_scene(os.path.join(out, "trajectories.svg"), env,
                     list(curves))
    _write_meta(out, "export-plot", args,
                ["model", "density", "components", "count"])
    _log(out, "export-plot")
    print(f"wrote figures to {out}")
    return 0


# -- argument plumbing ----------------------------------------------------

def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", type=str, required=True)
    sub.add_argument("--config", type=str, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="motionmanifold",
        description="Motion-manifold movement primitives toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth-demos", help="generate an environment and "
                                           "demonstration set")
    p.add_argument("--env", required=True,
                   choices=["env1", "env2", "env3", "continuum"])
    p.add_argument("--count", type=int, default=30)
    _add_common(p)
    p.set_defaults(func=cmd_synth_demos)

    p = subs.add_parser("fit", help="fit curve coefficients to demos")
    p.add_argument("--demos", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--bases", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("train", help="train the latent manifold")
    p.add_argument("--fits", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--latent-dim", type=int, default=2)
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--hidden", type=str, default="256,256,256")
    p.add_argument("--trace-mode", default="exact",
                   choices=["exact", "hutchinson"])
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("sample", help="draw trajectories from a trained "
                                       "model or reconstruct a fit")
    p.add_argument("--model", default=None)
    p.add_argument("--from-params", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--density", default="gmm", choices=["gmm", "kde"])
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--grid", type=int, default=101)
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = subs.add_parser("eval", help="success-rate evaluation protocol")
    p.add_argument("--env", required=True,
                   choices=["env1", "env2", "env3"])
    p.add_argument("--kind", required=True,
                   choices=["vmp-gauss", "vmp-gmm", "mmp++", "immp++"])
    p.add_argument("--num-samples", type=int, default=500)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5000)
    p.add_argument("--hidden", type=str, default="256,256,256")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--density", default="gmm", choices=["gmm", "kde"])
    p.add_argument("--bases", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("replan", help="online replanning episode against "
                                       "a scripted moving obstacle")
    p.add_argument("--epochs", type=int, default=1500)
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--hidden", type=str, default="128,128")
    p.add_argument("--control-hz", type=float, default=1000.0)
    p.add_argument("--replan-hz", type=float, default=10.0)
    p.add_argument("--total-time", type=float, default=5.0)
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--no-obstacle", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_replan)

    p = subs.add_parser("export-plot", help="render latent scatter, "
                                            "samples, and loss curves")
    p.add_argument("--model", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--density", default="gmm", choices=["gmm", "kde"])
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--count", type=int, default=40)
    _add_common(p)
    p.set_defaults(func=cmd_export_plot)
    return parser


def _apply_config(args, argv):
    if not args.config:
        return
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {args.config!r} does not exist")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {args.config!r} is not valid "
                          f"JSON: {err}")
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    for key, value in data.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in ("func", "command", "config"):
            raise ConfigError(f"unknown config field {key!r}")
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue                     # explicit flag wins
        current = getattr(args, dest)
        if current is not None and not isinstance(value, type(current)) \
                and not (isinstance(current, float)
                         and isinstance(value, int)) \
                and not (isinstance(current, bool)
                         and isinstance(value, bool)):
            raise ConfigError(
                f"field {key!r}: expected {type(current).__name__}, "
                f"got {type(value).__name__}")
        setattr(args, dest, float(value) if isinstance(current, float)
                else value)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, argv)
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as err:
        print(f"numerical failure: {type(err).__name__}: {err}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
