"""Command line interface.

Verbs:

  generate       simulate a dataset from a preset, config file, or manifest
  tokenize       patch-average a field dataset into a token dataset
  fit            train a forecaster (g) or super-resolution map on a dataset
  sweep          one-step error versus history length, written as CSV
  rollout        autoregressive generation, optionally through the
                 super-resolution map, with per-frame residues vs truth
  metrics        pixel autocorrelation ensembles and nearest-subvideo
                 distances, written as CSV
  observability  rank / eigenvector / witness / Gramian / local-rank reports
  export         render one frame as a PGM or PPM image

Exit codes: 0 success, 2 bad parameters, 3 data-format problems,
4 numerical divergence, 5 diagnostic failures.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import observability as obs
from .errors import DataFormatError, LatentPdeError, ParameterError
from .lattice_ops import (GridSpec, build_modified_laplacian, build_tokenizer_matrix,
                          build_wave_generator)
from .learners import LinearMap, TrainConfig, fit_least_squares, fit_sgd, fit_superres, history_sweep
from .random_fields import GrfParams, build_conductivity
from .rollout_metrics import (autoregressive_rollout, correlation_ensemble_stats,
                              full_pipeline_rollout, nearest_subvideo_distance, residue_norms)
from .tokenizer import build_histories, build_reconstruction_pairs, tokenize_trajectory


def _load_config(args) -> dict:
    sources = [bool(args.preset), bool(args.config), bool(getattr(args, "from_manifest", None))]
    if sum(sources) != 1:
        raise ParameterError("give exactly one of --preset, --config, --from-manifest")
    if args.preset:
        if args.preset not in ds.PRESETS:
            raise ParameterError(f"unknown preset {args.preset!r}; have {sorted(ds.PRESETS)}")
        config = dict(ds.PRESETS[args.preset])
    elif args.config:
        with open(args.config) as fh:
            config = json.load(fh)
    else:
        manifest = ds.DatasetManifest.from_json(open(args.from_manifest).read())
        config = dict(manifest.config)
    for key in ("trajectories", "frames", "grid_size", "init_seed"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def cmd_generate(args) -> int:
    config = _load_config(args)
    frames, manifest = ds.generate_dataset(config, workers=args.workers)
    ds.write_dataset(frames, manifest, args.out)
    print(f"wrote {manifest.trajectories} trajectories of {manifest.frames} frames "
          f"({manifest.equation}) to {args.out}")
    return 0


def cmd_tokenize(args) -> int:
    manifest = ds.tokenize_dataset(args.data, args.patch, args.out)
    print(f"wrote {manifest.trajectories} token trajectories "
          f"({manifest.frame_shape[0]} tokens/frame) to {args.out}")
    return 0


def _train_split(n_traj: int, train_frac: float) -> int:
    n_train = int(round(train_frac * n_traj))
    if not 1 <= n_train <= n_traj:
        raise ParameterError(f"train fraction {train_frac} leaves no usable split of {n_traj}")
    return n_train


def cmd_fit(args) -> int:
    frames, manifest = ds.load_all(args.data)
    n_train = _train_split(len(frames), args.train_frac)
    train = frames[:n_train]
    stats = ({"lo": -1.0, "hi": 1.0, "constant": False} if args.no_normalize
             else ds.compute_normalization(train))
    train = [ds.apply_normalization(fr, stats) for fr in train]
    hists, targets = [], []
    for fr in train:
        if args.role == "g":
            h, t, _ = build_histories(fr, args.k, args.patch)
        else:
            h, t = build_reconstruction_pairs(fr, args.k, args.patch)
        hists.append(h)
        targets.append(t)
    histories = np.concatenate(hists)
    target = np.concatenate(targets)
    if args.learner == "lstsq":
        fitted = (fit_least_squares(histories, target, ridge=args.ridge, bias=not args.no_bias)
                  if args.role == "g" else
                  fit_superres(histories, target, ridge=args.ridge, bias=not args.no_bias))
    else:
        config = TrainConfig(learning_rate=args.lr, steps=args.steps, batch_size=args.batch,
                             ridge=args.ridge, seed=args.sgd_seed, lr_decay=args.lr_decay)
        fitted, curves = fit_sgd(histories, target, config, eval_split=args.eval_split,
                                 bias=not args.no_bias)
        ds.write_csv(args.out + ".curve.csv", ["epoch", "train_mse", "eval_mse"],
                     [[i, tr, ev] for i, (tr, ev) in enumerate(
                         zip(curves["train"],
                             curves["eval"] if len(curves["eval"]) else curves["train"]))],
                     comment=f"sgd loss curve role={args.role} k={args.k}")
    fitted.save(args.out)
    sidecar = {"normalization": stats, "patch": args.patch, "role": args.role,
               "k": args.k, "train_trajectories": n_train, "data": os.path.abspath(args.data)}
    with open(args.out + ".norm.json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
    print(f"fitted {args.role} map (k={args.k}, {args.learner}) on {n_train} trajectories "
          f"-> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    frames, manifest = ds.load_all(args.data)
    k_values = [int(v) for v in args.k_list.split(",")]
    if args.eval_data:
        eval_frames, _ = ds.load_all(args.eval_data)
        train = frames
    else:
        if args.trials >= len(frames):
            raise ParameterError(f"--trials {args.trials} must leave training trajectories")
        train, eval_frames = frames[:-args.trials], frames[-args.trials:]
    eval_frames = eval_frames[:args.trials]
    stats = ds.compute_normalization(train)
    train_tokens = [tokenize_trajectory(ds.apply_normalization(fr, stats), args.patch)
                    for fr in train]
    eval_tokens = [tokenize_trajectory(ds.apply_normalization(fr, stats), args.patch)
                   for fr in eval_frames]
    rows = history_sweep(train_tokens, eval_tokens, k_values, learner=args.learner,
                         ridge=args.ridge)
    ds.write_csv(args.out, ["k", "l1_mean", "l1_std", "linf_mean", "linf_std", "trials"],
                 [[r["k"], r["l1_mean"], r["l1_std"], r["linf_mean"], r["linf_std"], r["trials"]]
                  for r in rows],
                 comment=f"one-step forecast error vs history length, learner={args.learner}")
    for r in rows:
        print(f"k={r['k']:3d}  l1={r['l1_mean']:.6e}  linf={r['linf_mean']:.6e}")
    return 0


def _load_model(path: str):
    fitted = LinearMap.load(path)
    sidecar_path = path + ".norm.json"
    if not os.path.exists(sidecar_path):
        raise DataFormatError(f"missing normalization sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    return fitted, sidecar


def cmd_rollout(args) -> int:
    frames, manifest = ds.load_all(args.data)
    g_map, g_side = _load_model(args.model)
    stats = g_side["normalization"]
    patch = g_side["patch"]
    traj = ds.apply_normalization(frames[args.traj_index], stats)
    tokens = tokenize_trajectory(traj, patch)
    k = g_map.history_len
    if args.start + k + args.steps > tokens.shape[0]:
        raise ParameterError(
            f"trajectory has {tokens.shape[0]} frames; need start+{k}+{args.steps}")
    seed = tokens[args.start:args.start + k]
    if args.super:
        super_map, _ = _load_model(args.super)
        result = full_pipeline_rollout(g_map, super_map, seed, args.steps)
    else:
        result = autoregressive_rollout(g_map, seed, args.steps)
    prefix = args.out_prefix
    ds._atomic_write(prefix + "_tokens.bin", result.tokens.astype("<f8").tobytes())
    meta = {"seed_len": k, "steps": args.steps, "token_dim": g_map.token_dim,
            "traj_index": args.traj_index, "start": args.start, "space": "normalized",
            "normalization": stats, "fields_shape": None}
    truth_tokens = tokens[args.start + k:args.start + k + args.steps]
    rows = []
    pred_tokens = result.tokens[k:]
    token_res = {norm: residue_norms(pred_tokens, truth_tokens, norm)
                 for norm in ("l1", "l2", "linf")}
    if result.fields is not None:
        ds._atomic_write(prefix + "_fields.bin", result.fields.astype("<f8").tobytes())
        meta["fields_shape"] = list(result.fields.shape)
        truth_fields = traj[args.start + k:args.start + k + args.steps]
        if truth_fields.ndim == 4:
            truth_fields = truth_fields[:, 0]
        field_res = {norm: residue_norms(result.fields, truth_fields, norm)
                     for norm in ("l1", "l2", "linf")}
        header = ["frame", "token_l1", "token_l2", "token_linf",
                  "field_l1", "field_l2", "field_linf"]
        for i in range(args.steps):
            rows.append([i, token_res["l1"][i], token_res["l2"][i], token_res["linf"][i],
                         field_res["l1"][i], field_res["l2"][i], field_res["linf"][i]])
    else:
        header = ["frame", "token_l1", "token_l2", "token_linf"]
        for i in range(args.steps):
            rows.append([i, token_res["l1"][i], token_res["l2"][i], token_res["linf"][i]])
    with open(prefix + "_meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    ds.write_csv(prefix + "_residues.csv", header, rows,
                 comment="per generated frame; normalized units")
    print(f"rollout of {args.steps} frames from trajectory {args.traj_index} "
          f"-> {prefix}_tokens.bin")
    return 0


def _parse_range(text: str, limit: int):
    if ":" in text:
        lo, hi = text.split(":")
        return range(int(lo), min(int(hi), limit))
    return [int(text)]


def cmd_metrics(args) -> int:
    if args.kind == "correlation":
        frames, manifest = ds.load_all(args.data)
        picks = _parse_range(args.trajectories, len(frames))
        i, j = (int(v) for v in args.pixel.split(","))
        videos = []
        for idx in picks:
            fr = frames[idx]
            videos.append(fr[:, 0] if fr.ndim == 4 else fr)
        series = correlation_ensemble_stats(videos, (i, j), args.dt_max)
        ds.write_csv(args.out, ["lag", "rho_mean", "rho_std"],
                     [[int(l), series.mean[d], series.std[d]]
                      for d, l in enumerate(series.lags)],
                     comment=f"pixel ({i},{j}) over {series.count} videos, "
                             f"lag unit = {manifest.dt} time")
        print(f"correlation over {series.count} videos -> {args.out}")
        return 0
    if args.kind == "subvideo":
        with open(args.clip_prefix + "_meta.json") as fh:
            meta = json.load(fh)
        if not meta.get("fields_shape"):
            raise DataFormatError("clip has no reconstructed fields; rerun rollout with --super")
        clip = np.fromfile(args.clip_prefix + "_fields.bin", dtype="<f8").reshape(
            meta["fields_shape"])
        frames, manifest = ds.load_all(args.data)
        stats = meta.get("normalization")
        rows = []
        best = np.inf
        for idx, fr in enumerate(frames):
            video = fr[:, 0] if fr.ndim == 4 else fr
            if stats is not None:
                # the clip lives in the model's normalized units
                video = ds.apply_normalization(video, stats)
            d = nearest_subvideo_distance(clip, video)
            rows.append([idx, d])
            best = min(best, d)
        rows.append(["min", best])
        ds.write_csv(args.out, ["trajectory", "distance"], rows,
                     comment="euclidean distance to nearest same-length window")
        print(f"nearest subvideo distance {best:.6e} -> {args.out}")
        return 0
    raise ParameterError(f"unknown metrics kind {args.kind!r}")


def _observability_system(args):
    grid = GridSpec(n=args.grid, dx=1.0)
    if args.constant is not None:
        a = np.full((args.grid, args.grid), args.constant)
    else:
        a = args.scale * build_conductivity(GrfParams(
            grid_size=args.grid, sigma=args.grf_sigma, m=args.grf_m,
            nu=args.grf_nu, seed=args.grf_seed))
    wave = args.equation == "wave"
    op = build_wave_generator(a, grid) if wave else build_modified_laplacian(a, grid)
    h = build_tokenizer_matrix(grid, args.patch, wave=wave)
    return grid, op, h, wave


def cmd_observability(args) -> int:
    out_lines = []
    if args.check in ("kalman", "hautus"):
        grid, op, h, wave = _observability_system(args)
        if args.check == "kalman":
            # rescaling the generator leaves the Krylov span (and hence the
            # rank) unchanged but keeps high powers from overflowing the
            # singular-value cutoff
            radius = max(1.0, float((abs(op) @ np.ones(op.shape[1])).max()))
            kal = obs.kalman_observability_matrix(op / radius, h, max_powers=args.max_powers)
            report = obs.rank_test(kal, rel_tol=args.rel_tol)
            out_lines.append(f"generator_rescaled_by = {1.0 / radius:.6e}")
        else:
            report = obs.hautus_test(op, h, tol=args.tol, eig_budget=args.eig_budget)
        out_lines.append(report.to_text())
    elif args.check == "witness":
        grid = GridSpec(n=args.grid, dx=1.0)
        wave = args.equation == "wave"
        state, lam = obs.annihilation_witness(grid, args.patch, wave=wave)
        a = np.ones((args.grid, args.grid))
        op = build_wave_generator(a, grid) if wave else build_modified_laplacian(a, grid)
        h = build_tokenizer_matrix(grid, args.patch, wave=wave)
        token_norm = float(np.abs(h @ state.ravel()).max())
        # a few normalized powers; deeper orbits are covered by the
        # eigenvector identity h A^j v = lambda^j h v, not by arithmetic
        orbit = state.ravel().copy()
        orbit_norm = token_norm
        for _ in range(4):
            orbit = op @ orbit
            orbit = orbit / np.linalg.norm(orbit)
            orbit_norm = max(orbit_norm, float(np.abs(h @ orbit).max()))
        out_lines += [
            "method = annihilation-witness",
            f"equation = {args.equation}",
            f"grid = {args.grid}",
            f"patch = {args.patch}",
            f"eigenvalue = {lam:.12e}",
            f"token_sup_norm = {token_norm:.6e}",
            f"orbit_token_sup_norm = {orbit_norm:.6e}",
        ]
        if not wave:
            resid = float(np.abs((op @ state.ravel()) - lam * state.ravel()).max())
            out_lines.append(f"eigen_residual_sup_norm = {resid:.6e}")
        out_lines.append("")
    elif args.check == "gramian":
        grid, op, h, wave = _observability_system(args)
        x0 = ds.sample_matern_field(GrfParams(grid_size=args.grid, sigma=1.0, m=0.5,
                                              nu=1.0, seed=args.grf_seed + 1)).ravel()
        if wave:
            x0 = np.concatenate([x0, np.zeros_like(x0)])
        from scipy.linalg import expm

        steps = args.quadrature_steps + (args.quadrature_steps % 2)
        estep = expm(op.toarray() * (args.horizon / steps))
        outputs = np.empty((steps + 1, h.shape[0]))
        state = x0.copy()
        for i in range(steps + 1):
            outputs[i] = h @ state
            if i < steps:
                state = estep @ state
        recon = obs.linear_reconstruct_initial_state(op, h, outputs, args.horizon,
                                                     cond_limit=args.cond_limit)
        rel = float(np.linalg.norm(recon - x0) / np.linalg.norm(x0))
        gram = obs.observability_gramian(op, h, args.horizon, steps)
        out_lines += [
            "method = gramian-reconstruction",
            f"grid = {args.grid}",
            f"patch = {args.patch}",
            f"horizon = {args.horizon}",
            f"quadrature_steps = {steps}",
            f"gramian_condition = {np.linalg.cond(gram):.6e}",
            f"relative_reconstruction_error = {rel:.6e}",
            "",
        ]
    elif args.check == "lie":
        frames, manifest = ds.load_all(args.data)
        traj = frames[0]
        from .solvers import Trajectory

        series = obs.empirical_lie_logdet(
            Trajectory(traj, dt=manifest.dt), args.patch,
            derivative_order=args.derivative_order, window=args.window,
            with_singular_values=True)
        start = int(args.burn_frac * len(series.times))
        post = slice(start, None)
        finite = np.isfinite(series.log_abs_det[post])
        full_rank = series.min_sv[post] > args.rel_tol * series.max_sv[post]
        out_lines += [
            "method = empirical-lie-logdet",
            f"matrix_dim = {series.dim}",
            f"derivative_order = {series.derivative_order}",
            f"window = {series.window}",
            f"examined = {int(finite.size)}",
            f"finite_fraction = {finite.mean():.6f}",
            f"full_rank_fraction = {full_rank.mean():.6f}",
            f"median_log_abs_det = {np.median(series.log_abs_det[post][finite]):.6e}",
            "",
        ]
        if args.csv:
            ds.write_csv(args.csv, ["t", "sign", "log_abs_det", "rolling", "min_sv", "max_sv"],
                         [[int(t), series.sign[i], series.log_abs_det[i], series.rolling[i],
                           series.min_sv[i], series.max_sv[i]]
                          for i, t in enumerate(series.times)],
                         comment=f"local rank diagnostic, dt={series.dt}")
    else:
        raise ParameterError(f"unknown check {args.check!r}")
    text = "\n".join(out_lines)
    ds._atomic_write(args.out, text.encode())
    sys.stdout.write(text)
    return 0


def cmd_export(args) -> int:
    frames, manifest = ds.load_all(args.data)
    fr = frames[args.traj_index]
    if not 0 <= args.frame < fr.shape[0]:
        raise ParameterError(f"frame {args.frame} outside 0..{fr.shape[0] - 1}")
    field = fr[args.frame]
    if field.ndim == 3:
        field = field[0]
    if args.vmin is None or args.vmax is None:
        stats = ds.compute_normalization([fr])
        field = ds.apply_normalization(field, stats)
        vmin, vmax = -1.0, 1.0
    else:
        vmin, vmax = args.vmin, args.vmax
    ds.export_frame_image(field, args.out, vmin=vmin, vmax=vmax, colormap=args.colormap)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentpde", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", help="simulate a dataset")
    p.add_argument("--preset", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--from-manifest", default=None)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--grid-size", dest="grid_size", type=int, default=None)
    p.add_argument("--init-seed", dest="init_seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("tokenize", help="patch-average a field dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("fit", help="train a forecaster or super-resolution map")
    p.add_argument("--data", required=True)
    p.add_argument("--role", choices=("g", "super"), required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--learner", choices=("lstsq", "sgd"), default="lstsq")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--train-frac", type=float, default=0.9)
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--sgd-seed", type=int, default=0)
    p.add_argument("--lr-decay", type=float, default=1.0)
    p.add_argument("--eval-split", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="error vs history length")
    p.add_argument("--data", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--k-list", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--learner", choices=("lstsq", "sgd"), default="lstsq")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rollout", help="autoregressive generation")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--super", default=None)
    p.add_argument("--traj-index", type=int, default=0)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("metrics", help="correlation / subvideo statistics")
    p.add_argument("kind", choices=("correlation", "subvideo"))
    p.add_argument("--data", required=True)
    p.add_argument("--pixel", default="0,0")
    p.add_argument("--dt-max", type=int, default=50)
    p.add_argument("--trajectories", default="0:1000000")
    p.add_argument("--clip-prefix", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("observability", help="certificates and diagnostics")
    p.add_argument("--check", choices=("kalman", "hautus", "witness", "gramian", "lie"),
                   required=True)
    p.add_argument("--equation", choices=("heat", "wave"), default="heat")
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--patch", type=int, default=4)
    p.add_argument("--constant", type=float, default=None)
    p.add_argument("--grf-sigma", type=float, default=0.5)
    p.add_argument("--grf-m", type=float, default=0.1)
    p.add_argument("--grf-nu", type=float, default=1.0)
    p.add_argument("--grf-seed", type=int, default=77)
    p.add_argument("--scale", type=float, default=0.2)
    p.add_argument("--max-powers", type=int, default=None)
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--eig-budget", type=int, default=None)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--quadrature-steps", type=int, default=200)
    p.add_argument("--cond-limit", type=float, default=1e12)
    p.add_argument("--data", default=None)
    p.add_argument("--derivative-order", type=int, default=5)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--burn-frac", type=float, default=0.5)
    p.add_argument("--csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_observability)

    p = sub.add_parser("export", help="render one frame to PGM/PPM")
    p.add_argument("--data", required=True)
    p.add_argument("--traj-index", type=int, default=0)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--colormap", choices=("gray", "diverging"), default="gray")
    p.add_argument("--vmin", type=float, default=None)
    p.add_argument("--vmax", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LatentPdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
