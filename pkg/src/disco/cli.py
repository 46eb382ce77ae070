"""Command-line entry point.

    disco train     --config run.json --out runs/a
    disco eval      --checkpoint runs/a [--metrics mig,dci] [--seed 0] [--out report.json]
    disco traverse  --checkpoint runs/a --direction 3 --steps=-3,-1.5,0,1.5,3 --out grid.png
    disco simmatrix --checkpoint runs/a --out sim/
    disco scatter   --checkpoint runs/a --factors 0,1,2 --out scatter.csv
    disco profile   --checkpoint runs/a --factor 0 --steps 0,0.25,0.5,0.75,1 --out profile.csv
    disco sweep     --config run.json --seeds 0,1,2,3,4 --out sweep/

Relative paths to external checkpoints and datasets are resolved against
``$DISCO_DATA_DIR`` when it is set. Exit codes: 0 success, 2 configuration
error, 3 runtime or metric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import evalviz, metrics
from .backend import (
    ORACLE_KINDS,
    generate_array,
    handle_from_description,
    load_adapter,
    make_oracle_generator,
    sample_latent_array,
    true_factors_array,
)
from .config import METRICS, RunConfig
from .contrastor import encode
from .errors import ConfigError, DiscoError, InputError, MetricError
from .trainer import Checkpoint, fit, restore_state

log = logging.getLogger("disco")

LOG_NAME = "train_log.jsonl"
REPORT_NAME = "eval_report.json"
ENCODE_CHUNK = 1000


def data_path(path) -> Path:
    """Resolve ``path`` against ``$DISCO_DATA_DIR`` unless it is absolute."""
    p = Path(path)
    root = os.environ.get("DISCO_DATA_DIR")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def build_generator(cfg: RunConfig):
    b = cfg.backend
    if b.kind in ORACLE_KINDS:
        return make_oracle_generator(b.num_factors, b.kind, b.mixing_seed, b.entangle, b.image_shape)
    gen = load_adapter(data_path(b.checkpoint))
    if gen.latent_space_tag != b.latent_space_tag:
        raise ConfigError(
            f"config declares latent space {b.latent_space_tag} but the checkpoint is {gen.latent_space_tag}"
        )
    return gen


def _parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _atomic_write(path: Path, text: str):
    """Write via a temporary file in the same directory so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_run(checkpoint_dir):
    """Load a checkpoint and rebuild ``(state, generator)`` from its snapshots."""
    ckpt = Checkpoint.load(checkpoint_dir)
    gen = handle_from_description(ckpt.generator)
    return restore_state(ckpt, gen), gen


# ---------------------------------------------------------------- train


def cmd_train(config_path, out_dir, seed: Optional[int] = None, steps: Optional[int] = None) -> Checkpoint:
    cfg = RunConfig.load(config_path)
    if seed is not None:
        cfg.trainer.seed = seed
    if steps is not None:
        cfg.trainer.steps = steps
    cfg = cfg.resolved()
    gen = build_generator(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / LOG_NAME
    log_path.write_text("")
    ckpt = fit(cfg, gen, out_dir=out, log_path=log_path)
    log.info("trained %d steps; parameter hash %s", ckpt.step, ckpt.parameter_hash())
    return ckpt


# ---------------------------------------------------------------- eval


def _encode_all(encoder, images: np.ndarray) -> np.ndarray:
    chunks = []
    with torch.no_grad():
        for i in range(0, images.shape[0], ENCODE_CHUNK):
            chunks.append(encode(encoder, images[i:i + ENCODE_CHUNK]).double().numpy())
    return np.concatenate(chunks)


def read_factor_csv(csv_path, image_list_path):
    """External-dataset adapter: factors CSV plus an aligned image list.

    The CSV header must be ``factor_0, ..., factor_{K-1}``; the image list has
    one path per line (relative paths resolve against ``$DISCO_DATA_DIR``).
    """
    csv_path, image_list_path = data_path(csv_path), data_path(image_list_path)
    try:
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        paths = [line.strip() for line in Path(image_list_path).read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise InputError(f"cannot read factor adapter files: {exc}") from exc
    if not rows:
        raise InputError(f"{csv_path} is empty")
    header = [h.strip() for h in rows[0]]
    if header != [f"factor_{k}" for k in range(len(header))]:
        raise InputError("factor CSV header must be factor_0..factor_{K-1}")
    try:
        factors = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"non-numeric factor value in {csv_path}") from exc
    if factors.shape[0] != len(paths):
        raise InputError(f"{len(paths)} images listed but {factors.shape[0]} factor rows")
    return factors, paths


def _load_images(paths, image_shape) -> np.ndarray:
    from PIL import Image

    h, w, c = image_shape
    mode = "L" if c == 1 else "RGB"
    out = np.empty((len(paths), h, w, c))
    for i, p in enumerate(paths):
        with Image.open(data_path(p)) as im:
            arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
        if arr.shape[:2] != (h, w):
            raise InputError(f"{p} is {arr.shape[1]}x{arr.shape[0]}, encoder expects {w}x{h}")
        out[i] = arr.reshape(h, w, c)
    return out


def evaluation_data(state, gen, samples: int, seed: int):
    """``(codes, factors)`` for evaluation: oracle samples or the CSV adapter."""
    ev = state.config.eval
    if gen.is_oracle:
        rng = np.random.default_rng(seed)
        z = sample_latent_array(gen, samples, rng)
        images = generate_array(gen, z)
        return _encode_all(state.encoder, images), true_factors_array(gen, z)
    if not (ev.factors_csv and ev.image_list):
        raise MetricError("generator has no ground-truth factors and no factors_csv/image_list adapter is configured")
    factors, paths = read_factor_csv(ev.factors_csv, ev.image_list)
    images = _load_images(paths, state.encoder.image_shape)
    return _encode_all(state.encoder, images), factors


def compute_report(state, gen, metric_names, seed: int) -> dict:
    ev = state.config.eval
    for m in metric_names:
        if m not in METRICS:
            raise ConfigError(f"unknown metric {m!r}; expected a subset of {list(METRICS)}")
    codes, factors = evaluation_data(state, gen, ev.samples, seed)
    report = {
        "checkpoint_step": state.step,
        "samples": int(codes.shape[0]),
        "seed": seed,
        "metrics": list(metric_names),
        "config": state.config.to_dict(),
    }
    if "mig" in metric_names:
        details = metrics.mig_details(codes, factors, ev.bins)
        report["mig"] = details["mig"]
        report["per_factor_mig"] = details["per_factor"]
    if "dci" in metric_names:
        importance = metrics.dci_importance(codes, factors, ev.dci_trees, ev.dci_depth, seed)
        report["dci"] = metrics.dci_disentanglement(importance)
        report["importance_matrix"] = importance.tolist()
    return report


def cmd_eval(checkpoint_dir, metric_names=None, seed: Optional[int] = None, out=None) -> dict:
    """Compute the metric report; the file is written only after every metric succeeded."""
    state, gen = load_run(checkpoint_dir)
    metric_names = metric_names or list(state.config.eval.metrics)
    seed = state.config.eval.seed if seed is None else seed
    report = compute_report(state, gen, metric_names, seed)
    target = Path(out) if out else Path(checkpoint_dir) / REPORT_NAME
    if target.is_dir():
        target = target / REPORT_NAME
    _atomic_write(target, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------- figures


def _base_latents(gen, rows: int, seed: int):
    return sample_latent_array(gen, rows, np.random.default_rng(seed))


def cmd_traverse(checkpoint_dir, direction: int, steps, out, rows: int = 4, seed: int = 0) -> Path:
    state, gen = load_run(checkpoint_dir)
    if not 0 <= direction < state.navigator.num_directions:
        raise ConfigError(f"--direction must be in [0, {state.navigator.num_directions})")
    return evalviz.traversal_grid(gen, state.navigator, _base_latents(gen, rows, seed), direction, steps, out)


def cmd_simmatrix(checkpoint_dir, out_dir, samples: int = 64, seed: int = 0):
    state, gen = load_run(checkpoint_dir)
    rng = np.random.default_rng(seed)
    means, counts = evalviz.direction_means(
        state.encoder, gen, state.navigator, rng, samples, state.config.sampler.eps_max
    )
    sim = evalviz.direction_similarity_matrix(means, counts)
    out = Path(out_dir)
    return (
        evalviz.write_similarity_csv(sim, out / "similarity.csv"),
        evalviz.similarity_heatmap(sim, out / "similarity.png"),
    )


def cmd_scatter(checkpoint_dir, factors, out, resolution: int = 10, seed: int = 0) -> Path:
    state, gen = load_run(checkpoint_dir)
    return evalviz.latent_scatter_export(state.encoder, gen, factors, resolution, out, seed=seed)


def cmd_profile(checkpoint_dir, factor: int, steps, out, seed: int = 0) -> Path:
    state, gen = load_run(checkpoint_dir)
    return evalviz.variation_response_profile(state.encoder, gen, factor, steps, out, seed=seed)


# ---------------------------------------------------------------- sweep


def cmd_sweep(config_path, seeds, out_dir, metric_names=None) -> Path:
    """Train and evaluate once per seed; write per-seed rows plus mean and variance."""
    out = Path(out_dir)
    metric_names = metric_names or list(RunConfig.load(config_path).eval.metrics)
    rows = []
    for seed in seeds:
        run_dir = out / f"seed_{seed}"
        cmd_train(config_path, run_dir, seed=seed)
        report = cmd_eval(run_dir, metric_names, seed=seed)
        rows.append([seed] + [report[m] for m in metric_names])
    values = np.array([r[1:] for r in rows], dtype=np.float64)
    lines = [["seed"] + metric_names]
    lines += [[str(r[0])] + [repr(float(v)) for v in r[1:]] for r in rows]
    lines.append(["mean"] + [repr(float(v)) for v in values.mean(axis=0)])
    lines.append(["variance"] + [repr(float(v)) for v in values.var(axis=0)])
    path = out / "summary.csv"
    _atomic_write(path, "".join(",".join(line) + "\n" for line in lines))
    return path


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disco", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a navigator and encoder from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int, help="override trainer.seed")

    p = sub.add_parser("eval", help="compute MIG / DCI for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metrics", default=None, help="comma-separated subset of mig,dci")
    p.add_argument("--seed", type=int, help="override eval.seed")
    p.add_argument("--out", help=f"report path (default: CHECKPOINT/{REPORT_NAME})")

    p = sub.add_parser("traverse", help="PNG grid of traversals along one direction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--direction", type=int, required=True)
    p.add_argument("--steps", default="-3,-1.5,0,1.5,3", help="comma-separated shift values")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simmatrix", help="direction similarity matrix (CSV + PNG)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("scatter", help="3-D code scatter over a factor grid (CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--factors", default="0,1,2")
    p.add_argument("--resolution", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("profile", help="per-dimension code response to one factor (CSV)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--steps", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="train + eval over several seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--metrics", default=None)
    p.add_argument("--out", required=True)
    return parser


def _dispatch(args):
    metric_names = _parse_metrics(args.metrics) if getattr(args, "metrics", None) else None
    if args.command == "train":
        ckpt = cmd_train(args.config, args.out, seed=args.seed)
        print(ckpt.parameter_hash())
    elif args.command == "eval":
        report = cmd_eval(args.checkpoint, metric_names, seed=args.seed, out=args.out)
        print(json.dumps({k: report[k] for k in ("mig", "dci") if k in report}, sort_keys=True))
    elif args.command == "traverse":
        print(cmd_traverse(args.checkpoint, args.direction, _parse_floats(args.steps), args.out, args.rows, args.seed))
    elif args.command == "simmatrix":
        for path in cmd_simmatrix(args.checkpoint, args.out, args.samples, args.seed):
            print(path)
    elif args.command == "scatter":
        print(cmd_scatter(args.checkpoint, _parse_ints(args.factors), args.out, args.resolution, args.seed))
    elif args.command == "profile":
        print(cmd_profile(args.checkpoint, args.factor, _parse_floats(args.steps), args.out, args.seed))
    elif args.command == "sweep":
        print(cmd_sweep(args.config, _parse_ints(args.seeds), args.out, metric_names))


def _parse_metrics(text: str) -> List[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRICS]
    if bad or not names:
        raise ConfigError(f"--metrics must be a comma-separated subset of {list(METRICS)}")
    return names


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except DiscoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
