"""Command-line experiment runner.

Configuration is a flat ``key = value`` file (``#`` starts a comment); every
key is listed with its default by ``deepmc --help``. ``--set key=value`` flags
override the file, and ``DEEPMC_OUTPUT_DIR`` overrides ``output_dir`` unless
``--output-dir`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import data_io
from .evaluation import evaluate
from .experiments import (
    ABLATE_HEADER,
    BENCH_HEADER,
    METHODS,
    BenchSettings,
    regularizer_grid,
    synth_bench,
    write_rows,
)
from .gradcheck import run_suite
from .matrix import MaskSpec, ObservedMatrix, build_observed, generate_mask, split_holdout
from .objective import Hyperparameters
from .optimizer import RpropConfig
from .trainer import EarlyStopping, ModelConfig, complete, write_history

ENV_OUTPUT_DIR = "DEEPMC_OUTPUT_DIR"
METRIC_HEADER = ("seed", "mask_kind", "mask_fraction", "psnr", "ssim", "nmae", "evaluated_on")
SOURCES = ("none", "synthetic", "csv", "ratings", "image", "image-stack")


class ConfigError(ValueError):
    pass


# -- value parsers ---------------------------------------------------------------


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _list(item: Callable) -> Callable:
    def parse(s: str):
        parts = [p.strip() for p in s.split(",") if p.strip()]
        return tuple(item(p) for p in parts)

    return parse


def _choice(*options: str) -> Callable:
    def parse(s: str):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


def _range_or_auto(s: str):
    if s.strip() == "auto":
        return None
    lo, hi = _list(float)(s)
    return (lo, hi)


def _auto_bool(s: str):
    return None if s.strip() == "auto" else _bool(s)


def _delimiter(s: str) -> str:
    named = {"tab": "\t", "space": " ", "comma": ","}
    s = named.get(s, s)
    if len(s) != 1:
        raise ValueError("delimiter must be one character (or tab/space/comma)")
    return s


def _unsigned(s: str) -> int:
    v = int(s)
    if v < 0:
        raise ValueError("expected a nonnegative integer")
    return v


@dataclass(frozen=True)
class Option:
    parse: Callable[[str], Any]
    default: str
    help: str


OPTIONS: Dict[str, Option] = {
    # model
    "rank": Option(int, "10", "latent width r of both branch inputs"),
    "col_hidden": Option(_list(int), "20,40", "hidden widths of the column branch"),
    "row_hidden": Option(_list(int), "25,50", "hidden widths of the row branch"),
    "activation": Option(_choice("sigmoid", "tanh", "relu"), "tanh", "nonlinear-path activation"),
    "alpha": Option(float, "1", "column loss weight"),
    "beta": Option(float, "1", "row loss weight"),
    "gamma": Option(float, "0.01", "weight-product (manifold) loss weight"),
    "lambda": Option(float, "0.01", "decay weight"),
    "max_iters": Option(_unsigned, "1000", "iRprop+ iterations"),
    "prediction_mode": Option(_choice("column", "row", "average"), "column", "branch used for predictions"),
    "disable_linear_path": Option(_bool, "false", "ablate the linear path"),
    "disable_nonlinear_path": Option(_bool, "false", "ablate the nonlinear path"),
    "clamp_observed": Option(_auto_bool, "auto", "copy observed entries into the output (auto: on for inpaint only)"),
    "target_range": Option(_range_or_auto, "auto", "scaling interval lo,hi (auto: per activation)"),
    "seed": Option(_unsigned, "0", "base seed; sweeps use seed .. seed+repeat-1"),
    "repeat": Option(_unsigned, "10", "number of seeds in sweeps"),
    "deterministic": Option(_bool, "true", "single-threaded linear algebra"),
    "output_dir": Option(str, "out", "directory for reports"),
    "rprop.eta_plus": Option(float, "1.2", "step growth factor"),
    "rprop.eta_minus": Option(float, "0.5", "step shrink factor"),
    "rprop.delta_init": Option(float, "0.1", "initial step"),
    "rprop.delta_min": Option(float, "1e-06", "smallest step"),
    "rprop.delta_max": Option(float, "50", "largest step"),
    "early_stop.enabled": Option(_bool, "false", "stop on a validation split"),
    "early_stop.holdout_fraction": Option(float, "0.05", "validation share of observed entries"),
    "early_stop.patience": Option(_unsigned, "50", "iterations without improvement"),
    "early_stop.min_delta": Option(float, "1e-05", "required improvement"),
    # data
    "data.source": Option(_choice(*SOURCES), "none", "one of " + ", ".join(SOURCES[1:])),
    "data.path": Option(str, "", "file (or directory for image-stack) of the data source"),
    "synthetic.m": Option(int, "100", "rows of the synthetic matrix"),
    "synthetic.n": Option(int, "200", "columns of the synthetic matrix"),
    "synthetic.r": Option(int, "10", "inner rank of the synthetic matrix"),
    "ratings.delimiter": Option(_delimiter, "tab", "ratings field separator"),
    "ratings.min": Option(float, "1", "lowest allowed rating"),
    "ratings.max": Option(float, "5", "highest allowed rating"),
    "mask.kind": Option(_choice("random", "block", "image"), "random", "how entries are hidden"),
    "mask.fraction": Option(float, "0.3", "hidden share for random masks"),
    "mask.fractions": Option(_list(float), "0.3,0.5,0.7", "synth-bench mask fractions"),
    "mask.top": Option(_unsigned, "0", "block mask top row"),
    "mask.left": Option(_unsigned, "0", "block mask left column"),
    "mask.height": Option(_unsigned, "0", "block mask height"),
    "mask.width": Option(_unsigned, "0", "block mask width"),
    "mask.path": Option(str, "", "mask image, nonzero pixels are hidden"),
    # sweeps
    "bench.methods": Option(_list(_choice(*METHODS)), ",".join(METHODS), "synth-bench methods"),
    "als.iters": Option(_unsigned, "50", "ALS alternations"),
    "als.ridge": Option(float, "0.001", "ALS ridge"),
    "ablate.gamma": Option(_list(float), "0.01,0.05,0.1,0.5,1", "ablate gamma grid"),
    "ablate.lambda": Option(_list(float), "0.01", "ablate lambda grid"),
    "ablate.mask_fraction": Option(float, "0.7", "hidden share in ablate"),
    "gradcheck.instances": Option(_unsigned, "21", "random gradient checks"),
    "gradcheck.tolerance": Option(float, "1e-05", "pass threshold on the relative error"),
}


def _parse_value(key: str, raw: str, where: str):
    if key not in OPTIONS:
        raise ConfigError(f"{where}unknown key {key!r}")
    try:
        return OPTIONS[key].parse(raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}bad value for {key!r}: {exc}") from None


def parse_lines(lines, origin: str = "<config>") -> Dict[str, Any]:
    """Parse ``key = value`` lines into typed values."""
    out: Dict[str, Any] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = _parse_value(key, raw, f"{origin}:{lineno}: ")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration: every key of :data:`OPTIONS` with a typed value."""

    values: Mapping[str, Any]

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seeds(self) -> List[int]:
        return list(range(self["seed"], self["seed"] + self["repeat"]))

    @property
    def hp(self) -> Hyperparameters:
        return Hyperparameters(self["alpha"], self["beta"], self["gamma"], self["lambda"])

    @property
    def rprop(self) -> RpropConfig:
        v = self.values
        return RpropConfig(v["rprop.eta_plus"], v["rprop.eta_minus"], v["rprop.delta_init"],
                           v["rprop.delta_min"], v["rprop.delta_max"])

    @property
    def early_stop(self) -> Optional[EarlyStopping]:
        if not self["early_stop.enabled"]:
            return None
        return EarlyStopping(self["early_stop.holdout_fraction"], self["early_stop.patience"],
                             self["early_stop.min_delta"])

    def model_config(self, shape, seed: int, clamp_default: bool = False) -> ModelConfig:
        clamp = self["clamp_observed"]
        return ModelConfig.for_shape(
            shape,
            self["rank"],
            self["col_hidden"],
            self["row_hidden"],
            activation=self["activation"],
            hp=self.hp,
            rprop=self.rprop,
            max_iters=self["max_iters"],
            early_stop=self.early_stop,
            prediction_mode=self["prediction_mode"],
            disable_linear_path=self["disable_linear_path"],
            disable_nonlinear_path=self["disable_nonlinear_path"],
            clamp_observed=clamp_default if clamp is None else clamp,
            target_range=self["target_range"],
            seed=seed,
        )

    def bench_settings(self) -> BenchSettings:
        if self["data.source"] not in ("none", "synthetic"):
            raise ConfigError("sweeps run on synthetic data; data.source must be synthetic")
        return BenchSettings(
            m=self["synthetic.m"],
            n=self["synthetic.n"],
            rank=self["rank"],
            col_hidden=self["col_hidden"],
            row_hidden=self["row_hidden"],
            activation=self["activation"],
            hp=self.hp,
            rprop=self.rprop,
            max_iters=self["max_iters"],
            early_stop=self.early_stop,
            prediction_mode=self["prediction_mode"],
            target_range=self["target_range"],
            als_iters=self["als.iters"],
            als_ridge=self["als.ridge"],
        )

    def mask_spec(self, seed: int) -> MaskSpec:
        v = self.values
        return MaskSpec(v["mask.kind"], v["mask.fraction"], v["mask.top"], v["mask.left"],
                        v["mask.height"], v["mask.width"], v["mask.path"] or None, seed)

    def echo(self) -> Dict[str, str]:
        """Canonical string form of every key, suitable for a config file."""
        out = {}
        for key, val in sorted(self.values.items()):
            if val is None:
                out[key] = "auto"
            elif isinstance(val, bool):
                out[key] = "true" if val else "false"
            elif isinstance(val, tuple):
                out[key] = ",".join(repr(x) if isinstance(x, float) else str(x) for x in val)
            elif key == "ratings.delimiter":
                out[key] = {"\t": "tab", " ": "space", ",": "comma"}.get(val, val)
            elif isinstance(val, float):
                out[key] = repr(val)
            else:
                out[key] = str(val)
        return out


def parse_config(path=None, overrides=(), output_dir=None, env=None) -> ExperimentConfig:
    """Defaults, then the config file, then the environment, then flags."""
    env = os.environ if env is None else env
    values = {k: o.parse(o.default) for k, o in OPTIONS.items()}
    if path is not None:
        with open(path) as fh:
            values.update(parse_lines(fh, str(path)))
    if env.get(ENV_OUTPUT_DIR):
        values["output_dir"] = env[ENV_OUTPUT_DIR]
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        values[key] = _parse_value(key, raw, "--set: ")
    if output_dir is not None:
        values["output_dir"] = output_dir
    if values["repeat"] < 1:
        raise ConfigError("repeat must be >= 1")
    if values["data.source"] not in ("none", "synthetic") and not values["data.path"]:
        raise ConfigError(f"data.source = {values['data.source']} needs data.path")
    return ExperimentConfig(values)


# -- data loading ----------------------------------------------------------------


@dataclass
class Dataset:
    truth: Optional[np.ndarray]  # full grid when known (NaN where never observed)
    observed: ObservedMatrix
    hidden: np.ndarray  # entries the metrics are computed on
    bounds: Optional[tuple]
    rgb: bool = False


def _channel_mask(cfg: ExperimentConfig, shape, seed: int, channels: int) -> np.ndarray:
    ind = generate_mask(shape, cfg.mask_spec(seed))
    return np.tile(ind, (1, channels))


def load_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    src, path = cfg["data.source"], cfg["data.path"]
    if src == "none":
        raise ConfigError("no dataset: set data.source")
    if src == "ratings":
        Y, table = data_io.load_ratings(path, cfg["ratings.delimiter"],
                                        (cfg["ratings.min"], cfg["ratings.max"]))
        frac = cfg["mask.fraction"]
        if frac > 0:
            train, held = split_holdout(Y, frac, seed)
        else:
            train, held = Y, None
        truth = np.where(Y.mask, Y.values, np.nan)
        hidden = held.mask if held is not None else np.zeros(Y.shape, bool)
        return Dataset(truth, train, hidden, table.bounds)

    rgb = False
    if src == "synthetic":
        truth = data_io.gen_synthetic(
            data_io.SyntheticSpec(cfg["synthetic.m"], cfg["synthetic.n"], cfg["synthetic.r"], seed)
        )
    elif src == "csv":
        truth = data_io.load_dense_csv(path)
    elif src == "image":
        img = data_io.load_image(path)
        rgb = img.ndim == 3
        truth = data_io.unfold_rgb(img) if rgb else img
    else:
        files = sorted(Path(path).glob("*.pgm"))
        if not files:
            raise ConfigError(f"no .pgm files in {path}")
        truth = data_io.stack_images(files)
    known = ~np.isnan(truth)
    if rgb:
        ind = _channel_mask(cfg, (truth.shape[0], truth.shape[1] // 3), seed, 3)
    else:
        ind = generate_mask(truth.shape, cfg.mask_spec(seed))
    ind = ind * known
    observed = build_observed(np.nan_to_num(truth), ind)
    hidden = (ind == 0) & known
    vals = truth[known]
    return Dataset(truth, observed, hidden, (float(vals.min()), float(vals.max())), rgb)


# -- subcommands -----------------------------------------------------------------


def _metric_rows(ds: Dataset, pred, cfg: ExperimentConfig, seed: int, with_full=False):
    truth = np.nan_to_num(ds.truth)
    reports = []
    if ds.hidden.any():
        reports.append(evaluate(truth, pred, ds.hidden, ds.bounds))
    if with_full:
        reports.append(evaluate(truth, pred, None, ds.bounds))
    kind = "holdout" if cfg["data.source"] == "ratings" else cfg["mask.kind"]
    return [
        dict(seed=seed, mask_kind=kind, mask_fraction=cfg["mask.fraction"], psnr=r.psnr,
             ssim=r.ssim, nmae=r.nmae, evaluated_on=r.evaluated_on)
        for r in reports
    ]


def _print_rows(rows, header):
    for r in rows:
        print("  ".join(f"{h}={r[h]:.6g}" if isinstance(r[h], float) else f"{h}={r[h]}" for h in header))


def cmd_complete(cfg: ExperimentConfig, out: Path, inpaint: bool = False) -> int:
    seed = cfg["seed"]
    if inpaint and cfg["data.source"] != "image":
        raise ConfigError("inpaint needs data.source = image")
    ds = load_dataset(cfg, seed)
    mcfg = cfg.model_config(ds.observed.shape, seed, clamp_default=inpaint)
    res = complete(ds.observed, mcfg)
    if inpaint:
        img = data_io.refold_rgb(res.completed) if ds.rgb else res.completed
        name = "reconstructed.ppm" if ds.rgb else "reconstructed.pgm"
        data_io.save_image(img, out / name)
    else:
        data_io.save_dense_csv(res.completed, out / "completed.csv")
    write_history(out / "history.csv", res.loss_history, res.val_history)
    rows = _metric_rows(ds, res.completed, cfg, seed, with_full=inpaint)
    write_rows(rows, out / "metrics.csv", METRIC_HEADER)
    _print_rows(rows, ("evaluated_on", "psnr", "ssim", "nmae"))
    return 0


def _mean_rows(rows, keys, values):
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, grp in sorted(groups.items()):
        row = dict(zip(keys, key), n_seeds=len(grp))
        for v in values:
            row[v + "_mean"] = float(np.mean([g[v] for g in grp]))
        out.append(row)
    return out


def cmd_synth_bench(cfg: ExperimentConfig, out: Path) -> int:
    rows = synth_bench(cfg["mask.fractions"], cfg.seeds, cfg.bench_settings(), cfg["bench.methods"])
    write_rows(rows, out / "bench.csv", BENCH_HEADER)
    summary = _mean_rows(rows, ("mask_fraction", "method"), ("psnr", "ssim", "nmae"))
    header = ("mask_fraction", "method", "n_seeds", "psnr_mean", "ssim_mean", "nmae_mean")
    write_rows(summary, out / "bench_summary.csv", header)
    _print_rows(summary, header)
    return 0


def cmd_ablate(cfg: ExperimentConfig, out: Path) -> int:
    grid = [(g, l) for g in cfg["ablate.gamma"] for l in cfg["ablate.lambda"]]
    rows = regularizer_grid(grid, cfg.seeds, cfg.bench_settings(), cfg["ablate.mask_fraction"],
                            cfg["early_stop.holdout_fraction"])
    write_rows(rows, out / "ablate.csv", ABLATE_HEADER)
    summary = _mean_rows(rows, ("gamma", "lambda"), ("holdout_nmae", "train_mse", "validation_mse", "gap"))
    header = ("gamma", "lambda", "n_seeds", "holdout_nmae_mean", "train_mse_mean",
              "validation_mse_mean", "gap_mean")
    write_rows(summary, out / "ablate_summary.csv", header)
    _print_rows(summary, header)
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, out: Path) -> int:
    def log(r):
        print(f"{r.activation:8s} shape={r.shape} r={r.rank} depth={r.depth} "
              f"checked={r.n_checked} excluded={r.n_excluded} max_rel_err={r.max_rel_err:.3e}")

    results = run_suite(cfg["gradcheck.instances"], cfg["seed"], log=log)
    worst = max((r.max_rel_err for r in results), default=0.0)
    header = ("instance", "activation", "m", "n", "rank", "depth", "n_checked", "n_excluded", "max_rel_err")
    rows = [
        dict(instance=i, activation=r.activation, m=r.shape[0], n=r.shape[1], rank=r.rank,
             depth=r.depth, n_checked=r.n_checked, n_excluded=r.n_excluded, max_rel_err=r.max_rel_err)
        for i, r in enumerate(results)
    ]
    write_rows(rows, out / "gradcheck.csv", header)
    ok = worst <= cfg["gradcheck.tolerance"]
    print(f"max relative error {worst:.3e} (tolerance {cfg['gradcheck.tolerance']:g}): "
          f"{'ok' if ok else 'FAILED'}")
    return 0 if ok else 1


COMMANDS = {
    "complete": cmd_complete,
    "inpaint": lambda cfg, out: cmd_complete(cfg, out, inpaint=True),
    "synth-bench": cmd_synth_bench,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def write_manifest(out: Path, command: str, cfg: ExperimentConfig) -> None:
    seeds = cfg.seeds if command in ("synth-bench", "ablate") else [cfg["seed"]]
    manifest = dict(
        command=command,
        version=package_version(),
        numpy=np.__version__,
        seeds=seeds,
        config=cfg.echo(),
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    # same settings as a config file, for re-running with -c
    lines = [f"{k} = {v}" for k, v in manifest["config"].items() if k != "output_dir"]
    (out / "config.txt").write_text("\n".join(lines) + "\n")


def _help_epilog() -> str:
    lines = ["configuration keys (key = value; default in brackets):"]
    for key, opt in OPTIONS.items():
        lines.append(f"  {key:28s} {opt.help} [{opt.default}]")
    lines.append(f"\n{ENV_OUTPUT_DIR} overrides output_dir; --output-dir overrides both.")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepmc",
        description="Two-branch deep matrix completion experiments.",
        epilog=_help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("-c", "--config", help="key = value configuration file")
    parser.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("-o", "--output-dir", help="report directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.set, args.output_dir)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, args.command, cfg)
        if cfg["deterministic"]:
            with threadpool_limits(limits=1):
                return COMMANDS[args.command](cfg, out)
        return COMMANDS[args.command](cfg, out)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"deepmc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
