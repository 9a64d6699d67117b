"""Command-line entry point: ``remd <command> [options]``.

Every command accepts ``--config FILE`` (INI sections named after the
modules) and repeated ``--set section.key=value`` overrides.  The effective
configuration is written next to the outputs so a run can be repeated.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from remd import rng as rng_mod
from remd.data import (FieldFileError, gen_grf, gen_taylor_green, read_field,
                       write_field)
from remd.field import Grid2D, ScalarField, VectorField2D
from remd.metrics import evaluate, rmse, spectrum_to_csv
from remd.nnet import CheckpointError, ModelConfig, load_checkpoint
from remd.physics import PhysicsConfig
from remd.sampler import make_cosine_schedule, sample
from remd.spectral import radial_power_spectrum
from remd.training import TrainConfig, TrainingDivergedError, make_pair, train

log = logging.getLogger("remd")

FIELD_SUFFIX = ".rmd"

DEFAULTS: dict[str, dict[str, object]] = {
    "run": {"seed": 0},
    "data": {"kind": "grf", "n": 64, "size": 32, "slope": -5 / 3, "amplitude": 1.0, "scale": 2},
    "mg": {"levels": 3, "d_emb": 32, "hidden": 32, "channels": 8, "wavelet": "haar"},
    "physics": {"w_lap": 1.0, "w_bi": 1.0, "w_aniso": 1.0, "w_spec": 1.0, "kappa": "auto",
                "huber_delta": 1.0, "lambda_max": 0.1},
    "sampler": {"T": 1000, "s_offset": 0.008, "nfe": 5, "alpha_clip": (0.05, 1.0),
                "ddim": True, "init_noise": True},
    "training": {"iterations": 1000, "batch_size": 8, "learning_rate": 1e-3, "checkpoint_every": 500},
    "eval": {"nbins": 0},
}
CHOICES = {("data", "kind"): ("grf", "taylor_green"), ("mg", "wavelet"): ("haar", "db2")}


class ConfigError(ValueError):
    pass


def _parse_value(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = tuple(float(x) for x in raw.split(","))
            if len(parts) != len(default):
                raise ValueError(raw)
            return parts
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    if (section, key) == ("physics", "kappa") and raw != "auto":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"physics.kappa: expected 'auto' or a number, got {raw!r}") from None
    allowed = CHOICES.get((section, key))
    if allowed and raw not in allowed:
        raise ConfigError(f"{section}.{key}: expected one of {', '.join(allowed)}, got {raw!r}")
    return raw


class RunConfig:
    """Typed, section-scoped key-value configuration with override tracking."""

    def __init__(self):
        self.values = copy.deepcopy(DEFAULTS)

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in self.values or key not in self.values[section]:
            raise ConfigError(f"unknown config key '{section}.{key}'")
        self.values[section][key] = _parse_value(section, key, raw)

    def set_assignment(self, text: str) -> None:
        name, sep, raw = text.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {text!r} is not of the form section.key=value")
        self.set(section, key, raw)

    def load_file(self, path) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc.message}") from None
        for section in parser.sections():
            if section not in self.values:
                raise ConfigError(f"unknown config section '{section}'")
            for key, raw in parser.items(section):
                self.set(section, key, raw)

    def update(self, values: dict) -> None:
        for section, items in values.items():
            for key, v in items.items():
                self.set(section, key, _format(v))

    def __getitem__(self, section):
        return self.values[section]

    def to_ini(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_format(v)}" for k, v in items.items()]
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def model_config(self) -> ModelConfig:
        m = self.values["mg"]
        return ModelConfig(m["levels"], m["d_emb"], m["hidden"], m["channels"], m["wavelet"])

    def physics_config(self) -> PhysicsConfig:
        p = dict(self.values["physics"])
        if p["kappa"] == "auto":
            p["kappa"] = None
        return PhysicsConfig(**p)

    def schedule(self, nfe: int | None = None):
        s = self.values["sampler"]
        return make_cosine_schedule(s["T"], s["s_offset"], s["nfe"] if nfe is None else nfe,
                                    s["alpha_clip"], s["ddim"])

    def train_config(self) -> TrainConfig:
        t, d = self.values["training"], self.values["data"]
        return TrainConfig(t["iterations"], t["batch_size"], t["learning_rate"], d["scale"],
                           d["size"], rng_mod.derive_seed(self.seed, "train"), t["checkpoint_every"])


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    return str(v)


def _field_files(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob(f"*{FIELD_SUFFIX}"))
        if not files:
            raise FileNotFoundError(f"no {FIELD_SUFFIX} files in {p}")
        return files
    if not p.exists():
        raise FileNotFoundError(f"{p} does not exist")
    return [p]


def _scalar(path) -> ScalarField:
    return read_field(path)[0]


def _restrict(f: ScalarField, scale: int) -> ScalarField:
    return make_pair(f, scale)[0]


def _config_from_args(args, checkpoint_meta: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if checkpoint_meta and "config" in checkpoint_meta:
        saved = {s: v for s, v in checkpoint_meta["config"].items() if s in ("physics", "sampler", "mg")}
        cfg.update(saved)
    if args.config:
        cfg.load_file(args.config)
    for text in args.set or []:
        cfg.set_assignment(text)
    return cfg


def _echo(cfg: RunConfig, out: Path) -> None:
    """Write the effective config next to ``out`` (inside it when a directory)."""
    target = out / "config.ini" if out.is_dir() else out.with_name(out.name + ".config.ini")
    cfg.write(target)


def cmd_gen(args) -> None:
    cfg = _config_from_args(args)
    d = cfg["data"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = Grid2D(d["size"], d["size"])
    if d["kind"] == "taylor_green":
        tg = Grid2D(d["size"], d["size"], 1.0 / d["size"], 1.0 / d["size"])
        w = gen_taylor_green(tg, d["amplitude"])
        write_field(out / f"field_0000{FIELD_SUFFIX}", [w.u, w.v])
    else:
        base = rng_mod.derive_seed(cfg.seed, "gen")
        for i in range(d["n"]):
            f = gen_grf(grid, d["slope"], rng_mod.derive_seed(base, f"field-{i}"))
            write_field(out / f"field_{i:04d}{FIELD_SUFFIX}", f)
    _echo(cfg, out)


def cmd_degrade(args) -> None:
    cfg = _config_from_args(args)
    if args.scale is not None:
        cfg.set("data", "scale", str(args.scale))
    scale = cfg["data"]["scale"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in _field_files(args.input):
        write_field(out / path.name, [_restrict(f, scale) for f in read_field(path)])
    _echo(cfg, out)


def cmd_train(args) -> None:
    cfg = _config_from_args(args)
    files = _field_files(args.data)
    dataset = [_scalar(p) for p in files]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.ini")
    train(cfg.train_config(), dataset, cfg.model_config(), cfg.physics_config(), cfg.schedule(),
          out_dir=out, extra_meta={"config": cfg.values})


def _sample_one(cfg: RunConfig, params, lr: ScalarField, seed: int, nfe: int) -> ScalarField:
    s = cfg["sampler"]
    return sample(lr, params, cfg.schedule(nfe), cfg.physics_config(), seed=seed,
                  scale=cfg["data"]["scale"], init_noise=s["init_noise"])


def cmd_sample(args) -> None:
    params, _, meta = load_checkpoint(args.checkpoint)
    cfg = _config_from_args(args, meta)
    if args.nfe is not None:
        cfg.set("sampler", "nfe", str(args.nfe))
    if args.seed is not None:
        cfg.set("run", "seed", str(args.seed))
    if args.no_init_noise:
        cfg.set("sampler", "init_noise", "false")
    if "scale" in meta and args.scale is None:
        cfg.set("data", "scale", str(meta["scale"]))
    if args.scale is not None:
        cfg.set("data", "scale", str(args.scale))
    lr = _scalar(args.lr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hr = _sample_one(cfg, params, lr, rng_mod.derive_seed(cfg.seed, "sample"), cfg["sampler"]["nfe"])
    write_field(out, hr)
    _echo(cfg, out)


def _vector(fields):
    return VectorField2D(fields[0], fields[1]) if len(fields) == 2 else None


def cmd_eval(args) -> None:
    cfg = _config_from_args(args)
    pred, gt = read_field(args.pred), read_field(args.gt)
    if len(pred) != len(gt):
        raise ValueError(f"channel count differs: {len(pred)} vs {len(gt)}")
    nbins = cfg["eval"]["nbins"] or None
    report = evaluate(pred[0], gt[0], _vector(pred), _vector(gt), nbins=nbins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "error_spectrum.csv").write_text(report.spectrum_csv())
    _echo(cfg, out)


def cmd_spectrum(args) -> None:
    cfg = _config_from_args(args)
    if args.nbins is not None:
        cfg.set("eval", "nbins", str(args.nbins))
    spec = radial_power_spectrum(_scalar(args.field), cfg["eval"]["nbins"] or None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(spectrum_to_csv(spec))
    _echo(cfg, out)


def sweep(cfg: RunConfig, params, lr_fields, gt_fields, steps):
    """``(steps, rmse, seconds)`` rows; rmse pools squared error over all fields."""
    rows = []
    base = rng_mod.derive_seed(cfg.seed, "sweep")
    for k in steps:
        t0 = time.perf_counter()
        sq = 0.0
        for i, (lr, gt) in enumerate(zip(lr_fields, gt_fields)):
            pred = _sample_one(cfg, params, lr, rng_mod.derive_seed(base, f"field-{i}"), k)
            sq += rmse(pred, gt) ** 2
        rows.append((k, float(np.sqrt(sq / len(gt_fields))), time.perf_counter() - t0))
    return rows


def _parse_steps(text: str) -> list[int]:
    try:
        steps = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--steps: expected comma-separated integers, got {text!r}") from None
    if not steps:
        raise ConfigError("--steps is empty")
    return steps


def cmd_sweep(args) -> None:
    params, _, meta = load_checkpoint(args.checkpoint)
    cfg = _config_from_args(args, meta)
    if "scale" in meta:
        cfg.set("data", "scale", str(meta["scale"]))
    steps = _parse_steps(args.steps)
    lr_files, gt_files = _field_files(args.lr_dir), _field_files(args.gt_dir)
    if [p.name for p in lr_files] != [p.name for p in gt_files]:
        raise ValueError("LR and GT directories do not hold the same file names")
    rows = sweep(cfg, params, [_scalar(p) for p in lr_files], [_scalar(p) for p in gt_files], steps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["steps", "rmse", "seconds"])
        for k, e, sec in rows:
            w.writerow([k, repr(e), f"{sec:.6f}"])
    _echo(cfg, out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="remd", description="Multigrid-corrected diffusion super-resolution.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI file with module sections")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
        p.set_defaults(func=fn)
        return p

    p = add("gen", cmd_gen, "generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p = add("degrade", cmd_degrade, "block-average fields by a dyadic factor")
    p.add_argument("input")
    p.add_argument("--scale", type=int)
    p.add_argument("--out", required=True)
    p = add("train", cmd_train, "train on a directory of HR fields")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p = add("sample", cmd_sample, "super-resolve one LR field")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr", required=True)
    p.add_argument("--nfe", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--no-init-noise", action="store_true")
    p.add_argument("--out", required=True)
    p = add("eval", cmd_eval, "compare a prediction with ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p = add("spectrum", cmd_spectrum, "radial power spectrum of a field")
    p.add_argument("--field", required=True)
    p.add_argument("--nbins", type=int)
    p.add_argument("--out", required=True)
    p = add("sweep", cmd_sweep, "RMSE and time against number of reverse steps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--steps", default="1,2,5,10")
    p.add_argument("--out", required=True)
    return ap


EXPECTED_ERRORS = (ConfigError, FieldFileError, CheckpointError, TrainingDivergedError,
                   FileNotFoundError, OSError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"remd {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except EXPECTED_ERRORS as exc:
        print(f"remd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
