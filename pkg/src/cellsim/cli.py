"""Command-line entry point.

Every subcommand resolves its settings as built-in defaults, then values
from an optional JSON ``--config`` file, then explicit flags. The resolved
settings are logged before any work starts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from dataclasses import replace
from pathlib import Path

from .augment import CutMixConfig, dacs_batch
from .errors import CellSimError, ConfigError, ParameterError
from .evaluation import (
    POLICIES,
    BlobCounter,
    BlobCounterConfig,
    ExternalCommandCounter,
    MaskOracleCounter,
    ZeroCounter,
    evaluate,
    stratified_split,
)
from .imaging import Manifest, ManifestRecord, read_manifest, read_png, write_manifest, write_png
from .latent import (
    CleanLatentOracle,
    GaussianPriorDenoiser,
    StyleToken,
    StylizeParams,
    fit_style_token,
    load_object,
    make_schedule,
    read_token,
    schedule_table,
    stylize,
    toy_codec,
    write_token,
)
from .latent.schedule import KINDS
from .seeding import derive_seed
from .synthgen import PRESETS, GenConfig, generate_dataset

log = logging.getLogger("cellsim")

SECTIONS = {
    "generate": "generate",
    "stylize": "stylize",
    "fit-token": "stylize",
    "augment": "augment",
    "split": "eval",
    "evaluate": "eval",
    "schedule-dump": "schedule",
}

SCHEDULE_DEFAULTS = {"T": 1000, "beta_start": 0.00085, "beta_end": 0.012, "schedule_kind": "scaled_linear"}

DEFAULTS = {
    "generate": {"preset": "algorithm", "n_images": 1, "seed": 0, "out_dir": "synthetic", "jobs": None},
    "stylize": {"gamma": 0.7, "steps": 50, "token_file": None, "seed": 0, "backend": "toy",
                "backend_spec": None, "out": "stylized.png", **SCHEDULE_DEFAULTS},
    "fit-token": {"steps": 1000, "lr": 5e-4, "seed": 0, "backend": "toy", "backend_spec": None,
                  "out": "token.bin", "dim": 768, "directions": 256, **SCHEDULE_DEFAULTS},
    "augment": {"batches": 1, "per_domain": 8, "alpha": 1.0, "prob": 0.5, "seed": 0,
                "out_dir": "mixed", "crop": "200x200", "reverse": False},
    "split": {"bins": "0,50,100,150,200", "per_bin": 250, "train_frac": 0.8, "seed": 0, "out_dir": None},
    "evaluate": {"counter": "blob", "counter_cmd": None, "window": "200x200", "policy": "drop_partial",
                 "report": None, "threshold": "auto", "min_area": 10, "connectivity": 8, "jobs": None},
    "schedule-dump": {**SCHEDULE_DEFAULTS, "out": None},
}

GEN_FIELDS = {
    "image_size": "pair", "count_mean": float, "count_std": float, "count_clamp": "pair",
    "clusters_range": "pair", "cluster_spread": float, "cell_size": float, "axis_jitter": float,
    "intensity_range": "pair", "overlap_threshold": float, "max_attempts_per_cluster": int,
    "attempts_per_cell": int, "contrast_range": "pair", "brightness_range": "pair",
    "separation_margin": int, "background_noise": "pair",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: usage: {message}\n")


def _pair(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = str(text).replace("x", ",").split(",")
    if len(parts) != 2:
        raise ConfigError(f"expected two values like 'A,B' or 'AxB', got {text!r}")
    return tuple(float(p) for p in parts)


def _size(text) -> tuple[int, int]:
    a, b = _pair(text)
    if a != int(a) or b != int(b):
        raise ConfigError(f"sizes must be integers, got {text!r}")
    return int(a), int(b)


def _opt(p, name, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, default=argparse.SUPPRESS, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cellsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _opt(p, "config", help="JSON file with settings (flags take precedence)")
        return p

    p = add("generate", "synthesize clustered-cell images with center masks")
    _opt(p, "preset", choices=sorted(PRESETS))
    for name, kind in GEN_FIELDS.items():
        _opt(p, name, type=str if kind == "pair" else kind)
    _opt(p, "n_images", type=int)
    _opt(p, "seed", type=int)
    _opt(p, "out_dir")
    _opt(p, "jobs", type=int)

    def schedule_opts(p):
        _opt(p, "T", type=int)
        _opt(p, "beta_start", type=float)
        _opt(p, "beta_end", type=float)
        _opt(p, "schedule_kind", choices=KINDS)

    p = add("stylize", "transfer the appearance of a style image onto a content image")
    _opt(p, "content")
    _opt(p, "style")
    _opt(p, "gamma", type=float)
    _opt(p, "steps", type=int)
    _opt(p, "token_file")
    _opt(p, "seed", type=int)
    _opt(p, "backend", choices=("toy", "oracle", "external"))
    _opt(p, "backend_spec", help="module:factory; factory(schedule) must return a denoiser")
    _opt(p, "out")
    schedule_opts(p)

    p = add("fit-token", "fit a style token to a directory of style images")
    _opt(p, "style_dir")
    _opt(p, "steps", type=int)
    _opt(p, "lr", type=float)
    _opt(p, "seed", type=int)
    _opt(p, "dim", type=int)
    _opt(p, "directions", type=int)
    _opt(p, "backend", choices=("toy", "external"))
    _opt(p, "backend_spec")
    _opt(p, "out")
    schedule_opts(p)

    p = add("augment", "build CutMix-mixed real/synthetic batches")
    _opt(p, "real_manifest")
    _opt(p, "syn_manifest")
    _opt(p, "batches", type=int)
    _opt(p, "per_domain", type=int)
    _opt(p, "alpha", type=float)
    _opt(p, "prob", type=float)
    _opt(p, "seed", type=int)
    _opt(p, "out_dir")
    _opt(p, "crop", help="HxW, or 'none'")
    _opt(p, "reverse", action="store_const", const=True, help="paste real boxes into synthetic images")

    p = add("split", "stratified train/validation selection by cell-count bins")
    _opt(p, "manifest")
    _opt(p, "bins")
    _opt(p, "per_bin", type=int)
    _opt(p, "train_frac", type=float)
    _opt(p, "seed", type=int)
    _opt(p, "out_dir")

    p = add("evaluate", "score a counter against manifest ground truth")
    _opt(p, "manifest")
    _opt(p, "counter", choices=("blob", "zero", "oracle", "external-cmd"))
    _opt(p, "counter_cmd", help="command line for the external counter; the PNG path is appended")
    _opt(p, "window")
    _opt(p, "policy", choices=POLICIES)
    _opt(p, "report")
    _opt(p, "threshold")
    _opt(p, "min_area", type=int)
    _opt(p, "connectivity", type=int)
    _opt(p, "jobs", type=int)

    p = add("schedule-dump", "print t, beta_t, alpha_bar_t for a noise schedule")
    schedule_opts(p)
    _opt(p, "out")
    return parser


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    section = doc.get(SECTIONS[command], {})
    section = {**section, **doc.get(command, {})} if command in doc else section
    return {k.replace("-", "_"): v for k, v in {**flat, **section}.items()}


def resolve(command: str, args: argparse.Namespace) -> dict:
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    from_file = _load_config(args.config, command) if getattr(args, "config", None) else {}
    resolved = {**DEFAULTS[command], **from_file, **explicit}
    known = set(DEFAULTS[command]) | {"content", "style", "style_dir", "real_manifest",
                                      "syn_manifest", "manifest", "counter_cmd"}
    if command == "generate":
        known |= set(GEN_FIELDS)
    unknown = set(resolved) - known
    if unknown:
        raise ConfigError(f"unknown settings for {command}: {sorted(unknown)}")
    if resolved.get("jobs") is None and "jobs" in DEFAULTS[command]:
        resolved["jobs"] = os.cpu_count() or 1
    return resolved


def _require(cfg: dict, *names):
    missing = [n for n in names if not cfg.get(n)]
    if missing:
        raise ConfigError("missing required settings: " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _schedule(cfg):
    return make_schedule(int(cfg["T"]), float(cfg["beta_start"]), float(cfg["beta_end"]), cfg["schedule_kind"])


def _gen_config(cfg: dict) -> GenConfig:
    base = PRESETS[cfg["preset"]]
    over = {}
    for name, kind in GEN_FIELDS.items():
        if name in cfg and cfg[name] is not None:
            val = cfg[name]
            if kind == "pair":
                val = _size(val) if name in ("image_size", "count_clamp", "clusters_range") else _pair(val)
            over[name] = val
    try:
        return replace(base, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ commands

def cmd_generate(cfg):
    gen = _gen_config(cfg)
    _log_resolved({**cfg, "generator": gen.to_dict()})
    generate_dataset(gen, int(cfg["n_images"]), int(cfg["seed"]), cfg["out_dir"], jobs=int(cfg["jobs"]))


def _denoiser_for(cfg, schedule):
    if cfg["backend"] == "toy":
        return GaussianPriorDenoiser(schedule)
    if cfg["backend"] == "oracle":
        return lambda z_init: CleanLatentOracle(z_init, schedule)
    _require(cfg, "backend_spec")
    return load_object(cfg["backend_spec"])(schedule)


def cmd_stylize(cfg):
    _require(cfg, "content", "style")
    schedule = _schedule(cfg)
    token = read_token(cfg["token_file"]) if cfg.get("token_file") else StyleToken.zeros()
    params = StylizeParams(float(cfg["gamma"]), int(cfg["steps"]), token, int(cfg["seed"]))
    _log_resolved(cfg)
    out = stylize(read_png(cfg["content"]), read_png(cfg["style"]), params,
                  _denoiser_for(cfg, schedule), toy_codec(), schedule)
    write_png(cfg["out"], out)


def cmd_fit_token(cfg):
    _require(cfg, "style_dir")
    if cfg["backend"] == "oracle":
        raise ConfigError("fit-token supports the toy and external backends")
    schedule = _schedule(cfg)
    paths = sorted(Path(cfg["style_dir"]).glob("*.png"))
    if not paths:
        raise ConfigError(f"no PNG files in {cfg['style_dir']}")
    _log_resolved(cfg)
    codec = toy_codec()
    latents = [codec.encode(read_png(p)) for p in paths]
    result = fit_style_token(_denoiser_for(cfg, schedule), latents, schedule, steps=int(cfg["steps"]),
                             step_size=float(cfg["lr"]), seed=int(cfg["seed"]), dim=int(cfg["dim"]),
                             directions=int(cfg["directions"]))
    log.info("token fit: running loss %.6g -> %.6g (best at step %d)",
             result.initial_loss, result.final_loss, result.best_step)
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    write_token(cfg["out"], result.token)


def cmd_augment(cfg):
    _require(cfg, "real_manifest", "syn_manifest")
    mix = CutMixConfig(float(cfg["alpha"]), float(cfg["prob"]))
    crop = None if str(cfg["crop"]).lower() == "none" else _size(cfg["crop"])
    real = read_manifest(cfg["real_manifest"])
    syn = read_manifest(cfg["syn_manifest"])
    _log_resolved(cfg)
    out = Path(cfg["out_dir"])
    records = []
    for b in range(int(cfg["batches"])):
        batch = dacs_batch(real, syn, int(cfg["per_domain"]), mix, derive_seed(int(cfg["seed"]), b),
                           crop=crop, syn_into_real=not cfg["reverse"])
        for j, s in enumerate(batch):
            stem = f"b{b:04d}_{j:03d}"
            write_png(out / "images" / f"{stem}.png", s.image)
            write_png(out / "masks" / f"{stem}.png", s.mask)
            box = s.box
            tags = [f"mixed={str(s.mixed).lower()}", f"lambda={s.lam:.6f}",
                    f"box={box.y0},{box.x0},{box.y1},{box.x1}"]
            records.append(ManifestRecord(f"images/{stem}.png", s.count, derive_seed(int(cfg["seed"]), b),
                                          f"masks/{stem}.png", tags))
    write_manifest(out / "manifest.jsonl", Manifest(records, out))


def cmd_split(cfg):
    _require(cfg, "manifest")
    try:
        edges = [float(v) for v in str(cfg["bins"]).split(",")]
    except ValueError:
        raise ConfigError(f"bad --bins {cfg['bins']!r}") from None
    _log_resolved(cfg)
    records = read_manifest(cfg["manifest"])
    train, val = stratified_split(records, edges, int(cfg["per_bin"]), float(cfg["train_frac"]), int(cfg["seed"]))
    out = Path(cfg["out_dir"]) if cfg.get("out_dir") else Path(cfg["manifest"]).parent
    write_manifest(out / "train.jsonl", train, check_masks=False)
    write_manifest(out / "val.jsonl", val, check_masks=False)
    print(f"train {len(train)} val {len(val)}")


def _counter_for(cfg):
    kind = cfg["counter"]
    if kind == "blob":
        thr = cfg["threshold"]
        thr = thr if thr == "auto" else float(thr)
        return BlobCounter(BlobCounterConfig(thr, int(cfg["min_area"]), int(cfg["connectivity"])))
    if kind == "zero":
        return ZeroCounter()
    if kind == "oracle":
        return MaskOracleCounter()
    _require(cfg, "counter_cmd")
    return ExternalCommandCounter(shlex.split(cfg["counter_cmd"]))


def cmd_evaluate(cfg):
    _require(cfg, "manifest")
    counter = _counter_for(cfg)
    window = _size(cfg["window"])
    _log_resolved(cfg)
    report = evaluate(read_manifest(cfg["manifest"]), counter, window, cfg["policy"], jobs=int(cfg["jobs"]))
    if cfg.get("report"):
        Path(cfg["report"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["report"]).write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.table())


def cmd_schedule_dump(cfg):
    text = schedule_table(_schedule(cfg))
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


COMMANDS = {
    "generate": cmd_generate,
    "stylize": cmd_stylize,
    "fit-token": cmd_fit_token,
    "augment": cmd_augment,
    "split": cmd_split,
    "evaluate": cmd_evaluate,
    "schedule-dump": cmd_schedule_dump,
}


def _log_resolved(cfg: dict) -> None:
    log.info("resolved config: %s", json.dumps(cfg, sort_keys=True, default=str))


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.command, args)
        COMMANDS[args.command](cfg)
    except (ConfigError, ParameterError) as exc:
        sys.stderr.write(f"error: {exc.category}: {exc}\n")
        return 2
    except CellSimError as exc:
        sys.stderr.write(f"error: {exc.category}: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
