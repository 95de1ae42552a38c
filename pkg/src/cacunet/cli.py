"""``cacunet`` command line: train / evaluate / separate / params / synth.

Configuration comes from ``--preset`` and/or ``--config`` (JSON or YAML with
optional ``preset``, ``model``, ``train`` and ``synth`` sections) and is then
refined with repeatable ``--set key=value`` overrides.  Exit codes: 0 ok,
1 runtime failure, 2 usage or configuration error.
"""

import argparse
import copy
from dataclasses import fields
import json
import logging
from pathlib import Path
import sys

from ._validation import ConfigurationError, InvalidInputError
from .checkpoint import load_checkpoint
from .data import SynthSpec, load_dataset, synth_dataset, write_dataset
from .evaluation import evaluate_model, write_report
from .spectral import read_wav, write_wav
from .training import SpectrogramSeparator, TrainConfig, Trainer, TrainingDivergedError
from .unet import PRESETS, ModelConfig, param_breakdown, preset

LOG = logging.getLogger("cacunet")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


def _optional_float(text):
    return None if text.lower() in ("none", "null", "") else float(text)


def _schema():
    """Dotted key -> parser for every overridable setting."""
    schema = {
        "model.mode": str,
        "model.c": int,
        "model.c_internal": int,
        "model.stft.n_fft": int,
        "model.stft.hop": int,
        "model.stft.window": str,
    }
    for f in fields(TrainConfig):
        schema[f"train.{f.name}"] = _optional_float if f.name == "lr" else (
            float if f.type in (float, "float") else int)
    for f in fields(SynthSpec):
        schema[f"synth.{f.name}"] = float if f.name == "duration_s" else int
    return schema


SCHEMA = _schema()


def parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in SCHEMA:
            raise UsageError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")
        try:
            out[key] = SCHEMA[key](value.strip())
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {value!r} ({exc})") from exc
    return out


def _set_dotted(d, dotted, value):
    parts = dotted.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def _deep_update(base, extra):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def _read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml
        doc = yaml.safe_load(text) or {}
    else:
        doc = json.loads(text)
    unknown = set(doc) - {"preset", "model", "train", "synth"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return doc


def resolve_config(args, extra_overrides=None):
    """Return (ModelConfig, TrainConfig, SynthSpec, seed) from CLI arguments."""
    doc = _read_config_file(args.config) if getattr(args, "config", None) else {}
    name = getattr(args, "preset", None) or doc.get("preset")
    model_dict = {}
    if name:
        if name not in PRESETS:
            raise UsageError(f"unknown preset {name!r}; available presets: {', '.join(PRESETS)}")
        model_dict = preset(name).to_dict()
    model_dict = _deep_update(model_dict, copy.deepcopy(doc.get("model", {})))
    if not model_dict.get("blocks"):
        raise UsageError("no model given: pass --preset or a config with a model section")
    train_dict = dict(doc.get("train", {}))
    synth_dict = dict(doc.get("synth", {}))
    sections = {"model": model_dict, "train": train_dict, "synth": synth_dict}
    overrides = parse_overrides(getattr(args, "set", None))
    overrides.update(extra_overrides or {})
    for key, value in overrides.items():
        section, rest = key.split(".", 1)
        _set_dotted(sections[section], rest, value)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = train_dict.get("seed", DEFAULT_SEED)
    train_dict.setdefault("seed", seed)
    synth_dict.setdefault("seed", seed)
    if getattr(args, "seed", None) is not None:
        train_dict["seed"] = synth_dict["seed"] = seed
    try:
        return (ModelConfig.from_dict(model_dict), TrainConfig.from_dict(train_dict),
                SynthSpec(**synth_dict), seed)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def _load_split(data, split, synth_spec):
    if data == "synth":
        return synth_dataset(synth_spec, split)
    root = Path(data)
    if not root.is_dir():
        raise UsageError(f"data directory not found: {root}")
    return load_dataset(root, split)


# -- subcommands -----------------------------------------------------------

def cmd_train(args):
    extra = {}
    if args.steps is not None:
        extra["train.max_steps"] = args.steps
    if args.lr is not None:
        extra["train.lr"] = args.lr
    cfg, tcfg, sspec, seed = resolve_config(args, extra)
    train = _load_split(args.data, "train", sspec)
    valid = _load_split(args.data, "valid", sspec)
    if not train:
        raise UsageError(f"no training tracks found in {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = {"seed": seed, "data": args.data, "model": cfg.to_dict(), "train": tcfg.to_dict(),
           "synth": sspec.to_dict() if args.data == "synth" else None}
    (out / "run.json").write_text(json.dumps(run, indent=2, sort_keys=True))
    trainer = Trainer(cfg, tcfg, train, valid, out_dir=out)
    try:
        trainer.fit(log_every=args.log_every)
    except KeyboardInterrupt:
        print(f"interrupted at step {trainer.step}; checkpoint written to {out / 'last.ckpt'}",
              file=sys.stderr)
        return EXIT_RUNTIME
    if not (out / "best.ckpt").exists():
        trainer.save(out / "best.ckpt")
    last_loss = trainer.history[-1][1] if trainer.history else float("nan")
    print(f"trained {trainer.step} steps; final loss {last_loss:.6g}; outputs in {out}")
    return EXIT_OK


def cmd_evaluate(args):
    for ckpt in args.checkpoint:
        if not Path(ckpt).exists():
            raise UsageError(f"checkpoint not found: {ckpt}")
    sspec = SynthSpec(**{"seed": args.seed if args.seed is not None else DEFAULT_SEED,
                         **{k.split(".", 1)[1]: v for k, v in parse_overrides(args.set).items()
                            if k.startswith("synth.")}})
    tracks = _load_split(args.data, args.split, sspec)
    if not tracks:
        raise UsageError(f"no {args.split} tracks found in {args.data}")
    report = evaluate_model(args.checkpoint, tracks, name=args.name,
                            chunk_frames=args.chunk_frames)
    report.meta["seed"] = sspec.seed
    csv_path, json_path = write_report(report, args.out)
    if args.json:
        print(json.dumps(report.summary(), sort_keys=True))
    else:
        print(f"median SDR {report.median_sdr:.3f} dB over {len(report.per_track)} tracks; "
              f"mean of medians over {len(report.run_medians)} run(s): "
              f"{report.mean_of_medians:.3f} dB")
    LOG.info("wrote %s and %s", csv_path, json_path)
    return EXIT_OK


def cmd_separate(args):
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    mixture, subtype = read_wav(args.mixture, return_subtype=True)
    if mixture.channels != ckpt.config.c:
        raise UsageError(
            f"model expects {ckpt.config.c} channel(s), {args.mixture} has {mixture.channels}")
    if len(mixture) < ckpt.config.stft.n_fft:
        raise UsageError(f"{args.mixture} is shorter than one STFT window")
    sep = SpectrogramSeparator(ckpt.model, chunk_frames=args.chunk_frames)
    vocals = sep.separate(mixture)
    write_wav(args.output, vocals, subtype)
    print(f"wrote {args.output} ({vocals.channels} ch, {len(vocals)} samples, "
          f"{vocals.sample_rate} Hz, mode {ckpt.config.mode})")
    return EXIT_OK


def cmd_params(args):
    cfg, _, _, _ = resolve_config(args)
    parts = param_breakdown(cfg)
    total = sum(parts.values())
    if args.json:
        print(json.dumps({"name": cfg.name, "modules": parts, "total": total}))
    else:
        for k, v in parts.items():
            print(f"{k:<14} {v:>10d}")
        print(f"{'total':<14} {total:>10d}  ({total / 1e6:.2f}M)")
    return EXIT_OK


def cmd_synth(args):
    overrides = parse_overrides(args.set)
    kw = {k.split(".", 1)[1]: v for k, v in overrides.items() if k.startswith("synth.")}
    if args.seed is not None:
        kw["seed"] = args.seed
    kw.setdefault("seed", DEFAULT_SEED)
    spec = SynthSpec(**kw)
    tracks = [t for split in ("train", "valid", "test") for t in synth_dataset(spec, split)]
    root = write_dataset(tracks, args.out, seed=spec.seed)
    (Path(root) / "synth.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    print(f"wrote {len(tracks)} tracks to {root} (seed {spec.seed})")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _epilog():
    keys = "\n".join(f"  {k}" for k in sorted(SCHEMA))
    names = "\n".join(f"  {p}" for p in PRESETS)
    return f"presets:\n{names}\n\nconfig keys (--set key=value):\n{keys}"


def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="cacunet", description=__doc__, epilog=_epilog(),
                                     formatter_class=fmt)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p):
        p.add_argument("--preset", help="named model configuration")
        p.add_argument("--config", help="JSON/YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")

    p = sub.add_parser("train", help="train a model", epilog=_epilog(), formatter_class=fmt)
    model_args(p)
    p.add_argument("--data", default="synth", help="dataset root or 'synth'")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--log-every", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="median SDR of checkpoints on a test split",
                       epilog=_epilog(), formatter_class=fmt)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint of one run (repeat for several runs)")
    p.add_argument("--data", default="synth")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--chunk-frames", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("separate", help="extract vocals from a mixture WAV")
    p.add_argument("checkpoint")
    p.add_argument("mixture")
    p.add_argument("output")
    p.add_argument("--chunk-frames", type=int)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("params", help="trainable-parameter counts", epilog=_epilog(),
                       formatter_class=fmt)
    model_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("synth", help="write a synthetic dataset", epilog=_epilog(),
                       formatter_class=fmt)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level guard
        LOG.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
