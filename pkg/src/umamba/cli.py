"""Command-line entry point: ``umamba <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration ----------------------------------------------------------------
DEFAULT_SECTIONS = {
    "noise": {"kind": "white", "dir": ""},
    "data": {"duration": "4.0", "source_dir": ""},
}


def parse_config_text(text, origin="<config>"):
    """Parse ``section.key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise UsageError(f"{origin}:{lineno}: key {key!r} needs a section prefix such as model.")
        values[key] = value
    return values


class RunConfig:
    """Merged model/train/room/noise/data settings from a key=value file plus overrides."""

    def __init__(self, values=None):
        from .mixsim import RoomConfig
        from .model import ModelConfig
        from .train import TrainConfig

        self._types = {"model": ModelConfig, "train": TrainConfig, "room": RoomConfig}
        grouped = {s: {} for s in list(self._types) + list(DEFAULT_SECTIONS)}
        for key, value in (values or {}).items():
            section, name = key.split(".", 1)
            if section not in grouped:
                raise UsageError(f"unknown config section {section!r} in {key!r}")
            grouped[section][name] = value
        try:
            self.model = ModelConfig.from_dict(grouped["model"])
            self.train = TrainConfig.from_dict(grouped["train"])
            self.room = self._room(grouped["room"])
        except KeyError as err:
            raise UsageError(str(err.args[0])) from err
        except (TypeError, ValueError) as err:
            raise UsageError(f"invalid configuration: {err}") from err
        self.extra = {}
        for section, defaults in DEFAULT_SECTIONS.items():
            unknown = set(grouped[section]) - set(defaults)
            if unknown:
                raise UsageError(f"unknown {section} config keys: {sorted(unknown)}")
            self.extra[section] = {**defaults, **grouped[section]}
        if self.extra["noise"]["kind"] not in ("white", "pink", "wav", "none"):
            raise UsageError(f"unknown noise kind {self.extra['noise']['kind']!r}")

    def _room(self, d):
        cls = self._types["room"]
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise KeyError(f"unknown room config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            default = names[k].default
            if isinstance(default, tuple):
                parts = v.split(",")
                if len(parts) != 2:
                    raise ValueError(f"room.{k} needs 'low,high', got {v!r}")
                kwargs[k] = tuple(float(p) for p in parts)
            elif isinstance(default, bool):
                kwargs[k] = v.lower() in ("1", "true", "yes")
            else:
                kwargs[k] = type(default)(v)
        return cls(**kwargs)

    def get(self, section, key):
        return self.extra[section][key]

    def resolved_text(self):
        lines = [f"model.{k}={v}" for k, v in self.model.to_dict().items()]
        lines += [f"train.{k}={v}" for k, v in self.train.to_dict().items()]
        for f in dataclasses.fields(self.room):
            v = getattr(self.room, f.name)
            lines.append(f"room.{f.name}={','.join(map(repr, v)) if isinstance(v, tuple) else v}")
        for section, d in self.extra.items():
            lines += [f"{section}.{k}={v}" for k, v in d.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, extra_lines=()):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        text = self.resolved_text() + "".join(f"{line}\n" for line in extra_lines)
        (out / "resolved_config.txt").write_text(text)


def load_run_config(args):
    values = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text(), args.config))
        except OSError as err:
            raise UsageError(f"cannot read config {args.config}: {err}") from err
    for item in args.set or []:
        values.update(parse_config_text(item, "--set"))
    if args.seed is not None:
        values["train.seed"] = str(args.seed)
    if getattr(args, "max_steps", None) is not None:
        values["train.max_steps"] = str(args.max_steps)
    return RunConfig(values)


# -- commands -------------------------------------------------------------------------
def cmd_simulate(args, rc):
    from .mixsim import WavDirectoryProvider, generate_dataset

    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    source_dir = rc.get("data", "source_dir")
    provider = WavDirectoryProvider(source_dir) if source_dir else None
    seed = rc.train.seed
    manifest = generate_dataset(args.n, seed, args.out, provider=provider, noise=rc.get("noise", "kind"),
                                noise_dir=rc.get("noise", "dir") or None, room_config=rc.room,
                                duration=float(rc.get("data", "duration")))
    rc.write(args.out, [f"simulate.n={args.n}", f"simulate.seed={seed}"])
    print(f"wrote {args.n} mixtures; manifest {manifest}")


def _load_samples(manifest_path):
    from .mixsim import load_entry, read_manifest

    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.exists():
        raise UsageError(f"dataset manifest not found: {path}")
    samples = []
    for entry in read_manifest(path):
        mix, refs = load_entry(entry)
        samples.append((entry["id"], mix, refs))
    return samples


def cmd_train(args, rc):
    from .model import UMambaNet
    from .train import fit

    samples = _load_samples(args.data)
    val = _load_samples(args.val) if args.val else None
    if not samples:
        raise UsageError(f"dataset {args.data} is empty")
    rc.train.validate(rc.model.window)
    rc.write(args.out, [f"train.data={args.data}"])
    model = UMambaNet(rc.model, seed=rc.train.seed)
    result = fit(model, samples, rc.train, val_samples=val, out_dir=args.out, resume=args.resume)
    print(f"trained {result.step} steps; checkpoint {Path(args.out) / 'last.ckpt'}")


def cmd_separate(args, rc):
    from .checkpoint import load_model
    from .wavio import SAMPLE_RATE, read_wav, write_wav

    model, _ = load_model(args.checkpoint)
    fs, mix = read_wav(args.input)
    if fs != SAMPLE_RATE:
        raise UsageError(f"{args.input}: sample rate {fs} Hz, expected {SAMPLE_RATE}")
    est = model.separate(mix)
    out = Path(args.out)
    peak = max(float(abs(est).max()), 1e-12)
    scale = 0.99 / peak if peak > 0.99 else 1.0
    for i, e in enumerate(est, 1):
        write_wav(out / f"est{i}.wav", e * scale)
    rc.write(out, [f"separate.checkpoint={args.checkpoint}", f"separate.input={args.input}"])
    print(f"wrote {len(est)} estimates to {out}")


def cmd_evaluate(args, rc):
    import numpy as np

    from .metrics import evaluate_utterance, write_report

    samples = _load_samples(args.manifest)
    if args.estimator == "model":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required with --estimator model")
        from .checkpoint import load_model
        model, _ = load_model(args.checkpoint)
    rows = []
    for uid, mix, refs in samples:
        if args.estimator == "model":
            ests = model.separate(mix)
        elif args.estimator == "oracle":
            ests = refs
        else:
            ests = np.stack([mix] * len(refs))
        rows.append({"id": uid, **evaluate_utterance(ests, refs, mix)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    means = write_report(out / "metrics.tsv", rows)
    rc.write(out, [f"evaluate.manifest={args.manifest}", f"evaluate.estimator={args.estimator}"])
    print("\t".join(f"{k}={v:.3f}" for k, v in means.items()))


def cmd_profile(args, rc):
    from .model import ModelConfig
    from .profile import ABLATION_GRID, profile_table

    configs = [rc.model]
    if args.ablation:
        configs += [ModelConfig(F=f, R=r, L=l, upsampling=u) for f, r, l, u, _, _ in ABLATION_GRID]
    lines = ["F\tR\tL\tupsampling\tparams_M\tGMACs"]
    for c, params, gmacs in profile_table(configs, int(round(args.seconds * 8000))):
        lines.append(f"{c.F}\t{c.R}\t{c.L}\t{c.upsampling}\t{params / 1e6:.3f}\t{gmacs:.3f}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "profile.tsv").write_text(text)
        rc.write(args.out, [f"profile.seconds={args.seconds}"])


def cmd_spectrogram(args, rc):
    from .metrics import spectrogram, write_grid
    from .wavio import read_wav

    _, wave = read_wav(args.input)
    grid = spectrogram(wave, args.fft_size, args.hop)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = Path(args.input).stem + ".spec.txt"
    write_grid(out / name, grid)
    rc.write(out, [f"spectrogram.input={args.input}", f"spectrogram.fft_size={args.fft_size}",
                   f"spectrogram.hop={args.hop}"])
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} grid to {out / name}")


def build_parser():
    shared = _Parser(add_help=False)
    shared.add_argument("--config", help="key=value config file with section prefixes")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
    shared.add_argument("--seed", type=int, help="master seed (overrides train.seed)")
    shared.add_argument("--deterministic", action="store_true", help="force single-threaded numerics")

    parser = _Parser(prog="umamba", description="U-Mamba speech separation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[shared], help="simulate reverberant noisy mixtures")
    p.add_argument("--n", type=int, required=True, help="number of mixtures")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[shared], help="train a separator on a simulated dataset")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--val", help="validation dataset directory or manifest")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--max-steps", type=int, dest="max_steps", help="stop after this many optimizer steps")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", parents=[shared], help="separate one mixture WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="8 kHz mono WAV")
    p.add_argument("--out", required=True, help="directory for est1.wav and est2.wav")
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", parents=[shared], help="score a dataset and write a metrics report")
    p.add_argument("--manifest", required=True, help="dataset directory or manifest")
    p.add_argument("--checkpoint", help="required with --estimator model")
    p.add_argument("--estimator", choices=("model", "oracle", "mixture"), default="model",
                   help="oracle scores the references, mixture the unprocessed input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("profile", parents=[shared], help="parameter and GMAC counts")
    p.add_argument("--ablation", action="store_true", help="also list the ablation grid")
    p.add_argument("--seconds", type=float, default=3.0, help="input duration for MAC counting")
    p.add_argument("--out", help="also write profile.tsv here")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("spectrogram", parents=[shared], help="dump a dB spectrogram grid")
    p.add_argument("--input", required=True, help="mono WAV")
    p.add_argument("--fft-size", type=int, default=256, dest="fft_size")
    p.add_argument("--hop", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrogram)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.deterministic:
            for var in _THREAD_VARS:
                os.environ[var] = "1"
        rc = load_run_config(args)
        args.func(args, rc)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:  # --help
        return EXIT_OK if not err.code else EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
