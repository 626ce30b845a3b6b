"""Command-line interface over the full compression pipeline.

Subcommands: ``synth``, ``train``, ``compress``, ``decompress``, ``eval``,
``rd``, ``complexity``.  Exit codes: 0 success, 2 usage or configuration
error, 3 data or file-format error, 4 model mismatch (wrong checkpoint
for a compressed payload).

Every option can also be given in a plain-text config file of
``key=value`` lines (``--config run.cfg``); explicit flags win over the
file, the file wins over built-in defaults, and unknown keys are
rejected.  All randomness derives from the single ``--seed`` via fixed
SeedSequence children: 0 data synthesis, 1 dataset split, 2 weight
initialization, 3 training-pixel sampling, so every stage is reproducible
in isolation.

``--threads`` caps BLAS/OpenMP parallelism by exporting the usual
environment knobs before numpy is first imported; the default is the
runtime's available parallelism.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

__all__ = ["main"]


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    kind: object  # a converter callable, or "flag"
    default: object = None
    required: bool = False
    help: str = ""


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {exc}")


_COMMON = [
    Opt("config", str, help="key=value config file; flags override it"),
    Opt("threads", int, help="cap BLAS/OpenMP threads (default: all cores)"),
    Opt("seed", int, 0, help="master seed; stages derive fixed children"),
]

_MODEL_OPTS = [
    Opt("group-depth", int, 4, help="bands merged into one token"),
    Opt("embed-dim", int, 64, help="token embedding width"),
    Opt("blocks", int, 5, help="transformer block count"),
    Opt("heads", int, 4, help="attention head count"),
    Opt("hidden-dim", int, 1024, help="latent-head/decoder MLP width"),
    Opt("block-mlp-dim", int, 32, help="per-block MLP hidden width"),
    Opt("leaky-slope", float, 0.01, help="LeakyReLU negative slope"),
]

_TRAIN_OPTS = [
    Opt("epochs", int, 50, help="training epochs"),
    Opt("lr", float, 1e-3, help="Adam learning rate"),
    Opt("r", int, 1, help="training-set reduction factor"),
    Opt("batch-pixels", int, 4096, help="max pixels per optimizer step"),
    Opt("checkpoint-every", int, 0, help="also save every N epochs (0: only at end)"),
]

COMMANDS: dict[str, list[Opt]] = {
    "synth": [
        Opt("out", str, required=True, help="output directory"),
        Opt("cubes", int, 12, help="number of cubes"),
        Opt("size", int, 16, help="cube height and width"),
        Opt("bands", int, 32, help="spectral bands per pixel"),
        Opt("endmembers", int, 4, help="endmember spectra in the mixture"),
        Opt("noise", float, 0.01, help="Gaussian noise standard deviation"),
        Opt("fractions", _float_list, [0.7, 0.2, 0.1],
            help="train,val,test shares"),
    ],
    "train": [
        Opt("manifest", str, required=True, help="dataset manifest file"),
        Opt("gamma", int, required=True, help="latent channels"),
        Opt("bands", int, help="expected band count (checked against data)"),
        Opt("out", str, help="checkpoint path (default hycot_g<gamma>.hycw)"),
        Opt("log", str, help="epoch log path (default <checkpoint>.log)"),
        *_TRAIN_OPTS,
        *_MODEL_OPTS,
    ],
    "compress": [
        Opt("checkpoint", str, required=True, help="trained model checkpoint"),
        Opt("input", str, required=True, help="HSC1 cube to compress"),
        Opt("out", str, required=True, help="HYC1 output path"),
    ],
    "decompress": [
        Opt("checkpoint", str, required=True, help="trained model checkpoint"),
        Opt("input", str, required=True, help="HYC1 file to decompress"),
        Opt("out", str, required=True, help="HSC1 output path"),
        Opt("reference", str, help="original cube; prints reconstruction PSNR"),
    ],
    "eval": [
        Opt("checkpoint", str, required=True, help="trained model checkpoint"),
        Opt("manifest", str, required=True, help="dataset manifest file"),
        Opt("split", str, "test", help="which split to evaluate"),
    ],
    "rd": [
        Opt("manifest", str, required=True, help="dataset manifest file"),
        Opt("gammas", _int_list, required=True, help="latent widths, e.g. 51,26,13,7"),
        Opt("checkpoint-dir", str, help="directory for per-gamma checkpoints"),
        Opt("load-only", "flag", help="reuse checkpoints instead of training"),
        Opt("out", str, help="write the CSV table here instead of stdout"),
        *_TRAIN_OPTS,
        *_MODEL_OPTS,
    ],
    "complexity": [
        Opt("gammas", _int_list, required=True, help="latent widths, e.g. 51,26,13,7"),
        Opt("bands", int, 202, help="spectral bands"),
        Opt("height", int, 128, help="image height for the FLOP figure"),
        Opt("width", int, 128, help="image width for the FLOP figure"),
        Opt("out", str, help="write the CSV table here instead of stdout"),
        *_MODEL_OPTS,
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hycot",
        description="Learned pixelwise hyperspectral-image compression.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command, opts in COMMANDS.items():
        sp = sub.add_parser(command, help=f"{command} stage",
                            description=f"hycot {command}")
        for opt in _COMMON + opts:
            flag = "--" + opt.name
            if opt.kind == "flag":
                sp.add_argument(flag, action="store_const", const=True,
                                default=None, help=opt.help)
            else:
                sp.add_argument(flag, type=opt.kind, default=None, help=opt.help)
    return parser


def _parse_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


_FLAG_WORDS = {"1": True, "true": True, "yes": True,
               "0": False, "false": False, "no": False}


def _convert(raw: str, opt: Opt):
    if opt.kind == "flag":
        try:
            return _FLAG_WORDS[raw.lower()]
        except KeyError:
            raise UsageError(f"{opt.name}: expected a boolean, got {raw!r}")
    try:
        return opt.kind(raw)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"{opt.name}: {exc}")


def _resolve(args: argparse.Namespace, opts: list[Opt]) -> dict:
    table = {o.name.replace("-", "_"): o for o in _COMMON + opts}
    file_values = {}
    if args.config is not None:
        file_values = _parse_config_file(args.config)
        unknown = sorted(set(file_values) - set(table))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for dest, opt in table.items():
        given = getattr(args, dest)
        if given is not None:
            values[dest] = given
        elif dest in file_values:
            values[dest] = _convert(file_values[dest], opt)
        else:
            values[dest] = opt.default
        if values[dest] is None and opt.required:
            raise UsageError(f"--{opt.name} is required (flag or config file)")
    return values


def _apply_thread_limit(argv: list[str]) -> None:
    """Export BLAS thread caps before numpy's first import."""
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return
    try:
        count = max(1, int(threads))
    except ValueError:
        return  # argparse reports the usage error later
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(count)


def _component_seeds(seed: int) -> dict[str, int]:
    import numpy as np

    children = np.random.SeedSequence(seed).spawn(4)

    def as_int(child) -> int:
        state = child.generate_state(2)
        return (int(state[0]) << 32) | int(state[1])

    names = ("data", "split", "model", "sampling")
    return {name: as_int(child) for name, child in zip(names, children)}


def _positive(values: dict, *keys: str) -> None:
    for key in keys:
        if values[key] < 1:
            raise UsageError(f"--{key.replace('_', '-')} must be positive")


def _load_split(manifest_path: str):
    from .dataio import DatasetSplit, read_cube, read_manifest

    base = Path(manifest_path).parent
    split = DatasetSplit()
    for rel, label in read_manifest(manifest_path):
        split.parts()[label].append(read_cube(base / rel))
    return split


def _model_config(values: dict, bands: int, gamma: int, seed: int):
    from .model import ModelConfig

    return ModelConfig(
        bands=bands,
        latent_channels=gamma,
        group_depth=values["group_depth"],
        embed_dim=values["embed_dim"],
        n_blocks=values["blocks"],
        n_heads=values["heads"],
        hidden_dim=values["hidden_dim"],
        block_mlp_dim=values["block_mlp_dim"],
        leaky_slope=values["leaky_slope"],
        seed=seed,
    )


def _train_config(values: dict, seed: int):
    from .training import TrainConfig

    return TrainConfig(
        epochs=values["epochs"],
        lr=values["lr"],
        batch_pixels=values["batch_pixels"],
        reduction_factor=values["r"],
        seed=seed,
        checkpoint_every=values["checkpoint_every"],
    )


def _emit(table: str, out_path) -> None:
    if out_path:
        Path(out_path).write_text(table, encoding="ascii")
    else:
        sys.stdout.write(table)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(v: dict) -> int:
    from .dataio import split_dataset, synth_dataset, write_cube, write_manifest

    _positive(v, "cubes", "size", "bands", "endmembers")
    if v["noise"] < 0:
        raise UsageError("--noise must be non-negative")
    if len(v["fractions"]) != 3:
        raise UsageError("--fractions needs train,val,test shares")
    seeds = _component_seeds(v["seed"])
    cubes = synth_dataset(v["cubes"], v["size"], v["size"], v["bands"],
                          n_endmembers=v["endmembers"], noise_sd=v["noise"],
                          seed=seeds["data"])
    split = split_dataset(list(range(len(cubes))), tuple(v["fractions"]),
                          seed=seeds["split"])
    labels = {}
    for name, indices in split.parts().items():
        for index in indices:
            labels[index] = name
    out_dir = Path(v["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, cube in enumerate(cubes):
        rel = f"cube_{i:03d}.hsc"
        write_cube(cube, out_dir / rel)
        entries.append((rel, labels[i]))
    write_manifest(out_dir / "manifest.txt", entries)
    counts = {name: len(indices) for name, indices in split.parts().items()}
    print(f"wrote {len(cubes)} cubes "
          f"({v['size']}x{v['size']}x{v['bands']}) to {out_dir}")
    print(f"split: {counts['train']} train / {counts['val']} val / {counts['test']} test")
    print(f"manifest: {out_dir / 'manifest.txt'}")
    return 0


def _cmd_train(v: dict) -> int:
    from .model import init_weights
    from .training import train

    _positive(v, "gamma", "epochs", "r", "batch_pixels")
    if v["bands"] is not None and v["gamma"] > v["bands"]:
        raise UsageError(f"--gamma {v['gamma']} exceeds --bands {v['bands']}")
    split = _load_split(v["manifest"])
    if not split.train:
        raise UsageError("manifest has no training cubes")
    bands = split.train[0].bands
    if v["bands"] is not None and v["bands"] != bands:
        raise UsageError(f"--bands {v['bands']} but dataset cubes have {bands} bands")
    if v["gamma"] > bands:
        raise UsageError(f"--gamma {v['gamma']} exceeds the {bands} data bands")
    seeds = _component_seeds(v["seed"])
    config = _model_config(v, bands, v["gamma"], seeds["model"])
    tcfg = _train_config(v, seeds["sampling"])
    out = Path(v["out"]) if v["out"] else Path(f"hycot_g{v['gamma']}.hycw")
    log = Path(v["log"]) if v["log"] else Path(str(out) + ".log")
    log.parent.mkdir(parents=True, exist_ok=True)
    out.parent.mkdir(parents=True, exist_ok=True)
    log.write_text("")  # one log per run; epochs append during the run
    result = train(split, init_weights(config), tcfg,
                   checkpoint_path=out, log_path=log)
    print(f"best validation psnr: {result.best_val_psnr:.4f} dB "
          f"(epoch {result.best_epoch}/{tcfg.epochs})")
    print(f"checkpoint: {out}")
    print(f"log: {log}")
    return 0


def _cmd_compress(v: dict) -> int:
    from .codec import compress, write_compressed
    from .dataio import read_cube
    from .model import cr_of, format_cr, load_checkpoint

    weights = load_checkpoint(v["checkpoint"])
    cube = read_cube(v["input"])
    image = compress(cube, weights)
    write_compressed(image, v["out"])
    print(f"compression ratio: {format_cr(cr_of(weights.config))}")
    print(f"wrote {v['out']} "
          f"({cube.height}x{cube.width}x{weights.config.latent_channels} latents)")
    return 0


def _cmd_decompress(v: dict) -> int:
    from .codec import decompress, read_compressed
    from .dataio import read_cube, write_cube
    from .metrics import psnr
    from .model import load_checkpoint

    weights = load_checkpoint(v["checkpoint"])
    image = read_compressed(v["input"])
    cube = decompress(image, weights)
    write_cube(cube, v["out"])
    print(f"wrote {v['out']} ({cube.height}x{cube.width}x{cube.bands})")
    if v["reference"]:
        reference = read_cube(v["reference"])
        value = psnr(cube, reference)
        print(f"psnr vs reference: {'inf' if value == float('inf') else f'{value:.4f}'} dB")
    return 0


def _cmd_eval(v: dict) -> int:
    from .model import load_checkpoint
    from .training import evaluate

    if v["split"] not in ("train", "val", "test"):
        raise UsageError(f"--split must be train, val or test, got {v['split']!r}")
    weights = load_checkpoint(v["checkpoint"])
    split = _load_split(v["manifest"])
    cubes = split.parts()[v["split"]]
    if not cubes:
        raise UsageError(f"manifest has no {v['split']} cubes")
    value = evaluate(cubes, weights)
    print(f"mean psnr on {v['split']}: "
          f"{'inf' if value == float('inf') else f'{value:.4f}'} dB "
          f"({len(cubes)} cubes)")
    return 0


def _cmd_rd(v: dict) -> int:
    from .metrics import rd_sweep, render_rd_table

    _positive(v, "epochs", "r", "batch_pixels")
    split = _load_split(v["manifest"])
    if not split.train:
        raise UsageError("manifest has no training cubes")
    bands = split.train[0].bands
    seeds = _component_seeds(v["seed"])
    base = _model_config(v, bands, min(v["gammas"]), seeds["model"])
    points = rd_sweep(
        split, base, v["gammas"],
        train_config=None if v["load_only"] else _train_config(v, seeds["sampling"]),
        checkpoint_dir=v["checkpoint_dir"],
        load_only=bool(v["load_only"]),
    )
    _emit(render_rd_table(points), v["out"])
    return 0


def _cmd_complexity(v: dict) -> int:
    from .metrics import complexity_report, render_complexity_table

    _positive(v, "bands", "height", "width")
    configs = [_model_config(v, v["bands"], gamma, 0) for gamma in v["gammas"]]
    rows = complexity_report(configs, v["height"], v["width"])
    _emit(render_complexity_table(rows), v["out"])
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "eval": _cmd_eval,
    "rd": _cmd_rd,
    "complexity": _cmd_complexity,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_limit(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed a message
        return int(exc.code or 0)

    from .codec import FingerprintMismatchError
    from .dataio import FormatError

    def fail(exc: Exception, code: int) -> int:
        print(f"hycot {args.command}: error: {exc}", file=sys.stderr)
        return code

    try:
        values = _resolve(args, COMMANDS[args.command])
        return _HANDLERS[args.command](values)
    except UsageError as exc:
        return fail(exc, 2)
    except FingerprintMismatchError as exc:
        return fail(exc, 4)
    except (FormatError, FileNotFoundError, IsADirectoryError,
            PermissionError) as exc:
        return fail(exc, 3)
    except OSError as exc:
        return fail(exc, 3)
    except ValueError as exc:
        return fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
