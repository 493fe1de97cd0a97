"""Command-line surface: extract, train, enhance, evaluate, plot.

Configuration precedence is flags over config-file values over defaults. The
config file is flat ``key = value`` text using the same names as the flags
(underscores instead of dashes); unknown keys are rejected. Every command
echoes its effective configuration and writes it, with its hash, next to the
outputs it produces.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from bcenhance import losses, metrics, plotting, trainer, vocoder
from bcenhance.errors import BcenhanceError, ConfigError, DataError, NumericError

LOG = logging.getLogger("bcenhance")
VERBOSITY_ENV = "BCENHANCE_LOG"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

COMMANDS = ("extract", "train", "enhance", "evaluate", "plot")

# TrainConfig fields settable from flags or config file, with parsers.
_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_WORDS[text.strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}") from None


TRAIN_KEYS = {
    "epochs": int,
    "gen_lr": float,
    "disc_lr": float,
    "lambda_cyc": float,
    "lambda_id": float,
    "crop_frames": int,
    "mapping": str,
    "variant": str,
    "seed": int,
    "holdout": _parse_bool,
    "checkpoint_every": int,
}
PATH_KEYS = ("dataset", "checkpoint", "output", "input", "resume")


@dataclass
class RunConfig:
    """Effective settings for one command invocation."""

    command: str
    dataset: Path | None = None
    checkpoint: Path | None = None
    output: Path | None = None
    input: Path | None = None
    resume: Path | None = None
    split: str = "test"
    force: bool = False
    train: trainer.TrainConfig = None  # type: ignore[assignment]

    def echo_lines(self) -> list[str]:
        lines = [f"command = {self.command}"]
        for key in PATH_KEYS:
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key} = {value}")
        if self.command == "evaluate":
            lines.append(f"split = {self.split}")
        if self.command == "extract":
            lines.append(f"force = {str(self.force).lower()}")
        for f in fields(self.train):
            if f.name in TRAIN_KEYS:
                lines.append(f"{f.name} = {getattr(self.train, f.name)}")
        lines.append(f"config_hash = {trainer.config_hash(self.train)}")
        return lines


class UsageError(Exception):
    """Bad invocation; carries the message for stderr."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); raise instead
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="bcenhance", description=__doc__, add_help=True)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")

    def add(name, help_text, *, dataset=False, checkpoint=False, output=False,
            input_wav=False, train_flags=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
        if dataset:
            p.add_argument("--dataset", type=Path, default=None, help="dataset root (bc/ + ac/)")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, default=None, help="checkpoint file")
        if output:
            p.add_argument("--output", type=Path, default=None, help="output path")
        if input_wav:
            p.add_argument("--input", type=Path, default=None, help="input BC wav")
        p.add_argument("--seed", type=int, default=None, help="experiment seed")
        if train_flags:
            for key, cast in TRAIN_KEYS.items():
                if key == "seed":
                    continue
                p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=cast, default=None)
        return p

    add("extract", "cache acoustic features next to each wav", dataset=True).add_argument(
        "--force", action="store_true", help="recompute existing feature caches"
    )
    add("train", "run the training loop", dataset=True, output=True, train_flags=True).add_argument(
        "--resume", type=Path, default=None, help="checkpoint to continue from"
    )
    add("enhance", "convert one BC wav to enhanced speech", checkpoint=True,
        output=True, input_wav=True)
    add("evaluate", "score enhanced utterances against AC references", dataset=True,
        checkpoint=True, output=True).add_argument(
        "--split", choices=("test", "train", "all"), default=None
    )
    add("plot", "render loss curves and spectrogram comparisons", dataset=True,
        checkpoint=True, output=True)
    return parser


def _read_config_file(path: Path) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key in TRAIN_KEYS:
            try:
                values[key] = TRAIN_KEYS[key](value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        elif key == "seed":
            values[key] = int(value)
        elif key == "split":
            values[key] = value
        elif key in PATH_KEYS:
            values[key] = Path(value)
        else:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def parse_config(argv) -> RunConfig:
    """Resolve flags, config file, and defaults into a RunConfig."""
    parser = _build_parser()
    if not argv:
        raise UsageError(parser.format_usage())
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError(parser.format_usage())
    file_values = _read_config_file(ns.config) if getattr(ns, "config", None) else {}

    def resolve(key, default=None):
        flag = getattr(ns, key, None)
        if flag is not None:
            return flag
        return file_values.get(key, default)

    train_kwargs = {}
    for key in TRAIN_KEYS:
        value = resolve(key)
        if value is not None:
            train_kwargs[key] = value
    seed = resolve("seed")
    if seed is not None:
        train_kwargs["seed"] = seed
    try:
        train_config = trainer.TrainConfig(**train_kwargs)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc

    config = RunConfig(
        command=ns.command,
        dataset=resolve("dataset"),
        checkpoint=resolve("checkpoint"),
        output=resolve("output"),
        input=resolve("input"),
        resume=resolve("resume"),
        split=resolve("split", "test"),
        force=bool(getattr(ns, "force", False)),
        train=train_config,
    )
    _require_paths(config)
    return config


def _require_paths(config: RunConfig) -> None:
    needed = {
        "extract": ("dataset",),
        "train": ("dataset", "output"),
        "enhance": ("checkpoint", "input", "output"),
        "evaluate": ("dataset", "checkpoint", "output"),
        "plot": ("dataset", "checkpoint", "output"),
    }[config.command]
    for key in needed:
        if getattr(config, key) is None:
            raise UsageError(f"{config.command} requires --{key}")
    for key in ("dataset", "checkpoint", "input"):
        if key in needed:
            path = getattr(config, key)
            if not path.exists():
                raise DataError(f"--{key} path does not exist: {path}")


def _write_effective_config(config: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{config.command}_config.txt").write_text(
        "\n".join(config.echo_lines()) + "\n", encoding="utf-8"
    )


class _Cleanup:
    """Deletes files created by a failed command so no partial outputs remain."""

    def __init__(self):
        self.paths: list[Path] = []

    def track(self, path: Path) -> Path:
        self.paths.append(Path(path))
        return path

    def discard_all(self) -> None:
        for path in self.paths:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass


def _run_extract(config: RunConfig, cleanup: _Cleanup) -> None:
    written, reused = trainer.extract_features(config.dataset, force=config.force)
    print(f"extract: {written} written, {reused} reused")


def _run_train(config: RunConfig, cleanup: _Cleanup) -> None:
    out_dir = Path(config.output)
    _write_effective_config(config, out_dir)
    final = trainer.train(config.train, config.dataset, out_dir, resume=config.resume)
    print(f"train: final checkpoint {final}")


def _run_enhance(config: RunConfig, cleanup: _Cleanup) -> None:
    wave = vocoder.read_wav(config.input)
    enhanced = trainer.enhance(config.checkpoint, wave, seed=config.train.seed)
    out = Path(config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_effective_config(config, out.parent)
    cleanup.track(out)
    vocoder.write_wav(out, enhanced)
    print(f"enhance: wrote {out} ({enhanced.shape[0] / vocoder.SAMPLE_RATE:.2f} s)")


def _run_evaluate(config: RunConfig, cleanup: _Cleanup) -> None:
    report = metrics.evaluate(config.checkpoint, config.dataset, split=config.split)
    out_dir = Path(config.output)
    _write_effective_config(config, out_dir)
    records = out_dir / "evaluation.tsv"
    cleanup.track(records)
    records.write_text(report.to_records(), encoding="utf-8")
    print(report.to_table(), end="")
    print(f"evaluate: wrote {records}")


def _run_plot(config: RunConfig, cleanup: _Cleanup) -> None:
    out_dir = Path(config.output)
    _write_effective_config(config, out_dir)

    log_path = Path(config.checkpoint).parent / trainer.LOG_NAME
    made = []
    if log_path.is_file():
        records = losses.parse_loss_log(log_path.read_text(encoding="utf-8").splitlines())
        curve = cleanup.track(out_dir / "loss_curves.png")
        plotting.plot_loss_curves(records, curve)
        made.append(curve)
    else:
        LOG.warning("no loss log beside checkpoint (%s); skipping curves", log_path)

    state, checkpoint_config = trainer.load_checkpoint(config.checkpoint)
    dataset = trainer.load_dataset(config.dataset)
    _, test_ids = trainer.split_ids(dataset.ids, checkpoint_config)
    for utterance_id in test_ids:
        enhanced = trainer.enhance_features(state, dataset.bc[utterance_id], seed=config.train.seed)
        bc_wave = vocoder.read_wav(dataset.root / "bc" / f"{utterance_id}.wav")
        ac_wave = vocoder.read_wav(dataset.root / "ac" / f"{utterance_id}.wav")
        panel_path = cleanup.track(out_dir / f"{utterance_id}_spectrograms.png")
        plotting.plot_spectrograms(
            [
                ("bone-conducted input", bc_wave),
                ("enhanced", enhanced),
                ("air-conducted reference", ac_wave),
            ],
            panel_path,
        )
        made.append(panel_path)
    print("plot: wrote " + ", ".join(str(p) for p in made))


_RUNNERS = {
    "extract": _run_extract,
    "train": _run_train,
    "enhance": _run_enhance,
    "evaluate": _run_evaluate,
    "plot": _run_plot,
}


def run(config: RunConfig) -> int:
    """Execute one parsed command; returns the process exit code."""
    for line in config.echo_lines():
        LOG.info("%s", line)
    cleanup = _Cleanup()
    try:
        _RUNNERS[config.command](config, cleanup)
    except Exception:
        cleanup.discard_all()
        raise
    return EXIT_OK


def _configure_logging() -> None:
    level_name = os.environ.get(VERBOSITY_ENV, "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        config = parse_config(argv)
        return run(config)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BcenhanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
