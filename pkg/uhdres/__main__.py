from __future__ import annotations

import argparse
import csv
from pathlib import Path
import platform
import sys
import warnings

import numpy as np

import uhdres
from uhdres import bench
from uhdres import render
from uhdres import selftest
from uhdres import spectral
from uhdres.checkpoint import load_checkpoint
from uhdres.config import load_config
from uhdres.data import DEGRADATION_KINDS
from uhdres.data import PATTERNS
from uhdres.data import ImageBuffer
from uhdres.data import load_dataset
from uhdres.data import pattern_image
from uhdres.data import read_image
from uhdres.data import save_dataset
from uhdres.data import synthetic_dataset
from uhdres.data import write_image
from uhdres.errors import ConfigError
from uhdres.errors import UHDResError
from uhdres.metrics import psnr
from uhdres.metrics import ssim
from uhdres.model import build
from uhdres.model import kernel_preset
from uhdres.model import restore
from uhdres.tensor import thread_count
from uhdres.train import TrainRow
from uhdres.train import load_training_checkpoint
from uhdres.train import train_loop

if sys.stdout.isatty():  # pragma: no cover
    red = "\x1b[31m"
    yellow = "\x1b[33m"
    gray = "\x1b[2m"
    white = "\x1b[1m"
    default = "\x1b[0m"
else:
    red = yellow = gray = white = default = ""

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{red}Error: {message}{default}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _int_list(raw: str) -> list[int]:
    try:
        return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from None


def _float_list(raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}") from None


parser = _Parser(
    prog="uhdres",
    description="Train, run, measure and verify the uhdres image restoration network.",
    formatter_class=argparse.ArgumentDefaultsHelpFormatter,
)
parser.add_argument(
    "-t",
    "--template-directory",
    metavar="DIR",
    type=Path,
    default=None,
    help="A directory containing Jinja2 templates that override the bundled report templates.",
)
parser.add_argument(
    "--footer-text",
    type=str,
    metavar="TEXT",
    default="",
    help="Custom text for the footer of HTML reports, for example the machine or run name.",
)
parser.add_argument(
    "--version",
    action="store_true",
    default=argparse.SUPPRESS,
    help="Show version information and exit.",
)
commands = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

train_cmd = commands.add_parser("train", help="Train a model on a paired dataset.")
train_cmd.add_argument("--data", metavar="DIR", type=Path, required=True, help="Dataset with lq/ and gt/.")
train_cmd.add_argument("--out", metavar="DIR", type=Path, required=True, help="Output directory.")
train_cmd.add_argument("--config", metavar="FILE", type=Path, help="A key=value configuration file.")
train_cmd.add_argument("--resume", metavar="CKPT", type=Path, help="Continue from a training checkpoint.")
train_cmd.add_argument("--log-every", metavar="N", type=int, default=50, help="Print every N-th step.")

infer_cmd = commands.add_parser("infer", help="Restore a single image.")
infer_cmd.add_argument("--ckpt", metavar="FILE", type=Path, required=True)
infer_cmd.add_argument("--in", dest="input", metavar="IMG", type=Path, required=True)
infer_cmd.add_argument("--out", metavar="IMG", type=Path, required=True)

perturb_cmd = commands.add_parser("perturb", help="Measure how amplitude and phase noise damage images.")
perturb_cmd.add_argument(
    "--images",
    metavar="DIR",
    type=Path,
    help="A directory of .ppm images. Defaults to the built-in procedural patterns.",
)
perturb_cmd.add_argument("--eps", type=_float_list, default=[0.1, 0.2, 0.3], help="Comma-separated strengths.")
perturb_cmd.add_argument("--seeds", type=_int_list, default=[1, 2, 3], help="Comma-separated seeds.")
perturb_cmd.add_argument(
    "--amplitude-noise",
    choices=("additive", "relative"),
    default="additive",
    help="Add the noise to the amplitude or scale the amplitude by it.",
)
perturb_cmd.add_argument("--out", metavar="CSV", type=Path, required=True)
perturb_cmd.add_argument("--html", metavar="FILE", type=Path, help="Also write an HTML report.")

bench_cmd = commands.add_parser("bench", help="Measure latency and estimated peak memory.")
source = bench_cmd.add_mutually_exclusive_group(required=True)
source.add_argument("--ckpt", metavar="FILE", type=Path)
source.add_argument("--random-init", action="store_true", help="Benchmark a freshly initialized model.")
bench_cmd.add_argument("--config", metavar="FILE", type=Path, help="Model configuration for --random-init.")
bench_cmd.add_argument("--sizes", type=_int_list, default=[128, 256, 512], help="Square image sizes.")
bench_cmd.add_argument("--warmup", type=int, default=3)
bench_cmd.add_argument("--repeats", type=int, default=7)
bench_cmd.add_argument("--out", metavar="CSV", type=Path, required=True)
bench_cmd.add_argument("--html", metavar="FILE", type=Path, help="Also write an HTML report.")

params_cmd = commands.add_parser("params", help="Print the parameter count and its breakdown.")
params_cmd.add_argument("--config", metavar="FILE", type=Path)
params_cmd.add_argument("--kernels", metavar="SIZES", help="MSCA kernel sizes, e.g. 7,13,19 or id-7-13-19.")
params_cmd.add_argument("--depth", type=int, default=2, help="Number of name components to group by.")

selftest_cmd = commands.add_parser("selftest", help="Run gradient checks and spectral identities.")
selftest_cmd.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
selftest_cmd.add_argument(
    "--full-model",
    action=argparse.BooleanOptionalAction,
    default=True,
    help="Include the gradient check of a small complete model.",
)

evaluate_cmd = commands.add_parser("evaluate", help="Report PSNR and SSIM of a model on a dataset.")
evaluate_cmd.add_argument("--ckpt", metavar="FILE", type=Path, required=True)
evaluate_cmd.add_argument("--data", metavar="DIR", type=Path, required=True)
evaluate_cmd.add_argument("--out", metavar="CSV", type=Path)

synth_cmd = commands.add_parser("synth", help="Write a synthetic paired dataset.")
synth_cmd.add_argument("--out", metavar="DIR", type=Path, required=True)
synth_cmd.add_argument("--count", type=int, default=8)
synth_cmd.add_argument("--size", type=int, default=64)
synth_cmd.add_argument("--kind", choices=DEGRADATION_KINDS, default="lowlight")
synth_cmd.add_argument("--seed", type=int, default=0)


def cli(args: list[str] | None = None) -> None:
    """Command-line entry point"""
    opts = parser.parse_args(args)
    if getattr(opts, "version", False):
        print(
            f"uhdres: {uhdres.__version__}\n"
            f"numpy: {np.__version__}\n"
            f"Python: {platform.python_version()}\n"
            f"Platform: {platform.platform()}"
        )
        return

    if not opts.command:
        parser.print_help()
        print(f"\n{red}Error: Please specify a command.{default}")
        sys.exit(USAGE_ERROR)

    warnings.showwarning = _nicer_showwarning
    render.configure(template_directory=opts.template_directory, footer_text=opts.footer_text)

    try:
        _COMMANDS[opts.command](opts)
    except ConfigError as e:
        print(f"{red}Error: {e}{default}", file=sys.stderr)
        sys.exit(USAGE_ERROR)
    except (UHDResError, OSError) as e:
        print(f"{red}Error: {e}{default}", file=sys.stderr)
        sys.exit(RUNTIME_ERROR)


def _train(opts) -> None:
    model_config, train_config = load_config(opts.config)
    dataset = load_dataset(opts.data)
    print(f"Training on {len(dataset)} pairs for {train_config.total_steps} steps.")
    state = None
    if opts.resume:
        model, state = load_training_checkpoint(opts.resume, train_config.weight_decay)
        if model.config != model_config:
            warnings.warn(f"Resuming with the model configuration stored in {opts.resume}.")
        print(f"Resuming at step {state.step}.")
    else:
        model = build(model_config, train_config.seed)

    def progress(row: TrainRow) -> None:
        if row.step % opts.log_every == 0 or row.step + 1 == train_config.total_steps:
            print(
                f"step {row.step:6d}  lr {row.lr:.3e}  pixel {row.l_pixel:.5f}  "
                f"freq {row.l_freq:.5f}  total {row.l_total:.5f}"
            )

    log = train_loop(model, dataset, train_config, opts.out, state=state, progress=progress)
    for evaluation in log.evals:
        print(f"{gray}eval at step {evaluation.step}: {evaluation.psnr_db:.2f} dB, SSIM {evaluation.ssim:.4f}{default}")
    if log.checkpoints:
        print(f"Last checkpoint: {log.checkpoints[-1]}")


def _infer(opts) -> None:
    model = load_checkpoint(opts.ckpt)
    model.eval()
    image = read_image(opts.input)
    restored = restore(model, image.to_array(model.config.dtype))
    write_image(ImageBuffer.from_array(restored), opts.out)


def _perturbation_images(directory: Path | None) -> list[tuple[str, np.ndarray]]:
    if directory is None:
        return [(kind, pattern_image(kind, 64, 64)) for kind in PATTERNS]
    files = sorted(Path(directory).glob("*.ppm"))
    if not files:
        raise FileNotFoundError(f"No .ppm images in {directory}.")
    return [(f.stem, read_image(f).to_array()) for f in files]


def _perturb(opts) -> None:
    images = _perturbation_images(opts.images)
    rows = spectral.perturbation_experiment(images, opts.eps, opts.seeds, opts.amplitude_noise)
    spectral.write_perturbation_csv(rows, opts.out)
    means = spectral.mean_psnr(rows)
    summary = []
    for (component, eps), value in sorted(means.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"eps {eps:<5g} {component:<9} mean PSNR {value:7.2f} dB")
        summary.append((f"{component}, eps {eps:g}", f"{value:.2f} dB"))
    if opts.html:
        table = [[r.image, r.component, f"{r.eps:g}", r.seed, f"{r.psnr_db:.2f}"] for r in rows]
        opts.html.write_text(
            render.html_report("Spectrum perturbation", spectral.PERTURBATION_HEADER, table, summary),
            encoding="utf-8",
        )


def _bench(opts) -> None:
    if opts.ckpt:
        model = load_checkpoint(opts.ckpt)
    else:
        model = build(load_config(opts.config)[0])
    print(f"Benchmarking with {thread_count()} thread(s).")
    records = bench.bench_forward(model, [(s, s) for s in opts.sizes], opts.warmup, opts.repeats)
    bench.write_bench_csv(records, opts.out)
    for r in records:
        print(f"{r.h}×{r.w}  {r.latency_s * 1000:9.1f} ms  {r.peak_mem_bytes / 2**20:9.1f} MiB")
    if opts.html:
        table = [
            [r.h, r.w, f"{r.scale:g}", f"{r.latency_s:.4f}", render.thousands(r.peak_mem_bytes), r.params]
            for r in records
        ]
        summary = [("threads", str(thread_count())), ("parameters", render.thousands(records[0].params))]
        opts.html.write_text(
            render.html_report("Inference efficiency", bench.BENCH_HEADER, table, summary), encoding="utf-8"
        )


def _params(opts) -> None:
    model_config, _ = load_config(opts.config)
    if opts.kernels:
        model_config = model_config.replace(msca_kernels=kernel_preset(opts.kernels))
    print(render.params_table(build(model_config), opts.depth), end="")


def _selftest(opts) -> None:
    results = selftest.run_selftest(opts.seeds, opts.full_model)
    print(render.selftest_report(results), end="")
    if not all(r.passed for r in results):
        sys.exit(RUNTIME_ERROR)


def _evaluate(opts) -> None:
    model = load_checkpoint(opts.ckpt)
    model.eval()
    dataset = load_dataset(opts.data)
    scores = []
    for sample in dataset:
        out = restore(model, sample.lq.to_array(model.config.dtype))
        gt = sample.gt.to_array()
        scores.append((sample.id, psnr(out, gt), ssim(out, gt)))
    if opts.out:
        with open(opts.out, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(("id", "psnr_db", "ssim"))
            writer.writerows((i, f"{p:.6f}", f"{s:.6f}") for i, p, s in scores)
    for i, p, s in scores:
        print(f"{i:<16} {p:7.2f} dB  SSIM {s:.4f}")
    if scores:
        print(
            f"{white}mean{default}{' ' * 12} {np.mean([p for _, p, _ in scores]):7.2f} dB  "
            f"SSIM {np.mean([s for _, _, s in scores]):.4f}"
        )


def _synth(opts) -> None:
    samples = synthetic_dataset(opts.count, opts.size, opts.kind, opts.seed)
    save_dataset(opts.out, samples)
    print(f"Wrote {len(samples)} {opts.kind} pairs to {opts.out}.")


_COMMANDS = {
    "train": _train,
    "infer": _infer,
    "perturb": _perturb,
    "bench": _bench,
    "params": _params,
    "selftest": _selftest,
    "evaluate": _evaluate,
    "synth": _synth,
}


def _nicer_showwarning(message, category, filename, lineno, file=None, line=None):
    """A replacement for `warnings.showwarning` that renders warnings in a more visually pleasing way."""
    if category is UserWarning:
        print(
            f"{yellow}Warn:{default} {message} {gray}({filename}:{lineno}){default}",
            file=sys.stderr,
        )
    elif category is RuntimeWarning:
        print(
            f"{yellow}Warn:{default} {message}",
            file=sys.stderr,
        )
    else:
        print(
            f"{yellow}{category.__name__}:{default} {message} {gray}({filename}:{lineno}){default}",
            file=sys.stderr,
        )


if __name__ == "__main__":  # pragma: no cover
    cli()
