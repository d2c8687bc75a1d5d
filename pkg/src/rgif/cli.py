"""Command-line front end.

    rgif depth-upsample --factor 8 depth.pgm color.ppm out.pgm
    rgif texture-smooth in.png out.png --lambda-s 12 --trace trace.csv
    rgif metrics a.pgm b.pgm

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 solver did not
converge (the output is still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import formats
from .errors import ContractError, DecodeError, FormatError, ParameterError
from .image import load_image, mean_abs, save_image
from .kernels import FilterParams, parse_value, preset
from .pipelines import PipelineConfig, guided_filter, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NONCONVERGED = 0, 1, 2, 3

# positional paths per subcommand; the last one is the output
POSITIONALS = {
    "filter": ("input", "output"),
    "depth-upsample": ("depth", "color", "output"),
    "flash-noflash": ("noflash", "flash", "output"),
    "detail-enhance": ("input", "output"),
    "tonemap": ("input", "output"),
    "texture-smooth": ("input", "output"),
    "dejpeg": ("input", "output"),
    "metrics": ("a", "b"),
}
PIPELINE_KEYS = {"factor", "boost", "compression"}
PARAM_KEYS = tuple(f.name for f in fields(FilterParams))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class CliInvocation:
    subcommand: str
    paths: dict[str, str]
    params: FilterParams | None = None
    pipeline: PipelineConfig | None = None
    guidance: str | None = None
    trace: str | None = None
    lambda_map: str | None = None
    deterministic: bool = False
    threads: int = 1
    print_params: bool = False

    @property
    def output(self) -> str | None:
        return self.paths.get("output")


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip() or not value.strip():
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rgif", description="Robust guided image filtering.",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name, positional in POSITIONALS.items():
        sp = sub.add_parser(name, allow_abbrev=False)
        for arg in positional:
            sp.add_argument(arg, nargs="?")
        if name == "metrics":
            continue
        sp.add_argument("--config", help="flat key = value parameter file")
        sp.add_argument("--trace", help="write per-iteration CSV here")
        sp.add_argument("--deterministic", action="store_true",
                        help="fixed reduction order (always on; accepted for scripts)")
        sp.add_argument("--threads", type=int, help="worker cap (default: $RGIF_THREADS or 1)")
        sp.add_argument("--print-params", action="store_true",
                        help="print the resolved parameters and exit")
        if name == "filter":
            sp.add_argument("--guidance", help="guidance image (default: the input)")
        if name == "depth-upsample":
            sp.add_argument("--factor", type=int)
            sp.add_argument("--lambda-map", dest="lambda_map",
                            help="write the final lambda map (.pfm, or 16-bit .pgm + .scale)")
        if name == "detail-enhance":
            sp.add_argument("--boost", type=float)
        if name == "tonemap":
            sp.add_argument("--gains", type=float, nargs=3, metavar=("G1", "G2", "G3"))
            sp.add_argument("--compression", type=float)
        for key in PARAM_KEYS:
            flags = {f"--{key}", f"--{key.replace('_', '-')}"}
            sp.add_argument(*sorted(flags), dest=f"param_{key}", metavar="V")
    return parser


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("RGIF_THREADS", "").strip()
        try:
            value = int(env) if env else 1
        except ValueError:
            raise UsageError(f"RGIF_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"--threads must be >= 1, got {value}")
    return value


def parse_args(argv) -> CliInvocation:
    """Resolve a command line; precedence is preset < config file < flags."""
    ns = _build_parser().parse_args(list(argv))
    cmd = ns.subcommand
    paths = {k: getattr(ns, k) for k in POSITIONALS[cmd] if getattr(ns, k) is not None}
    print_params = getattr(ns, "print_params", False)
    if not print_params and len(paths) != len(POSITIONALS[cmd]):
        missing = [k for k in POSITIONALS[cmd] if k not in paths]
        raise UsageError(f"{cmd}: missing {', '.join(missing)}")
    if cmd == "metrics":
        return CliInvocation(cmd, paths)

    config = {}
    if ns.config:
        try:
            config = read_config(ns.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    unknown = set(config) - set(PARAM_KEYS) - PIPELINE_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    knobs = {k: config[k] for k in PIPELINE_KEYS & set(config)}
    for k in PIPELINE_KEYS:
        if getattr(ns, k, None) is not None:
            knobs[k] = getattr(ns, k)
    try:
        factor = int(parse_value("factor", str(knobs["factor"]))) if "factor" in knobs else None
        boost = float(parse_value("boost", str(knobs.get("boost", 3.0))))
        compression = (float(parse_value("compression", str(knobs["compression"])))
                       if "compression" in knobs else None)
        base = FilterParams() if cmd == "filter" else preset(cmd, factor)
        params = base.updated({k: v for k, v in config.items() if k in PARAM_KEYS})
        flags = {k: getattr(ns, f"param_{k}") for k in PARAM_KEYS
                 if getattr(ns, f"param_{k}") is not None}
        params = params.updated(flags)
        pipeline = None
        if cmd != "filter":
            gains = tuple(ns.gains) if getattr(ns, "gains", None) else (1.0, 1.0, 1.0)
            pipeline = PipelineConfig(cmd, params, factor, boost, gains, compression)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None

    return CliInvocation(cmd, paths, params, pipeline,
                         guidance=getattr(ns, "guidance", None), trace=ns.trace,
                         lambda_map=getattr(ns, "lambda_map", None),
                         deterministic=ns.deterministic, threads=_threads(ns.threads),
                         print_params=print_params)


def write_lambda_map(path: str, values: np.ndarray) -> None:
    """PFM keeps floats; a 16-bit PGM stores ``values / scale`` and a ``.scale`` sidecar."""
    values = np.asarray(values, dtype=np.float64)[:, :, None]
    kind = formats.file_kind(path)
    if kind == "pfm":
        formats.write_pfm(path, values)
        return
    if not path.lower().endswith(".pgm"):
        raise FormatError("lambda maps are written as .pfm or .pgm")
    scale = float(values.max()) or 1.0
    formats.write_netpbm(path, values / scale * 65535.0, 16)
    with open(path + ".scale", "w", encoding="utf-8") as fh:
        fh.write(f"{scale!r}\n")


def _write_trace(path: str, traces) -> None:
    # several traces (tone mapping layers) run back to back
    if len(traces) == 1:
        traces[0].write_csv(path)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,mad,energy,pcg_iters\n")
        for t in traces:
            for it, mad, e, n in t.rows():
                fh.write(f"{it},{mad!r},{e!r},{n}\n")


def _run_metrics(inv: CliInvocation) -> int:
    a, b = load_image(inv.paths["a"]), load_image(inv.paths["b"])
    if a.shape != b.shape:
        print(f"rgif: shape mismatch {a.shape} vs {b.shape}", file=sys.stderr)
        return EXIT_USAGE
    print(f"mae,{mean_abs(a, b):g}")
    return EXIT_OK


def _execute(inv: CliInvocation, executor):
    if inv.subcommand == "filter":
        img = load_image(inv.paths["input"])
        guide = load_image(inv.guidance) if inv.guidance else img
        out, trace = guided_filter(img, guide, inv.params, executor)
        return out, [trace], None
    names = POSITIONALS[inv.subcommand]
    if inv.subcommand == "tonemap" and formats.file_kind(inv.paths["input"]) != "pfm":
        raise UsageError("tonemap needs a .pfm input")
    target = load_image(inv.paths[names[0]])
    guidance = load_image(inv.paths[names[1]]) if len(names) == 3 else None
    res = run_pipeline(inv.pipeline, target, guidance, executor=executor)
    return res.image, res.traces, res.lambda_map


def run(inv: CliInvocation) -> int:
    if inv.subcommand == "metrics":
        return _run_metrics(inv)
    if inv.print_params:
        sys.stdout.write(inv.params.to_text())
        return EXIT_OK
    if inv.lambda_map:
        formats.file_kind(inv.lambda_map)
    executor = ThreadPoolExecutor(inv.threads) if inv.threads > 1 else None
    try:
        image, traces, lam = _execute(inv, executor)
    finally:
        if executor is not None:
            executor.shutdown()
    save_image(image, inv.output)
    if inv.trace:
        _write_trace(inv.trace, traces)
    if inv.lambda_map and lam is not None:
        write_lambda_map(inv.lambda_map, lam.values)
    ok = all(t.converged and t.pcg_converged for t in traces)
    if not ok:
        print("rgif: warning: solver stopped before reaching its tolerance", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(parse_args(argv))
    except UsageError as exc:
        print(f"rgif: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, DecodeError) as exc:
        print(f"rgif: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractError as exc:
        print(f"rgif: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
