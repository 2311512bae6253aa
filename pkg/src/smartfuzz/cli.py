"""Command line: fuzz campaigns, cracking, single mutations, corpus minimization, plots.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import shutil
import sys
from importlib import resources
from pathlib import Path

from .coverage import cmin
from .cracker import crack_with_diagnostics
from .engine import CampaignConfig, CampaignError, execute, run_campaign
from .format_spec import SpecError, load_spec, validate_spec
from .mutation import (
    BIT_OPS,
    DICT_OPS,
    SMART_OPS,
    MutationConfig,
    bit_level_mutate,
    load_dictionary,
    structural_mutate,
)
from .report import render_plot_data
from .targets import default_registry

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def bundled(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files("smartfuzz") / "data" / name))


def _existing(path: str, what: str, directory: bool = False) -> Path:
    p = Path(path)
    if directory and not p.is_dir():
        raise UsageError(f"{what} directory not found: {path}")
    if not directory and not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _spec_path(value: str) -> Path:
    """A spec file, or the name of a bundled one such as ``wav``."""
    p = Path(value)
    if p.is_file():
        return p
    candidate = bundled(value if value.endswith(".json") else value + ".json")
    if candidate.is_file():
        return candidate
    raise UsageError(f"spec not found: {value}")


def _probability(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return x


def _positive(kind):
    def conv(text):
        x = kind(text)
        if x <= 0:
            raise argparse.ArgumentTypeError("must be positive")
        return x
    return conv


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smartfuzz", description="Structure-aware greybox fuzzer for chunk-based files.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fuzz", help="run a fuzzing campaign")
    f.add_argument("--target", required=True, help="registered target name (wav, riff_info)")
    f.add_argument("--seeds", required=True, help="directory of seed files")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--spec", help="format spec; without it only bit-level mutation runs")
    f.add_argument("--dict", dest="dictionary", help="AFL-style dictionary file")
    f.add_argument("--rng-seed", type=int, default=0)
    f.add_argument("--timeout-secs", type=_positive(float), help="campaign time budget")
    f.add_argument("--max-execs", type=_positive(int), help="execution budget")
    f.add_argument("--max-energy", type=_positive(int), default=1024)
    f.add_argument("--defer-epsilon-secs", type=_positive(float), default=60.0)
    f.add_argument("--structural-ratio", type=_probability, default=0.5)
    f.add_argument("--max-stack", type=_positive(int), default=64)
    f.add_argument("--wall-clock", action="store_true",
                   help="measure real time instead of the deterministic modeled clock")
    f.add_argument("--wall-limit-secs", type=_positive(float), help="hard stop in real seconds")
    f.add_argument("--plot", action="store_true", help="also render plot_data.png")
    f.add_argument("--json", action="store_true", help="print final statistics as JSON")

    c = sub.add_parser("crack", help="parse a file and print its virtual structure")
    c.add_argument("--spec", required=True)
    c.add_argument("--json", action="store_true")
    c.add_argument("file")

    m = sub.add_parser("mutate", help="apply one named operator and write the mutant")
    m.add_argument("--spec", required=True)
    m.add_argument("--op", required=True, choices=BIT_OPS + DICT_OPS + SMART_OPS)
    m.add_argument("--rng-seed", type=int, default=0)
    m.add_argument("--dict", dest="dictionary")
    m.add_argument("--donor", action="append", default=[], help="donor file for smart ops (repeatable)")
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--json", action="store_true")
    m.add_argument("file")

    k = sub.add_parser("cmin", help="minimize a corpus while keeping its coverage")
    k.add_argument("--target", required=True)
    k.add_argument("--seeds", required=True)
    k.add_argument("--out", help="copy the kept inputs into this directory")
    k.add_argument("--json", action="store_true")

    p = sub.add_parser("plot", help="render a plot_data file to PNG")
    p.add_argument("path", help="plot_data file or campaign output directory")
    p.add_argument("-o", "--output")
    return parser


def _load_spec(value: str):
    try:
        spec = load_spec(_spec_path(value))
    except SpecError as exc:
        raise CampaignError(f"invalid spec: {exc}") from exc
    problems = validate_spec(spec)
    if problems:
        raise CampaignError("invalid spec: " + "; ".join(problems))
    return spec


def _cmd_fuzz(args) -> int:
    _existing(args.seeds, "seed", directory=True)
    spec = _spec_path(args.spec) if args.spec else None
    tokens = ()
    if args.dictionary:
        tokens = load_dictionary(_existing(args.dictionary, "dictionary"))
    if args.target not in default_registry():
        raise UsageError(f"unknown target {args.target!r}")
    cfg = CampaignConfig(
        target=args.target, seeds=args.seeds, out_dir=args.out, spec=spec, dictionary=tokens,
        rng_seed=args.rng_seed, timeout_secs=args.timeout_secs, max_execs=args.max_execs,
        wall_limit_secs=args.wall_limit_secs, max_energy=args.max_energy,
        defer_epsilon=args.defer_epsilon_secs, structural_ratio=args.structural_ratio,
        max_stack=args.max_stack, clock="wall" if args.wall_clock else "virtual",
    )
    stats = run_campaign(cfg)
    if args.plot:
        render_plot_data(Path(args.out) / "plot_data")
    if args.json:
        print(json.dumps(stats.to_dict(), sort_keys=True))
    else:
        for key in ("paths_total", "pending_total", "execs_done", "unique_crashes", "hangs",
                    "cracks", "max_depth", "map_density_pct", "elapsed_secs", "stop_reason"):
            print(f"{key}: {getattr(stats, key)}")
        for site, at in sorted(stats.crash_sites.items()):
            print(f"crash_site: {site} first_exec={at}")
    return EXIT_OK


def _cmd_crack(args) -> int:
    spec = _load_spec(args.spec)
    data = _existing(args.file, "input file").read_bytes()
    vs, v, notes = crack_with_diagnostics(spec, data)
    if args.json:
        doc = {"validity": float(v), "validity_exact": f"{v.numerator}/{v.denominator}",
               "diagnostics": notes, "structure": vs.to_dict()}
        print(json.dumps(doc, indent=2))
    else:
        print(f"validity {float(v):.3f}")
        if vs.root is not None:
            print(vs.render())
        for note in notes:
            print(f"note: {note}")
    return EXIT_OK


def _cmd_mutate(args) -> int:
    spec = _load_spec(args.spec)
    data = _existing(args.file, "input file").read_bytes()
    tokens = tuple(load_dictionary(_existing(args.dictionary, "dictionary"))) if args.dictionary else ()
    if args.op in DICT_OPS and not tokens:
        raise UsageError(f"--op {args.op} needs --dict")
    if not data and args.op not in ("block_insert", "dict_insert"):
        raise UsageError("input file is empty")
    cfg = MutationConfig(dictionary=tokens)
    rng = random.Random(args.rng_seed)
    vs = crack_with_diagnostics(spec, data)[0]
    if args.op in SMART_OPS:
        pool = [(data, vs)]
        for donor in args.donor:
            d = _existing(donor, "donor file").read_bytes()
            pool.append((d, crack_with_diagnostics(spec, d)[0]))
        mutant = structural_mutate((data, vs), pool, rng, cfg, kind=args.op)
    else:
        mutant = bit_level_mutate(data, vs, rng, cfg, kind=args.op)
    Path(args.output).write_bytes(mutant.data)
    if args.json:
        print(json.dumps({"length": len(mutant.data), "structure_kept": mutant.vs is not None,
                          "ops": [op.describe() for op in mutant.op_log]}))
    else:
        if not mutant.op_log:
            print("no applicable mutation; input written unchanged")
        for op in mutant.op_log:
            print(op.describe())
        print(f"wrote {len(mutant.data)} bytes to {args.output}")
    return EXIT_OK


def _cmd_cmin(args) -> int:
    root = _existing(args.seeds, "seed", directory=True)
    registry = default_registry()
    if args.target not in registry:
        raise UsageError(f"unknown target {args.target!r}")
    target = registry.get(args.target)
    files = sorted(p for p in root.iterdir() if p.is_file())
    runs, lengths = [], {}
    for p in files:
        data = p.read_bytes()
        res = execute(target, data)
        runs.append((p.name, res.coverage))
        lengths[p.name] = len(data)
    kept = cmin(runs, lengths)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name in kept:
            shutil.copyfile(root / name, out / name)
    if args.json:
        print(json.dumps({"total": len(files), "kept": kept}))
    else:
        for name in kept:
            print(name)
    return EXIT_OK


def _cmd_plot(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "plot_data"
    _existing(str(path), "plot_data file")
    print(render_plot_data(path, args.output))
    return EXIT_OK


COMMANDS = {"fuzz": _cmd_fuzz, "crack": _cmd_crack, "mutate": _cmd_mutate, "cmin": _cmd_cmin,
            "plot": _cmd_plot}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CampaignError, SpecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
