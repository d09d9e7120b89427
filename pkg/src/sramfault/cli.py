"""Command-line interface: ``sramfault <subcommand> ...``.

Every subcommand writes its outputs plus ``run.json`` into ``--out``. The
``argv`` recorded there reproduces the run exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import shutil
import sys
import warnings
from importlib import resources
from pathlib import Path

from . import errors
from .evaluation import (
    MODELS,
    REAL,
    EvalOptions,
    SweepConfig,
    compare,
    fmt,
    load_report,
    options_grid,
    sweep,
)
from .faultmap import FaultDataset, faultmap_filename, read_faultmap, save_dataset, write_faultmap
from .fixtures import CLUSTERED, FAMILY_VOLTAGES, SPARSE, voltage_family
from .generator import GenerationConfig, generate
from .injector import (
    BitMapping,
    MaskPolicy,
    Precision,
    changed_bits,
    inject,
    layout,
    load_tensor,
    quantize,
    readback,
    save_tensor,
)
from .nn import load_data, load_network, save_network
from .profiler import extract_profile, load_profile, profile_filename, save_profile

EXIT_OK, EXIT_OTHER, EXIT_PARSE, EXIT_GENERATION, EXIT_EVALUATION = 0, 1, 2, 3, 4

_EXIT_CODES = (
    ((errors.MalformedHeader, errors.MalformedRecord), EXIT_PARSE),
    ((errors.EmptyHistogram, errors.InfeasibleTarget), EXIT_GENERATION),
    ((errors.CapacityExceeded, errors.ShapeMismatch, errors.MaskRequired,
      errors.MissingProfile, errors.NonFiniteInput, errors.GeometryMismatch), EXIT_EVALUATION),
)

SPECS = {"sparse": SPARSE, "clustered": CLUSTERED}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def fixture_dir() -> Path:
    """Directory of the bundled fixture network and evaluation set."""
    return Path(str(resources.files("sramfault") / "data"))


def _default_seed() -> int:
    value = os.environ.get("MORS_SEED")
    if value is None or value.strip() == "":
        return 0
    try:
        return int(value, 0)
    except ValueError:
        raise CliError(f"MORS_SEED must be an integer, got {value!r}", EXIT_OTHER) from None


# --- argument parsing ---------------------------------------------------------------

def _csv_list(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def parse_grid(tokens: list[str]) -> dict[str, list[str]]:
    """``["precision=fp32,q4.4", "mapping=msb"]`` -> ``{"precision": [...], ...}``."""
    grid = {"precision": ["fp32"], "mapping": ["msb"], "masking": ["zero"]}
    for token in tokens:
        key, sep, values = token.partition("=")
        key = key.strip().lower()
        if not sep or key not in grid:
            raise CliError(f"bad grid item {token!r}; use precision=, mapping= or masking=", EXIT_OTHER)
        grid[key] = _csv_list(values)
    return grid


def _build_grid(tokens: list[str], include_biases: bool) -> list[EvalOptions]:
    g = parse_grid(tokens)
    try:
        precisions = [Precision.parse(p) for p in g["precision"]]
        mappings = [BitMapping.parse(m) for m in g["mapping"]]
        masks = [MaskPolicy.parse(k) for k in g["masking"]]
    except ValueError as exc:
        raise CliError(str(exc), EXIT_OTHER) from None
    return options_grid(precisions, mappings, masks, include_biases)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help="run seed (default: $MORS_SEED or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (output does not depend on it)")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="sramfault",
                                     description="Undervolted SRAM fault modelling and DNN injection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", parents=[common], help="extract fault profiles from fault maps")
    p.add_argument("inputs", nargs="+", help="fault map CSV files or directories of faults_<V>mV.csv")

    p = sub.add_parser("generate", parents=[common], help="generate a fault map from a profile")
    p.add_argument("profile", help="profile JSON")
    p.add_argument("--model", choices=("mixed", "random"), default="mixed")
    p.add_argument("--blocks", type=int, required=True, help="number of SRAM blocks to generate")
    p.add_argument("--threshold", type=float, default=0.80, help="similarity threshold")
    p.add_argument("--max-retries", type=int, default=1000, help="retries per block")
    p.add_argument("--reference", choices=("blocks", "aggregate"), default="blocks",
                   help="what generated blocks are compared against")

    p = sub.add_parser("inject", parents=[common], help="inject a fault map into weights")
    p.add_argument("weights", help="network.json / network directory, or a weight tensor manifest")
    p.add_argument("--faults", required=True, help="fault map CSV")
    p.add_argument("--precision", default="fp32")
    p.add_argument("--mapping", default="msb")
    p.add_argument("--masking", default="zero", choices=("zero", "one"))
    p.add_argument("--include-biases", action="store_true")

    p = sub.add_parser("evaluate", parents=[common], help="accuracy sweep under fault models")
    p.add_argument("--network", default=None, help="network directory (default: bundled fixture)")
    p.add_argument("--data", default=None, help="dataset directory (default: bundled fixture)")
    p.add_argument("--faults", default=None, help="fault map CSV or dataset directory (real model)")
    p.add_argument("--profiles", default=None, help="profile JSON or directory of profiles")
    p.add_argument("--models", default=None,
                   help="comma list of real,mixed,random (default: real with --faults, else mixed)")
    p.add_argument("--grid", nargs="*", default=[],
                   help="precision=fp32,fp16,q4.4,q2.2,binary mapping=msb,lsb,msb-lsb,lsb-msb masking=zero,one")
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--model-blocks", type=int, default=None,
                   help="blocks per generated map before subsetting (default: profiled map size)")
    p.add_argument("--threshold", type=float, default=0.80)
    p.add_argument("--max-retries", type=int, default=1000)
    p.add_argument("--include-biases", action="store_true")

    p = sub.add_parser("compare", parents=[common], help="accuracy gaps between reports")
    p.add_argument("reports", nargs="+", help="report JSON files")

    p = sub.add_parser("fixture", parents=[common], help="write the synthetic dataset and fixture network")
    p.add_argument("--blocks", type=int, default=400)
    p.add_argument("--spec", choices=sorted(SPECS), default="clustered")
    p.add_argument("--voltages", default=",".join(str(v) for v in FAMILY_VOLTAGES))
    return parser


# --- subcommands --------------------------------------------------------------------

def _maps_from(paths: list[str]):
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            files = sorted(f for f in path.iterdir() if f.suffix == ".csv")
            if not files:
                raise CliError(f"{path}: no .csv fault maps", EXIT_OTHER)
        else:
            files = [path]
        for f in files:
            yield f, _read_map(f)


def _read_map(path: Path):
    try:
        return read_faultmap(path)
    except errors.MalformedRecord as exc:
        raise CliError(f"{path}:{exc.line}: {str(exc).split(': ', 1)[1]}", EXIT_PARSE) from None
    except errors.MalformedHeader as exc:
        m = re.match(r"line (\d+): (.*)", str(exc), re.S)
        where = f"{m.group(1)}: {m.group(2)}" if m else f" {exc}"
        raise CliError(f"{path}:{where}", EXIT_PARSE) from None


def cmd_profile(args, out: Path) -> dict:
    written = []
    for path, fmap in _maps_from(args.inputs):
        if fmap.voltage_mv is None:
            raise CliError(f"{path}: map has no voltage", EXIT_PARSE)
        target = out / profile_filename(fmap.voltage_mv)
        save_profile(extract_profile(fmap), target)
        written.append(target.name)
    return {"inputs": [str(p) for p in args.inputs], "written": written}


def cmd_generate(args, out: Path) -> dict:
    profile = load_profile(args.profile)
    cfg = GenerationConfig(n_blocks=args.blocks, seed=args.seed, model=args.model,
                           similarity_threshold=args.threshold,
                           max_retries_per_block=args.max_retries,
                           reference=args.reference, threads=args.threads)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", errors.RetryBudgetExhausted)
        fmap, report = generate(profile, cfg)
    voltage = profile.voltage_mv if profile.voltage_mv is not None else 0
    write_faultmap(fmap, out / faultmap_filename(voltage))
    (out / "generation_report.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n",
                                               encoding="utf-8")
    if report.flagged_blocks:
        print(f"warning: {len(report.flagged_blocks)} block(s) accepted below similarity "
              f"{args.threshold}", file=sys.stderr)
    print(f"{report.model}: {report.accepted_blocks}/{report.target_faulty_blocks} faulty blocks, "
          f"{report.placed_faults}/{report.target_faults} faults, {report.total_retries} retries")
    return {"profile": args.profile, "model": args.model, "blocks": args.blocks,
            "threshold": args.threshold, "max_retries": args.max_retries, "reference": args.reference}


def cmd_inject(args, out: Path) -> dict:
    fmap = _read_map(Path(args.faults))
    try:
        precision = Precision.parse(args.precision)
        mapping = BitMapping.parse(args.mapping)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_OTHER) from None
    mask = MaskPolicy.parse(args.masking)
    src = Path(args.weights)
    manifest = None
    if src.is_dir() or src.name == "network.json":
        net = load_network(src)
        weights = net.weight_order(args.include_biases)
    else:
        manifest = json.loads(src.read_text(encoding="utf-8"))
        weights = load_tensor(src.parent, manifest).ravel()
    q = quantize(weights, precision)
    img = layout(q, mapping, fmap.geometry)
    faulty = inject(img, fmap)
    values = readback(faulty, mask)
    if manifest is None:
        save_network(net.with_weights(values, args.include_biases), out)
    else:
        save_tensor(out, manifest["name"], values.reshape(manifest["shape"]), precision.label)
    stats = {"weights": len(q), "blocks": fmap.geometry.blocks, "faults": fmap.fault_count,
             "changed_bits": changed_bits(img, faulty)}
    (out / "inject_summary.json").write_text(json.dumps(stats, indent=1) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v}" for k, v in stats.items()))
    return {"weights": args.weights, "faults": args.faults, "precision": precision.label,
            "mapping": mapping.value, "masking": mask.value, "include_biases": args.include_biases}


def _load_profiles(path: str) -> dict:
    p = Path(path)
    files = sorted(p.glob("profile_*mV.json")) if p.is_dir() else [p]
    if not files:
        raise CliError(f"{p}: no profile_<V>mV.json files", EXIT_OTHER)
    profiles = {}
    for f in files:
        prof = load_profile(f)
        profiles[prof.voltage_mv] = prof
    return profiles


def cmd_evaluate(args, out: Path) -> dict:
    fixture = fixture_dir()
    net = load_network(args.network or fixture)
    data = load_data(args.data or fixture)
    dataset = None
    if args.faults:
        maps = [m for _, m in _maps_from([args.faults])]
        dataset = FaultDataset.from_maps(maps)
    profiles = _load_profiles(args.profiles) if args.profiles else None
    if args.models:
        models = _csv_list(args.models)
    else:
        models = [REAL] if dataset is not None else ["mixed"]
    for m in models:
        if m not in MODELS:
            raise CliError(f"unknown model {m!r}", EXIT_OTHER)
    if dataset is None and profiles is None:
        raise CliError("evaluate needs --faults and/or --profiles", EXIT_OTHER)
    grid = _build_grid(args.grid, args.include_biases)
    cfg = SweepConfig(iterations=args.iterations, seed=args.seed, threads=args.threads,
                      model_blocks=args.model_blocks, similarity_threshold=args.threshold,
                      max_retries_per_block=args.max_retries)
    report = sweep(net, data, grid, dataset=dataset, profiles=profiles, models=models, cfg=cfg)
    report.save(out)
    print(report.to_csv(), end="")
    return {"network": args.network, "data": args.data, "faults": args.faults,
            "profiles": args.profiles, "models": models, "grid": args.grid,
            "iterations": args.iterations, "model_blocks": args.model_blocks,
            "threshold": args.threshold, "max_retries": args.max_retries,
            "include_biases": args.include_biases}


def cmd_compare(args, out: Path) -> dict:
    result = compare([load_report(p) for p in args.reports])
    (out / "comparison.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "comparison.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n",
                                         encoding="utf-8")
    print(result.to_csv(), end="")
    for s, g in result.mean_gaps().items():
        print(f"mean gap {s}: {fmt(g)}")
    return {"reports": args.reports}


def cmd_fixture(args, out: Path) -> dict:
    voltages = [int(v) for v in _csv_list(args.voltages)]
    dataset = voltage_family(args.blocks, args.seed, SPECS[args.spec], voltages)
    save_dataset(dataset, out / "faults")
    net_dir = out / "network"
    net_dir.mkdir(parents=True, exist_ok=True)
    for f in sorted(fixture_dir().iterdir()):
        if f.suffix in (".json", ".bin"):
            shutil.copyfile(f, net_dir / f.name)
    print(f"wrote {len(dataset)} fault maps to {out / 'faults'} and the fixture network to {net_dir}")
    return {"blocks": args.blocks, "spec": args.spec, "voltages": voltages}


COMMANDS = {
    "profile": cmd_profile,
    "generate": cmd_generate,
    "inject": cmd_inject,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "fixture": cmd_fixture,
}


def _replay_argv(argv: list[str], seed: int) -> list[str]:
    """The given argv with the resolved seed made explicit."""
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--seed":
            skip = True
            continue
        if a.startswith("--seed="):
            continue
        out.append(a)
    return out + ["--seed", str(seed)]


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_OTHER
    try:
        if args.seed is None:
            args.seed = _default_seed()
        if args.threads < 1:
            raise CliError("--threads must be >= 1", EXIT_OTHER)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        config = COMMANDS[args.command](args, out)
        record = {
            "command": args.command,
            "argv": _replay_argv(list(argv), args.seed),
            "seed": args.seed,
            "threads": args.threads,
            "out": str(args.out),
            "config": config,
        }
        (out / "run.json").write_text(json.dumps(record, indent=1) + "\n", encoding="utf-8")
        return EXIT_OK
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except errors.SramFaultError as exc:
        code = next((c for types, c in _EXIT_CODES if isinstance(exc, types)), EXIT_OTHER)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


def main(argv: list[str] | None = None) -> int:
    code = run(sys.argv[1:] if argv is None else argv)
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
