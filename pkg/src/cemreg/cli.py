"""Command-line entry point: ``cemreg register | bench | icp | selftest``.

Exit status is 0 on success, 1 for usage errors and 2 for failures while
running. Every diagnostic goes to standard error with a ``cemreg:`` prefix
followed by one of ``usage error``, ``config error``, ``parse error`` or
``error``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from cemreg import __version__
from cemreg.io import CloudParseError, ConfigError, RunConfig, dumps, load_cloud, load_config, read_truth, save_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through UsageError instead
    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cemreg", description="Rigid point cloud registration by cross-entropy search.")
    p.add_argument("--version", action="version", version=f"cemreg {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log search progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    r = sub.add_parser("register", help="register a source cloud onto a target cloud")
    r.add_argument("--source", help="source cloud (.ply ASCII or .xyz)")
    r.add_argument("--target", help="target cloud (.ply ASCII or .xyz)")
    r.add_argument("--config", help="JSON run configuration")
    r.add_argument("--out", help="write the JSON report here instead of standard output")
    r.add_argument("--final-icp", action="store_true", help="polish the result with ICP")

    b = sub.add_parser("bench", help="run the synthetic benchmark")
    b.add_argument("--cases", type=int, required=True, help="number of cases")
    b.add_argument("--seed", type=int, required=True, help="master seed for case generation")
    b.add_argument("--config", help="JSON run configuration")
    b.add_argument("--partial", action="store_true", help="keep a farthest-point subset of each cloud")
    b.add_argument("--noise", action="store_true", help="add clipped Gaussian noise")
    b.add_argument("--out", help="write the JSON report here")
    b.add_argument("--dump", metavar="DIR", help="also write every case as a PLY pair")

    i = sub.add_parser("icp", help="plain ICP baseline from the identity")
    i.add_argument("--source", help="source cloud (.ply ASCII or .xyz)")
    i.add_argument("--target", help="target cloud (.ply ASCII or .xyz)")
    i.add_argument("--config", help="JSON run configuration")
    i.add_argument("--iterations", type=int, default=50, help="maximum ICP iterations (default 50)")
    i.add_argument("--out", help="write the JSON report here instead of standard output")

    sub.add_parser("selftest", help="run the built-in invariant suites")
    return p


def _pair_paths(args, cfg: RunConfig) -> tuple[str, str]:
    src = args.source or cfg.paths.source
    tgt = args.target or cfg.paths.target
    missing = [flag for flag, v in (("--source", src), ("--target", tgt)) if not v]
    if missing:
        raise UsageError(f"{args.command}: missing {' and '.join(missing)}")
    return src, tgt


def _emit(report, out: Optional[str]) -> None:
    if out:
        save_report(report, out)
    else:
        sys.stdout.write(dumps(report))


def _summary(report) -> str:
    e = report.motion.euler_deg
    t = report.motion.translation
    line = (
        f"euler_deg=[{e[0]:.4f}, {e[1]:.4f}, {e[2]:.4f}] t=[{t[0]:.5f}, {t[1]:.5f}, {t[2]:.5f}] "
        f"d_mc={report.alignment['d_mc']:.6f} chamfer={report.alignment['chamfer']:.6f}"
    )
    if report.truth_error:
        line += f" mae_R={report.truth_error['mae_rotation_deg']:.4f}deg mae_t={report.truth_error['mae_translation']:.6f}"
    return line


def cmd_register(args) -> int:
    from cemreg.pipeline import register_pair

    cfg = load_config(args.config)
    if args.final_icp:
        cfg = cfg.model_copy(update={"final_icp": True})
    src, tgt = _pair_paths(args, cfg)
    report = register_pair(
        load_cloud(src), load_cloud(tgt), cfg, truth=read_truth(tgt), inputs={"source": src, "target": tgt}
    )
    out = args.out or cfg.paths.out
    _emit(report, out)
    if out:
        print(_summary(report))
    return EXIT_OK


def cmd_icp(args) -> int:
    from cemreg.pipeline import icp_pair
    from cemreg.solver import IcpConfig

    if args.iterations < 1:
        raise UsageError("icp: --iterations must be >= 1")
    cfg = load_config(args.config)
    src, tgt = _pair_paths(args, cfg)
    icp_cfg = IcpConfig(args.iterations, cfg.icp.mse_tolerance)
    report = icp_pair(
        load_cloud(src), load_cloud(tgt), cfg, icp_cfg, truth=read_truth(tgt), inputs={"source": src, "target": tgt}
    )
    _emit(report, args.out)
    if args.out:
        print(_summary(report))
    return EXIT_OK


def bench_specs(cfg: RunConfig, cases: int, seed: int, partial: bool, noise: bool):
    from cemreg.bench import CaseSpec, case_seeds

    c = cfg.case
    base = CaseSpec(
        num_points=c.num_points,
        rotation_range_deg=tuple(c.rotation_range_deg),
        translation_range=tuple(c.translation_range),
        keep_fraction=c.keep_fraction if partial else 1.0,
        noise_sigma=c.noise_sigma if noise else 0.0,
        noise_clip=c.noise_clip,
        shape=c.shape,
    )
    return [replace(base, seed=s) for s in case_seeds(seed, cases)]


def bench_document(report, cfg: RunConfig, seed: int, partial: bool, noise: bool, total_s: float) -> dict:
    """The serialized benchmark report; wall-clock values live only under ``timings``."""
    d = report.as_dict()
    per_case = [c.pop("runtime_s") for c in d["cases"]]
    d.update(
        kind="bench",
        version=__version__,
        master_seed=seed,
        partial=partial,
        noise=noise,
        config=cfg.echo(),
        timings={"per_case_s": per_case, "total_s": total_s},
    )
    return d


def cmd_bench(args) -> int:
    from cemreg.bench import generate_case, run_benchmark, write_case
    from cemreg.pipeline import registration_solver

    if args.cases < 1:
        raise UsageError("bench: --cases must be >= 1")
    cfg = load_config(args.config)
    specs = bench_specs(cfg, args.cases, args.seed, args.partial, args.noise)
    start = time.perf_counter()
    report = run_benchmark(specs, registration_solver(cfg))
    doc = bench_document(report, cfg, args.seed, args.partial, args.noise, time.perf_counter() - start)
    out = args.out or cfg.paths.out
    if out:
        save_report(doc, out)
    if args.dump:
        for k, spec in enumerate(specs):
            write_case(generate_case(spec), Path(args.dump), f"case{k:04d}")
    agg = report.aggregate
    print(f"cases={agg['cases']} failed={agg['failed']}")
    for key in ("mae_rotation_deg", "rmse_rotation_deg", "mae_translation", "rmse_translation",
                "median_case_mae_rotation_deg", "median_geodesic_rotation_deg"):
        if key in agg:
            print(f"{key}={agg[key]:.6f}")
    return EXIT_OK if agg["failed"] == 0 else EXIT_RUNTIME


def cmd_selftest(args) -> int:
    from cemreg.selftest import SUITES

    failed = False
    for name, suite in SUITES.items():
        start = time.perf_counter()
        passed, total = suite()
        failed |= passed != total
        status = "ok" if passed == total else "FAILED"
        print(f"{name}: {passed}/{total} passed ({time.perf_counter() - start:.2f}s) {status}")
    return EXIT_RUNTIME if failed else EXIT_OK


COMMANDS = {"register": cmd_register, "bench": cmd_bench, "icp": cmd_icp, "selftest": cmd_selftest}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"cemreg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="cemreg: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cemreg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"cemreg: config error: {exc}", file=sys.stderr)
    except CloudParseError as exc:
        print(f"cemreg: parse error: {exc}", file=sys.stderr)
    except (OSError, ValueError, RuntimeError, json.JSONDecodeError) as exc:
        print(f"cemreg: error: {exc}", file=sys.stderr)
    return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
