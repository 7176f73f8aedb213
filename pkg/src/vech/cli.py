"""Command line: ``vech run | resume | validate | selftest``."""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import sim
from .errors import InvalidConfigError, InvalidStateError
from .vtkio import CheckpointVersionError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


def experiment_path(name: str) -> Path:
    """A config file path, or the name of a packaged experiment."""
    p = Path(name)
    if p.exists():
        return p
    packaged = resources.files("vech") / "experiments" / f"{p.stem}.ini"
    if packaged.is_file():
        return Path(str(packaged))
    raise InvalidConfigError(f"no config file or packaged experiment named {name!r}")


def packaged_experiments() -> list[str]:
    root = resources.files("vech") / "experiments"
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".ini"))


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vech", description="Viscoelastic phase-field tumour growth simulator")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread count")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="experiment file or packaged experiment name")
            p.add_argument("--profile", help="config profile, e.g. desk")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (section.key or unique key)")

    run = sub.add_parser("run", help="run an experiment (all sweep members)")
    common(run)
    run.add_argument("--output-dir", type=Path, default=Path("runs"))
    run.add_argument("--enforce-cfl", type=float, metavar="CSTAR", help="make the CFL advisory a hard check")
    run.add_argument("--clip-B", type=float, metavar="DELTA", help="clip eigenvalues of B below DELTA (logged)")
    run.add_argument("--only", help="run only sweep members whose tag contains this text")

    res = sub.add_parser("resume", help="continue from a checkpoint")
    res.add_argument("checkpoint", type=Path)
    common(res, config=False)
    res.add_argument("--output-dir", type=Path, default=None)
    res.add_argument("--allow-dt-change", action="store_true")
    res.add_argument("--enforce-cfl", type=float, metavar="CSTAR")
    res.add_argument("--clip-B", type=float, metavar="DELTA")

    val = sub.add_parser("validate", help="check a configuration against the model assumptions")
    common(val)
    val.add_argument("--enforce-cfl", type=float, metavar="CSTAR")

    st = sub.add_parser("selftest", help="run the property suites")
    st.add_argument("--quick", action="store_true", help="smaller sample sizes")

    sub.add_parser("list", help="list packaged experiments")
    return ap


def _run_flags(args) -> dict:
    out = {}
    if getattr(args, "enforce_cfl", None) is not None:
        out["run.enforce_cfl"] = args.enforce_cfl
    if getattr(args, "clip_B", None) is not None:
        out["run.clip_B"] = args.clip_B
    return out


def cmd_run(args) -> int:
    configs = sim.load_configs(experiment_path(args.config), args.profile, sim.parse_overrides(args.set))
    if args.only:
        configs = [c for c in configs if args.only in c.tag]
    status = EXIT_OK
    for cfg in configs:
        cfg = cfg.with_overrides(_run_flags(args))
        out = args.output_dir / cfg.tag if len(configs) > 1 else args.output_dir
        print(f"== {cfg.tag}: {cfg.num_steps} steps -> {out}")
        try:
            result = sim.run(cfg, out)
        except sim.RunAborted as exc:
            print(f"aborted: {exc}", file=sys.stderr)
            status = EXIT_SOLVER
            continue
        last = result.monitors[-1]
        print(f"   done t={last['t']:.6g} F={last['F_total']:.10g} minEigB={last['minEigB']:.3e} "
              f"maxTel={last['maxTel']:.3e} mass={last['mass']:.6g}")
    return status


def cmd_resume(args) -> int:
    overrides = {**sim.parse_overrides(args.set), **_run_flags(args)}
    result = sim.resume(args.checkpoint, args.output_dir, overrides, allow_dt_change=args.allow_dt_change)
    last = result.monitors[-1]
    print(f"resumed to t={last['t']:.6g} F={last['F_total']:.10g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    configs = sim.load_configs(experiment_path(args.config), args.profile, sim.parse_overrides(args.set))
    status = EXIT_OK
    for cfg in configs:
        cfg = cfg.with_overrides(_run_flags(args))
        report = sim.validate(cfg)
        print(f"== {cfg.tag}")
        print(report.text())
        if not report.ok:
            status = EXIT_CONFIG
    return status


def cmd_selftest(args) -> int:
    from . import selftest as st

    n = 10_000 if args.quick else 100_000
    results = []

    slacks, secs = st.lemma_suite(n=n)
    worst = min(v for d in slacks.values() for k, v in d.items() if v is not None and k != "a")
    eq = max(-d["a"] for d in slacks.values())
    results.append(("matrix regularization inequalities", worst >= -1e-10 and eq <= 1e-12,
                    f"min slack {worst:.2e}, identity residual {eq:.2e}, {secs:.1f}s"))
    viol, secs = st.convex_splitting(n=n)
    results.append(("convex-concave splitting", viol <= 1e-12, f"max violation {viol:.2e}"))
    gap = st.lumped_norm_gap(n_fields=100 if args.quick else 1000)
    _, orders = st.lumping_error_orders()
    results.append(("lumped norm bound", gap >= 0, f"min relative gap {gap:.3e}"))
    results.append(("lumping error order", orders.min() >= 1.9, f"orders {orders.round(3).tolist()}"))
    mean, ident = st.laplacian_identity()
    results.append(("discrete Laplacian", mean <= 1e-12 and ident <= 1e-12, f"mean {mean:.1e}, identity {ident:.1e}"))
    errs = (st.oldroyd_oracle(), st.oldroyd_oracle(growth=True))
    results.append(("tensor relaxation oracle", max(errs) <= 1e-12, f"max error {max(errs):.1e}"))
    jac = st.jacobian_check()
    results.append(("Newton Jacobian", jac <= 1e-6, f"relative error {jac:.1e}"))
    stokes = st.manufactured_stokes(levels=(4, 8, 16) if args.quick else (4, 8, 16, 32))
    results.append(("manufactured Stokes", stokes.velocity_orders.min() >= 2.7 and stokes.pressure_orders.min() >= 1.8,
                    f"velocity orders {stokes.velocity_orders.round(2).tolist()}, "
                    f"pressure orders {stokes.pressure_orders.round(2).tolist()}"))
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAIL


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "resume": cmd_resume, "validate": cmd_validate, "selftest": cmd_selftest,
                "list": lambda a: print("\n".join(packaged_experiments())) or EXIT_OK}
    try:
        if args.threads is not None:
            with threadpool_limits(args.threads):
                return handlers[args.command](args)
        return handlers[args.command](args)
    except CheckpointVersionError as exc:
        print(f"error: {exc} (found {exc.found}, expected {exc.expected})", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (InvalidConfigError, InvalidStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
