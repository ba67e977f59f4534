"""``tsn-sim`` command line: run, suite, sync and validate."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from tsnsim import syncproto
from tsnsim.engine import InvariantViolation, Simulator, TraceBundle
from tsnsim.metrics import LatencySummary, bound_breaches, cdf_csv, latency_csv, occupancy_csv
from tsnsim.scenario import Scenario, ScenarioError, format_scenario, load_scenario
from tsnsim.schedulers import SUITE_ORDER, SchedulerKind

log = logging.getLogger("tsnsim")

EXIT_OK = 0
EXIT_SCENARIO = 1
EXIT_INVARIANT = 2

SUMMARY_HEADER = "scheduler,class,count,min_ns,median_ns,p99_ns,max_ns,breaches,drops"


def summary_rows(kind: str, bundle: TraceBundle) -> List[str]:
    sc = bundle.scenario
    rows = []
    for cls in ("ST", "BE"):
        flows = [fid for fid, f in sc.flows.items() if f.traffic_class == cls]
        if not flows:
            continue
        recs = bundle.records_for(cls)
        drops = sum(bundle.flow_drops[f] for f in flows)
        s = LatencySummary.of(recs)
        if s is None:
            rows.append(f"{kind},{cls},0,,,,,0,{drops}")
            continue
        breaches, _ = bound_breaches(recs, sc.latency_bound_ns)
        rows.append(f"{kind},{cls},{s.count},{s.min_ns},{s.median_ns},{s.p99_ns},{s.max_ns},"
                    f"{breaches},{drops}")
    return rows


def write_bundle(bundle: TraceBundle, out: Path, kind: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "latency.csv").write_text(latency_csv(bundle.latency))
    (out / "cdf.csv").write_text(cdf_csv(bundle.latency))
    (out / "occupancy.csv").write_text(occupancy_csv(bundle.occupancy))
    (out / "summary.csv").write_text("\n".join([SUMMARY_HEADER, *summary_rows(kind, bundle)]) + "\n")
    (out / "metadata.txt").write_text(bundle.metadata)
    if bundle.sync is not None and bundle.sync.fit is not None:
        write_sync(bundle, out)


def write_sync(bundle: TraceBundle, out: Path) -> None:
    write_sync_result(bundle.sync, out)


def write_sync_result(sync, out: Path) -> None:
    (out / "sync.csv").write_text(syncproto.sync_csv(sync.records, sync.fit))
    rows = ["probe_time_ns,rtt_ns,offset_ns,true_offset_ns"]
    for r, res in zip(sync.verify_records, sync.residuals_ns):
        rows.append(f"{syncproto.probe_time(r):.9f},{syncproto.rtt(r)},"
                    f"{syncproto.offset_sample(r):.9f},{res:.9f}")
    (out / "sync_verify.csv").write_text("\n".join(rows) + "\n")


def run_case(scenario: Scenario) -> TraceBundle:
    return Simulator(scenario, record_departures=False).run()


@dataclass
class CaseResult:
    kind: str
    bundle: Optional[TraceBundle]
    error: Optional[str] = None


def run_suite(base: Scenario, schedulers: Iterable[str] = ("rr", "sp", "taprio", "utas"),
              out_dir: Optional[Path] = None, jobs: int = 1) -> Dict[str, CaseResult]:
    """Run each scheduler on the same traffic and seed; one failure does not stop the rest."""
    wanted = {SchedulerKind(k) for k in schedulers}
    kinds = [k.value for k in SUITE_ORDER if k in wanted]
    cases = [base.with_scheduler(k) for k in kinds]
    results: Dict[str, CaseResult] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {k: pool.submit(run_case, c) for k, c in zip(kinds, cases)}
            for k, fut in futures.items():
                try:
                    results[k] = CaseResult(k, fut.result())
                except Exception as exc:  # noqa: BLE001 - reported per case
                    results[k] = CaseResult(k, None, f"{type(exc).__name__}: {exc}")
    else:
        for k, c in zip(kinds, cases):
            try:
                results[k] = CaseResult(k, run_case(c))
            except Exception as exc:  # noqa: BLE001
                results[k] = CaseResult(k, None, f"{type(exc).__name__}: {exc}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        rows = [SUMMARY_HEADER]
        for k in kinds:
            res = results[k]
            if res.bundle is None:
                log.error("case %s failed: %s", k, res.error)
                continue
            write_bundle(res.bundle, out_dir / k, k)
            rows += summary_rows(k, res.bundle)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.csv").write_text("\n".join(rows) + "\n")
    return results


def _load(path: str) -> Scenario:
    return load_scenario(path)


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    print(f"ok: {sc.name} ({sc.scheduler.kind}, {len(sc.flows)} flows)")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if args.scheduler:
        sc = sc.with_scheduler(args.scheduler)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    bundle = run_case(sc)
    write_bundle(bundle, Path(args.out), sc.scheduler.kind)
    print((Path(args.out) / "summary.csv").read_text(), end="")
    return EXIT_OK


def cmd_suite(args) -> int:
    sc = _load(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    results = run_suite(sc, args.schedulers.split(","), Path(args.out), jobs=args.jobs)
    print((Path(args.out) / "summary.csv").read_text(), end="")
    failed = [r for r in results.values() if r.error]
    for r in failed:
        print(f"{r.kind}: {r.error}", file=sys.stderr)
    if any("InvariantViolation" in r.error for r in failed):
        return EXIT_INVARIANT
    return EXIT_SCENARIO if failed else EXIT_OK


def cmd_sync(args) -> int:
    sc = _load(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    sim = Simulator(sc, record_departures=False)
    sim._start_gates(0)
    s = sc.sync
    result = sim.run_sync(s.probe_count, s.probe_interval_ns, s.verify_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.txt").write_text(format_scenario(sc))
    write_sync_result(result, out)
    fit = result.fit
    print(f"slope={fit.slope:.6e} intercept_ns={fit.intercept_ns:.3f} "
          f"residual_rms_ns={fit.residual_rms_ns:.3f} probes={fit.sample_count}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsn-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scheduler case")
    r.add_argument("--scenario", required=True)
    r.add_argument("--scheduler", choices=[k.value for k in SchedulerKind])
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", help="run rr, sp, taprio and utas on the same traffic")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--schedulers", default="rr,sp,taprio,utas")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_suite)

    y = sub.add_parser("sync", help="run only the clock synchronisation experiment")
    y.add_argument("--scenario", required=True)
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int)
    y.set_defaults(func=cmd_sync)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except (OSError, ValueError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
