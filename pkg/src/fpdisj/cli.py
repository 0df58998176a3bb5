"""Command-line harness.

Subcommands: ``verify-inequalities``, ``run-protocol``, ``bound-table``,
``sketch-bench`` and ``gen-instance``.  Every report carries a header with
the full configuration, the seed and a build identifier; only its
``timestamp`` field changes between identical runs.

Exit codes: 0 when all checks pass, 1 when a strict-regime check fails,
2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .core import (
    InvalidArgument,
    Mode,
    Parameters,
    as_fraction,
    gen_instance,
    make_parameters,
)
from .oracle import (
    case_bounds_for_shape,
    decision_corners_for_shape,
    sweep_shapes,
)
from .protocol import ESTIMATORS, make_factory, run_protocol, summarize
from .sketches import AmsFpSketch, ExactEstimator, KmvF0Sketch, derive_seed

log = logging.getLogger("fpdisj")

EXIT_OK, EXIT_FALSIFIED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"fpdisj-{__version__}" + (f"+g{desc}" if desc else "")


@dataclass
class Report:
    command: str
    config: dict
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    columns: list[str] | None = None

    def header(self) -> dict:
        return {
            "tool": "fpdisj",
            "build": build_id(),
            "command": self.command,
            "config": self.config,
            "seed": self.config.get("seed"),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }

    def _columns(self) -> list[str]:
        if self.columns:
            return self.columns
        cols: list[str] = []
        for row in self.rows:
            cols.extend(k for k in row if k not in cols)
        return cols

    def to_json(self) -> str:
        doc = {"header": self.header(), "summary": self.summary, "rows": self.rows}
        return json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# header: " + json.dumps(self.header(), sort_keys=True, default=_jsonable) + "\n")
        buf.write("# summary: " + json.dumps(self.summary, sort_keys=True, default=_jsonable) + "\n")
        cols = self._columns()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _cell(row.get(k)) for k in cols})
        return buf.getvalue()

    def emit(self, fmt: str, out: str | None) -> None:
        text = self.to_json() if fmt == "json" else self.to_csv()
        if out in (None, "-"):
            sys.stdout.write(text)
        else:
            Path(out).write_text(text)


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(_cell(x)) for x in v)
    return v


def read_report(text: str) -> dict:
    """Parse either output format back into ``{"header", "summary", "rows"}``."""
    if text.lstrip().startswith("{"):
        return json.loads(text)
    lines = text.splitlines()
    header = json.loads(lines[0].split(": ", 1)[1])
    summary = json.loads(lines[1].split(": ", 1)[1])
    rows = list(csv.DictReader(lines[2:]))
    return {"header": header, "summary": summary, "rows": rows}


# ---------------------------------------------------------------------------
# argument helpers


def _int_list(text) -> list[int]:
    if isinstance(text, list):
        return text
    return [int(_eval_int(s)) for s in str(text).split(",") if s.strip()]


def _eval_int(s: str) -> int:
    s = s.strip()
    if "^" in s or "**" in s:
        base, _, exp = s.replace("**", "^").partition("^")
        return int(base) ** int(exp)
    return int(s)


def _frac_list(text) -> list[Fraction]:
    if isinstance(text, list):
        return text
    return [as_fraction(s) for s in str(text).split(",") if s.strip()]


def _rational(text) -> Fraction:
    try:
        return as_fraction(text)
    except InvalidArgument as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _params_from_args(args) -> Parameters:
    if args.m is not None and args.n is not None:
        raise UsageError("give --m or --n, not both")
    if args.m is not None:
        n = int(args.m) ** int(args.p)
    elif args.n is not None:
        n = _eval_int(str(args.n))
    else:
        raise UsageError("need --m or --n")
    return make_parameters(n, args.p, args.eps, args.mode, t=args.t)


def _config_of(args) -> dict:
    skip = {"func", "config", "out"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = _jsonable(v) if isinstance(v, (Fraction, np.integer, np.floating, Path)) else v
    return out


def load_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    conf = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        conf[key.lstrip("-").replace("-", "_")] = value
    return conf


# ---------------------------------------------------------------------------
# verify-inequalities


def cmd_verify_inequalities(args) -> tuple[Report, int]:
    ps, ms, ns, epss = _int_list(args.p_list), _int_list(args.m_list), _int_list(args.n_list), _frac_list(args.eps_list)
    domains = [("m", m) for m in ms] + [("n", n) for n in ns]
    report = Report("verify-inequalities", _config_of(args))
    skipped, strict_failures = [], 0
    for p in ps:
        for kind, value in domains:
            n = value**p if kind == "m" else value
            for eps in epss:
                try:
                    params = make_parameters(n, p, eps, Mode.RELAXED, t=None)
                except InvalidArgument as exc:
                    skipped.append({"p": p, "n": n, "eps": str(eps), "reason": str(exc)})
                    continue
                mode = "strict" if params.in_regime else "relaxed"
                for shape in sweep_shapes(params, args.points, args.l0_frac):
                    cb = case_bounds_for_shape(shape, params)
                    dc = decision_corners_for_shape(shape, params, "paper")
                    row = {
                        "p": p,
                        "n": n,
                        "root": params.root,
                        "eps": f"{eps.numerator}/{eps.denominator}",
                        "t": params.t,
                        "mode": mode,
                        "case": shape.case.value,
                        "l0": shape.l0,
                        "xi": shape.xi,
                        "exact": cb.exact,
                        "bound": cb.bound,
                        "satisfied": cb.satisfied,
                        "slack": cb.slack,
                        "slack_frac": cb.slack_frac,
                        "corners_fired": list(dc.fired),
                        "corners_correct": dc.correct,
                    }
                    report.rows.append(row)
                    if mode == "strict" and not (cb.satisfied and dc.correct):
                        strict_failures += 1
    strict_rows = [r for r in report.rows if r["mode"] == "strict"]
    report.summary = {
        "rows": len(report.rows),
        "strict_rows": len(strict_rows),
        "strict_bounds_satisfied": sum(r["satisfied"] for r in strict_rows),
        "strict_corners_correct": sum(r["corners_correct"] for r in strict_rows),
        "strict_failures": strict_failures,
        "skipped": skipped,
    }
    return report, EXIT_FALSIFIED if strict_failures else EXIT_OK


# ---------------------------------------------------------------------------
# run-protocol


def _trial(job: tuple) -> dict:
    params, kind, k, entropy, truth_mode, density, threshold, C, trace_dir = job
    ss = np.random.SeedSequence(entropy, spawn_key=(k,))
    inst_seed, sketch_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64))
    if truth_mode == "alternate":
        truth = "disjoint" if k % 2 == 0 else "common"
    else:
        truth = truth_mode
    inst = gen_instance(params, truth, density, inst_seed)
    tr = run_protocol(inst, make_factory(kind, params, sketch_seed, C=C), threshold, keep_frames=bool(trace_dir))
    if trace_dir:
        tr.write_trace(Path(trace_dir) / f"trial-{k:05d}.bin")
    row = {"trial": k}
    row.update(tr.to_dict())
    return row


def cmd_run_protocol(args) -> tuple[Report, int]:
    params = _params_from_args(args)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    threshold = args.threshold or ("paper" if params.mode is Mode.STRICT else "relaxed")
    jobs = [
        (params, args.estimator, k, args.seed, args.truth, args.density, threshold, args.C, args.trace_dir)
        for k in range(args.trials)
    ]
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_trial, jobs))
    else:
        rows = [_trial(j) for j in jobs]
    rows.sort(key=lambda r: r["trial"])

    report = Report("run-protocol", _config_of(args), rows)
    report.summary = summarize(rows, params)
    report.summary.update({"params": params.to_dict(), "threshold_mode": threshold})
    log.info("success rate %.4f over %d trials", report.summary["success_rate"], len(rows))
    return report, EXIT_OK


# ---------------------------------------------------------------------------
# bound-table


def bound_row(n: int, p, eps) -> dict:
    """New bound, the three prior terms, their ratio and the crossover eps.

    The polylog factor of the second prior term is dropped (taken as 1), so
    the prior side is as strong as it can be.
    """
    e = as_fraction(eps)
    pf = float(p)
    log_n = math.log2(n)
    core_n = n ** (1 - 2 / pf)
    new = float(Fraction(pf) ** 2 * Fraction(core_n) / (e * e * Fraction(log_n)))
    ef = float(e)
    t1 = core_n * ef ** (-2 / pf)
    t2 = core_n * ef ** (-4 / pf)
    eps_term = float(1 / (e * e))
    t3 = eps_term + log_n
    return {
        "n": n,
        "p": p,
        "eps": ef,
        "lower_bound": new,
        "prior_t1": t1,
        "prior_t2": t2,
        "prior_t3": t3,
        "eps_inv2_term": eps_term,
        "log_term": log_n,
        "ratio": new / max(t1, t2, t3),
        "crossover_eps": crossover_eps(n, pf),
    }


def _ratio(n: int, p: float, eps: float) -> float:
    log_n = math.log2(n)
    core_n = n ** (1 - 2 / p)
    new = p * p * core_n / (eps * eps * log_n)
    return new / max(core_n * eps ** (-2 / p), core_n * eps ** (-4 / p), eps**-2 + log_n)


def crossover_eps(n: int, p: float) -> float:
    """Largest eps at which the new bound still beats every prior term (0 if never)."""
    f = lambda le: math.log(_ratio(n, p, math.exp(le)))
    lo, hi = -60.0, 60.0
    if f(lo) <= 0:
        return 0.0
    if f(hi) > 0:
        return math.inf
    return math.exp(brentq(f, lo, hi, xtol=1e-14, rtol=1e-14))


def cmd_bound_table(args) -> tuple[Report, int]:
    report = Report("bound-table", _config_of(args))
    for n in _int_list(args.n_list):
        for p in _int_list(args.p_list):
            for eps in _frac_list(args.eps_list):
                report.rows.append(bound_row(n, p, eps))
    report.summary = {"rows": len(report.rows)}
    return report, EXIT_OK


# ---------------------------------------------------------------------------
# sketch-bench


def bench_kmv(truths, seeds: int, k: int, tol: float, master: int) -> list[dict]:
    rows = []
    for truth in truths:
        ratios = np.empty(seeds)
        for s in range(seeds):
            sk = KmvF0Sketch(max(truth, 1), k, derive_seed(master, s))
            sk.insert_many(np.arange(1, truth + 1))
            ratios[s] = sk.estimate() / truth
        err = np.abs(ratios - 1)
        rows.append({
            "estimator": "kmv",
            "truth": truth,
            "k": k,
            "seeds": seeds,
            "tolerance": tol,
            "mean_ratio": float(ratios.mean()),
            "frac_within": float((err <= tol).mean()),
            "rms_rel_error": float(np.sqrt(np.mean(err**2))),
        })
    return rows


def bench_exact(truths, seeds: int) -> list[dict]:
    rows = []
    for truth in truths:
        hits = 0
        for _ in range(seeds):
            sk = ExactEstimator(max(truth, 1), 0.0)
            sk.insert_many(np.arange(1, truth + 1))
            hits += sk.estimate() == truth
        rows.append({"estimator": "exact", "truth": truth, "seeds": seeds, "tolerance": 0.0,
                     "frac_within": hits / seeds, "mean_ratio": 1.0, "rms_rel_error": 0.0})
    return rows


def bench_stream(dim: int = 512, heavy: int = 6, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Fixed bench stream: ``dim/4`` unit items plus one item of count ``heavy``."""
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(dim, size=dim // 4, replace=False) + 1)
    w = np.ones(idx.size, dtype=np.int64)
    w[0] = heavy
    return idx, w


def bench_ams(cols_list, seeds: int, p: int, master: int) -> tuple[list[dict], dict]:
    idx, w = bench_stream()
    truth = float(np.sum(w.astype(float) ** p))
    rows = []
    for cols in cols_list:
        est = np.empty(seeds)
        for s in range(seeds):
            sk = AmsFpSketch(int(idx.max()), p, 1, cols, derive_seed(master, s))
            sk.insert_many(idx, w)
            est[s] = sk.estimate()
        rel = est / truth - 1
        rows.append({
            "estimator": "ams",
            "cols": cols,
            "seeds": seeds,
            "truth": truth,
            "mean_ratio": float(np.mean(est / truth)),
            "rms_rel_error": float(np.sqrt(np.mean(rel**2))),
        })
    x = np.log([r["cols"] for r in rows])
    y = np.log([r["rms_rel_error"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0]) if len(rows) > 1 else math.nan
    # per-sampler relative spread, pooled over the sweep
    spread = float(np.mean([r["rms_rel_error"] * math.sqrt(r["cols"]) for r in rows]))
    # a row mean lands inside +-eps_hat with probability >= 3/4 once cols >= (z*spread/eps_hat)^2
    z = 1.1503493803760079
    fit = {"loglog_slope": slope, "spread": spread, "C": (z * spread) ** 2}
    return rows, fit


def cmd_sketch_bench(args) -> tuple[Report, int]:
    report = Report("sketch-bench", _config_of(args))
    truths = _int_list(args.truths)
    if args.estimator == "kmv":
        tol = args.tolerance if args.tolerance is not None else math.sqrt(12 / args.k)
        report.rows = bench_kmv(truths, args.seeds, args.k, tol, args.seed)
        report.summary = {"min_frac_within": min((r["frac_within"] for r in report.rows), default=math.nan)}
    elif args.estimator == "exact":
        report.rows = bench_exact(truths, args.seeds)
        report.summary = {"min_frac_within": min((r["frac_within"] for r in report.rows), default=math.nan)}
    else:
        report.rows, fit = bench_ams(_int_list(args.cols), args.seeds, int(args.p), args.seed)
        report.summary = fit
        if args.calib_out:
            Path(args.calib_out).write_text(f"# recalibrated AMS column constant\nC = {fit['C']!r}\n")
    return report, EXIT_OK


# ---------------------------------------------------------------------------
# gen-instance


def cmd_gen_instance(args) -> tuple[str, int]:
    params = _params_from_args(args)
    truth = args.truth if args.truth != "alternate" else "disjoint"
    inst = gen_instance(params, truth, args.density, args.seed)
    doc = json.loads(inst.to_json())
    doc["seed"] = args.seed
    doc["density"] = args.density
    return json.dumps(doc, sort_keys=True) + "\n", EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_domain(sp, default_m=None):
    sp.add_argument("--m", type=int, default=default_m, help="root m; n = m**p")
    sp.add_argument("--n", type=str, default=None, help="domain size (e.g. 4096 or 2^12)")
    sp.add_argument("--p", type=int, default=3)
    sp.add_argument("--eps", type=_rational, default=Fraction(1, 4), help="accuracy as NUM/DEN")
    sp.add_argument("--mode", choices=[m.value for m in Mode], default="strict")
    sp.add_argument("--t", type=int, default=None, help="party count override (relaxed mode)")


def _add_output(sp, fmt="csv"):
    sp.add_argument("--format", choices=["csv", "json"], default=fmt)
    sp.add_argument("--out", default=None, help="output path (stdout if omitted)")
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpdisj", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="key = value file mirroring the flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("verify-inequalities", help="sweep the case bounds and decision corners")
    sp.add_argument("--p-list", default="3,4")
    sp.add_argument("--m-list", default="", help="comma list of roots (n = m**p)")
    sp.add_argument("--n-list", default="", help="comma list of domain sizes")
    sp.add_argument("--eps-list", default="1/4")
    sp.add_argument("--points", type=int, default=20, help="support-size grid points")
    sp.add_argument("--l0-frac", type=float, default=0.25, help="grid spans [0, frac*n]")
    _add_output(sp)
    sp.set_defaults(func=cmd_verify_inequalities)

    sp = sub.add_parser("run-protocol", help="Monte-Carlo trials of the relay protocol")
    _add_domain(sp, default_m=16)
    sp.set_defaults(mode="relaxed", eps=Fraction(9, 10))
    sp.add_argument("--estimator", choices=ESTIMATORS, default="ams-kmv")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--truth", default="alternate", help="alternate, disjoint or common")
    sp.add_argument("--density", type=float, default=0.25)
    sp.add_argument("--threshold", choices=["paper", "relaxed"], default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--C", type=float, default=16.0, help="AMS column constant")
    sp.add_argument("--trace-dir", default=None, help="write each trial's framed hop messages here")
    _add_output(sp)
    sp.set_defaults(func=cmd_run_protocol)

    sp = sub.add_parser("bound-table", help="tabulate the new and prior space bounds")
    sp.add_argument("--n-list", default="2^20")
    sp.add_argument("--p-list", default="4")
    sp.add_argument("--eps-list", default="1/10")
    _add_output(sp)
    sp.set_defaults(func=cmd_bound_table)

    sp = sub.add_parser("sketch-bench", help="empirical accuracy of the sketches")
    sp.add_argument("--estimator", choices=["kmv", "ams", "exact"], default="kmv")
    sp.add_argument("--truths", default="100,1000,5000")
    sp.add_argument("--seeds", type=int, default=400)
    sp.add_argument("--k", type=int, default=1024)
    sp.add_argument("--tolerance", type=float, default=None)
    sp.add_argument("--cols", default="4,16,64,256")
    sp.add_argument("--p", type=int, default=3)
    sp.add_argument("--calib-out", default=None, help="write the recalibrated C here")
    _add_output(sp)
    sp.set_defaults(func=cmd_sketch_bench)

    sp = sub.add_parser("gen-instance", help="write one promise instance as JSON")
    _add_domain(sp, default_m=16)
    sp.set_defaults(mode="relaxed", eps=Fraction(9, 10))
    sp.add_argument("--truth", default="disjoint", help="disjoint, common or common:INDEX")
    sp.add_argument("--density", type=float, default=0.25)
    _add_output(sp, fmt="json")
    sp.set_defaults(func=cmd_gen_instance)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if pre.config:
            conf = load_config(pre.config)
            sub = parser._subparsers._group_actions[0].choices[pre.command]
            sub.set_defaults(**conf)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except (UsageError, OSError) as exc:
        print(f"fpdisj: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        result, code = args.func(args)
    except (UsageError, InvalidArgument) as exc:
        print(f"fpdisj: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if isinstance(result, Report):
        result.emit(args.format, args.out)
    elif args.out in (None, "-"):
        sys.stdout.write(result)
    else:
        Path(args.out).write_text(result)
    return code


if __name__ == "__main__":
    sys.exit(main())
