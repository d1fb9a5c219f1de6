"""Command-line interface: describe, fit, select, diagnose.

Every (method, tau) job draws from its own stream keyed by the seed, the
method and tau, so a job's output does not depend on which other jobs run
alongside it or on ``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import METHODS, ConfigError, IngestError, RunConfig, ingest, load_config
from .descriptive import SCHEMES, describe_table
from .diagnostics import acf, default_grid, kde, summarize
from .em import EMConfig, EMError, em_fit
from .fp_basis import DesignMatrix, DomainError, build_design
from .freq_qr import QRError, qr_fit
from .gibbs import GibbsConfig, GibbsError, GPriorSpec, gibbs_run, load_draws_cache, save_draws_cache
from .samplers import RngStream
from .selection import SelectionConfig, SelectionError, select

log = logging.getLogger("bqrfp")

METHOD_IDS = {m: i for i, m in enumerate(METHODS)}
KNOWN_ERRORS = (ConfigError, IngestError, DomainError, EMError, GibbsError, SelectionError, QRError,
                ValueError, np.linalg.LinAlgError, OSError)


class StageError(RuntimeError):
    pass


def tau_tag(tau: float) -> str:
    return f"{tau:.2f}" if round(tau, 2) == tau else repr(float(tau))


def job_stream(seed: int, method: str, tau: float) -> RngStream:
    return RngStream(seed, (METHOD_IDS[method], int(round(tau * 1_000_000))))


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", name).strip("_")


@dataclass
class JobResult:
    block: dict
    beta: np.ndarray | None = None
    sigma: np.ndarray | None = None
    seconds: float = 0.0


def _coef_rows(labels, est, lo, hi):
    return [{"column": lab, "estimate": float(e), "lower": float(a), "upper": float(b)}
            for lab, e, a, b in zip(labels, est, lo, hi)]


def _posterior_table(labels, beta):
    sums = [summarize(beta[:, j]) for j in range(beta.shape[1])]
    return _coef_rows(labels, [s.mean for s in sums], [s.ci95[0] for s in sums], [s.ci95[1] for s in sums])


def run_job(method: str, tau: float, y: np.ndarray, values: np.ndarray, labels: list[str],
            cfg: RunConfig, trace_em: bool = False, cache_dir: str | None = None) -> JobResult:
    """Fit one (method, tau) pair. Stage failures are re-raised with context."""
    t0 = time.perf_counter()
    B = DesignMatrix(values, tuple((lab, lab) for lab in labels))
    st = cfg.stages
    stream = job_stream(cfg.seed, method, tau)
    block = {"method": method, "tau": float(tau), "response": cfg.response,
             "stream": [int(k) for k in stream._key]}
    stage = "qr"
    try:
        if method == "qr":
            fit = qr_fit(y, B, tau, n_boot=st.n_boot, rng=stream.child(4))
            block.update(interval="percentile bootstrap", objective=fit.objective, n_boot=fit.n_boot,
                         coefficients=_coef_rows(labels, fit.beta_hat, fit.ci_lower, fit.ci_upper))
            return JobResult(block, seconds=time.perf_counter() - t0)

        stage = "em"
        em_cfg = EMConfig(max_iters=st.em_max_iters, replications=st.em_replications, tol=st.em_tol)
        em = em_fit(y, B, tau, em_cfg, stream.child(1))
        block["em"] = {"iterations": em.iteration, "converged": em.converged, "sigma": em.sigma,
                       "beta": [float(b) for b in em.beta], "pseudo_inverse": em.pseudo_inverse}
        if trace_em:
            block["em"]["objective_trace"] = em.objective_trace
            for q, obj in enumerate(em.objective_trace):
                log.info("EM %s tau=%s iteration %d check loss %.10g", method, tau, q, obj)

        stage = "gibbs"
        prior = GPriorSpec(cfg.g)
        if method == "bqr":
            gcfg = GibbsConfig(st.bqr_iters, st.bqr_burn_in, variant=st.variant, keep_v=False)
        else:
            gcfg = GibbsConfig(st.bqrvs_iters, st.bqrvs_burn_in, variant=st.variant, keep_v=True)
        draws = gibbs_run(y, B, tau, prior, em, gcfg, stream.child(2))
        block.update(interval="equal-tailed credible", draws=draws.R,
                     coefficients=_posterior_table(labels, draws.beta),
                     sigma_mean=float(np.mean(draws.sigma)), jitter_events=draws.jitter_events,
                     excluded_weights=draws.excluded_weights)
        if cache_dir is not None:
            save_draws_cache(draws, Path(cache_dir) / f"draws_{method}_{tau_tag(tau)}.npz")

        if method == "bqrvs":
            stage = "selection"
            scfg = SelectionConfig(st.select_steps, st.select_burn_in, st.cutoff,
                                   refresh_latent=st.refresh_latent)
            res = select(y, B, tau, draws, prior, scfg, stream.child(3))
            block["selection"] = res.to_dict()
            block["weight_ess"] = draws.weight_ess()
        return JobResult(block, draws.beta, draws.sigma, time.perf_counter() - t0)
    except KNOWN_ERRORS as exc:
        raise StageError(f"{method} tau={tau}: {stage} stage failed: {exc}") from exc


def _run_job_star(args):
    return run_job(*args)


def write_diagnostics(out: Path, method: str, tau: float, labels, beta, sigma, max_lag=50, points=256):
    """trace/density/acf CSVs per parameter; returns {parameter: {kind: relative path}}."""
    ddir = out / "diagnostics"
    ddir.mkdir(parents=True, exist_ok=True)
    paths = {}
    series = [(lab, beta[:, j]) for j, lab in enumerate(labels)] + [("sigma", sigma)]
    for name, chain in series:
        stem = f"{method}_{tau_tag(tau)}_{_safe(name)}"
        entry = {}
        p = ddir / f"trace_{stem}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "value"])
            w.writerows((i, repr(float(v))) for i, v in enumerate(chain))
        entry["trace"] = str(p.relative_to(out))
        k = kde(chain, default_grid(chain, points))
        p = ddir / f"density_{stem}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid", "density"])
            w.writerows((repr(float(a)), repr(float(b))) for a, b in zip(k.grid, k.density))
        entry["density"] = str(p.relative_to(out))
        r = acf(chain, min(max_lag, chain.size - 1))
        p = ddir / f"acf_{stem}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "value"])
            w.writerows((i, repr(float(v))) for i, v in enumerate(r))
        entry["acf"] = str(p.relative_to(out))
        paths[name] = entry
    return paths


def write_coeffs(out: Path, block: dict) -> str:
    p = out / f"coeffs_{block['method']}_{tau_tag(block['tau'])}.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "estimate", "lower", "upper"])
        for row in block["coefficients"]:
            w.writerow([row["column"], repr(row["estimate"]), repr(row["lower"]), repr(row["upper"])])
    return p.name


def write_mip(out: Path, block: dict) -> str:
    sel = block["selection"]
    p = out / f"mip_{tau_tag(block['tau'])}.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "mip", "selected"])
        for lab, m in sel["mip"].items():
            w.writerow([lab, repr(m), int(lab in sel["selected"])])
    return p.name


def _base_report(cfg: RunConfig, command: str, data=None) -> dict:
    rep = {"tool": "bqrfp", "version": __version__, "command": command,
           "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": int(cfg.seed)}
    if data is not None:
        rep["data"] = {"source": Path(data.source).name, "n": data.n, "dropped": data.drop_report}
    return rep


def write_report(out: Path, report: dict) -> Path:
    p = out / "report.json"
    with open(p, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return p


def design_for(data, cfg: RunConfig) -> DesignMatrix:
    return build_design(data.columns, cfg.specs, intercept=cfg.intercept)


def run_fits(data, cfg: RunConfig, methods, out: Path, jobs: int = 1, trace_em: bool = False,
             command: str = "fit", diagnostics: bool = True) -> dict:
    t0 = time.perf_counter()
    B = design_for(data, cfg)
    labels = B.labels
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(m, float(t), data.y, B.values, labels, cfg, trace_em, str(out)) for m in methods for t in cfg.taus]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(jobs, len(tasks))) as ex:
            results = list(ex.map(_run_job_star, tasks))
    else:
        results = [run_job(*t) for t in tasks]

    report = _base_report(cfg, command, data)
    report["design"] = {"columns": labels, "n": B.n, "D": B.D}
    fits, timing = [], {}
    for res in results:
        block = res.block
        key = f"{block['method']}_{tau_tag(block['tau'])}"
        block["files"] = {"coefficients": write_coeffs(out, block)}
        if "selection" in block:
            block["files"]["mip"] = write_mip(out, block)
        if diagnostics and res.beta is not None:
            block["diagnostics"] = write_diagnostics(out, block["method"], block["tau"], labels, res.beta, res.sigma)
        timing[key] = res.seconds
        fits.append(block)
    report["fits"] = fits
    timing["total"] = time.perf_counter() - t0
    report["timing"] = timing
    write_report(out, report)
    return report


def run_describe(data, cfg: RunConfig, out: Path) -> dict:
    if cfg.response_scheme is None and cfg.response not in SCHEMES:
        raise ConfigError(f"no category scheme for response {cfg.response!r}; set response_scheme")
    scheme = SCHEMES[cfg.response_scheme or cfg.response]
    out.mkdir(parents=True, exist_ok=True)
    rows, tests = [], []
    for p in cfg.predictors:
        raw = data.columns[p.name]
        if p.kind == "continuous":
            if p.scheme is None:
                continue
            fs = SCHEMES[p.scheme]
            fvals = [fs.labels[fs.index(v)] for v in raw]
            levels = list(fs.labels)
        else:
            codes = [str(int(v)) for v in raw]
            fvals = [p.labels.get(c, c) for c in codes]
            order = [str(c) for c in (p.levels or sorted({int(v) for v in raw}))]
            levels = [p.labels.get(c, c) for c in order]
        levels_used, counts, pct, res = describe_table(fvals, levels, data.y, scheme)
        for lev, crow, prow in zip(levels_used, counts, pct):
            for cat, c, q in zip(scheme.labels, crow, prow):
                rows.append([p.name, lev, cat, int(c), round(float(q), 2)])
        tests.append({"factor": p.name, **{k: v for k, v in res.to_dict().items() if k != "table"}})
    stem = _safe(cfg.response)
    with open(out / f"describe_{stem}_counts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["factor", "level", "category", "count", "row_pct"])
        w.writerows(rows)
    with open(out / f"describe_{stem}_tests.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["factor", "chi2", "dof", "p_value", "cramers_v", "strength"])
        for t in tests:
            w.writerow([t["factor"], repr(t["chi2"]), t["dof"], repr(t["p_value"]), repr(t["cramers_v"]),
                        t["strength"]])
    report = _base_report(cfg, "describe", data)
    report["describe"] = {"response_scheme": scheme.name, "tests": tests,
                          "files": [f"describe_{stem}_counts.csv", f"describe_{stem}_tests.csv"]}
    write_report(out, report)
    return report


def run_diagnose(data, cfg: RunConfig, method: str, out: Path, jobs: int = 1, max_lag: int = 50) -> dict:
    """Diagnostics CSVs from cached draws in ``out``; missing caches are refitted."""
    if method == "qr":
        raise ConfigError("diagnostics need a Bayesian method (bqr or bqrvs)")
    missing = [t for t in cfg.taus if not (out / f"draws_{method}_{tau_tag(t)}.npz").exists()]
    if missing:
        log.info("no cached draws for tau %s; fitting", missing)
        run_fits(data, cfg.with_overrides(taus=tuple(missing)), [method], out, jobs, command="fit",
                 diagnostics=False)
    report = _base_report(cfg, "diagnose", data)
    blocks = []
    for t in cfg.taus:
        draws = load_draws_cache(out / f"draws_{method}_{tau_tag(t)}.npz")
        paths = write_diagnostics(out, method, t, draws.column_labels, draws.beta, draws.sigma, max_lag)
        summ = {lab: {"mean": s.mean, "ci95": list(s.ci95), "ess": s.ess}
                for lab, s in ((lab, summarize(draws.beta[:, j])) for j, lab in enumerate(draws.column_labels))}
        blocks.append({"method": method, "tau": float(t), "files": paths, "summary": summ})
    report["diagnostics"] = blocks
    write_report(out, report)
    return report


def _taus(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", required=True, help="input CSV (UTF-8, header row)")
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--tau", type=_taus, help="comma-separated quantile levels, e.g. 0.5,0.75")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--response", help="response column used as-is (overrides the config)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for (method, tau) jobs")
    common.add_argument("--trace-em", action="store_true", help="log and report the EM objective trace")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="bqrfp", description="Bayesian quantile regression with fractional polynomials")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("describe", parents=[common], help="category tables, chi-square and Cramer's V")
    sub.add_parser("fit", parents=[common], help="fit qr, bqr or bqrvs for each tau")
    sub.add_parser("select", parents=[common], help="bqrvs fit with inclusion probabilities")
    d = sub.add_parser("diagnose", parents=[common], help="trace, density and ACF series")
    d.add_argument("--max-lag", type=int, default=50)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose + args.trace_em, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        over = {"taus": args.tau, "method": args.method, "seed": args.seed}
        if args.response:
            over.update(response=args.response, response_readings=())
        cfg = cfg.with_overrides(**over)
        if args.command == "select":
            cfg = cfg.with_overrides(method="bqrvs")
        data = ingest(args.data, cfg)
        out = Path(args.out)
        if args.command == "describe":
            run_describe(data, cfg, out)
        elif args.command in ("fit", "select"):
            run_fits(data, cfg, [cfg.method], out, args.jobs, args.trace_em)
        else:
            method = args.method or ("bqrvs" if cfg.method == "qr" else cfg.method)
            run_diagnose(data, cfg, method, out, args.jobs, args.max_lag)
    except (StageError, *KNOWN_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
