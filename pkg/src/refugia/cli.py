"""Command line entry point: ``refugia <command> --config FILE``.

Every command writes its CSV/JSON/SVG outputs and a ``manifest.json`` into
``<output>/<command>/``. Exit codes: 0 success, 1 verification failure,
2 usage error, 3 numerical failure, 4 configuration error and, for
``evolve`` only, 5 when the final time is reached before a steady state.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .errors import ConfigError, RefugiaError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_FAILURE, EXIT_CONFIG, EXIT_T_REACHED = 0, 1, 2, 3, 4, 5
CSV_VERSION = "v1"


def worker_count() -> int:
    """Worker cap from REFUGIA_THREADS (default 1)."""
    raw = os.environ.get("REFUGIA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parse_range(text: str) -> np.ndarray:
    """``a:b:n`` (linear) or ``a:b:n:log`` (geometric) as an array."""
    parts = text.split(":")
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "log"):
        raise argparse.ArgumentTypeError(f"expected a:b:n or a:b:n:log, got {text!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("range needs at least one point")
    if len(parts) == 4:
        if not (a > 0 and b > 0):
            raise argparse.ArgumentTypeError("log ranges need positive ends")
        return np.geomspace(a, b, n)
    return np.linspace(a, b, n)


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _atomic_write(path: Path, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Run:
    """Collects outputs and writes the manifest at the end of a command."""

    def __init__(self, cfg: RunConfig | None, command: str, out: Path, argv):
        self.cfg, self.command, self.out, self.argv = cfg, command, out, list(argv)
        self.outputs: list[str] = []
        self.summary: dict = {}
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)
        self._drop_previous()
        self.hash = cfg.config_hash() if cfg is not None else "none"

    def _drop_previous(self):
        """Remove the files of an earlier run in this directory so none is orphaned."""
        old = self.out / "manifest.json"
        try:
            names = json.loads(old.read_text(encoding="utf-8")).get("outputs", [])
        except (OSError, ValueError):
            return
        for name in names:
            path = self.out / name
            if path.parent == self.out and path.is_file():
                path.unlink()

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# refugia-csv {CSV_VERSION} config_hash={self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(x) for x in r])
        return self._write(name, buf.getvalue())

    def write_json(self, name: str, obj) -> Path:
        return self._write(name, json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")

    def write_svg(self, name: str, plot) -> Path:
        return self._write(name, plot.render())

    def _write(self, name, text) -> Path:
        path = self.out / name
        _atomic_write(path, text)
        if name not in self.outputs:
            self.outputs.append(name)
        return path

    def finish(self, code: int) -> int:
        manifest = {
            "artifact": "refugia",
            "version": __version__,
            "command": self.command,
            "argv": self.argv,
            "config_hash": self.hash,
            "grid_checksum": self.cfg.grid.checksum() if self.cfg is not None else None,
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
            "exit_code": code,
            "summary": self.summary,
            "outputs": sorted(self.outputs),
        }
        _atomic_write(self.out / "manifest.json",
                      json.dumps(manifest, indent=1, sort_keys=True, default=_json_default) + "\n")
        return code


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    return str(o)


# ---------------------------------------------------------------------------
# commands


def cmd_eig(run: Run, args) -> int:
    from .spectra import sigma1_curve, sigma1_dirichlet

    cfg = run.cfg
    g, b = cfg.grid, cfg.params.b
    mus = args.mu_grid if args.mu_grid is not None else np.geomspace(0.1, 1000, 50)
    rows = [(mu, sigma1_curve(g, b, mu)) for mu in mus]
    run.write_csv("eig.csv", ["mu", "sigma1"], rows)
    run.summary.update({"points": len(rows), "sigma1_dirichlet": sigma1_dirichlet(g)})
    return EXIT_OK


def cmd_regions(run: Run, args) -> int:
    from .spectra import sigma1_curve
    from .svg import Plot
    from .thresholds import classify, ell_tilde, m_curve

    cfg = run.cfg
    g, p = cfg.grid, cfg.params
    alpha = p.alpha if args.alpha is None else args.alpha
    lams = args.lam if args.lam is not None else np.linspace(0.05, 3.0, 30)
    mus = args.mu if args.mu is not None else np.linspace(-3.0, 3.0, 31)
    rows = []
    counts: dict[str, int] = {}
    for mu in mus:
        for lam in lams:
            if not lam > 0:
                continue
            r = classify(g, lam, mu, alpha, p.b, p.c)
            counts[r.classification.value] = counts.get(r.classification.value, 0) + 1
            rows.append((lam, mu, r.classification.value, r.ell_tilde, r.m, r.sigma1))
    run.write_csv("regions.csv", ["lam", "mu", "verdict", "ell_tilde", "m", "sigma1"], rows)

    mu_pos = np.linspace(max(1e-3, 0.0), max(mus.max(), 1e-3), 60)
    plot = Plot(title=f"parameter plane, alpha={alpha:g}", xlabel="lambda", ylabel="mu")
    plot.add([sigma1_curve(g, p.b, m) for m in mu_pos], mu_pos, "lambda = sigma1(b mu)")
    if mus.min() < 0:
        mu_neg = np.linspace(mus.min(), 0.0, 30)
        plot.add(np.abs(mu_neg) / p.c, mu_neg, "lambda = |mu|/c", dashed=True)
    if alpha > 0:
        plot.add([ell_tilde(g, m, alpha, p.b, p.c) for m in mu_pos], mu_pos, "ell_tilde")
    lam_line = np.linspace(lams.min(), lams.max(), 60)
    plot.add(lam_line, [m_curve(l, alpha, p.c) if l > 0 else 0.0 for l in lam_line], "m(lambda)")
    run.write_svg("regions.svg", plot)
    run.summary.update({"points": len(rows), "alpha": alpha, "verdicts": counts})
    return EXIT_OK


def cmd_steady(run: Run, args) -> int:
    from .steady import multistart

    cfg = run.cfg
    g = cfg.grid
    p = cfg.params if args.lam is None else cfg.params.with_(lam=args.lam)
    n = args.starts or cfg.multistart.n_starts
    states = multistart(g, p, n_starts=n, seed=cfg.seed, cfg=cfg.newton)
    rows, sols = [], []
    for i, st in enumerate(states):
        u, v = st.u.values, st.v.values
        rows.append((i, st.is_positive, st.residual_norm, st.iterations, u.min(), u.max(),
                     g.mean(u, "omega"), v.min() if v.size else 0.0, v.max() if v.size else 0.0,
                     g.mean(v, "omega1") if v.size else 0.0))
        sols.append({"index": i, "positive": st.is_positive, "residual": st.residual_norm,
                     "u": u, "v": v, "diagnostics": st.diagnostics})
    run.write_csv("steady.csv", ["index", "positive", "residual", "iterations", "min_u", "max_u",
                                 "mean_u", "min_v", "max_v", "mean_v"], rows)
    run.write_json("steady.json", {"params": p.__dict__, "solutions": sols})
    run.summary.update({"starts": n, "distinct": len(states),
                        "positive": sum(1 for s in states if s.is_positive)})
    return EXIT_OK


def cmd_continue(run: Run, args) -> int:
    from .continuation import branch_from_gamma_u, branch_from_gamma_v, continue_lp2_branch, fold_lam
    from .svg import Plot

    cfg = run.cfg
    g, p, cc = cfg.grid, cfg.params, cfg.continuation
    if args.source == "gamma-v":
        br = branch_from_gamma_v(g, p, cc)
    elif args.source == "gamma-u":
        br = branch_from_gamma_u(g, p, cc)
    else:
        br = continue_lp2_branch(g, p.mu, p.b, cc)
    folds = set(br.folds)
    rows = []
    for k, pt in enumerate(br.points):
        u, v = pt.u.values, pt.v.values
        rows.append((pt.s, pt.lam, u.max(), v.max(), g.mean(u, "omega"), g.mean(v, "omega1"),
                     k in folds))
    run.write_csv("branch.csv", ["s", "lam", "max_u", "max_v", "mean_u", "mean_v", "fold"], rows)
    plot = Plot(title=f"branch from {args.source}", xlabel="lambda",
                ylabel="max w" if args.source == "lp2" else "max u")
    plot.add(br.lams, [r[2] for r in rows], "branch")
    if folds:
        plot.add([br.points[k].lam for k in sorted(folds)], [rows[k][2] for k in sorted(folds)],
                 "folds", markers=True, line=False)
    run.write_svg("branch.svg", plot)
    run.summary.update({"points": len(br), "termination": br.termination, "origin_lam": br.origin_lam,
                        "folds": sorted(folds),
                        "fold_lams": [fold_lam(br, k) for k in sorted(folds)]})
    return EXIT_OK


def cmd_evolve(run: Run, args) -> int:
    import dataclasses

    from .evolution import evolve
    from .steady import smooth_noise

    cfg = run.cfg
    g, p = cfg.grid, cfg.params
    ec = cfg.evolution
    changes = {}
    if args.T is not None:
        changes["T"] = args.T
    if args.snapshots is not None:
        changes["snapshots"] = args.snapshots
    ec = dataclasses.replace(ec, **changes)
    rng = np.random.default_rng(cfg.seed)
    U, V = p.box()
    u0 = max(U, 0.1) * (0.5 + 0.4 * smooth_noise(g, rng, 1.0))
    v0 = max(V, 0.1) * (0.5 + 0.4 * smooth_noise(g, rng, 1.0))[g.idx1]
    try:
        tr = evolve(g, p, u0, v0, ec)
    except RefugiaError as exc:
        run.summary.update({"status": "failure", "error": f"{type(exc).__name__}: {exc}"})
        return EXIT_FAILURE
    keys = ["min_u", "min_v", "mass_u", "mass_v", "residual", "rate", "dt"]
    rows = [(t, *[tr.monitors[k][i] for k in keys]) for i, t in enumerate(tr.times)]
    run.write_csv("evolve.csv", ["t", *keys], rows)
    if tr.snapshots:
        run.write_json("snapshots.json", [{"t": t, "u": u, "v": v} for t, u, v in tr.snapshots])
    run.write_json("final_state.json", {"t": tr.times[-1], "u": tr.u.values, "v": tr.v.values})
    run.summary.update({"status": tr.status, "steps": tr.steps, "t_final": tr.times[-1],
                        "residual": tr.monitors["residual"][-1], "min_u": tr.min_u, "min_v": tr.min_v})
    return EXIT_OK if tr.status == "steady" else EXIT_T_REACHED


def cmd_asymptotics(run: Run, args) -> int:
    from .asymptotics import alpha_sweep, jacobian_base_point, loglog_slope, lp2_scaling_probe
    from .spectra import sigma1_curve
    from .svg import Plot

    cfg = run.cfg
    g, p = cfg.grid, cfg.params
    if args.mode == "alpha":
        rows = alpha_sweep(g, p.lam, p.mu, p.b, p.c, cfg.sweep.alphas, cfg.continuation, cfg.newton)
        run.write_csv("alpha_sweep.csv", ["alpha", "err_u", "err_v", "err_w", "case", "converged", "max_u"],
                      [(r.alpha, r.err_u, r.err_v, r.err_w, r.case, r.converged, r.max_u) for r in rows])
        plot = Plot(title="large-flux sweep", xlabel="alpha", ylabel="error", logx=True, logy=True)
        plot.add([r.alpha for r in rows], [r.err_u for r in rows], "max|u - lam|", markers=True)
        plot.add([r.alpha for r in rows], [r.err_v for r in rows], "max v", markers=True)
        if any(np.isfinite(r.err_w) for r in rows):
            plot.add([r.alpha for r in rows], [r.err_w for r in rows], "max|alpha u - w|", markers=True)
        run.write_svg("alpha_sweep.svg", plot)
        run.summary.update({"rows": len(rows), "cases": [r.case for r in rows],
                            "converged": all(r.converged for r in rows)})
        return EXIT_OK
    if not p.mu > 0:
        run.summary["error"] = "lambda0 mode needs mu > 0"
        return EXIT_FAILURE
    s1 = sigma1_curve(g, p.b, p.mu)
    rows = lp2_scaling_probe(g, p.mu, p.b, [f * s1 for f in cfg.sweep.lam_factors], cfg.newton)
    fields = ["lam", "lam_wmax", "wmax", "s", "t", "phi_dev", "psi_norm", "vmin_over_lam",
              "vmax_over_lam", "harnack", "residual"]
    run.write_csv("lp2_scaling.csv", fields, [tuple(getattr(r, f) for f in fields) for r in rows])
    plot = Plot(title="limit system as lambda -> 0", xlabel="1/lambda", ylabel="max w",
                logx=True, logy=True)
    plot.add([1 / r.lam for r in rows], [r.wmax for r in rows], "max w", markers=True)
    run.write_svg("lp2_scaling.svg", plot)
    J, det = jacobian_base_point(g, p.b, p.mu)
    run.summary.update({"rows": len(rows), "slope": loglog_slope(rows) if len(rows) > 1 else None,
                        "jacobian": J, "det": det})
    return EXIT_OK


def cmd_verify(run: Run, args) -> int:
    from .acceptance import run_all

    numbers = None
    if args.criteria:
        from .acceptance import CRITERIA

        try:
            numbers = [int(x) for x in args.criteria.split(",")]
        except ValueError:
            numbers = []
        if not numbers or any(n not in CRITERIA for n in numbers):
            print(f"refugia: --criteria expects numbers from 1 to {len(CRITERIA)}", file=sys.stderr)
            run.summary["error"] = f"bad --criteria {args.criteria!r}"
            return EXIT_USAGE
    results = run_all(numbers, workers=worker_count())
    for r in results:
        print(r.line(), flush=True)
    run.write_csv("verify.csv", ["criterion", "title", "passed"],
                  [(r.number, r.title, r.passed) for r in results])
    run.summary.update({f"criterion_{r.number}": {"passed": r.passed, "seconds": round(r.seconds, 2),
                                                   **{k: _json_default(v) if not isinstance(v, (int, float, str, bool, list)) else v
                                                      for k, v in r.details.items()}}
                        for r in results})
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {
    "eig": cmd_eig,
    "regions": cmd_regions,
    "steady": cmd_steady,
    "continue": cmd_continue,
    "evolve": cmd_evolve,
    "asymptotics": cmd_asymptotics,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="refugia", description="Predator-prey steady states with a prey refuge.")
    ap.add_argument("--version", action="version", version=f"refugia {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, help_, config_required=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=config_required, help="TOML or JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides the configuration)")
        return sp

    sp = add("eig", "principal eigenvalue curve sigma1(b mu) as a CSV")
    sp.add_argument("--mu-grid", type=parse_range, help="a:b:n or a:b:n:log")
    sp = add("regions", "classify a (lambda, mu) grid against the threshold curves")
    sp.add_argument("--lambda", dest="lam", type=parse_range)
    sp.add_argument("--mu", type=parse_range)
    sp.add_argument("--alpha", type=float)
    sp = add("steady", "multistart Newton for steady states")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--starts", type=int)
    sp = add("continue", "trace a bifurcating branch")
    sp.add_argument("--from", dest="source", choices=["gamma-v", "gamma-u", "lp2"], required=True)
    sp = add("evolve", "integrate the time-dependent system")
    sp.add_argument("--T", type=float)
    sp.add_argument("--snapshots", type=int)
    sp = add("asymptotics", "large-flux sweep or small-lambda probe")
    sp.add_argument("--mode", choices=["alpha", "lambda0"], required=True)
    sp = add("verify", "run the acceptance checks", config_required=False)
    sp.add_argument("--criteria", help="comma-separated criterion numbers")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    cfg = None
    if args.config is not None:
        try:
            cfg = parse_config(args.config)
        except ConfigError as exc:
            print(f"refugia: configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    out = Path(args.out or (cfg.output if cfg is not None else "refugia_out")) / args.command
    run = Run(cfg, args.command, out, argv)
    try:
        code = COMMANDS[args.command](run, args)
    except RefugiaError as exc:
        print(f"refugia: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.summary["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_FAILURE
    return run.finish(code)


if __name__ == "__main__":
    sys.exit(main())
