"""Command-line entry point: ``umbilic-yamabe <command> [options]``.

Exit codes: 0 success, 1 inconclusive when ``--require-demonstrated`` is set
(or a failed verification), 2 malformed input.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import symtensor as st
from .bubble import sphere_constant

TOLERANCES = {
    "version": 1,
    "verdict_budget_factor": 5.0,
    "green_tol": 1e-10,
    "green_rcond": 1e-10,
    "gauge_cond_max": 1e15,
}

SUMMARY_COLUMNS = ["epsilon", "delta", "E", "Y", "margin", "budget", "verdict"]
FLUX_COLUMNS = ["delta", "flux", "green_part", "metric_part"]
ENERGY_COLUMNS = ["epsilon", "delta", "J", "J_se", "direct", "direct_se", "reconstruction_gap", "lam_hat"]


class ConfigError(ValueError):
    """Malformed configuration; the message starts with the offending field."""


# ---------------------------------------------------------------------------
# config helpers


def _field(cfg, key, kind, default=None, path="", required=False, check=None):
    where = f"{path}.{key}" if path else key
    if key not in cfg:
        if required:
            raise ConfigError(f"{where}: required field missing")
        return default
    v = cfg[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"{where}: expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    if check is not None and not check(v):
        raise ConfigError(f"{where}: value {v!r} out of range")
    return v


def _float_list(cfg, key, default, path="", positive=True):
    v = _field(cfg, key, list, default, path)
    where = f"{path}.{key}" if path else key
    out = []
    for j, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{where}[{j}]: expected a number")
        if positive and not x > 0:
            raise ConfigError(f"{where}[{j}]: must be positive")
        out.append(float(x))
    return out


def load_tensor(spec, path="coeffs"):
    """A CoeffSet JSON, or ``{"example": name, "n": n, ...}``.

    Named examples: ``standard``, ``standard-cubic``, ``flat``, ``random``.
    """
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected an object")
    if "example" in spec:
        name = spec["example"]
        n = _field(spec, "n", int, 6, path, check=lambda v: v >= 5)
        if name == "standard":
            return st.standard_example(n)
        if name == "standard-cubic":
            return st.standard_cubic_example(n)
        if name == "flat":
            return st.CoeffSet(n, max(2, st.degree_cap(n)), {})
        if name == "random":
            d = _field(spec, "d", int, None, path)
            seed = _field(spec, "seed", int, 0, path)
            return st.random_admissible(n, d, seed=seed, nblocks=None)
        raise ConfigError(f"{path}.example: unknown example {name!r}")
    try:
        return st.CoeffSet.from_json(spec)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}.{exc}") from exc


def _quadrature(cfg, path, default):
    from .quadrature import QuadratureSpec
    q = _field(cfg, "quadrature", dict, {}, path)
    p = f"{path}.quadrature" if path else "quadrature"
    return QuadratureSpec(
        mode=_field(q, "mode", str, default.mode, p, check=lambda v: v in ("radial-mc", "exact-moment")),
        samples=_field(q, "samples", int, default.samples, p, check=lambda v: v >= 2),
        seed=_field(q, "seed", int, default.seed, p),
        panels=_field(q, "panels", int, default.panels, p, check=lambda v: v >= 1),
        order=_field(q, "order", int, default.order, p, check=lambda v: v >= 2),
    )


def content_hash(obj) -> str:
    """Git-style blob hash of the canonical JSON encoding."""
    data = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _envelope(command, resolved, result):
    return {
        "command": command,
        "version": __version__,
        "config": resolved,
        "input_hash": content_hash(resolved),
        "tolerances": TOLERANCES,
        "result": _clean(result),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])
    return buf.getvalue()


class _Output:
    def __init__(self, out: str | None, stdout):
        self.dir = Path(out) if out else None
        self.stdout = stdout
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def json(self, name, obj):
        text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
        if self.dir:
            (self.dir / name).write_text(text)
        else:
            self.stdout.write(text)

    def csv(self, name, columns, rows):
        if self.dir:
            (self.dir / name).write_text(_csv_text(columns, rows))


def _read_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"--config: cannot read {path} ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--config: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("--config: top level must be an object")
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_verify(args, out):
    n, d, cases, seed = args.n, args.d, args.cases, args.seed
    if n < 6 or not 2 <= d <= st.degree_cap(n):
        raise ConfigError(f"--d: need 2 <= d <= {st.degree_cap(n)} for n = {n} (and n >= 6)")
    rows = []
    ok = True
    for j in range(cases):
        c = st.random_admissible(n, d, seed=seed + j)
        H = st.make_H(c)
        adm = st.check_admissible(H)
        div = st.divergence_identity_residual(H)
        bnd = st.boundary_A_normal(H)
        good = adm.ok and not div.nonzero() and all(p.is_zero for p in bnd)
        ok &= good
        rows.append({"case": j, "seed": seed + j, "admissible": adm.ok,
                     "divergence_identity_zero": not div.nonzero(),
                     "boundary_A_in_zero": all(p.is_zero for p in bnd),
                     "offending": sorted(str(k) for k in div.nonzero())[:10]})
    resolved = {"n": n, "d": d, "cases": cases, "seed": seed}
    out.json("verify.json", _envelope("verify", resolved, {"passed": ok, "cases": rows}))
    return 0 if ok else 1


def cmd_constants(args, out):
    if args.n < 3:
        raise ConfigError("--n: need n >= 3")
    sc = sphere_constant(args.n, mode=args.mode, samples=args.samples, seed=args.seed)
    resolved = {"n": args.n, "mode": args.mode, "samples": args.samples, "seed": args.seed}
    out.json("constants.json", _envelope("constants", resolved, sc.to_json()))
    return 0


def _solve_v_cfg(cfg):
    H = load_tensor(_field(cfg, "coeffs", dict, required=True))
    return {
        "H": H,
        "scale": _field(cfg, "scale", float, 1.0),
        "epsilon": _field(cfg, "epsilon", float, required=True, check=lambda v: v > 0),
        "delta": _field(cfg, "delta", float, required=True, check=lambda v: v > 0),
        "degree": _field(cfg, "degree", int, 3, check=lambda v: v >= 1),
        "seed": _field(cfg, "seed", int, 0),
    }


def cmd_solve_v(args, out):
    from .gauge import solve_V, strong_residual, boundary_lemma_check
    cfg = _read_config(args.config)
    p = _solve_v_cfg(cfg)
    if p["delta"] < 2 * p["epsilon"]:
        raise ConfigError("delta: must be at least 2 * epsilon")
    sol = solve_V(p["H"], p["epsilon"], p["delta"], p["degree"], scale=p["scale"])
    sr = strong_residual(sol, seed=p["seed"])
    report = {"solution": sol.to_json(),
              "residuals": {"strong_rms": sr.rms, "strong_relative": sr.relative,
                            "contracted_mismatch": sr.contracted_mismatch,
                            "boundary": boundary_lemma_check(sol, seed=p["seed"])}}
    resolved = dict(cfg, scale=p["scale"], degree=p["degree"], seed=p["seed"])
    out.json("solve_v.json", _envelope("solve-v", resolved, report))
    return 0


def _green_cfg(cfg):
    H = load_tensor(_field(cfg, "coeffs", dict, required=True))
    R = _field(cfg, "support_radius", float, 5.0 / 3.0, check=lambda v: v > 0)
    rho0 = 3.0 * R / 5.0
    return {
        "H": H, "scale": _field(cfg, "scale", float, 1.0), "support_radius": R, "rho0": rho0,
        "tol": _field(cfg, "tol", float, TOLERANCES["green_tol"], check=lambda v: v > 0),
        "samples": _field(cfg, "samples", int, 400, check=lambda v: v >= 2),
        "seed": _field(cfg, "seed", int, 0),
        "flux_deltas": _float_list(cfg, "flux_deltas", [rho0 * 0.2 / 2 ** k for k in range(6)]),
        "phi_samples": _field(cfg, "phi_samples", int, 50, check=lambda v: v >= 0),
    }


def _solve_green(p):
    from .green import solve_green
    from .quadrature import QuadratureSpec
    spec = QuadratureSpec(samples=p["samples"], panels=16, order=8, seed=p["seed"])
    return solve_green(p["H"], p["scale"], p["rho0"], tol=p["tol"], spec=spec, seed=p["seed"])


def cmd_green(args, out):
    from .green import flux_convergence, flux_integral
    cfg = _read_config(args.config)
    p = _green_cfg(cfg)
    if any(d > 4 * p["rho0"] / 3 for d in p["flux_deltas"]):
        raise ConfigError("flux_deltas: every delta must be at most 4/5 of support_radius")
    Gm = _solve_green(p)
    fc = flux_convergence(Gm, p["flux_deltas"])
    rows = []
    for d in p["flux_deltas"]:
        fv = flux_integral(Gm, d)
        rows.append({"delta": d, "flux": fv.total, "green_part": fv.green_part, "metric_part": fv.metric_part})
    resolved = {k: v for k, v in p.items() if k != "H"}
    resolved["coeffs"] = cfg["coeffs"]
    out.json("green.json", _envelope("green", resolved,
                                     {"model": Gm.to_json(p["phi_samples"], p["seed"]), "flux": fc.to_json()}))
    out.csv("flux.csv", FLUX_COLUMNS, rows)
    return 0


def cmd_energy(args, out):
    from .energy import j_decomposition, integrated_estimate
    from .gauge import solve_V
    from .quadrature import QuadratureSpec
    cfg = _read_config(args.config)
    H = load_tensor(_field(cfg, "coeffs", dict, required=True))
    scale = _field(cfg, "scale", float, 1.0)
    delta = _field(cfg, "delta", float, required=True, check=lambda v: v > 0)
    if "epsilon" in cfg:
        eps_list = [_field(cfg, "epsilon", float, check=lambda v: v > 0)]
    else:
        eps_list = _float_list(cfg, "epsilons", None)
        if not eps_list:
            raise ConfigError("epsilon: required field missing (or give a non-empty epsilons list)")
    for j, e in enumerate(eps_list):
        if 2 * e > delta:
            raise ConfigError(f"epsilons[{j}]: must be at most delta/2")
    degree = _field(cfg, "degree", int, 3, check=lambda v: v >= 1)
    spec = _quadrature(cfg, "", QuadratureSpec(samples=2000, panels=12, order=8))
    reports, rows = [], []
    for e in eps_list:
        sol = solve_V(H, e, delta, degree, scale=scale)
        br = j_decomposition(sol, spec=spec)
        ie = integrated_estimate(sol)
        reports.append({"epsilon": e, "delta": delta, "breakdown": br.to_json(), "integrated": ie.to_json()})
        rows.append({"epsilon": e, "delta": delta, "J": br.J, "J_se": br.J_se, "direct": br.direct,
                     "direct_se": br.direct_se, "reconstruction_gap": br.reconstruction_gap,
                     "lam_hat": ie.lam_hat})
    resolved = dict(cfg, scale=scale, degree=degree, quadrature=spec.to_json(), epsilons=eps_list)
    resolved.pop("epsilon", None)
    out.json("energy.json", _envelope("energy", resolved, {"points": reports}))
    out.csv("energy.csv", ENERGY_COLUMNS, rows)
    return 0


def _compare_cfg(cfg, path=""):
    from .quadrature import QuadratureSpec
    H = load_tensor(_field(cfg, "coeffs", dict, required=True, path=path), f"{path}.coeffs" if path else "coeffs")
    rho0 = _field(cfg, "rho0", float, 1.0, path, check=lambda v: v > 0)
    mode = _field(cfg, "mode", str, "nondegenerate", path, check=lambda v: v in ("nondegenerate", "degenerate"))
    grid = _field(cfg, "grid", dict, {}, path)
    gp = f"{path}.grid" if path else "grid"
    deltas = _float_list(grid, "deltas", [rho0 / 4, rho0 / 8, rho0 / 16], gp)
    ratios = _float_list(grid, "eps_over_delta", [1 / 2, 1 / 4, 1 / 8, 1 / 16], gp)
    for j, r in enumerate(ratios):
        if r > 0.5:
            raise ConfigError(f"{gp}.eps_over_delta[{j}]: must be at most 1/2")
    for j, d in enumerate(deltas):
        if d > 4 * rho0 / 3:
            raise ConfigError(f"{gp}.deltas[{j}]: must be at most 4 rho0 / 3")
    return {
        "H": H, "scale": _field(cfg, "scale", float, 1.0, path), "rho0": rho0, "mode": mode,
        "deltas": deltas, "eps_over_delta": ratios,
        "degree": _field(cfg, "degree", int, 3, path, check=lambda v: v >= 1),
        "green_samples": _field(cfg, "green_samples", int, 400, path, check=lambda v: v >= 2),
        "seed": _field(cfg, "seed", int, 0, path),
        "quadrature": _quadrature(cfg, path, QuadratureSpec(samples=200, panels=16, order=8)),
        "stop_early": _field(cfg, "stop_early", bool, False, path),
        "flux_deltas": _float_list(cfg, "flux_deltas", [rho0 * 0.1 / 2 ** k for k in range(5)], path),
        "negate_flux": _field(cfg, "negate_flux", bool, False, path),
    }


def _run_compare(p, threads=1):
    from .comparator import (run_point, theorem_check_degenerate, TheoremVerdict, DEMONSTRATED,
                             INCONCLUSIVE, BUDGET_FACTOR, negated)
    from .green import flux_convergence
    gp = {"H": p["H"], "scale": p["scale"], "rho0": p["rho0"], "tol": TOLERANCES["green_tol"],
          "samples": p["green_samples"], "seed": p["seed"]}
    Gm = _solve_green(gp)
    spec = replace(p["quadrature"], seed=p["seed"])
    if p["mode"] == "degenerate":
        fc = flux_convergence(Gm, p["flux_deltas"])
        if p["negate_flux"]:
            fc = negated(fc)
        return theorem_check_degenerate(p["H"], p["scale"], p["rho0"], deltas=p["deltas"],
                                        eps_ratios=p["eps_over_delta"], D=p["degree"], spec=spec,
                                        green=Gm, flux=fc)
    grid = [(d * r, d) for d in p["deltas"] for r in p["eps_over_delta"]]

    def one(pt):
        return run_point(p["H"], p["scale"], pt[0], pt[1], Gm, p["degree"], spec)

    reports = []
    if p["stop_early"] or threads <= 1:
        for pt in grid:
            reports.append(one(pt))
            if p["stop_early"] and reports[-1].verdict == DEMONSTRATED:
                break
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reports = list(ex.map(one, grid))
    demo = [r for r in reports if r.verdict == DEMONSTRATED]
    if demo:
        best = max(demo, key=lambda r: r.margin / r.total_budget if r.total_budget > 0 else math.inf)
        return TheoremVerdict(DEMONSTRATED, best, reports)
    best = max(reports, key=lambda r: r.margin - BUDGET_FACTOR * r.total_budget)
    return TheoremVerdict(INCONCLUSIVE, best, reports)


def _summary_rows(reports):
    return [{"epsilon": r.eps, "delta": r.delta, "E": r.E, "Y": r.Y, "margin": r.margin,
             "budget": r.total_budget, "verdict": r.verdict} for r in reports]


def _resolved_compare(cfg, p):
    r = {k: v for k, v in p.items() if k not in ("H", "quadrature")}
    r["quadrature"] = p["quadrature"].to_json()
    r["coeffs"] = cfg["coeffs"]
    return r


def cmd_compare(args, out):
    from .comparator import DEMONSTRATED
    cfg = _read_config(args.config)
    p = _compare_cfg(cfg)
    tv = _run_compare(p, args.threads)
    resolved = _resolved_compare(cfg, p)
    out.json("compare.json", _envelope("compare", resolved, tv.to_json()))
    out.csv("summary.csv", SUMMARY_COLUMNS, _summary_rows(tv.reports))
    if args.require_demonstrated and tv.verdict != DEMONSTRATED:
        return 1
    return 0


def cmd_sweep(args, out):
    """Margin against scale: one compare run per scale, plus the fit margin ~ a t^2 - b t."""
    from .comparator import DEMONSTRATED
    cfg = _read_config(args.config)
    scales = _float_list(cfg, "scales", None, positive=False)
    if not scales:
        raise ConfigError("scales: required non-empty list")
    base = _compare_cfg(cfg)
    runs, rows, best = [], [], []
    for t in scales:
        p = dict(base, scale=t)
        tv = _run_compare(p, args.threads)
        runs.append({"scale": t, **tv.to_json()})
        for r in _summary_rows(tv.reports):
            rows.append({"scale": t, **r})
        best.append(tv.best.margin if tv.best else float("nan"))
    fit = None
    t = np.array(scales)
    m = np.array(best)
    if len(scales) >= 2 and np.all(np.isfinite(m)):
        coef, *_ = np.linalg.lstsq(np.stack([t ** 2, -t], axis=1), m, rcond=None)
        fit = {"a": float(coef[0]), "b": float(coef[1])}
    resolved = _resolved_compare(cfg, base)
    resolved.pop("scale", None)
    resolved["scales"] = scales
    out.json("sweep.json", _envelope("sweep", resolved, {"runs": runs, "best_margins": best, "fit": fit}))
    out.csv("sweep.csv", ["scale"] + SUMMARY_COLUMNS, rows)
    ok = any(r["verdict"] == DEMONSTRATED for r in runs)
    return 1 if args.require_demonstrated and not ok else 0


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="umbilic-yamabe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", help="output directory (default: JSON to stdout)")
        p.add_argument("--threads", type=int, default=1)
        if config:
            p.add_argument("--config", required=True, help="experiment config JSON")
        return p

    p = common(sub.add_parser("verify", help="exact identity suite on random admissible tensors"), False)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--cases", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p = common(sub.add_parser("constants", help="hemisphere Yamabe constant"), False)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--mode", choices=["exact-moment", "radial", "mc"], default="exact-moment")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    common(sub.add_parser("solve-v", help="gauge field and corrector"))
    common(sub.add_parser("green", help="Green's function and flux sweep"))
    common(sub.add_parser("energy", help="energy decomposition and integrated estimate"))
    for name, text in (("compare", "energy of the glued test function against the hemisphere constant"),
                       ("sweep", "compare over a list of scales")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--require-demonstrated", action="store_true",
                       help="exit 1 unless the inequality is demonstrated")
    return ap


COMMANDS = {"verify": cmd_verify, "constants": cmd_constants, "solve-v": cmd_solve_v, "green": cmd_green,
            "energy": cmd_energy, "compare": cmd_compare, "sweep": cmd_sweep}


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.threads < 1:
        stderr.write("error: --threads: must be >= 1\n")
        return 2
    try:
        out = _Output(args.out, stdout)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        stderr.write(f"error: {exc}\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
