"""Command-line front end: ``smalltime <command> SPEC [options]``.

Exit codes: 0 success, 2 bad input, 3 inconclusive verdict (``regular``),
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .control import ControlProblem, gramian, hormander_rank, malliavin_mc
from .numerics import NumericalError, dist_limit_check, euler_maruyama
from .propagation import SdeSystem, dist_scalings, invariant_report, lil_scalings, remainder
from .regular import check_regular, domain_from_json
from .saturation import realizability_report, saturate
from .scaling import check_epsilon

EXIT_OK, EXIT_PARSE, EXIT_INCONCLUSIVE, EXIT_NUMERICAL = 0, 2, 3, 4


class InputError(ValueError):
    pass


# input ----------------------------------------------------------------------

def corpus_path(name: str) -> Path:
    """Path of a bundled corpus file (``name`` may include a directory prefix)."""
    return Path(str(resources.files("smalltime") / "corpus" / Path(name).name))


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for name in (path, path + ".json"):
        bundled = corpus_path(name)
        if bundled.exists():
            return bundled
    raise InputError(f"{path}: no such file (also not in the bundled corpus)")


def _load_json(path: str):
    p = _resolve(path)
    text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def load_system(path: str) -> SdeSystem:
    obj = _load_json(path)
    try:
        return SdeSystem.from_json(obj)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_domain(path: str, n: int):
    obj = _load_json(path)
    try:
        return domain_from_json(obj, n)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _eps_list(text: str | None, default):
    if text is None:
        return list(default)
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
        for v in vals:
            check_epsilon(v)
    except ValueError as exc:
        raise InputError(f"--eps: {exc}") from exc
    if not vals:
        raise InputError("--eps: empty list")
    return vals


def _point(text: str | None, n: int):
    if text is None:
        return [0.0] * n
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InputError("--at: expected comma-separated numbers") from exc
    if len(vals) != n:
        raise InputError(f"--at: expected {n} numbers")
    return vals


# formatting -------------------------------------------------------------------

def _table(rows, header):
    cols = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cols) for k in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cols)


def _layers_line(res):
    return " | ".join("{" + ", ".join(f"x{j + 1}" for j in layer) + "}" for layer in res.layers)


# commands -------------------------------------------------------------------------

def cmd_classify(args, out):
    sysm = load_system(args.spec)
    lil, dist = lil_scalings(sysm), dist_scalings(sysm)
    rows = []
    for j in range(sysm.n):
        rows.append([f"x{j + 1}", lil.layer_of(j), str(lil.scalings[j]), str(dist.scalings[j]),
                     str(lil.limit_drift[j]), str(dist.limit_drift[j])])
    verdict = lil.verdict
    lines = [f"system: {sysm.name or args.spec}  (n = {sysm.n})", f"verdict: {verdict}"]
    lines.append(f"dim: {lil.dim}" if lil.propagating else f"stuck at layer {lil.stuck_layer}; uncovered: "
                 + ", ".join(f"x{j + 1}" for j in lil.uncovered))
    lines.append("layers: " + _layers_line(lil))
    lines.append(_table(rows, ["coord", "layer", "a (LIL)", "b (DIST)", "P_L", "P_D"]))
    diff = [f"x{j + 1}" for j in range(sysm.n) if lil.limit_drift[j] != dist.limit_drift[j]]
    if diff:
        lines.append("P_L and P_D differ in: " + ", ".join(diff))
    if lil.ties:
        lines.append("log ties at: " + ", ".join(f"x{j + 1}" for j in lil.ties))
    out.extend(lines)
    result = {"system": sysm.name, "n": sysm.n, "lil": lil.to_json(), "dist": dist.to_json(),
              "differ": diff}
    if lil.propagating:
        result["invariants"] = invariant_report(sysm)
    return result, EXIT_OK


def cmd_rescale(args, out):
    sysm = load_system(args.spec)
    res = lil_scalings(sysm) if args.mode == "lil" else dist_scalings(sysm)
    if not res.propagating:
        raise InputError("rescaling needs a noise-propagating system")
    eps = _eps_list(args.eps, (1e-2, 1e-3, 1e-4))
    rep = remainder(sysm, res, C=args.radius, eps_list=eps)
    out.append(f"mode: {res.mode}   limit drift: {res.limit_drift}")
    if rep.field.is_zero():
        out.append("remainder: 0")
    else:
        out.append("remainder terms (component, coefficient, monomial, eps-exponent):")
        for j, c, e, s in rep.field.terms:
            out.append(f"  x{j + 1}: {c} * x^{list(e)} * eps^{s}")
    out.append(_table([[e, f"{s:.6g}"] for e, s in rep.table], ["eps", f"sup |R| on |x| <= {args.radius}"]))
    out.append(f"vanishing: {rep.field.vanishes()}   decreasing: {rep.decreasing}")
    return {"mode": res.mode, "scalings": [s.to_json() for s in res.scalings], "remainder": rep.to_json(),
            "decreasing": rep.decreasing}, EXIT_OK


def cmd_simulate(args, out):
    sysm = load_system(args.spec)
    t = args.t
    x0 = _point(args.at, sysm.n)
    result = {"seed": args.seed, "t": t, "x0": x0}
    path = euler_maruyama(sysm, x0, t, args.dt, args.seed)
    result["final"] = [None if not np.isfinite(v) else float(v) for v in path.final]
    result["dead"] = path.dead
    out.append(f"Euler-Maruyama path to t = {t} with dt = {args.dt}: final state {result['final']}"
               + (f" (exploded at t = {path.death_time})" if path.dead else ""))
    if args.csv:
        _atomic_write(args.csv, lambda fh: path.to_csv(fh))
        out.append(f"path written to {args.csv}")
        result["csv"] = args.csv
    if args.eps:
        res = dist_scalings(sysm)
        if not res.propagating:
            raise InputError("the limit comparison needs a noise-propagating system")
        eps = _eps_list(args.eps, ())
        rep = dist_limit_check(sysm, res, eps, t=t, trials=args.trials, seed=args.seed)
        rows = [[r["eps"], f"{r['sup_median']:.4g}", f"{r['energy']:.4g}", f"{r['energy_pvalue']:.3f}"] for r in rep.rows]
        out.append(_table(rows, ["eps", "median sup |z-y|", "energy dist", "perm p"]))
        out.append(f"sup distance decreasing: {rep.sup_decreasing}")
        result["limit_check"] = rep.to_json()
    return result, EXIT_OK


def cmd_brackets(args, out):
    sysm = load_system(args.spec)
    x = _point(args.at, sysm.n)
    rep = hormander_rank(sysm.drift, sysm.sigma, x, depth=args.depth)
    out.append(f"bracket rank at {x} (depth {rep.depth}, {rep.n_fields} fields): {rep.rank} / {sysm.n}"
               + ("  spanning" if rep.spanning else ""))
    return rep.to_json(), EXIT_OK


def cmd_saturate(args, out):
    sysm = load_system(args.spec)
    controls = [tuple(1 if k == j else 0 for k in range(sysm.n)) for j in sysm.noise_indices]
    drift = sysm.drift
    if args.limit:
        res = dist_scalings(sysm)
        if not res.propagating:
            raise InputError("--limit needs a noise-propagating system")
        drift = res.limit_drift
    sat = saturate(drift, controls, max_steps=args.depth)
    for e in sat.trace:
        out.append(f"[{e['step']}] {e['rule']}: {e['element']}")
    d = sat.directions
    out.append("span: " + ", ".join("(" + ", ".join(str(c) for c in v) + ")" for v in d.span))
    if d.cone:
        out.append("cone: " + ", ".join("(" + ", ".join(str(c) for c in v) + ")" for v in d.cone))
    out.append(f"exact_controllable: {str(sat.exact_controllable).lower()}")
    if sat.exact_controllable:
        out.append(f"basis certificate: det = {sat.det}")
    result = sat.to_json()
    if args.check:
        if args.seed is None:
            raise InputError("--check needs --seed")
        checks = realizability_report(sat, seed=args.seed)
        result["realizability"] = checks
        out.append(f"realizability checks passed: {sum(c['ok'] for c in checks)} / {len(checks)}")
    return result, EXIT_OK


def cmd_gramian(args, out):
    sysm = load_system(args.spec)
    prob = ControlProblem(sysm.drift, sysm.sigma, _point(args.at, sysm.n))
    rep = gramian(prob, None, args.t, rel_tol=args.tol)
    G = rep.G
    out.append(f"G_t (t = {args.t}, zero control):")
    out.extend("  " + "  ".join(f"{v: .9f}" for v in row) for row in G)
    out.append(f"det = {rep.det:.9g}   min_eig = {rep.min_eig:.3g}   invertible: {rep.invertible}")
    result = {"gramian": rep.to_json()}
    if args.trials:
        if args.seed is None:
            raise InputError("--trials needs --seed")
        mc = malliavin_mc(prob, 1.0, args.t, args.trials, args.seed, rel_tol=args.tol)
        out.append(f"Malliavin covariance invertible in {mc.invertible_freq:.3f} of {args.trials} trials; "
                   f"Gramian cross-check {'ok' if mc.crosscheck_ok else 'FAILED'}")
        result["malliavin"] = mc.to_json()
    return result, EXIT_OK


def cmd_regular(args, out):
    sysm = load_system(args.spec)
    domain, point = load_domain(args.domain, sysm.n)
    rep = check_regular(sysm, point, domain, seed=args.seed, t=args.t, trials=args.trials)
    ev = rep.evidence
    out.append(f"boundary point: ({', '.join(ev['point'])})")
    prop = ev["propagation"]
    out.append(f"propagation: {prop['verdict']}")
    if "limit_domain" in ev:
        out.append(f"limit domain: {ev['limit_domain']['kind']}; O* = {ev['limit_domain']['target']}")
    if "containment" in ev:
        out.append(f"containment of O* at eps {ev['containment']['eps']}: {ev['containment']['ok']}")
    if "reachability" in ev:
        r = ev["reachability"]
        out.append(f"reachability via {r['method']}: " + ("exact controllability" if r["method"] == "saturation"
                                                          else ("found" if r["found"] else "not found")))
    out.append(f"verdict: {rep}")
    return rep.to_json(), EXIT_OK if rep.verdict == "Regular" else EXIT_INCONCLUSIVE


COMMANDS = {
    "classify": cmd_classify,
    "rescale": cmd_rescale,
    "simulate": cmd_simulate,
    "brackets": cmd_brackets,
    "saturate": cmd_saturate,
    "gramian": cmd_gramian,
    "regular": cmd_regular,
}


# plumbing ---------------------------------------------------------------------------

def _atomic_write(path: str, writer) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent if str(target.parent) else ".", prefix=".tmp-", suffix=target.suffix)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config(args) -> dict:
    keys = ("spec", "domain", "seed", "eps", "t", "trials", "depth", "tol", "at", "mode", "dt")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smalltime", description="Small-time scaling analysis of polynomial SDEs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, stochastic=False):
        sp.add_argument("spec", help="system spec (JSON); bare corpus names are accepted")
        sp.add_argument("--json", metavar="OUT", help="write the report as JSON")
        sp.add_argument("--seed", type=int, required=stochastic, help="RNG seed")
        return sp

    sp = common(sub.add_parser("classify", help="LIL and distributional scalings side by side"))
    sp = common(sub.add_parser("rescale", help="remainder of the rescaled drift"))
    sp.add_argument("--mode", choices=("lil", "dist"), default="dist")
    sp.add_argument("--eps", help="comma-separated eps values")
    sp.add_argument("--radius", type=float, default=1.0)
    sp = common(sub.add_parser("simulate", help="Euler-Maruyama path and limit comparison"), stochastic=True)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--at", help="initial point (comma-separated)")
    sp.add_argument("--eps", help="run the distributional-limit comparison at these eps")
    sp.add_argument("--trials", type=int, default=2000)
    sp.add_argument("--csv", help="write the path as CSV")
    sp = common(sub.add_parser("brackets", help="rank of the bracket list at a point"))
    sp.add_argument("--depth", type=int)
    sp.add_argument("--at", help="evaluation point (comma-separated)")
    sp = common(sub.add_parser("saturate", help="saturation of (drift; noise directions)"))
    sp.add_argument("--depth", type=int, help="maximal number of steps (default 2n)")
    sp.add_argument("--limit", action="store_true", help="use the distributional limit drift")
    sp.add_argument("--check", action="store_true", help="run numerical realizability checks")
    sp = common(sub.add_parser("gramian", help="controllability Gramian along the uncontrolled flow"))
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--tol", type=float, default=1e-8, help="relative eigenvalue tolerance")
    sp.add_argument("--at", help="initial point (comma-separated)")
    sp.add_argument("--trials", type=int, help="also run Malliavin Monte Carlo (needs --seed)")
    sp = common(sub.add_parser("regular", help="regular-point criterion for a domain"), stochastic=True)
    sp.add_argument("domain", help="domain spec (JSON)")
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--trials", type=int, default=10_000)
    return p


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    out: list[str] = []
    try:
        result, code = COMMANDS[args.command](args, out)
    except InputError as exc:
        print(f"smalltime {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NumericalError as exc:
        print(f"smalltime {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print("\n".join(out), file=stdout)
    if args.json:
        report = {"command": args.command, "version": __version__, "config": _config(args), "result": result}
        _atomic_write(args.json, lambda fh: json.dump(report, fh, indent=2, default=_jsonable))
    return code


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return str(obj)


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
