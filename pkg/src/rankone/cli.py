"""Declarative experiment runner.

One JSON spec file describes one run: the construction(s), the experiment,
and its parameters.  Artifacts (CSV for scans, JSON for reports) are written
to the output directory with a header that echoes the fully resolved
configuration, the seed, and the library version, so identical specs produce
byte-identical artifacts.  Failures exit nonzero with a machine-readable
error class on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import __version__
from .construction import (
    Construction,
    params_from_spec,
    pair_with_offset_one,
    realize,
    tensor_power,
)
from .errors import ConfigError, RankOneError
from .estimators import (
    default_family,
    estimate_alpha,
    estimate_alpha_product,
    estimate_rho,
    beta_lower_bound,
    mild_mixing_audit,
    product_beta_tower,
    rigidity_mass,
)
from .joinings import (
    Joining,
    mu2_component_audit,
    relative_product,
    strip_audit,
)
from .operators import weak_limit_scan
from .symbolic import LevelSet, correlation, tower_name

EXIT_CODES = {
    "CONFIG_ERROR": 2,
    "DOMAIN_ERROR": 3,
    "BUDGET_ERROR": 4,
    "INFEASIBLE": 4,
    "FIT_ERROR": 5,
    "INTERNAL_ERROR": 1,
}


def _fail(error_class: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error_class": error_class, "message": message}) + "\n")
    return EXIT_CODES.get(error_class, 1)


def _load_spec(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec is not valid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise ConfigError("spec must be a JSON object")
    return spec


def _resolved_header(spec: dict, seed: int, k_policy) -> dict:
    return {
        "config": spec,
        "seed": seed,
        "k_policy": "auto" if k_policy is None else k_policy,
        "version": __version__,
    }


def _write_json(path: Path, header: dict, body: dict) -> None:
    payload = dict(header)
    payload["result"] = body
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: dict, columns: list[str], rows: list[list]) -> None:
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(str(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _get(spec: dict, key: str, default=None, required: bool = False):
    if required and key not in spec:
        raise ConfigError(f"missing required spec field {key!r}")
    return spec.get(key, default)


def _build_construction(spec: dict, seed: int) -> Construction:
    cons = _get(spec, "construction", required=True)
    if not isinstance(cons, dict):
        raise ConfigError("'construction' must be an object")
    return realize(params_from_spec(cons, default_seed=seed))


def _level_set(obj, stage: int) -> LevelSet:
    if not isinstance(obj, list) or not obj:
        raise ConfigError("level sets must be nonempty index lists")
    return LevelSet(stage, tuple(int(i) for i in obj))


def _times(obj) -> list[int]:
    if isinstance(obj, dict):
        start = int(obj.get("start", 0))
        stop = int(obj["stop"])
        step = int(obj.get("step", 1))
        return list(range(start, stop, step))
    if isinstance(obj, list):
        return [int(t) for t in obj]
    raise ConfigError("'times' must be a list or {start, stop, step}")


def _joining_from_spec(obj) -> Joining:
    if not isinstance(obj, dict):
        raise ConfigError("joining spec must be an object")
    if "relative_square_of" in obj:
        inner = _joining_from_spec(obj["relative_square_of"])
        return relative_product(inner, inner)
    diag = {int(z): Fraction(str(w)) for z, w in obj.get("diag", {}).items()}
    product = Fraction(str(obj.get("product", 0)))
    return Joining.mixture(diag, product)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _run_realize(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    body = c.report()
    body["fingerprint"] = c.fingerprint()
    _write_json(out_dir / "realize.json", _resolved_header(spec, seed, k_policy), body)
    return ["realize.json"]


def _run_name(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    p = _get(spec, "parameters", {})
    j = int(p.get("base_stage", 0))
    K = int(p.get("top_stage", min(c.max_stage, j + 3)))
    limit = int(p.get("limit", 4096))
    nm = tower_name(c, j, K)
    header = _resolved_header(spec, seed, k_policy)
    if nm.is_materialized:
        symbols = nm.materialized()[:limit]
        text = " ".join("*" if s < 0 else str(int(s)) for s in symbols)
        truncated = nm.length > limit
    else:
        text = " ".join("*" if s < 0 else str(int(s)) for s in nm.prefix())
        truncated = True
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines.append(f"# base_stage={j} top_stage={K} length={nm.length} truncated={truncated}")
    lines.append(text)
    (out_dir / "name.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ["name.txt"]


def _run_correlate(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    p = _get(spec, "parameters", {})
    j = int(p.get("stage", 1))
    A = _level_set(p.get("first", [0]), j)
    B = _level_set(p.get("second", list(A.indices)), j)
    times = _times(_get(p, "times", {"start": 0, "stop": 65}))
    K = k_policy

    def one(n):
        return n, correlation(c, A, B, n, K=K)

    times = sorted(set(times))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, times))
    else:
        results = [one(n) for n in times]
    rows = []
    for n, cv in results:
        rows.append(
            [
                n,
                repr(float(cv.value)),
                f"{cv.value.numerator}/{cv.value.denominator}",
                repr(float(cv.error_bound)),
                f"{cv.error_bound.numerator}/{cv.error_bound.denominator}",
                cv.stage_used,
            ]
        )
    _write_csv(
        out_dir / "correlate.csv",
        _resolved_header(spec, seed, k_policy),
        ["n", "value", "value_exact", "error_bound", "error_bound_exact", "stage_used"],
        rows,
    )
    return ["correlate.csv"]


def _run_scan(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    p = _get(spec, "parameters", {})
    j = int(p.get("stage", 1))
    Z = int(p.get("Z", 1))
    times = sorted(set(_times(_get(p, "times", required=True))))
    scan = weak_limit_scan(c, j, times, Z=Z, K=k_policy)
    labels = list(scan.reports[0].coefficients.keys()) if scan.reports else []
    rows = []
    for n, rep in zip(times, scan.reports):
        rows.append([n] + [repr(rep.coefficients[l]) for l in labels] + [repr(rep.residual_norm)])
    _write_csv(
        out_dir / "scan.csv",
        _resolved_header(spec, seed, k_policy),
        ["n"] + [f"c_{l}" for l in labels] + ["residual"],
        rows,
    )
    summary = {
        "rigidity_candidate": scan.rigidity_candidate,
        "max_identity_coefficient": scan.max_identity_coefficient,
        "min_theta_coefficient": scan.min_theta_coefficient,
    }
    _write_json(out_dir / "scan.json", _resolved_header(spec, seed, k_policy), summary)
    return ["scan.csv", "scan.json"]


def _run_estimate(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    p = _get(spec, "parameters", {})
    quantity = _get(p, "quantity", required=True)
    j = int(p.get("stage", 1))
    cap = int(p.get("family_cap", 64))
    fam = default_family(c, j, cap=cap)
    if quantity == "alpha":
        rep = estimate_alpha(c, fam, _times(_get(p, "times", required=True)), K=k_policy)
        body = rep.to_dict()
    elif quantity == "rho":
        rep = estimate_rho(c, fam, _times(_get(p, "times", required=True)), K=k_policy)
        body = rep.to_dict()
    elif quantity == "beta":
        body = beta_lower_bound(c, j).to_dict()
        body["rigidity_mass"] = str(rigidity_mass(c, j, K=k_policy))
    elif quantity == "mild":
        rep = mild_mixing_audit(
            c,
            fam,
            _times(_get(p, "times", required=True)),
            threshold=float(p.get("threshold", 0.2)),
            K=k_policy,
        )
        body = rep.to_dict()
    else:
        raise ConfigError(f"unknown estimate quantity {quantity!r}")
    _write_json(out_dir / f"estimate_{quantity}.json", _resolved_header(spec, seed, k_policy), body)
    return [f"estimate_{quantity}.json"]


def _run_audit(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    p = _get(spec, "parameters", {})
    kind = _get(p, "kind", required=True)
    j = int(p.get("stage", 1))
    artifacts = []
    if kind == "strip":
        nu = _joining_from_spec(_get(p, "joining", required=True))
        epsilons = [Fraction(str(e)) for e in p.get("epsilons", ["0.05", "0.1", "0.2", "0.4"])]
        reports = [strip_audit(c, nu, j, eps, K=k_policy).to_dict() for eps in epsilons]
        body = {"kind": "strip", "reports": reports}
        rows = [
            [r["epsilon"], r["stage"], r["eta_D"], r["bound"], r["margin"], r["pass"]]
            for r in reports
        ]
        _write_csv(
            out_dir / "audit_strip.csv",
            _resolved_header(spec, seed, k_policy),
            ["epsilon", "stage", "eta_D", "bound", "margin", "pass"],
            rows,
        )
        artifacts.append("audit_strip.csv")
    elif kind == "component":
        nu = _joining_from_spec(_get(p, "joining", required=True))
        eps = Fraction(str(p.get("epsilon", "0.2")))
        rep = mu2_component_audit(c, nu, j, eps, K=k_policy)
        body = {"kind": "component", "report": rep.to_dict()}
    elif kind == "relative-product":
        left = _joining_from_spec(_get(p, "left", required=True))
        right = _joining_from_spec(_get(p, "right", required=True))
        eta = relative_product(left, right)
        body = {
            "kind": "relative-product",
            "weights": eta.weights_dict(),
            "diagonal_component": str(eta.diag_weight(0)),
            "symmetric_square": eta.symmetric_square,
        }
    else:
        raise ConfigError(f"unknown audit kind {kind!r}")
    _write_json(out_dir / f"audit_{kind}.json", _resolved_header(spec, seed, k_policy), body)
    artifacts.append(f"audit_{kind}.json")
    return artifacts


def _run_product(spec, seed, k_policy, out_dir, threads):
    c = _build_construction(spec, seed)
    p = _get(spec, "parameters", {})
    j = int(p.get("stage", 1))
    pair_cuts = p.get("pair_cut_counts")
    if pair_cuts is None:
        pair_cuts = []
        for m in range(c.max_stage):
            r = c.cut_count(m)
            while r > 2 and (c.heights[m + 1] + 1) - r * (c.heights[m] + 1) < 0:
                r -= 1
            pair_cuts.append(r)
    companion = pair_with_offset_one(c, [int(r) for r in pair_cuts])
    tower = product_beta_tower(c, companion, j)
    body = {"tower": tower.to_dict()}
    if "alpha_times" in p:
        ps = tensor_power([c, companion])
        cap = int(p.get("family_cap", 8))
        fams = [default_family(c, j, cap=cap), default_family(companion, j, cap=cap)]
        rep = estimate_alpha_product(ps, fams, _times(p["alpha_times"]), Ks=[k_policy, k_policy])
        body["product_alpha"] = rep.to_dict()
        factor_reports = [
            estimate_alpha(c, fams[0], _times(p["alpha_times"]), K=k_policy).to_dict(),
            estimate_alpha(companion, fams[1], _times(p["alpha_times"]), K=k_policy).to_dict(),
        ]
        body["factor_alphas"] = factor_reports
    _write_json(out_dir / "product.json", _resolved_header(spec, seed, k_policy), body)
    return ["product.json"]


EXPERIMENTS = {
    "realize": _run_realize,
    "name": _run_name,
    "correlate": _run_correlate,
    "scan": _run_scan,
    "estimate": _run_estimate,
    "audit": _run_audit,
    "product": _run_product,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankone",
        description="Run cutting-and-stacking experiments from a JSON spec.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--spec", required=True, help="path to the experiment spec (JSON)")
        p.add_argument("--out-dir", default=".", help="directory for artifacts")
        p.add_argument("--seed", type=int, default=None, help="override the spec seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for scans")
        p.add_argument(
            "--k-policy",
            default="auto",
            help="working stage: 'auto' or an explicit stage index",
        )
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = _load_spec(args.spec)
        declared = spec.get("experiment")
        if declared is not None and declared != args.command:
            raise ConfigError(
                f"spec declares experiment {declared!r} but {args.command!r} was invoked"
            )
        seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
        if args.k_policy == "auto":
            k_policy = None
        else:
            try:
                k_policy = int(args.k_policy)
            except ValueError:
                raise ConfigError("--k-policy must be 'auto' or an integer") from None
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        artifacts = EXPERIMENTS[args.command](spec, seed, k_policy, out_dir, args.threads)
        summary = [
            f"experiment: {args.command}",
            f"seed: {seed}",
            f"k_policy: {'auto' if k_policy is None else k_policy}",
            f"version: {__version__}",
            "artifacts: " + ", ".join(sorted(artifacts)),
        ]
        (out_dir / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
        artifacts = sorted(artifacts) + ["summary.txt"]
    except RankOneError as exc:
        return _fail(exc.exit_class, str(exc))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return _fail("CONFIG_ERROR", f"{type(exc).__name__}: {exc}")
    sys.stdout.write(
        json.dumps({"status": "ok", "artifacts": artifacts}, sort_keys=True) + "\n"
    )
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
