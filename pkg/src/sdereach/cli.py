"""Command-line entry points: certify bounds, estimate by simulation, compare both.

Exit codes: 0 on success (including "no certificate found" and runs that are
waiting on an external solver), 2 on validation errors (bad model file, bad
kind/degree/flag combinations), 3 when the SDP solver fails numerically.

Reports are deterministic JSON: keys sorted, floats in repr form, and all
wall-clock measurements confined to the top-level "timings" key so two runs
with the same inputs and seed agree byte-for-byte everywhere else.
"""

import argparse
import json
import sys
import time

from . import certificates as certs
from . import oracle
from .model import ModelError, load_model
from .sos import SosError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

_DEFAULT_KINDS = {"horizon": "HU1,HU2,HL1", "instant": "IU1,IU2,IL1"}


def _parse_backend(text):
    if text == "inprocess":
        return "in_process", None
    if text.startswith("sdpa:") and len(text) > 5:
        return "file_exchange", text[5:]
    raise ValueError(
        f"backend must be 'inprocess' or 'sdpa:<dir>', got {text!r}")


def _parse_alpha_grid(text):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ValueError(f"bad --alpha-grid {text!r}: expected comma-separated numbers")
    if not values:
        raise ValueError("--alpha-grid must contain at least one value")
    return values


def _add_cert_flags(p):
    p.add_argument("--kind", help="certificate kind tag, e.g. HU2")
    p.add_argument("--deg-v", type=int, default=4, help="template degree of v (default 4)")
    p.add_argument("--deg-w", type=int, default=4,
                   help="template degree of the auxiliary w (default 4)")
    p.add_argument("--deg-mult", type=int, default=None,
                   help="uniform SOS multiplier degree (default: per-constraint)")
    p.add_argument("--alpha-grid", default=None,
                   help="comma-separated alpha values (default: built-in grid)")
    p.add_argument("--backend", default="inprocess",
                   help="'inprocess' or 'sdpa:<dir>' for file exchange (default inprocess)")
    p.add_argument("--eps", type=float, default=1e-6,
                   help="strict-positivity margin subtracted from each target (default 1e-6)")
    p.add_argument("--margin", type=float, default=1e-6,
                   help="allowed numerical slack in the sampling residual check (default 1e-6)")
    p.add_argument("--samples", type=int, default=150,
                   help="sample points per region in the residual check (default 150)")


def _add_oracle_flags(p):
    p.add_argument("--paths", type=int, default=10000,
                   help="Monte-Carlo path count (default 10000)")
    p.add_argument("--step", type=float, default=1e-3,
                   help="Euler-Maruyama step size (default 1e-3)")
    p.add_argument("--boundary-tol", type=float, default=0.0,
                   help="band around boundaries treated as crossed (default 0)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sdereach",
        description="Certified reachability bounds for polynomial SDEs.")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("certify", help="compute one certified bound")
    pc.add_argument("model_file", help="model+query JSON document")
    _add_cert_flags(pc)
    pc.add_argument("--seed", type=int, default=0, help="residual-check seed (default 0)")
    pc.add_argument("--out", default=None, help="write the JSON report here")

    pe = sub.add_parser("estimate", help="Monte-Carlo estimate with exact CI")
    pe.add_argument("model_file", help="model+query JSON document")
    _add_oracle_flags(pe)
    pe.add_argument("--seed", type=int, default=0, help="simulation seed (default 0)")
    pe.add_argument("--csv", default=None,
                    help="dump the first simulated path here (t, x1..xn, stopped_flag)")
    pe.add_argument("--out", default=None, help="write the JSON report here")

    pp = sub.add_parser("compare", help="certify a kind set and cross-check the oracle")
    pp.add_argument("model_file", help="model+query JSON document")
    pp.add_argument("--kinds", default=None,
                    help="comma-separated kind tags (default: %s)" %
                    " / ".join(sorted(_DEFAULT_KINDS.values())))
    _add_cert_flags(pp)
    _add_oracle_flags(pp)
    pp.add_argument("--seed", type=int, default=0, help="shared seed (default 0)")
    pp.add_argument("--skip-fd", action="store_true",
                    help="skip the 1-D finite-difference cross-check")
    pp.add_argument("--out", default=None, help="write the JSON report here")
    return parser


# -- report assembly ---------------------------------------------------------------


def _query_echo(model, query):
    return {
        "n": model.n,
        "k": model.k,
        "drift": [p.to_text() for p in model.drift],
        "diffusion": [[p.to_text() for p in row] for row in model.diffusion],
        "domain_g": query.domain.g.to_text(),
        "target_g": query.target.g.to_text(),
        "T": query.horizon_T,
        "x0": list(query.x0),
        "kind": query.kind,
        "bounding_box": [list(pair) for pair in query.bounding_box],
    }


def _residual_dict(summary):
    if summary is None:
        return None
    return {
        "status": summary.status,
        "worst_violation": summary.worst_violation,
        "regions": [
            {"name": r.name, "n_points": r.n_points,
             "worst_violation": r.worst_violation, "checked": r.checked,
             "note": r.note}
            for r in summary.regions
        ],
        "warnings": list(summary.warnings),
    }


def _bound_report_dict(report):
    return {
        "kind": report.kind.tag,
        "bound": report.bound,
        "raw_bound": report.raw_bound,
        "alpha": report.alpha,
        "beta": report.beta,
        "M": report.M,
        "solver_status": report.solver_status,
        "vacuous": report.vacuous,
        "objective_value": report.objective_value,
        "v": report.v.to_text() if report.v is not None else None,
        "w": report.w.to_text() if report.w is not None else None,
        "residual": _residual_dict(report.residual_summary),
        "warnings": list(report.warnings),
    }


def _outcome_dict(outcome):
    return {
        "status": outcome.status,
        "attempts": [[alpha, status] for alpha, status in outcome.attempts],
        "report": _bound_report_dict(outcome.report) if outcome.report else None,
    }


def _estimate_dict(est, args):
    return {
        "p_hat": est.p_hat,
        "ci_low": est.ci_low,
        "ci_high": est.ci_high,
        "n_success": est.n_success,
        "n_paths": est.n_paths,
        "n_excluded": est.n_excluded,
        "step": args.step,
        "seed": args.seed,
        "warnings": list(est.warnings),
    }


def _write_report(doc, out_path):
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    return text


def _run_certify_kinds(model, query, kinds, args):
    """Run the alpha-grid driver for each kind; returns (dicts, worst_exit)."""
    backend, sdpa_dir = _parse_backend(args.backend)
    degrees = certs.DegreeSpec(v=args.deg_v, w=args.deg_w, multiplier=args.deg_mult)
    alphas = _parse_alpha_grid(args.alpha_grid) if args.alpha_grid is not None else None
    outcomes = {}
    exit_code = EXIT_OK
    for tag in kinds:
        outcome = certs.certify(
            model, query, tag, degrees=degrees, alphas=alphas,
            backend=backend, sdpa_dir=sdpa_dir, eps=args.eps,
            margin=args.margin, samples=args.samples, seed=args.seed)
        outcomes[tag] = outcome
        if outcome.status == "solver_failure":
            exit_code = EXIT_SOLVER
    return outcomes, exit_code


def _print_outcome_line(tag, outcome):
    if outcome.status == "bound":
        r = outcome.report
        extra = " (vacuous)" if r.vacuous else ""
        residual = r.residual_summary.status if r.residual_summary else "unchecked"
        print(f"{tag}: bound {r.bound:.6f}{extra}  alpha={r.alpha:g} "
              f"beta={r.beta:g} M={r.M:g}  residuals {residual}")
    else:
        print(f"{tag}: {outcome.status.replace('_', ' ')} "
              f"({len(outcome.attempts)} attempt(s))")


# -- commands ----------------------------------------------------------------------


def cmd_certify(args):
    model, query = load_model(args.model_file)
    if not args.kind:
        raise CliValidation("certify requires --kind")
    t0 = time.perf_counter()
    outcomes, exit_code = _run_certify_kinds(model, query, [args.kind], args)
    elapsed = time.perf_counter() - t0
    outcome = outcomes[args.kind]
    _print_outcome_line(args.kind, outcome)

    doc = {
        "command": "certify",
        "query": _query_echo(model, query),
        "certificates": {args.kind: _outcome_dict(outcome)},
        "alpha_grid": {
            "values": (_parse_alpha_grid(args.alpha_grid)
                       if args.alpha_grid is not None else
                       certs.default_alpha_grid(query.horizon_T)),
            "restricted": args.alpha_grid is not None,
        },
        "settings": _settings_echo(args),
        "timings": {"certify_s": elapsed},
    }
    text = _write_report(doc, args.out)
    if not args.out:
        sys.stdout.write(text)
    return exit_code


def cmd_estimate(args):
    model, query = load_model(args.model_file)
    try:
        cfg = oracle.SimConfig(step_h=args.step, n_paths=args.paths, seed=args.seed,
                               boundary_tol=args.boundary_tol)
        t0 = time.perf_counter()
        est = oracle.estimate_probability(model, query, cfg)
        elapsed = time.perf_counter() - t0
        if args.csv:
            oracle.dump_trajectory_csv(model, query, cfg, 0, args.csv)
    except oracle.OracleError as e:
        raise CliValidation(str(e))
    print(f"p_hat {est.p_hat:.5f}  ci95 [{est.ci_low:.5f}, {est.ci_high:.5f}]  "
          f"hits {est.n_success}/{est.n_paths}")

    doc = {
        "command": "estimate",
        "query": _query_echo(model, query),
        "oracle": _estimate_dict(est, args),
        "settings": _settings_echo(args),
        "timings": {"oracle_s": elapsed},
    }
    text = _write_report(doc, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args):
    model, query = load_model(args.model_file)
    kinds_text = args.kinds if args.kinds else _DEFAULT_KINDS[query.kind]
    kinds = [tok.strip() for tok in kinds_text.split(",") if tok.strip()]
    if not kinds:
        raise CliValidation("--kinds must name at least one certificate kind")
    for tag in kinds:
        certs.as_kind(tag)  # validate before doing any work

    t0 = time.perf_counter()
    outcomes, exit_code = _run_certify_kinds(model, query, kinds, args)
    t1 = time.perf_counter()
    try:
        cfg = oracle.SimConfig(step_h=args.step, n_paths=args.paths, seed=args.seed,
                               boundary_tol=args.boundary_tol)
        est = oracle.estimate_probability(model, query, cfg)
    except oracle.OracleError as e:
        raise CliValidation(str(e))
    t2 = time.perf_counter()
    fd_value = None
    if model.n == 1 and not args.skip_fd:
        fd_value = oracle.fd_solve_1d(model, query)
    t3 = time.perf_counter()

    uppers = {t: o.report for t, o in outcomes.items()
              if o.report is not None and certs.as_kind(t).upper}
    lowers = {t: o.report for t, o in outcomes.items()
              if o.report is not None and not certs.as_kind(t).upper}
    ok = all(r.bound >= est.ci_low for r in uppers.values()) and \
        all(r.bound <= est.ci_high for r in lowers.values())
    verdict = "OK" if ok else "FAIL"

    competing = None
    for tag, report in sorted(uppers.items()):
        kind = certs.as_kind(tag)
        if kind.uses_alpha and not kind.uses_w and report.v is not None:
            v0 = report.v.evaluate(list(query.x0), tval=0.0)
            competing = {
                "kind": tag,
                "inputs": {"v0": v0, "alpha": report.alpha, "beta": report.beta,
                           "T": query.horizon_T},
                "bounds": certs.competing_bounds(
                    v0, report.alpha, report.beta, query.horizon_T),
            }
            break

    for tag in kinds:
        _print_outcome_line(tag, outcomes[tag])
    print(f"oracle: p_hat {est.p_hat:.5f}  ci95 [{est.ci_low:.5f}, {est.ci_high:.5f}]")
    if fd_value is not None:
        print(f"finite-difference value: {fd_value:.6f}")
    if competing:
        for name, value in sorted(competing["bounds"].items()):
            print(f"competing bound [{name}]: {value:.6f}")
    print(f"consistency: {verdict}")

    doc = {
        "command": "compare",
        "query": _query_echo(model, query),
        "certificates": {tag: _outcome_dict(outcomes[tag]) for tag in kinds},
        "oracle": _estimate_dict(est, args),
        "fd_value": fd_value,
        "consistency": verdict,
        "competing_bounds": competing,
        "alpha_grid": {
            "values": (_parse_alpha_grid(args.alpha_grid)
                       if args.alpha_grid is not None else
                       certs.default_alpha_grid(query.horizon_T)),
            "restricted": args.alpha_grid is not None,
        },
        "settings": _settings_echo(args),
        "timings": {"certify_s": t1 - t0, "oracle_s": t2 - t1, "fd_s": t3 - t2},
    }
    text = _write_report(doc, args.out)
    if not args.out:
        sys.stdout.write(text)
    return exit_code


def _settings_echo(args):
    keep = ("kind", "kinds", "deg_v", "deg_w", "deg_mult", "alpha_grid", "backend",
            "eps", "margin", "samples", "paths", "step", "boundary_tol", "seed")
    return {k: getattr(args, k) for k in keep if hasattr(args, k)}


class CliValidation(Exception):
    pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"certify": cmd_certify, "estimate": cmd_estimate,
               "compare": cmd_compare}[args.command]
    try:
        return handler(args)
    except (ModelError, certs.CertificateError, SosError, CliValidation,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
