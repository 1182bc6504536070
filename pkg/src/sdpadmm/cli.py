"""Batch command-line front end.

Subcommands: ``solve`` (run the solver on an instance, emit a trace CSV and a
JSON summary), ``diagnose`` (post-hoc analysis of a finished run directory),
``eb-verify`` (projection linearization residual scan plus elimination
agreement check), and ``generate`` (write planted or max-cut instances as
.dat-s files). Runs are described by JSON manifests; command-line flags
override manifest fields, which override defaults. Identical manifest and
seed produce byte-identical trace CSVs; wall-clock metadata lives only in the
JSON summary.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time

import numpy as np

from . import diagnostics, linearization
from .elimination import eb_scan, run_elimination
from .errors import NumericalFailureError
from .linalg import eig_sym, psd_project, symmetrize
from .problem import (
    build_kernel,
    generate_maxcut,
    generate_planted,
    haar_orthogonal,
    load_sdpa,
    write_sdpa,
)
from .solver import (
    SolveStatus,
    SolverConfig,
    solve,
    write_trace_csv,
)

_CFG_KEYS = ("sigma", "max_iter", "tol_rmax", "time_limit_secs", "trace_every", "init", "seed")


def _load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict):
        raise ValueError(f"manifest {path} must contain a JSON object")
    return manifest


def _apply_overrides(manifest, args):
    overrides = {
        "sigma": args.sigma,
        "max_iter": args.max_iter,
        "tol_rmax": args.tol,
        "seed": args.seed,
        "init": args.init,
        "out": args.out,
    }
    for key, val in overrides.items():
        if val is not None:
            manifest[key] = val
    return manifest


def _config_from_manifest(manifest):
    kwargs = {k: manifest[k] for k in _CFG_KEYS if k in manifest}
    cfg = SolverConfig(**kwargs)
    cfg.validate()
    return cfg


def _instance_from_manifest(manifest):
    """Build (problem, name, certificate-or-None) from the manifest's single
    instance source."""
    has_path = "instance" in manifest
    has_gen = "generator" in manifest
    if has_path == has_gen:
        raise ValueError("manifest needs exactly one of 'instance' or 'generator'")
    if has_path:
        path = manifest["instance"]
        return load_sdpa(path), os.path.basename(path), None
    gen = manifest["generator"]
    kind = gen.get("kind")
    if kind == "planted":
        prob, cert = generate_planted(
            n=gen["n"],
            m=gen["m"],
            r=gen["r"],
            seed=gen.get("seed", 0),
            degeneracy=gen.get("degeneracy", "none"),
            spectrum_floor=gen.get("spectrum_floor", 0.5),
            spectrum_ceil=gen.get("spectrum_ceil", 2.0),
        )
        name = f"planted-n{gen['n']}-m{gen['m']}-r{gen['r']}-s{gen.get('seed', 0)}"
        return prob, name, cert
    if kind == "maxcut":
        adjacency = _load_edge_list(gen["edges"])
        return generate_maxcut(adjacency), os.path.basename(gen["edges"]), None
    raise ValueError(f"unknown generator kind {kind!r}")


def _load_edge_list(path):
    """Edge-list file: optional '#' comments, first data line is the vertex
    count, then one '1-based i j' pair per line."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                entries.append(line.split())
    if not entries:
        raise ValueError(f"edge list {path} is empty")
    n = int(entries[0][0])
    adj = np.zeros((n, n))
    for tok in entries[1:]:
        i, j = int(tok[0]) - 1, int(tok[1]) - 1
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ValueError(f"bad edge ({tok[0]}, {tok[1]}) for n = {n}")
        adj[i, j] = adj[j, i] = 1.0
    return adj


def _run_solve_manifest(manifest):
    """Execute one solve manifest; returns the summary dict (also written to
    the output directory together with the trace and the final iterate)."""
    out_dir = manifest.get("out")
    if not out_dir:
        raise ValueError("manifest is missing an output directory ('out')")
    os.makedirs(out_dir, exist_ok=True)
    prob, name, _ = _instance_from_manifest(manifest)
    cfg = _config_from_manifest(manifest)
    kernel = build_kernel(prob)

    t0 = time.monotonic()
    state, records, status = solve(prob, cfg, kernel=kernel)
    wall = time.monotonic() - t0

    instance_file = os.path.join(out_dir, "instance.dat-s")
    write_sdpa(prob, instance_file, comment=name)
    np.save(os.path.join(out_dir, "z_final.npy"), state.Z)
    write_trace_csv(records, os.path.join(out_dir, "trace.csv"))
    summary = {
        "instance": name,
        "instance_file": "instance.dat-s",
        "n": prob.n,
        "m": prob.m,
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "init": cfg.init,
        "max_iter": cfg.max_iter,
        "tol_rmax": cfg.tol_rmax,
        "trace_every": cfg.trace_every,
        "status": status.value,
        "iterations": state.k,
        "r_p": state.residuals[0],
        "r_d": state.residuals[1],
        "r_gap": state.residuals[2],
        "r_max": state.residuals[3],
        "objective": float(np.sum(prob.C * state.X)),
        "wall_time_secs": wall,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    return summary


def _cmd_solve(args):
    manifests = [_apply_overrides(_load_manifest(path), args) for path in args.manifest]
    if not manifests:
        raise ValueError("solve needs at least one --manifest")
    if len(manifests) == 1 or args.jobs <= 1:
        summaries = [_run_solve_manifest(man) for man in manifests]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_run_solve_manifest, manifests))
    statuses = [s["status"] for s in summaries]
    n_conv = sum(1 for s in statuses if s == SolveStatus.CONVERGED.value)
    if len(summaries) == 1:
        s = summaries[0]
        line = (
            f"status: {s['status']} instance={s['instance']} k={s['iterations']} "
            f"r_max={s['r_max']:.3e}"
        )
    else:
        line = f"status: {n_conv}/{len(summaries)} runs converged"
    if any(s == SolveStatus.NUMERICAL_FAILURE.value for s in statuses):
        return 1, line
    if n_conv == len(summaries):
        return 0, line
    return 2, line


def _fit_or_none(values, ks, window, name):
    try:
        return diagnostics.rate_fit(values, window, ks=ks, name=name)
    except ValueError:
        return None


def _cmd_diagnose(args):
    run_dir = args.run
    if args.manifest:
        manifest = _load_manifest(args.manifest[0])
        run_dir = manifest.get("run", run_dir)
    if not run_dir:
        raise ValueError("diagnose needs --run DIR (or a manifest with a 'run' key)")
    summary_path = os.path.join(run_dir, "summary.json")
    z_path = os.path.join(run_dir, "z_final.npy")
    if not (os.path.exists(summary_path) and os.path.exists(z_path)):
        raise ValueError(f"run directory {run_dir} is missing summary.json or z_final.npy")
    with open(summary_path, "r", encoding="utf-8") as fh:
        summary = json.load(fh)
    prob = load_sdpa(os.path.join(run_dir, summary["instance_file"]))
    kernel = build_kernel(prob)
    z_final = np.load(z_path)
    converged = summary["status"] == SolveStatus.CONVERGED.value

    dec = eig_sym(z_final)
    sc = diagnostics.sc_check(z_final)
    nd = diagnostics.nd_check(prob, dec)

    # Replay the (deterministic) run against its own limit to collect the
    # error and minimal-face trace.
    cfg = _config_from_manifest(summary)
    _, records, _ = solve(prob, cfg, kernel=kernel, reference=z_final)
    k_id = diagnostics.rank_trace(records, sc)

    norm_m = None
    norm_m_fix = None
    fix_dim = None
    if sc.sc_holds:
        os_ = linearization.build_omega(dec)
        norm_m = linearization.op_norm_M(os_, kernel)
        fix = linearization.fix_basis(os_, kernel)
        fix_dim = fix.dim
        norm_m_fix = linearization.op_norm_M_minus_fix(os_, kernel, fix)

    fits = []
    if converged and records:
        idx_id = next((i for i, r in enumerate(records) if r.k == k_id), 0) if k_id is not None else 0
        window = diagnostics.trailing_window(len(records) - 1, idx_id)
        ks = [r.k for r in records[:-1]]
        series = {
            "r_max": [r.r_max for r in records[:-1]],
            "h_norm": [r.h_norm for r in records[:-1]],
            "ho_norm": [r.ho_norm for r in records[:-1]],
            "face_X_norm": [r.face_x_norm for r in records[:-1]],
            "face_S_norm": [r.face_s_norm for r in records[:-1]],
        }
        for name, values in series.items():
            vals = np.asarray(values, dtype=float)
            keep = vals > 0.0
            if keep.sum() >= window:
                fit = _fit_or_none(vals[keep], np.asarray(ks, float)[keep], window, name)
                if fit is not None:
                    fits.append(fit)

    report = {
        "run": run_dir,
        "status": summary["status"],
        "sc": sc.__dict__,
        "nd": nd.__dict__,
        "k_id": k_id,
        "op_norm_M": norm_m,
        "op_norm_M_minus_fix": norm_m_fix,
        "fix_dim": fix_dim,
        "fits": [
            {
                "sequence": f.sequence_name,
                "rho_hat": f.rho_hat,
                "r2": f.r2,
                "window": list(f.window),
            }
            for f in fits
        ],
    }
    out_dir = args.out or run_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    trace_path = os.path.join(run_dir, "trace.csv")
    if fits and os.path.exists(trace_path):
        with open(trace_path, "a", encoding="utf-8") as fh:
            for f in fits:
                fh.write(
                    f"#fit,{f.sequence_name},rho_hat={f.rho_hat!r},r2={f.r2!r},"
                    f"window={f.window[0]}:{f.window[1]}\n"
                )

    if not converged:
        print("=== NOT CONVERGED: diagnostics reflect the last iterate ===")
    print(f"run             {run_dir}")
    print(f"status          {summary['status']}")
    print(f"SC              {'holds' if sc.sc_holds else 'fails'}  "
          f"(r={sc.r}, s={sc.s}, min|lam|={sc.lam_min_abs_z:.3e})")
    print(f"primal ND       {'holds' if nd.primal_nd else 'fails'}")
    print(f"dual ND         {'holds' if nd.dual_nd else 'fails'}")
    print(f"rank id at k    {k_id}")
    if norm_m is not None:
        print(f"||M||           {norm_m:.6f}")
        print(f"||M - P_Fix||   {norm_m_fix:.6f}  (dim Fix = {fix_dim})")
    for f in fits:
        print(f"rate {f.sequence_name:<12} rho_hat={f.rho_hat:.6f} r2={f.r2:.4f} "
              f"window={f.window[0]}..{f.window[1]}")
    line = (
        f"status: diagnosed {run_dir} sc={'holds' if sc.sc_holds else 'fails'} "
        f"primal_nd={'holds' if nd.primal_nd else 'fails'} "
        f"dual_nd={'holds' if nd.dual_nd else 'fails'}"
    )
    return 0, line


def _eb_inputs(manifest):
    zsrc = manifest.get("z", {"random": {"n": 8, "seed": 0}})
    hsrc = manifest.get("h", {"random": {"seed": 1}})
    if "file" in zsrc:
        z = symmetrize(np.load(zsrc["file"]))
    else:
        rnd = zsrc["random"]
        rng = np.random.default_rng(rnd.get("seed", 0))
        n = rnd["n"]
        q = haar_orthogonal(n, rng)
        lam = rng.uniform(0.5, 2.0, size=n) * np.where(np.arange(n) < (n + 1) // 2, 1.0, -1.0)
        z = symmetrize((q * lam) @ q.T)
    if "file" in hsrc:
        h = symmetrize(np.load(hsrc["file"]))
    else:
        rng = np.random.default_rng(hsrc["random"].get("seed", 1))
        h = symmetrize(rng.standard_normal(z.shape))
        h /= np.linalg.norm(h, 2)
    return z, h


def _cmd_eb_verify(args):
    manifest = _load_manifest(args.manifest[0]) if args.manifest else {}
    if args.out is not None:
        manifest["out"] = args.out
    z, h = _eb_inputs(manifest)
    lam = np.linalg.eigvalsh(z)
    gap = float(np.min(np.abs(lam)))
    if gap <= 1e-12 * max(1.0, float(np.max(np.abs(lam)))):
        print(f"error: reference matrix is singular (eigengap {gap:.3e})", file=sys.stderr)
        return 1, None
    scales = manifest.get("scales", [1e-1, 1e-2, 1e-3, 1e-4])
    report = eb_scan(z, h, scales)
    out_dir = manifest.get("out", ".")
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "eb_report.csv"))
    report.write_json(os.path.join(out_dir, "eb_report.json"))
    t_min = float(min(scales))
    v, iters, _ = run_elimination(z, t_min * h)
    deviation = float(np.linalg.norm(v - psd_project(z + t_min * h)))
    print(f"elimination agreement at t={t_min:g}: deviation={deviation:.3e} ({iters} sweeps)")
    line = (
        f"status: ok max_refined_ratio={float(np.max(report.ratios)):.3e} "
        f"elimination_deviation={deviation:.3e}"
    )
    return 0, line


def _cmd_generate(args):
    if args.kind == "planted":
        for field in ("n", "m", "r"):
            if getattr(args, field) is None:
                raise ValueError(f"generate planted needs --{field}")
        prob, cert = generate_planted(
            args.n, args.m, args.r, args.seed or 0, degeneracy=args.degeneracy
        )
        out = args.out or f"planted-n{args.n}-m{args.m}-r{args.r}-seed{args.seed or 0}.dat-s"
        write_sdpa(prob, out, comment=os.path.basename(out))
        rp, rd, comp = cert.kkt_residuals(prob)
        sidecar = {
            "Xstar": cert.Xstar.tolist(),
            "ystar": cert.ystar.tolist(),
            "Sstar": cert.Sstar.tolist(),
            "Qstar": cert.Qstar.tolist(),
            "r": cert.r,
            "s": cert.s,
            "seed": args.seed or 0,
            "degeneracy": args.degeneracy,
            "kkt_residuals": {"primal": rp, "dual": rd, "complementarity": comp},
        }
        with open(out + ".cert.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=1)
            fh.write("\n")
        return 0, f"status: wrote {out} and {out}.cert.json"
    if args.kind == "maxcut":
        if not args.edges:
            raise ValueError("generate maxcut needs --edges FILE")
        prob = generate_maxcut(_load_edge_list(args.edges))
        out = args.out or (os.path.splitext(args.edges)[0] + ".dat-s")
        write_sdpa(prob, out, comment=os.path.basename(out))
        return 0, f"status: wrote {out}"
    raise ValueError(f"unknown generate kind {args.kind!r}")


def _build_parser():
    parser = argparse.ArgumentParser(prog="sdpadmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--manifest", action="append", default=[], help="JSON manifest path")
        sp.add_argument("--sigma", type=float, default=None)
        sp.add_argument("--max-iter", dest="max_iter", type=int, default=None)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--init", choices=("zero", "gaussian"), default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--jobs", type=int, default=1)

    sp_solve = sub.add_parser("solve", help="run the solver on manifest-described instances")
    add_common(sp_solve)

    sp_diag = sub.add_parser("diagnose", help="analyze a finished run directory")
    add_common(sp_diag)
    sp_diag.add_argument("--run", default=None, help="run directory written by solve")

    sp_eb = sub.add_parser("eb-verify", help="projection linearization residual scan")
    add_common(sp_eb)

    sp_gen = sub.add_parser("generate", help="write instances as .dat-s files")
    sp_gen.add_argument("kind", choices=("planted", "maxcut"))
    sp_gen.add_argument("--n", type=int, default=None)
    sp_gen.add_argument("--m", type=int, default=None)
    sp_gen.add_argument("--r", type=int, default=None)
    sp_gen.add_argument("--seed", type=int, default=None)
    sp_gen.add_argument("--degeneracy", choices=("none", "primal_nd_fail"), default="none")
    sp_gen.add_argument("--edges", default=None)
    sp_gen.add_argument("--out", default=None)
    return parser


_DISPATCH = {
    "solve": _cmd_solve,
    "diagnose": _cmd_diagnose,
    "eb-verify": _cmd_eb_verify,
    "generate": _cmd_generate,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        code, line = _DISPATCH[args.command](args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError, NumericalFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if line is not None:
        print(line, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
