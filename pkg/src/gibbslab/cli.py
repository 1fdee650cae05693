"""Config-driven experiment runner.

Subcommands: exact, sample, blockcoef, bootstrap, fit, verify.  Common flags:
--config PATH, --seed N (overrides [run].seed), --out DIR, --format csv|json.
Every run writes a manifest recording the config hash, seed, and library
version; result files are deterministic for a fixed config and seed (the
manifest timestamp is the one exception).

Exit codes: 0 success, 2 config errors, 3 model validation errors,
4 numerical failures, 5 a verification suite with failing checks, 1 other.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
import numpy as np

from . import __version__, blockavg, bootstrap as bst, exact, sampler
from . import lattice as lt
from .config import ExperimentConfig, load_config
from .errors import (
    BudgetExceededError,
    ConfigError,
    EigensolveFailureError,
    GibbsLabError,
    NonDominantError,
    AsymmetricInteractionError,
    DecayViolatedError,
    IllTemperedBoundaryError,
    SolverDivergedError,
    OverflowError_,
    NonFiniteEnergyError,
)
from .fitting import fit_power_law

_MODEL_ERRORS = (
    NonDominantError,
    AsymmetricInteractionError,
    DecayViolatedError,
    IllTemperedBoundaryError,
)
_NUMERIC_ERRORS = (
    EigensolveFailureError,
    SolverDivergedError,
    OverflowError_,
    NonFiniteEnergyError,
)


def _fmt(value) -> str:
    """12 significant digits; idempotent under re-parse + re-format."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_table(out_dir, name, fmt, header, rows):
    rows = [tuple(_fmt(v) for v in row) for row in rows]
    if fmt == "json":
        path = os.path.join(out_dir, f"{name}.json")
        payload = [dict(zip(header, row)) for row in rows]
        with open(path, "w") as fh:
            json.dump({"columns": list(header), "rows": payload}, fh, indent=1)
            fh.write("\n")
    else:
        path = os.path.join(out_dir, f"{name}.csv")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
    return path


def read_table(path):
    """Inverse of write_table for CSV output (all fields as strings)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _write_manifest(out_dir, fmt, config: ExperimentConfig, subcommand, seed):
    digest = hashlib.sha256(config.text.encode() if config.text else b"").hexdigest()
    rows = [
        ("config_path", config.path),
        ("config_sha256", digest),
        ("subcommand", subcommand),
        ("seed", seed),
        ("version", __version__),
        ("created_unix", f"{time.time():.0f}"),
    ]
    write_table(out_dir, "manifest", fmt, ("key", "value"), rows)


def _site_label(site) -> str:
    return ";".join(str(c) for c in site)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_exact(config, out_dir, fmt, seed):
    model = lt.build_model(config)
    g = config.section("grid")
    spec = exact.GridSpec(
        half_width=g.get("half_width"),
        points_per_site=int(g.get("points_per_site", 64)),
        max_states=int(g.get("max_states", 200_000)),
    )
    gm = exact.build_grid_measure(model, spec)
    sites = model.lattice.sites()
    means = [exact.moments(gm, s) for s in sites]
    rows = []
    for a, sa in enumerate(sites):
        for b in range(a, len(sites)):
            sb = sites[b]
            value = exact.moments(gm, (sa, sb)) - means[a] * means[b]
            rows.append(
                (
                    _site_label(sa),
                    _site_label(sb),
                    lt.dist(sa, sb),
                    value,
                    0.0,
                    "quadrature",
                )
            )
    write_table(
        out_dir,
        "covariance",
        fmt,
        ("i", "j", "dist", "value", "stderr", "method"),
        rows,
    )
    gen = exact.build_generator(gm)
    est = exact.spectral_gap(gen)
    write_table(
        out_dir,
        "summary",
        fmt,
        ("key", "value"),
        [
            ("spectral_gap", est.gap),
            ("gap_method", est.method),
            ("log_norm", gm.log_norm),
            ("dominance_margin", model.delta),
            ("states", gm.n_states),
        ],
    )
    return 0


def _cmd_sample(config, out_dir, fmt, seed):
    model = lt.build_model(config)
    c = config.section("chain")
    cfg = sampler.ChainConfig(
        steps=int(c.get("steps", 100_000)),
        burn_in=int(c.get("burn_in", 1_000)),
        thin=int(c.get("thin", 1)),
        proposal_sd=float(c.get("proposal_sd", 1.0)),
        seed=seed if seed is not None else int(c.get("seed", 0)),
        scheme=c.get("scheme", "random-scan-metropolis"),
        n_batches=int(c.get("n_batches", 32)),
    )
    batch = sampler.run_chain(model, cfg)
    sites = model.lattice.sites()
    rows = []
    for a, sa in enumerate(sites):
        for b in range(a, len(sites)):
            sb = sites[b]
            est = sampler.estimate_cov(batch, model, sa, sb, cfg.n_batches)
            rows.append(
                (
                    _site_label(sa),
                    _site_label(sb),
                    lt.dist(sa, sb),
                    est.value,
                    est.stderr,
                    batch.scheme,
                )
            )
    write_table(
        out_dir,
        "covariance",
        fmt,
        ("i", "j", "dist", "value", "stderr", "method"),
        rows,
    )
    write_table(
        out_dir,
        "summary",
        fmt,
        ("key", "value"),
        [
            ("accept_rate", batch.accept_rate),
            ("n_samples", batch.samples.shape[0]),
            ("model_fingerprint", batch.model_fingerprint),
            ("chain_seed", cfg.seed),
        ],
    )
    return 0


def _cmd_blockcoef(config, out_dir, fmt, seed):
    model = lt.build_model(config)
    b = config.section("block")
    radii = [float(r) for r in b.get("radii", [1.5, 2.5, 3.5, 4.5])]
    epsilon = float(b.get("epsilon", 0.1))
    report = blockavg.verify_coefficient_bounds(model, radii, epsilon)
    d = model.dim
    rows = list(report.rows(d))
    center = report.center
    for r in radii:
        co = blockavg.coefficients(model, center, r)
        dists = model.lattice.distances_from(center)
        for t, site in enumerate(model.lattice.sites()):
            rows.append((d, r, "p", int(dists[t]), float(co.p[t]), "", ""))
            rows.append((d, r, "q", int(dists[t]), float(co.q[t]), "", ""))
            rows.append((d, r, "kappa", int(dists[t]), float(co.kappa[t]), "", ""))
    write_table(
        out_dir,
        "coefficients",
        fmt,
        ("d", "R", "quantity", "offset", "value", "bound", "ratio"),
        rows,
    )
    write_table(
        out_dir,
        "summary",
        fmt,
        ("key", "value"),
        [("passed", report.passed), ("p_ok", report.p_ok)]
        + [(f"growth_{f.name}", f.monotone_growth) for f in report.families],
    )
    return 0


def _cmd_bootstrap(config, out_dir, fmt, seed):
    model = lt.build_model(config)
    b = config.section("bootstrap")
    params = bst.BootstrapParams(
        ball_radius=b.get("L"),
        coupling_factor=float(b.get("coupling_factor", 2.0)),
        max_iterations=int(b.get("max_iterations", 50)),
        target_alpha=float(
            b.get("target_alpha", model.decay.exponent - model.dim)
        ),
    )
    c0 = float(b.get("c0", 1.0))
    alpha0 = float(b.get("alpha0", 0.5))
    result = bst.run_bootstrap(model, (c0, alpha0), params)
    rows = [
        (
            r.iteration,
            r.distance,
            r.max_bound,
            r.c_fit,
            r.alpha_fit,
            r.coupling,
            r.ball_radius,
        )
        for r in result.rows
    ]
    write_table(
        out_dir,
        "bootstrap",
        fmt,
        ("iteration", "dist", "max_bound", "C_fit", "alpha_fit", "coupling", "L"),
        rows,
    )
    write_table(
        out_dir,
        "summary",
        fmt,
        ("key", "value"),
        [
            ("alpha_hat", result.alpha_hat),
            ("iterations", result.iterations),
            ("ball_radius", result.ball_radius),
            ("coupling_factor", result.coupling_factor),
        ],
    )
    return 0


def _cmd_fit(config, out_dir, fmt, seed):
    f = config.section("fit")
    points = []
    if "points" in f:
        points = [(float(r), float(v)) for r, v in f["points"]]
    elif "path" in f:
        header, rows = read_table(f["path"])
        cols = {name: k for k, name in enumerate(header)}
        rkey = "r" if "r" in cols else "dist"
        points = [(float(row[cols[rkey]]), float(row[cols["value"]])) for row in rows]
    else:
        raise ConfigError("[fit] needs 'points' or 'path'")
    res = fit_power_law(points)
    write_table(
        out_dir,
        "fit",
        fmt,
        ("key", "value"),
        [
            ("C", res.c),
            ("alpha_hat", res.alpha_hat),
            ("rmse", res.rmse),
            ("n_points", res.n_points),
        ],
    )
    return 0


# ---------------------------------------------------------------------------
# Built-in verification suite
# ---------------------------------------------------------------------------


def _verify_checks(seed: int):
    """The Gaussian suite: one row per invariant check."""
    checks = []

    def add(check, detail, value, reference, tol, passed):
        checks.append((check, detail, value, reference, tol, bool(passed)))

    # quadrature covariance against the closed form
    lat2 = lt.Lattice.box((2,))
    m2 = lt.make_model(lat2, lt.GAUSSIAN, [[1.0, -0.2], [-0.2, 1.0]])
    orc = exact.gaussian_oracle_for_model(m2)
    gm = exact.build_grid_measure(
        m2, exact.GridSpec(half_width=6.0, points_per_site=128)
    )
    err = abs(exact.cov(gm, (0,), (1,)) - orc.covariance[0, 1])
    add("covariance_oracle", "2-site cov(0,1)", err, 0.0, 1e-3, err <= 1e-3)

    # spectral gaps
    lat1 = lt.Lattice.box((1,))
    m1 = lt.make_model(lat1, lt.GAUSSIAN, [[0.5]])
    gm1 = exact.build_grid_measure(
        m1, exact.GridSpec(half_width=8.0, points_per_site=256)
    )
    gap1 = exact.spectral_gap(exact.build_generator(gm1)).gap
    add("spectral_gap", "single-site unit curvature", gap1, 1.0, 0.01,
        abs(gap1 - 1.0) <= 0.01)
    gm2 = exact.build_grid_measure(
        m2, exact.GridSpec(half_width=6.0, points_per_site=96)
    )
    est2 = exact.spectral_gap(exact.build_generator(gm2))
    add("spectral_gap", "2-site vs lambda_min(2M)", est2.gap, orc.gap,
        0.02 * orc.gap, abs(est2.gap - orc.gap) <= 0.02 * orc.gap)

    # covariance representation and the two Poincare forms
    gen = exact.build_generator(gm2)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x0 = exact.coordinate(gm2, (0,))
    x1 = exact.coordinate(gm2, (1,))
    worst = 0.0
    for _ in range(5):
        cf = rng.normal(size=3)
        cg = rng.normal(size=3)
        f = cf[0] * x0 + cf[1] * x1 + cf[2] * x0 * x1
        g = cg[0] * x0 + cg[1] * x1 + cg[2] * x1 * x1
        sol = exact.solve_poisson(gen, f, tol=1e-12)
        lhs = exact.cov_functions(gm2, f, g)
        rhs = exact.dirichlet(gen, sol.phi, g)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        var_f = exact.cov_functions(gm2, f, f)
        e_f = exact.dirichlet(gen, f)
        add("poincare", "Var(f) <= gap^-1 E(f,f)", var_f, e_f / est2.gap,
            1e-9, var_f <= e_f / est2.gap + 1e-9)
        e_phi = exact.dirichlet(gen, sol.phi)
        add("dual_poincare", "E(phi,phi) <= gap^-2 E(f,f)", e_phi,
            e_f / est2.gap**2, 1e-9, e_phi <= e_f / est2.gap**2 + 1e-9)
    add("representation", "cov(f,g) = E(phi_f, g)", worst, 0.0, 1e-8,
        worst <= 1e-8)
    fgap = est2.eigenfunction
    near = exact.cov_functions(gm2, fgap, fgap) * est2.gap / exact.dirichlet(gen, fgap)
    add("poincare", "equality at the gap eigenfunction", near, 1.0, 0.01,
        abs(near - 1.0) <= 0.01)

    # directional decay of the Poisson potential, closed form, 64-site chain
    lat64 = lt.Lattice.box((64,))
    m64 = lt.make_model(
        lat64, lt.GAUSSIAN,
        lt.power_law_interaction(lat64, 0.05, 3.0, 1.0, ferromagnetic=True),
    )
    de = exact.gaussian_oracle_for_model(m64).directional_energies(0)
    fit = fit_power_law([(k, de[k]) for k in range(4, 25)])
    add("directional_decay", "log-log slope, window [4,24]", -fit.alpha_hat,
        -3.0, 0.3, -fit.alpha_hat <= -3.0 + 0.3)

    # sign-flip comparison of quadratic relaxation rates
    rng2 = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed + 1)))
    ok = True
    margin = np.inf
    for _ in range(10):
        off = rng2.uniform(-0.2, 0.2, size=(4, 4))
        off = np.triu(off, 1)
        m = off + off.T
        np.fill_diagonal(m, 1.0)
        fer = -np.abs(m)
        np.fill_diagonal(fer, 1.0)
        lam = np.linalg.eigvalsh(2 * m)[0]
        lam_f = np.linalg.eigvalsh(2 * fer)[0]
        margin = min(margin, lam - lam_f)
        ok = ok and lam >= lam_f - 1e-12
    add("ferromagnetic_comparison", "lambda_min(2M) >= lambda_min(2M_fer)",
        margin, 0.0, 1e-12, ok)

    # splitting inequality at desk scale
    lat3 = lt.Lattice.box((3,))
    m3 = lt.make_model(
        lat3, lt.GAUSSIAN,
        [[1.0, -0.2, 0.0], [-0.2, 1.0, -0.2], [0.0, -0.2, 1.0]],
    )
    rep = bst.verify_lebowitz_exact(m3, 2.0)
    add("splitting_inequality", "3-site chain, coupling 2",
        rep.minimal_coupling, 2.0, 0.0, rep.passed)
    add("splitting_inequality", "coupling 1 must fail",
        rep.minimal_coupling, 1.0, 0.0, rep.minimal_coupling > 1.0)

    # inverse decay of a dominant matrix with algebraic off-diagonal envelope
    n = 128
    r = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
    a = -0.1 / (1.0 + r) ** 3
    np.fill_diagonal(a, 2.0)
    res = blockavg.inverse_decay(blockavg.block_matrix_from_dense(a))
    add("inverse_decay", "entrywise nonnegative", res.min_entry, 0.0, 0.0,
        res.min_entry >= 0.0)
    add("inverse_decay", "envelope exponent", -res.fit.alpha_hat, -3.0, 0.2,
        -res.fit.alpha_hat <= -3.0 + 0.2)

    # bound propagation on a 64-site ferromagnetic chain
    mb = lt.make_model(
        lat64, lt.GAUSSIAN,
        lt.power_law_interaction(lat64, 0.05, 2.0, 1.0, ferromagnetic=True),
    )
    cov = exact.gaussian_oracle_for_model(mb).covariance
    dmat = lat64.distance_matrix().astype(float)
    offm = dmat > 0
    c0 = float((cov[offm] * (1.0 + dmat[offm]) ** 1.4).max())
    out = bst.run_bootstrap(mb, (c0, 0.4), bst.BootstrapParams(target_alpha=1.0))
    add("bound_propagation", "output dominates closed form",
        float((out.field.bounds - cov).min()), 0.0, 1e-12,
        bool((out.field.bounds + 1e-12 >= cov).all()))
    add("bound_propagation", "decay exponent improved", out.alpha_hat, 0.4,
        0.0, out.alpha_hat > 0.4)
    return checks


def _cmd_verify(config, out_dir, fmt, seed):
    checks = _verify_checks(seed if seed is not None else 0)
    rows = [
        (check, detail, value, reference, tol, passed)
        for check, detail, value, reference, tol, passed in checks
    ]
    write_table(
        out_dir,
        "checks",
        fmt,
        ("check", "detail", "value", "reference", "tolerance", "pass"),
        rows,
    )
    n_fail = sum(1 for row in checks if not row[5])
    return 0 if n_fail == 0 else 5


_COMMANDS = {
    "exact": _cmd_exact,
    "sample": _cmd_sample,
    "blockcoef": _cmd_blockcoef,
    "bootstrap": _cmd_bootstrap,
    "fit": _cmd_fit,
    "verify": _cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gibbslab",
        description="Lattice Gibbs-measure experiments and verification suites",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML config path")
        p.add_argument("--seed", type=int, default=None, help="overrides [run].seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default=None)
    return parser


def run_experiment(argv) -> int:
    """Parse arguments, run one subcommand, write artifacts; returns exit code."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.config is not None:
            config = load_config(args.config)
        else:
            config = ExperimentConfig(raw={})
        config.require(args.subcommand)
        out_dir = args.out or config.get("run", "out", "gibbslab-out")
        fmt = args.format or config.get("run", "format", "csv")
        if fmt not in ("csv", "json"):
            raise ConfigError(f"[run] format {fmt!r} must be csv or json")
        seed = args.seed if args.seed is not None else config.get("run", "seed")
        seed = int(seed) if seed is not None else None
        os.makedirs(out_dir, exist_ok=True)
        code = _COMMANDS[args.subcommand](config, out_dir, fmt, seed)
        _write_manifest(out_dir, fmt, config, args.subcommand, seed)
        return code
    except (ConfigError, BudgetExceededError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _MODEL_ERRORS as exc:
        print(f"model error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except _NUMERIC_ERRORS as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except GibbsLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_experiment(sys.argv[1:]))


if __name__ == "__main__":
    main()
