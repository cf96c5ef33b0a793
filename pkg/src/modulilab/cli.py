"""Batch driver: config ingestion, experiment execution, report persistence.

Exit codes: 0 all asserted invariants pass, 1 numerical assertion
failure (machine-readable failure list in report.json), 2 config error.
Reports are deterministic for a fixed seed list: keys are sorted and no
timestamps are written.
"""

from __future__ import annotations

import concurrent.futures
import copy
import csv
import json
import os
import sys

import click
import numpy as np

from . import bundle as bnd
from . import oracle, variation
from .bundle import trivial_cocycle, su2_preset, load_cocycle
from .surface import (
    build_polygon_gluing,
    equip_conformal,
    load_mesh,
    refine,
)
from .tangent import random_tangent


class ConfigError(Exception):
    pass


DEFAULTS = {
    "mesh": {"genus": 2, "refinements": 2, "layout": "stored", "density": "uniform", "file": None},
    "bundle": {"preset": "su2", "n": None, "d": None, "generator_file": None},
    "seeds": [0, 1, 2, 3],
    "samples": None,
    "tolerances": {
        "projector": 1e-8,
        "adjointness": 1e-10,
        "oracle": 1e-8,
        "first_variation": 1e-12,
        "hermitian": 1e-8,
        "difference": 1e-10,
        "fd_error": 1e-6,
        "slope": 0.2,
    },
    "dense_cap": 6000,
    "adjoint_trials": 200,
    "oracle_rhs": 20,
    "tangent": {"mu_scale": 1.0, "nu_scale": 1.0},
    "workers": 1,
    "fd_steps": [1e-3, 1e-4, 1e-5],
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, **cli_overrides) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    for key, val in cli_overrides.items():
        if val is None:
            continue
        if key == "seed":
            cfg["seeds"] = [int(val)]
        elif key == "density":
            cfg = _merge(cfg, {"mesh": {"density": val}})
        elif key == "dense_cap":
            cfg["dense_cap"] = int(val)
        elif key == "tol":
            cfg = _merge(cfg, {"tolerances": {"projector": float(val), "oracle": float(val)}})
        elif key == "out":
            cfg["out"] = val
    cfg.setdefault("out", "out")
    tol = cfg["tolerances"]
    if any(float(t) <= 0 for t in tol.values()):
        raise ConfigError("tolerances must be positive")
    mesh_cfg = cfg["mesh"]
    if mesh_cfg.get("file") is None and int(mesh_cfg.get("genus", 0)) < 2:
        raise ConfigError("genus must be >= 2 (torus geometry only via the cross-check)")
    for f in (mesh_cfg.get("file"), cfg["bundle"].get("generator_file")):
        if f is not None and not os.path.exists(f):
            raise ConfigError(f"referenced file does not exist: {f}")
    return cfg


def build_scene(cfg: dict):
    """Mesh + conformal surface + cocycle from a config."""
    mcfg = cfg["mesh"]
    if mcfg.get("file"):
        mesh = load_mesh(mcfg["file"])
    else:
        mesh = build_polygon_gluing(int(mcfg["genus"]))
    cocycle_mesh = mesh
    bcfg = cfg["bundle"]
    if bcfg.get("generator_file"):
        c0 = load_cocycle(cocycle_mesh, bcfg["generator_file"])
    elif bcfg.get("preset") == "su2":
        c0 = su2_preset(cocycle_mesh)
    elif bcfg.get("preset") == "trivial":
        c0 = trivial_cocycle(cocycle_mesh, int(bcfg.get("n") or 1))
    else:
        raise ConfigError(f"unknown bundle preset {bcfg.get('preset')!r}")
    for _ in range(int(mcfg.get("refinements", 0))):
        child = refine(mesh)
        c0 = bnd.refine_cocycle(c0, child)
        mesh = child
    S = equip_conformal(mesh, layout=mcfg.get("layout", "stored"), density=mcfg.get("density", "uniform"))
    return S, c0


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finish(out_dir: str, name: str, checks: list[dict], extra: dict | None = None) -> int:
    failures = [c for c in checks if not c["pass"]]
    payload = {
        "command": name,
        "checks": checks,
        "failures": [c["name"] for c in failures],
        "passed": not failures,
    }
    if extra:
        payload.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "report.json"), payload)
    for c in checks:
        status = "PASS" if c["pass"] else "FAIL"
        click.echo(f"[{status}] {c['name']}: {c['value']:.3e} (tol {c['tol']:.1e})")
    return 0 if not failures else 1


def _check(name: str, value: float, tol: float) -> dict:
    return {"name": name, "value": float(value), "tol": float(tol), "pass": bool(value <= tol)}


# ---------------------------------------------------------------------------


@click.group()
def main():
    """Moduli-metric verification lab."""


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None)(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", type=click.Path(), default=None)(fn)
    fn = click.option("--dense-cap", type=int, default=None)(fn)
    fn = click.option("--tol", type=float, default=None)(fn)
    fn = click.option(
        "--density", type=click.Choice(["uniform", "hyperbolic"]), default=None
    )(fn)
    return fn


def _load(config_path, **kw) -> dict:
    try:
        return load_config(config_path, **kw)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)


def _scene(cfg: dict):
    from .bundle import CocycleError, RelationError
    from .surface import ChartError, MeshError

    try:
        return build_scene(cfg)
    except (MeshError, ChartError, CocycleError, RelationError, ConfigError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)


@main.command("check-operators")
@_common_options
def cmd_check_operators(config_path, seed, out, dense_cap, tol, density):
    """Operator invariant suite: adjointness, projector algebra, kernel
    dimensions, oracle equivalence."""
    cfg = _load(config_path, seed=seed, out=out, dense_cap=dense_cap, tol=tol, density=density)
    S, c = _scene(cfg)
    tols = cfg["tolerances"]
    cap = int(cfg["dense_cap"])
    cx = bnd.operators(S, c)
    rng = np.random.default_rng(cfg["seeds"][0])
    n = c.rank
    checks = []

    # adjointness residuals over random trials
    worst = 0.0
    for _ in range(int(cfg["adjoint_trials"])):
        f = rng.standard_normal((S.n_vertices, n, n)) + 1j * rng.standard_normal((S.n_vertices, n, n))
        a = rng.standard_normal((S.n_faces, n, n)) + 1j * rng.standard_normal((S.n_faces, n, n))
        fb = bnd.BundleCochain(f, "vertex")
        ab = bnd.BundleCochain(a, (0, 1))
        lhs = bnd.ip_bundle(bnd.twisted_dbar(fb, c, S), ab, c, S)
        rhs = bnd.ip_bundle(fb, bnd.twisted_dbar_star(ab, c, S), c, S)
        scale = max(abs(lhs), abs(rhs), 1.0)
        worst = max(worst, abs(lhs - rhs) / scale)
    checks.append(_check("adjointness_residual", worst, tols["adjointness"]))

    # dense projector algebra
    P = oracle.materialize("projection", c, S, dense_cap=cap)
    M = P.matrix
    s1 = np.sqrt(P.codomain_weight)
    Ms = (M * (1.0 / s1)[None, :]) * s1[:, None]
    checks.append(_check("projector_idempotent", float(np.linalg.norm(Ms @ Ms - Ms, 2)), tols["projector"]))
    checks.append(_check("projector_self_adjoint", float(np.linalg.norm(Ms - Ms.conj().T, 2)), tols["projector"]))
    D = oracle.materialize("dbar", c, S, dense_cap=cap).matrix
    Ds = (D * np.sqrt(P.codomain_weight)[:, None]) / np.sqrt(cx.w0)[None, :]
    checks.append(
        _check(
            "projector_annihilates_dbar",
            float(np.linalg.norm(Ms @ Ds, 2) / max(np.linalg.norm(Ds, 2), 1e-300)),
            tols["projector"],
        )
    )

    # kernel dimension vs commutant
    _, cdim = bnd.is_irreducible(c)
    kdim = bnd.kernel_dimension(c, S)
    checks.append(_check("kernel_equals_commutant", float(abs(kdim - cdim)), 0.5))

    # recorded diagnostics (not assertions): the discrete harmonic spaces
    # of this P1/P0 complex are larger than the smooth dimensions
    g = S.mesh.genus
    harmonic_nu_dim = int(round(float(np.trace(Ms).real)))
    diagnostics = {
        "harmonic_nu_dim": harmonic_nu_dim,
        "smooth_endo_dim": n * n * (g - 1) + 1,
        "smooth_beltrami_dim": 3 * g - 3,
        "faces": S.n_faces,
        "vertices": S.n_vertices,
    }

    # oracle equivalence of the restricted inverse
    lap = oracle.materialize("laplacian", c, S, dense_cap=cap)
    inv = oracle.restricted_inverse_dense(lap)
    worst = 0.0
    for _ in range(int(cfg["oracle_rhs"])):
        h = rng.standard_normal((S.n_vertices, n, n)) + 1j * rng.standard_normal((S.n_vertices, n, n))
        hb = bnd.BundleCochain(h, "vertex")
        x_it = bnd.delta0_inverse(hb, c, S, method="cg").values.reshape(-1)
        x_dn = inv.matrix @ h.reshape(-1)
        worst = max(worst, np.linalg.norm(x_it - x_dn) / max(np.linalg.norm(x_dn), 1e-300))
    checks.append(_check("delta0_iterative_vs_dense", worst, tols["oracle"]))

    sys.exit(
        _finish(
            cfg["out"],
            "check-operators",
            checks,
            {"kernel_dim": kdim, "commutant_dim": cdim, "diagnostics": diagnostics},
        )
    )


def _sample_reports(cfg, S, c, seed):
    tcfg = cfg["tangent"]
    vs = [
        random_tangent(S, c, seed=seed * 10 + i, mu_scale=tcfg["mu_scale"], nu_scale=tcfg["nu_scale"])
        for i in range(4)
    ]
    uni = variation.second_variation_universal(*vs, S, c)
    fib = variation.second_variation_fibered(*vs, S, c)
    diff = variation.difference_report(*vs, S, c)
    return seed, uni, fib, diff


@main.command("second-variation")
@_common_options
def cmd_second_variation(config_path, seed, out, dense_cap, tol, density):
    """Sample harmonic tangent quadruples; emit both coordinate-system
    reports and the difference report per sample."""
    cfg = _load(config_path, seed=seed, out=out, dense_cap=dense_cap, tol=tol, density=density)
    S, c = _scene(cfg)
    tols = cfg["tolerances"]
    seeds = [int(s) for s in cfg["seeds"]]
    workers = int(cfg.get("workers", 1))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda s: _sample_reports(cfg, S, c, s), seeds))
    else:
        results = [_sample_reports(cfg, S, c, s) for s in seeds]
    results.sort(key=lambda r: r[0])
    checks = []
    samples = []
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "terms.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "system", "term", "re", "im"])
        for s, uni, fib, diff in results:
            for rep in (uni, fib, diff):
                for name, val in rep.terms:
                    wr.writerow([s, rep.coordinate_system, name, repr(val.real), repr(val.imag)])
            recon = abs(diff.total - (uni.total - fib.total))
            scale = max(abs(uni.total), abs(fib.total), 1.0)
            checks.append(_check(f"difference_reconciles_seed{s}", recon / scale, tols["difference"]))
            samples.append(
                {
                    "seed": s,
                    "universal": uni.to_json_dict(),
                    "fibered": fib.to_json_dict(),
                    "difference": diff.to_json_dict(),
                }
            )
    sys.exit(_finish(cfg["out"], "second-variation", checks, {"samples": samples}))


@main.command("positivity")
@_common_options
def cmd_positivity(config_path, seed, out, dense_cap, tol, density):
    """Positivity certificate over seeded samples, with CSV and plot data."""
    cfg = _load(config_path, seed=seed, out=out, dense_cap=dense_cap, tol=tol, density=density)
    S, c = _scene(cfg)
    seeds = [int(s) for s in cfg["seeds"]]
    rows = []
    for s in seeds:
        v = random_tangent(S, c, seed=s)
        a, b, total = variation.positivity_certificate(v.mu, bnd.BundleCochain(v.nu.values, (0, 1)), S, c)
        mu_norm = float(np.sqrt(np.sum(S.density * S.area * np.abs(v.mu.values) ** 2)))
        nu_norm = float(np.sqrt(abs(np.sum(2.0 * S.area * np.einsum("fab,fab->f", v.nu.values, np.conj(v.nu.values))))))
        rows.append((s, a, b, total, mu_norm * nu_norm))
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "positivity.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "term_a", "term_b", "total"])
        for s, a, b, total, _ in rows:
            wr.writerow([s, repr(a), repr(b), repr(total)])
    with open(os.path.join(cfg["out"], "plotdata.tsv"), "w") as fh:
        fh.write("norm_product\ttotal\n")
        for s, a, b, total, np_ in rows:
            fh.write(f"{np_!r}\t{total!r}\n")
    checks = []
    for s, a, b, total, _ in rows:
        checks.append(_check(f"term_a_nonneg_seed{s}", max(0.0, -a), 1e-12 * max(abs(total), 1.0)))
        checks.append(_check(f"total_positive_seed{s}", 0.0 if total > 0 else 1.0, 0.5))
    sys.exit(_finish(cfg["out"], "positivity", checks, {"rows": [list(map(float, r[:4])) for r in rows]}))


@main.command("projector-derivative")
@_common_options
def cmd_projector_derivative(config_path, seed, out, dense_cap, tol, density):
    """Finite-difference projector-derivative identity over step sizes."""
    cfg = _load(config_path, seed=seed, out=out, dense_cap=dense_cap, tol=tol, density=density)
    S, c = _scene(cfg)
    tols = cfg["tolerances"]
    steps = [float(h) for h in cfg["fd_steps"]]
    sweep = variation.projector_derivative_sweep(S, c, steps=steps, seed=cfg["seeds"][0])
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "fd_errors.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "rel_error"])
        for h in sorted(sweep["errors"], reverse=True):
            wr.writerow([repr(h), repr(sweep["errors"][h])])
    checks = [
        _check("fd_error_at_1e-4", sweep["errors"].get(1e-4, max(sweep["errors"].values())), tols["fd_error"]),
        _check("loglog_slope_near_2", abs(sweep["slope"] - 2.0), tols["slope"]),
    ]
    sys.exit(_finish(cfg["out"], "projector-derivative", checks, {"slope": sweep["slope"]}))


if __name__ == "__main__":
    main()
