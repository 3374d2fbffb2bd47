"""Scenario orchestrator and command-line entry point.

Wires the modules into named desk-scale experiments, runs them across a
refinement ladder, and writes versioned CSV/JSON artifacts:

    out/<scenario>/<rung>/diagnostics.csv     per-rung raw series
    out/<scenario>/<rung>/summary.json        per-rung numbers
    out/<scenario>/table.csv                  one row per rung (value, error, order)
    out/<scenario>/summary.json               verdict + checks

Configs are TOML with every asserted tolerance explicit in the file.
Exit codes: 0 pass, 2 tolerance fail, 3 config error, 4 aborted flow.
Serial runs are reproducible byte-for-byte; ladder rungs are independent
and may run on a thread pool.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigInvalid, MismatchedScenarios, TorusflowError
from .flow import FlowConfig, barrier_check, decay_fit, run_flow
from .conjheat import monotone_functional_check, solve_conjugate
from .geometry import BackgroundMetric, MetricField, classical_curvature, distributional_pairing
from .grid import GridSpec, integrate
from .mollify import mollification_report, mollify_metric
from .singular import SingularMetricSpec, build_cutoffs, make_singular_metric
from .testfunctions import standard_library

SCHEMA_SUMMARY = "torusflow.summary.v1"
SCHEMA_TABLE = "torusflow.table.v1"

SCENARIOS = {}
SCENARIO_DOCS = {
    "smooth_consistency": "weak pairing vs classical curvature integral on smooth metrics",
    "background_independence": "pairing under flat vs conformally perturbed reference metric",
    "mollify_convergence": "normalized pairing error decay under kernel-radius halving",
    "cutoff_decay": "gradient integrals of cutoff families around a singular point",
    "flow_smooth": "flow from smooth data: scalar minimum monotone, norm barrier",
    "flow_singular_floor": "curvature floor preserved along the flow from mollified cone data",
    "conjugate_monotonicity": "monotone curvature functional along backward heat transport",
    "torus_rigidity_probe": "near-flat Lipschitz wrinkle: Ricci sup-norm trend under the flow",
    "decay_exponents": "log-log decay slopes of derivative and curvature sup-norms",
    "barrier_10A": "factor-of-ten gradient Lp barrier on completed runs",
}


def scenario(name):
    def wrap(fn):
        SCENARIOS[name] = fn
        return fn
    return wrap


# ---------------------------------------------------------------------------
# config and artifact helpers
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigInvalid(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config parse error in {path}: {exc}") from exc


def _need(cfg: dict, *keys):
    node = cfg
    trail = []
    for key in keys:
        trail.append(key)
        if not isinstance(node, dict) or key not in node:
            raise ConfigInvalid(f"missing config key: {'.'.join(trail)}")
        node = node[key]
    return node


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: Path, payload: dict):
    _atomic_write(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, schema: str, columns, rows):
    lines = [f"# schema: {schema}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _fit_order(spacings, errors):
    spacings = np.asarray(spacings, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0.0) or len(errors) < 2:
        return None
    return float(np.polyfit(np.log(spacings), np.log(errors), 1)[0])


def _metric_from_config(mcfg: dict, grid: GridSpec):
    """Build the test metric named by [metric]; returns (metric, extra dict)."""
    kind = _need(mcfg, "kind")
    if kind == "flat":
        return MetricField.flat(grid), {}
    if kind == "conformal":
        import sympy as sp

        expr = sp.sympify(_need(mcfg, "expression"),
                          locals={f"x{i+1}": sp.Symbol(f"x{i+1}") for i in range(grid.dimension)}
                          | {"pi": sp.pi})
        xs = sp.symbols(f"x1:{grid.dimension + 1}")
        fn = sp.lambdify(xs, expr, "numpy")
        u = np.broadcast_to(np.asarray(fn(*grid.meshes()), dtype=float), grid.shape).copy()
        return MetricField.conformal_flat(grid, u), {}
    if kind in ("cone_point", "cone_circle", "interface_stripe"):
        spec = SingularMetricSpec(
            kind=kind,
            amplitude=_need(mcfg, "amplitude"),
            alpha=mcfg.get("alpha", 0.5),
            center=tuple(_need(mcfg, "center")),
            profile_radius=mcfg.get("profile_radius", 0.25),
            stripe_width=mcfg.get("stripe_width", 0.15),
        )
        g, a_floor = make_singular_metric(spec, grid)
        return g, {"spec": spec, "a_floor": a_floor}
    raise ConfigInvalid(f"unknown metric kind {kind!r}")


def _background_from_config(bcfg: dict, grid: GridSpec) -> BackgroundMetric:
    kind = bcfg.get("kind", "flat") if bcfg else "flat"
    if kind == "flat":
        return BackgroundMetric.flat(grid)
    if kind == "conformal":
        return BackgroundMetric.conformal(grid, _need(bcfg, "expression"), name="conformal_bg")
    raise ConfigInvalid(f"unknown background kind {kind!r}")


def _flow_config(fcfg: dict, extra_checkpoints=()) -> FlowConfig:
    return FlowConfig(
        T0=_need(fcfg, "T0"),
        p=_need(fcfg, "p"),
        dt_policy=fcfg.get("dt_policy", "cfl"),
        c_cfl=fcfg.get("c_cfl", 0.25),
        dt_fixed=fcfg.get("dt_fixed"),
        scheme=fcfg.get("scheme", "explicit_rk2"),
        checkpoint_times=tuple(fcfg.get("checkpoint_times", ())) + tuple(extra_checkpoints),
        fairness_eps=fcfg.get("fairness_eps", 0.25),
        rhs_cross_check=fcfg.get("rhs_cross_check", True),
    )


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _map_rungs(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _pairing_rung(cfg, n_res, outdir, second_bg=None):
    """Shared machinery of the two static pairing scenarios."""
    grid = GridSpec(_need(cfg, "grid", "dimension"), n_res,
                    cfg["grid"].get("derivative_order", 2))
    g, _ = _metric_from_config(_need(cfg, "metric"), grid)
    bg = _background_from_config(cfg.get("background"), grid)
    lib = standard_library()
    curv = classical_curvature(g, want_riemann=False)
    rho_g = g.sqrt_det()
    rows = []
    worst = 0.0
    scale = 0.0
    gauss_bonnet = None
    bg2 = _background_from_config(second_bg, grid) if second_bg else None
    for u in lib:
        phi = u.sample(grid)
        rep = distributional_pairing(g, bg, phi, u.name)
        classical = integrate(curv.scalar.values * phi.values, rho_g, grid=grid)
        if u.name == "one":
            gauss_bonnet = rep.value
        if bg2 is not None:
            rep2 = distributional_pairing(g, bg2, phi, u.name)
            err = abs(rep.value - rep2.value)
            rows.append((u.name, rep.value, rep2.value, err))
        else:
            err = abs(rep.value - classical)
            rows.append((u.name, rep.value, rep.v_part, rep.f_part, classical, err))
        worst = max(worst, err)
        scale = max(scale, abs(classical))
    columns = ("test_function", "pairing_flat", "pairing_perturbed", "abs_diff") if bg2 is not None \
        else ("test_function", "pairing", "v_part", "f_part", "classical", "abs_error")
    write_csv(outdir / "diagnostics.csv", "torusflow.pairing.v1", columns, rows)
    summary = {
        "resolution": n_res,
        "max_abs_error": worst,
        "scale": scale,
        "rel_error": worst / scale if scale > 0 else 0.0,
        "gauss_bonnet_value": gauss_bonnet,
    }
    write_json(outdir / "summary.json", {"schema": SCHEMA_SUMMARY} | summary)
    return summary


@scenario("smooth_consistency")
def _run_smooth_consistency(cfg, outdir, rng, threads=1):
    resolutions = _need(cfg, "grid", "resolutions")
    tol = _need(cfg, "tolerances")
    min_order = _need(tol, "min_order")
    max_rel = _need(tol, "max_rel_error")
    gb_tol = _need(tol, "gauss_bonnet_abs")

    summaries = _map_rungs(lambda n: _pairing_rung(cfg, n, outdir / str(n)),
                           resolutions, threads)
    errors = [s["max_abs_error"] for s in summaries]
    order = _fit_order([1.0 / n for n in resolutions], errors)
    finest_rel = summaries[-1]["rel_error"]
    gb_vals = [abs(s["gauss_bonnet_value"]) for s in summaries]

    rows = []
    for i, (n, s) in enumerate(zip(resolutions, summaries)):
        local = None if i == 0 else float(np.log2(errors[i - 1] / errors[i]))
        rows.append((n, s["max_abs_error"], s["rel_error"], local if local is not None else ""))
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("resolution", "error", "rel_error", "order_vs_previous"), rows)

    checks = {
        "fitted_order": order,
        "fitted_order_ok": order is not None and order >= min_order,
        "finest_rel_error": finest_rel,
        "finest_rel_error_ok": finest_rel <= max_rel,
        "gauss_bonnet_finest": gb_vals[-1],
        "gauss_bonnet_ok": gb_vals[-1] <= gb_tol,
    }
    passed = checks["fitted_order_ok"] and checks["finest_rel_error_ok"] and checks["gauss_bonnet_ok"]
    return passed, {"checks": checks, "rungs": summaries, "tolerances": dict(tol)}


@scenario("background_independence")
def _run_background_independence(cfg, outdir, rng, threads=1):
    resolutions = _need(cfg, "grid", "resolutions")
    tol = _need(cfg, "tolerances")
    min_order = _need(tol, "min_order")
    max_rel = _need(tol, "max_rel_diff")
    second = _need(cfg, "background_perturbed")

    summaries = _map_rungs(lambda n: _pairing_rung(cfg, n, outdir / str(n), second_bg=second),
                           resolutions, threads)
    diffs = [s["max_abs_error"] for s in summaries]
    order = _fit_order([1.0 / n for n in resolutions], diffs)
    finest_rel = summaries[-1]["rel_error"]

    rows = [(n, s["max_abs_error"], s["rel_error"]) for n, s in zip(resolutions, summaries)]
    write_csv(outdir / "table.csv", SCHEMA_TABLE, ("resolution", "abs_diff", "rel_diff"), rows)
    checks = {
        "fitted_order": order,
        "fitted_order_ok": order is not None and order >= min_order,
        "finest_rel_diff": finest_rel,
        "finest_rel_diff_ok": finest_rel <= max_rel,
    }
    passed = checks["fitted_order_ok"] and checks["finest_rel_diff_ok"]
    return passed, {"checks": checks, "rungs": summaries, "tolerances": dict(tol)}


@scenario("mollify_convergence")
def _run_mollify_convergence(cfg, outdir, rng, threads=1):
    n_res = _need(cfg, "grid", "resolution")
    grid = GridSpec(_need(cfg, "grid", "dimension"), n_res, cfg["grid"].get("derivative_order", 2))
    tol = _need(cfg, "tolerances")
    max_final_ratio = _need(tol, "max_final_ratio")
    g, extra = _metric_from_config(_need(cfg, "metric"), grid)
    bg = _background_from_config(cfg.get("background"), grid)
    deltas = [float(d) for d in _need(cfg, "mollify", "deltas")]
    p = _need(cfg, "mollify", "p")
    rep = mollification_report(g, bg, deltas, p=p, epsilon=_need(cfg, "mollify", "epsilon"))
    (outdir / "rung0").mkdir(parents=True, exist_ok=True)
    rep.to_csv(outdir / "rung0" / "diagnostics.csv")
    strictly_dec = all(b < a for a, b in zip(rep.pairing_errors, rep.pairing_errors[1:]))
    ratio = rep.pairing_errors[-1] / rep.pairing_errors[0]
    rows = [(d, c, w, e) for d, c, w, e in
            zip(rep.delta_sequence, rep.c0_errors, rep.w1p_errors, rep.pairing_errors)]
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("delta", "c0_error", "w1p_error", "pairing_error"), rows)
    checks = {
        "strictly_decreasing": strictly_dec,
        "final_over_initial": ratio,
        "final_over_initial_ok": ratio <= max_final_ratio,
        "delta0_estimate": rep.delta0_estimate,
    }
    rung_summary = {
        "resolution": n_res,
        "pairing_errors": rep.pairing_errors,
        "c0_errors": rep.c0_errors,
        "w1p_errors": rep.w1p_errors,
        "a_floor": extra.get("a_floor"),
    }
    write_json(outdir / "rung0" / "summary.json", {"schema": SCHEMA_SUMMARY} | rung_summary)
    passed = strictly_dec and checks["final_over_initial_ok"]
    return passed, {"checks": checks, "rungs": [rung_summary], "tolerances": dict(tol)}


@scenario("cutoff_decay")
def _run_cutoff_decay(cfg, outdir, rng, threads=1):
    n_res = _need(cfg, "grid", "resolution")
    grid = GridSpec(_need(cfg, "grid", "dimension"), n_res, cfg["grid"].get("derivative_order", 2))
    tol = _need(cfg, "tolerances")
    max_exponent_gap = _need(tol, "max_exponent_gap")
    _, extra = _metric_from_config(_need(cfg, "metric"), grid)
    spec = extra["spec"]
    q = _need(cfg, "cutoff", "q")
    eps_seq = [float(e) for e in _need(cfg, "cutoff", "eps_sequence")]
    fam = build_cutoffs(spec, eps_seq, q=q, grid=grid)
    fitted = fam.fitted_exponent()
    rows = list(zip(fam.eps_sequence, fam.gradient_integrals))
    (outdir / "rung0").mkdir(parents=True, exist_ok=True)
    write_csv(outdir / "rung0" / "diagnostics.csv", "torusflow.cutoff.v1",
              ("eps", "gradient_integral"), rows)
    write_csv(outdir / "table.csv", SCHEMA_TABLE, ("eps", "gradient_integral"), rows)
    strictly_dec = all(b < a for a, b in zip(fam.gradient_integrals, fam.gradient_integrals[1:]))
    checks = {
        "fitted_exponent": fitted,
        "closed_form_exponent": fam.decay_exponent_closed_form,
        "exponent_gap": abs(fitted - fam.decay_exponent_closed_form),
        "exponent_gap_ok": abs(fitted - fam.decay_exponent_closed_form) <= max_exponent_gap,
        "strictly_decreasing": strictly_dec,
        "applicable": fam.applicable,
    }
    rung_summary = {"resolution": n_res, "q": q, "fitted_exponent": fitted,
                    "gradient_integrals": [float(v) for v in fam.gradient_integrals]}
    write_json(outdir / "rung0" / "summary.json", {"schema": SCHEMA_SUMMARY} | rung_summary)
    passed = strictly_dec and checks["exponent_gap_ok"] and fam.applicable
    return passed, {"checks": checks, "rungs": [rung_summary], "tolerances": dict(tol)}


@contextmanager
def _rung_context(label):
    """Annotate propagated module errors with the rung they came from."""
    try:
        yield
    except TorusflowError as exc:
        raise type(exc)(f"[rung {label}] {exc}") from exc


def _flow_rung(cfg, n_res, delta, outdir, extra_checkpoints=()):
    """Build (possibly mollified) data at one resolution and run the flow;
    diagnostics stream to CSV row by row (partial series survive aborts)."""
    with _rung_context(n_res):
        grid = GridSpec(_need(cfg, "grid", "dimension"), n_res,
                        cfg["grid"].get("derivative_order", 2))
        g, extra = _metric_from_config(_need(cfg, "metric"), grid)
        bg = _background_from_config(cfg.get("background"), grid)
        if delta is not None:
            g = mollify_metric(g, float(delta))
        fc = _flow_config(_need(cfg, "flow"), extra_checkpoints)
        traj = run_flow(g, bg, fc, stream_csv=outdir / "diagnostics.csv")
    return traj, extra


@scenario("flow_smooth")
def _run_flow_smooth(cfg, outdir, rng, threads=1):
    resolutions = _need(cfg, "grid", "resolutions")
    tol = _need(cfg, "tolerances")
    eps_factor = _need(tol, "min_R_step_eps_factor")
    rungs = []
    all_ok = True
    aborted = False
    for n in resolutions:
        rung_dir = outdir / str(n)
        rung_dir.mkdir(parents=True, exist_ok=True)
        traj, _ = _flow_rung(cfg, n, None, rung_dir)
        minR = traj.diagnostics["min_R"]
        drops = np.diff(minR)
        slack = eps_factor * (1.0 + np.abs(minR[:-1]))
        monotone = bool(np.all(drops >= -slack))
        barrier = barrier_check(traj)
        summary = {
            "resolution": n,
            "status": traj.status,
            "min_R_monotone": monotone,
            "worst_step_drop": float(drops.min()) if drops.size else 0.0,
            "barrier_passed": barrier.passed,
            "barrier_factor": barrier.factor,
            "A": barrier.A,
            "steps": int(len(traj.times)),
        }
        write_json(rung_dir / "summary.json", {"schema": SCHEMA_SUMMARY} | summary)
        rungs.append(summary)
        aborted |= traj.status != "completed"
        all_ok &= monotone and bool(barrier.passed) and traj.status == "completed"
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("resolution", "status", "worst_step_drop", "barrier_factor"),
              [(r["resolution"], r["status"], r["worst_step_drop"], r["barrier_factor"])
               for r in rungs])
    checks = {"all_completed": not aborted, "all_monotone_and_barrier": all_ok}
    result = {"checks": checks, "rungs": rungs, "tolerances": dict(tol)}
    if aborted:
        result["aborted"] = True
    return all_ok, result


@scenario("flow_singular_floor")
def _run_flow_singular_floor(cfg, outdir, rng, threads=1):
    ladder = _need(cfg, "ladder")
    tol = _need(cfg, "tolerances")
    floor_frac = _need(tol, "floor_violation_frac")
    window_frac = _need(tol, "window_start_frac")
    rungs = []
    aborted = False
    for rung in ladder:
        n = int(_need(rung, "resolution"))
        delta = float(_need(rung, "delta"))
        rung_dir = outdir / str(n)
        rung_dir.mkdir(parents=True, exist_ok=True)
        traj, extra = _flow_rung(cfg, n, delta, rung_dir)
        a_floor = extra["a_floor"]
        ts = traj.diagnostics["t"]
        minR = traj.diagnostics["min_R"]
        T0 = traj.config.T0
        win = ts >= window_frac * T0
        min_over_window = float(minR[win].min())
        violation = max(0.0, a_floor - min_over_window)
        barrier = barrier_check(traj)
        summary = {
            "resolution": n,
            "delta": delta,
            "status": traj.status,
            "a_floor": a_floor,
            "min_R_over_window": min_over_window,
            "violation": violation,
            "violation_allowance": floor_frac * abs(a_floor),
            "barrier_passed": barrier.passed,
            "barrier_factor": barrier.factor,
        }
        write_json(rung_dir / "summary.json", {"schema": SCHEMA_SUMMARY} | summary)
        rungs.append(summary)
        aborted |= traj.status != "completed"
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("resolution", "delta", "a_floor", "min_R_over_window", "violation"),
              [(r["resolution"], r["delta"], r["a_floor"], r["min_R_over_window"], r["violation"])
               for r in rungs])
    finest = rungs[-1]
    halving_ok = True
    if len(rungs) >= 2:
        halving_ok = finest["violation"] <= 0.5 * rungs[-2]["violation"] + 1e-12
    checks = {
        "all_completed": not aborted,
        "floor_ok": finest["violation"] <= finest["violation_allowance"],
        "violation_halving_ok": halving_ok,
        "barriers_ok": all(bool(r["barrier_passed"]) for r in rungs),
    }
    passed = all(checks.values())
    result = {"checks": checks, "rungs": rungs, "tolerances": dict(tol)}
    if aborted:
        result["aborted"] = True
    return passed, result


@scenario("conjugate_monotonicity")
def _run_conjugate_monotonicity(cfg, outdir, rng, threads=1):
    tol = _need(cfg, "tolerances")
    eps_factor = _need(tol, "eps_mono_factor")
    min_steps = _need(tol, "min_steps")
    backgrounds = _need(cfg, "backgrounds")
    conj = _need(cfg, "conjugate")
    rungs = []
    passed = True
    aborted = False
    for bg_cfg in backgrounds:
        label = _need(bg_cfg, "label")
        rung_dir = outdir / label
        rung_dir.mkdir(parents=True, exist_ok=True)
        sub = dict(cfg)
        sub["metric"] = _need(bg_cfg, "metric")
        sub["flow"] = _need(bg_cfg, "flow")
        n = int(_need(bg_cfg, "resolution"))
        delta = bg_cfg.get("delta")
        traj, extra = _flow_rung(sub, n, delta, rung_dir)
        aborted |= traj.status != "completed"
        T0 = traj.config.T0
        if "a_floor" in extra:
            a = extra["a_floor"]
        else:
            a = float(np.min(traj.diagnostics["min_R"]))
        lib = {u.name: u for u in standard_library()}
        for phi_name in _need(conj, "terminal_functions"):
            phi = lib[phi_name].sample(traj.grid)
            sol = solve_conjugate(traj, phi, T=T0, t_min=_need(conj, "t_min_frac") * T0,
                                  a=a, c_cfl=conj.get("c_cfl", 0.25),
                                  terminal_name=phi_name)
            rep = monotone_functional_check(sol, eps_factor=eps_factor)
            sol.series_to_csv(rung_dir / f"conjugate_{phi_name}.csv")
            summary = {
                "background": label,
                "terminal": phi_name,
                "a": a,
                "passed": rep.passed,
                "min_step_increment": rep.min_step_increment,
                "eps_mono": rep.eps_mono,
                "steps": rep.n_steps,
                "steps_ok": rep.n_steps >= min_steps,
                "max_ibp_residual": rep.max_ibp_residual,
            }
            rungs.append(summary)
            passed &= rep.passed and summary["steps_ok"]
        write_json(rung_dir / "summary.json",
                   {"schema": SCHEMA_SUMMARY,
                    "rows": [r for r in rungs if r["background"] == label]})
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("background", "terminal", "min_step_increment", "eps_mono", "steps"),
              [(r["background"], r["terminal"], r["min_step_increment"], r["eps_mono"], r["steps"])
               for r in rungs])
    checks = {"all_monotone": passed, "all_completed": not aborted}
    result = {"checks": checks, "rungs": rungs, "tolerances": dict(tol)}
    if aborted:
        result["aborted"] = True
    return passed and not aborted, result


@scenario("torus_rigidity_probe")
def _run_torus_rigidity_probe(cfg, outdir, rng, threads=1):
    n = _need(cfg, "grid", "resolution")
    grid = GridSpec(_need(cfg, "grid", "dimension"), n, cfg["grid"].get("derivative_order", 2))
    tol = _need(cfg, "tolerances")
    wr = _need(cfg, "wrinkle")
    count = _need(wr, "count")
    amplitude = _need(wr, "amplitude")
    width = _need(wr, "width")

    # seeded Lipschitz wrinkle: randomly placed axis-aligned ridges; the
    # parameters are drawn once so the profile can be resampled exactly
    ridges = [
        (int(rng.integers(0, grid.dimension)), float(rng.uniform(0.0, 1.0)),
         1.0 if rng.uniform() < 0.5 else -1.0)
        for _ in range(count)
    ]

    def wrinkle_profile(gr):
        meshes = gr.meshes()
        u = np.zeros(gr.shape)
        for axis, center, sign in ridges:
            d = np.abs((meshes[axis] - center) - np.round(meshes[axis] - center))
            u += sign * amplitude * np.clip(1.0 - d / width, 0.0, None) ** 2
        return u

    def kink_distance(gr):
        meshes = gr.meshes()
        d = np.full(gr.shape, np.inf)
        for axis, center, _ in ridges:
            da = np.abs((meshes[axis] - center) - np.round(meshes[axis] - center))
            d = np.minimum(d, da)
        return d

    g_raw = MetricField.conformal_flat(grid, wrinkle_profile(grid), name="wrinkle")
    fine = grid.refine(2)
    g_fine = MetricField.conformal_flat(fine, wrinkle_profile(fine))
    scal_fine = classical_curvature(g_fine, want_riemann=False).scalar.values
    outside = kink_distance(fine) > 3.0 * grid.spacing
    a_floor = float(np.min(scal_fine[outside]))

    # Lipschitz data enters the flow through its mollified family
    g0 = mollify_metric(g_raw, float(_need(wr, "delta")))

    rung_dir = outdir / str(n)
    rung_dir.mkdir(parents=True, exist_ok=True)
    fc = _flow_config(_need(cfg, "flow"))
    bg = BackgroundMetric.flat(grid)
    traj = run_flow(g0, bg, fc)
    traj.diagnostics_to_csv(rung_dir / "diagnostics.csv")
    ts = traj.diagnostics["t"]
    sup_ric = traj.diagnostics["sup_ric"]
    T0 = fc.T0
    early = sup_ric[np.argmin(np.abs(ts - 0.5 * T0))]
    late = sup_ric[-1]
    decreasing = bool(late < early)
    checks = {
        "completed": traj.status == "completed",
        "a_floor": a_floor,
        "a_floor_negative": a_floor < 0.0,
        "sup_ric_halfway": float(early),
        "sup_ric_final": float(late),
        "sup_ric_decreasing": decreasing,
        "rigidity_statement": "reported only: strict rigidity is not numerically decidable",
    }
    summary = {"resolution": n, "status": traj.status, "a_floor_estimate": a_floor,
               "ridges": [[axis, center, sign] for axis, center, sign in ridges]}
    write_json(rung_dir / "summary.json", {"schema": SCHEMA_SUMMARY} | summary)
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("resolution", "sup_ric_halfway", "sup_ric_final"),
              [(n, float(early), float(late))])
    passed = checks["completed"] and decreasing
    result = {"checks": checks, "rungs": [summary], "tolerances": dict(tol)}
    if traj.status != "completed":
        result["aborted"] = True
    return passed, result


@scenario("decay_exponents")
def _run_decay_exponents(cfg, outdir, rng, threads=1):
    ladder = _need(cfg, "ladder")
    tol = _need(cfg, "tolerances")
    window = tuple(_need(cfg, "fit", "window"))
    rungs = []
    passed = True
    aborted = False
    for rung in ladder:
        n = int(_need(rung, "resolution"))
        delta = float(_need(rung, "delta"))
        rung_dir = outdir / str(n)
        rung_dir.mkdir(parents=True, exist_ok=True)
        traj, _ = _flow_rung(cfg, n, delta, rung_dir)
        aborted |= traj.status != "completed"
        barrier = barrier_check(traj)
        for quantity in ("grad_g", "grad2_g", "rm"):
            fit = decay_fit(traj, quantity, window)
            summary = {
                "resolution": n,
                "quantity": quantity,
                "slope": fit.slope,
                "theory_exponent": fit.theory_exponent,
                "bound": fit.bound,
                "passed": fit.passed,
                "n_samples": fit.n_samples,
                "barrier_passed": barrier.passed,
            }
            rungs.append(summary)
            passed &= fit.passed
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("resolution", "quantity", "slope", "bound", "passed"),
              [(r["resolution"], r["quantity"], r["slope"], r["bound"], r["passed"])
               for r in rungs])
    for n in {r["resolution"] for r in rungs}:
        write_json(outdir / str(n) / "summary.json",
                   {"schema": SCHEMA_SUMMARY,
                    "fits": [r for r in rungs if r["resolution"] == n],
                    "window": list(window)})
    checks = {"all_bounds_ok": passed, "all_completed": not aborted, "window": list(window)}
    result = {"checks": checks, "rungs": rungs, "tolerances": dict(tol)}
    if aborted:
        result["aborted"] = True
    return passed and not aborted, result


@scenario("barrier_10A")
def _run_barrier_10A(cfg, outdir, rng, threads=1):
    tol = _need(cfg, "tolerances")
    runs = _need(cfg, "runs")
    rungs = []
    passed = True
    aborted = False
    for run_cfg in runs:
        label = _need(run_cfg, "label")
        rung_dir = outdir / label
        rung_dir.mkdir(parents=True, exist_ok=True)
        sub = dict(cfg)
        sub["metric"] = _need(run_cfg, "metric")
        sub["flow"] = _need(run_cfg, "flow")
        traj, _ = _flow_rung(sub, int(_need(run_cfg, "resolution")), run_cfg.get("delta"), rung_dir)
        rep = barrier_check(traj)
        summary = {
            "label": label,
            "status": traj.status,
            "applicable": rep.applicable,
            "passed": rep.passed,
            "A": rep.A,
            "factor": rep.factor,
        }
        write_json(rung_dir / "summary.json", {"schema": SCHEMA_SUMMARY} | summary)
        rungs.append(summary)
        aborted |= traj.status != "completed"
        passed &= bool(rep.passed) if rep.applicable else True
    write_csv(outdir / "table.csv", SCHEMA_TABLE,
              ("label", "status", "A", "factor"),
              [(r["label"], r["status"], r["A"], r["factor"]) for r in rungs])
    checks = {"all_barriers_ok": passed, "all_completed": not aborted}
    result = {"checks": checks, "rungs": rungs, "tolerances": dict(tol)}
    if aborted:
        result["aborted"] = True
    return passed and not aborted, result


# ---------------------------------------------------------------------------
# driver, comparison, CLI
# ---------------------------------------------------------------------------

def run_scenario(cfg: dict, out_root, threads: int = 1, seed=None) -> dict:
    """Execute one scenario config; returns the scenario summary dict with
    an ``exit_code`` field (0 pass, 2 tolerance fail, 4 aborted flow)."""
    name = _need(cfg, "scenario", "name")
    if name not in SCENARIOS:
        raise ConfigInvalid(f"unknown scenario name {name!r}")
    outdir = Path(out_root) / name
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed if seed is not None else cfg["scenario"].get("seed", 0))
    passed, result = SCENARIOS[name](cfg, outdir, rng, threads=threads)
    exit_code = 0 if passed else (4 if result.get("aborted") else 2)
    summary = {
        "schema": SCHEMA_SUMMARY,
        "scenario": name,
        "passed": bool(passed),
        "exit_code": exit_code,
    } | result
    write_json(outdir / "summary.json", summary)
    return summary


def _collect_numbers(node, prefix=""):
    out = {}
    if isinstance(node, dict):
        for k in sorted(node):
            out |= _collect_numbers(node[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(node, list):
        for i, v in enumerate(node):
            out |= _collect_numbers(v, f"{prefix}[{i}]")
    elif isinstance(node, bool):
        out[prefix] = float(node)
    elif isinstance(node, (int, float)) and node is not None:
        out[prefix] = float(node)
    return out


def compare_runs(dir_a, dir_b, rtol: float = 1e-8) -> dict:
    """Relative differences between two runs of the same scenario."""
    with open(Path(dir_a) / "summary.json") as fh:
        sa = json.load(fh)
    with open(Path(dir_b) / "summary.json") as fh:
        sb = json.load(fh)
    if sa.get("scenario") != sb.get("scenario"):
        raise MismatchedScenarios(f"{sa.get('scenario')} vs {sb.get('scenario')}")
    na, nb = _collect_numbers(sa), _collect_numbers(sb)
    if set(na) != set(nb):
        raise MismatchedScenarios("runs expose different numeric keys (different ladders?)")
    drift = {}
    for key in sorted(na):
        a, b = na[key], nb[key]
        scale = max(abs(a), abs(b), 1e-300)
        rel = abs(a - b) / scale
        if rel > rtol:
            drift[key] = {"a": a, "b": b, "rel": rel}
    return {"scenario": sa["scenario"], "keys_compared": len(na),
            "drift": drift, "identical_within_tol": not drift}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="torusflow-lab",
                                     description="desk-scale experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_cmp = sub.add_parser("compare", help="diff two run directories")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--rtol", type=float, default=1e-8)
    sub.add_parser("list-scenarios", help="list known scenario names")
    args = parser.parse_args(argv)

    if args.command == "list-scenarios":
        for name in sorted(SCENARIOS):
            print(f"{name:28s} {SCENARIO_DOCS.get(name, '')}")
        return 0
    if args.command == "compare":
        try:
            rep = compare_runs(args.dir_a, args.dir_b, rtol=args.rtol)
        except MismatchedScenarios as exc:
            print(f"mismatched scenarios: {exc}", file=sys.stderr)
            return 3
        print(json.dumps(rep, sort_keys=True, indent=2))
        return 0 if rep["identical_within_tol"] else 2
    try:
        cfg = load_config(args.config)
        summary = run_scenario(cfg, args.out, threads=args.threads, seed=args.seed)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except TorusflowError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 4
    print(f"{summary['scenario']}: {'PASS' if summary['passed'] else 'FAIL'} "
          f"(exit {summary['exit_code']})")
    return summary["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
