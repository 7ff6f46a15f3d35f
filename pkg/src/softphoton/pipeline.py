"""End-to-end runs: simulate both time directions, scatter, measure, judge.

Every number in ``report.json`` comes from an artifact written next to it.
The report is deterministic for a given scenario (wall-clock timings go to a
separate ``timings.json``), so reruns compare byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coherent import CoherentProfile, fibonacci_directions, ir_match_check
from .dynamics import SimulationResult, SystemState, make_pulse, simulate, slave_longitudinal, soliton_state
from .matter import ChargeModel
from .observables import (check_ir_conservation, flux_average, ir_extract, soft_photon_residual,
                          spatial_tail, transverse_formula_electric, _angular_norm)
from .scattering import ScatterResult, deviation, scattered_field, wave_operator_diagnostic, with_convergence
from .scenario import Scenario, dump_scenario
from .spectral import KGrid, build_kgrid, enforce_hermitian, write_field

log = logging.getLogger(__name__)


def _num(x):
    """JSON-safe float (inf/nan become strings so the file stays strict JSON)."""
    x = float(x)
    if np.isfinite(x):
        return x
    return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")


def _strict(obj):
    """Recursively replace non-finite floats, which ``json`` would emit as bare NaN."""
    if isinstance(obj, dict):
        return {k: _strict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strict(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _write_json(path: Path, obj):
    text = json.dumps(_strict(obj), indent=2, sort_keys=True, default=_num, allow_nan=False)
    path.write_text(text + "\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if not isinstance(x, str) else x for x in r])


@dataclass
class RunContext:
    """Intermediate results shared by pipeline stages."""

    scenario: Scenario
    out: Path
    grid: KGrid
    model: ChargeModel
    initial: SystemState
    forward: SimulationResult | None = None
    backward: SimulationResult | None = None
    sc_plus: ScatterResult | None = None
    sc_minus: ScatterResult | None = None
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def build_context(scenario: Scenario, out_dir) -> RunContext:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = scenario.grid
    grid = build_kgrid(g.n_radial, g.k_min, g.k_max, g.n_polar, g.n_azimuth, g.k_knee)
    m = scenario.model
    model = ChargeModel(m.e, m.m, m.r_phi)
    ini = scenario.initial
    state = soliton_state(grid, model, ini.v0, ini.q0)
    fields = state.fields
    if ini.pulse is not None:
        p = ini.pulse
        fields = fields + make_pulse(grid, p.k0, p.width, p.amplitude, p.polarization,
                                     p.direction, p.center)
    fields = slave_longitudinal(enforce_hermitian(fields, grid), ini.q0, grid, model)
    (out / "scenario.yaml").write_text(dump_scenario(scenario))
    return RunContext(scenario, out, grid, model, SystemState(fields, state.particle))


def _timed(ctx: RunContext, name: str):
    class _T:
        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, *exc):
            ctx.timings[name] = time.perf_counter() - self.t0

    return _T()


def _meta(ctx: RunContext) -> dict:
    s = ctx.scenario
    return {"grid": ctx.grid.params, "e": s.model.e, "m": s.model.m, "r_phi": s.model.r_phi,
            "dt": s.run.dt, "pulse": None if s.initial.pulse is None
            else s.initial.pulse.model_dump(mode="json")}


def _save_simulation(ctx: RunContext, res: SimulationResult, tag: str):
    out = ctx.out
    tr = res.trajectory
    _write_csv(out / f"trajectory_{tag}.csv",
               ["t", "qx", "qy", "qz", "vx", "vy", "vz", "ax", "ay", "az"], tr.to_rows())
    _write_csv(out / f"invariants_{tag}.csv", ["t", "energy", "px", "py", "pz"],
               np.column_stack([res.energy, res.momentum[:, 1:]]))
    write_field(out / f"field_{tag}_final.csv", res.final.fields, ctx.grid,
                meta={"t": res.final.t, "q": res.final.particle.q.tolist(),
                      "v": res.final.particle.v.tolist()})
    meta = _meta(ctx)
    meta.update({"t_final": res.final.t, "v_asymptotic": res.v_asymptotic.tolist(),
                 "v_error_bound": _num(res.v_error_bound),
                 "fit": {"c": _num(res.fit.c), "exponent": _num(res.fit.exponent),
                         "t_window": [float(x) for x in res.fit.t_window]}})
    _write_json(out / f"trajectory_{tag}.json", meta)


def _invariant_drifts(res: SimulationResult) -> dict:
    e = res.energy[:, 1]
    p = res.momentum[:, 1:]
    return {"energy_drift": float(np.max(np.abs(e - e[0])) / abs(e[0])),
            # momentum is measured in energy units of the same run
            "momentum_drift": float(np.max(np.linalg.norm(p - p[0], axis=1)) / abs(e[0]))}


def stage_simulate(ctx: RunContext):
    r = ctx.scenario.run
    write_field(ctx.out / "field_initial.csv", ctx.initial.fields, ctx.grid,
                meta={"t": 0.0, "q": ctx.initial.particle.q.tolist(),
                      "v": ctx.initial.particle.v.tolist()})
    fw = tuple(r.fit_window) if r.fit_window else None
    with _timed(ctx, "simulate_forward"):
        ctx.forward = simulate(ctx.initial, ctx.grid, ctx.model, r.t_forward, r.dt,
                               r.sample_every, r.max_energy_drift, fw)
    _save_simulation(ctx, ctx.forward, "forward")
    d = _invariant_drifts(ctx.forward)
    if r.t_backward > 0:
        with _timed(ctx, "simulate_backward"):
            ctx.backward = simulate(ctx.initial, ctx.grid, ctx.model, -r.t_backward, -r.dt,
                                    r.sample_every, r.max_energy_drift, fw)
        _save_simulation(ctx, ctx.backward, "backward")
        db = _invariant_drifts(ctx.backward)
        d = {k: max(d[k], db[k]) for k in d}
    tr = ctx.forward.trajectory
    amax = np.linalg.norm(tr.v_dot, axis=1)
    ctx.metrics["simulation"] = {
        **d,
        "max_velocity_deviation": float(np.max(np.linalg.norm(tr.v - tr.v[0], axis=1))),
        "max_acceleration": float(np.max(amax)),
        "v_plus": ctx.forward.v_asymptotic.tolist(),
        "v_minus": None if ctx.backward is None else ctx.backward.v_asymptotic.tolist(),
        "tail_fit": {"c": _num(ctx.forward.fit.c), "exponent": _num(ctx.forward.fit.exponent),
                     "sigma": _num(ctx.forward.fit.sigma),
                     "t_window": [float(x) for x in ctx.forward.fit.t_window]},
    }


def stage_scatter(ctx: RunContext):
    if ctx.forward is None:
        stage_simulate(ctx)
    z0 = deviation(ctx.initial, ctx.grid, ctx.model)
    fw = tuple(ctx.scenario.run.fit_window) if ctx.scenario.run.fit_window else None
    out = {}
    for sign, res in ((1, ctx.forward), (-1, ctx.backward)):
        if res is None:
            continue
        tag = "plus" if sign > 0 else "minus"
        with _timed(ctx, f"scatter_{tag}"):
            sc = scattered_field(res.trajectory, z0, ctx.model, ctx.grid, sign, fw)
            series = wave_operator_diagnostic(res.snapshots, res.trajectory, ctx.model,
                                              ctx.grid, sc.z_sc)
            sc = with_convergence(sc, series)
        write_field(ctx.out / f"z_sc_{tag}.csv", sc.z_sc, ctx.grid, meta={"direction": tag})
        _write_json(ctx.out / f"scatter_{tag}.json", sc.to_json())
        setattr(ctx, "sc_plus" if sign > 0 else "sc_minus", sc)
        out[tag] = _wave_operator_summary(series, ctx.scenario)
    ctx.metrics["wave_operator"] = out


def _wave_operator_summary(series, scenario: Scenario) -> dict:
    acc = scenario.acceptance
    ts = np.array([abs(t) for t, _ in series])
    ds = np.array([d for _, d in series])
    i_ref = int(np.argmin(np.abs(ts - acc.wave_operator_reference_time)))
    last = ds[-acc.wave_operator_monotone_points:]
    return {"final_time": float(ts[-1]), "final_deviation": float(ds[-1]),
            "reference_time": float(ts[i_ref]), "reference_deviation": float(ds[i_ref]),
            "ratio": float(ds[-1] / ds[i_ref]) if ds[i_ref] > 0 else 0.0,
            "monotone_tail": bool(np.all(np.diff(last) <= 0))}


def stage_conservation(ctx: RunContext):
    if ctx.forward is None:
        stage_simulate(ctx)
    with _timed(ctx, "ir_conservation"):
        rep = check_ir_conservation(ctx.forward.snapshots, ctx.model, ctx.grid,
                                    ctx.scenario.observables.ir_nodes)
    _write_json(ctx.out / "ir_conservation.json", rep.to_json())
    ctx.metrics["ir_conservation"] = {"max_transverse_drift": rep.max_transverse_drift,
                                      "max_longitudinal_drift": rep.max_longitudinal_drift,
                                      "n_snapshots": len(rep.times)}


def stage_soft_photon(ctx: RunContext):
    if ctx.sc_plus is None:
        stage_scatter(ctx)
    if ctx.sc_minus is None:
        log.info("no backward run; soft-photon residual skipped")
        return None
    fw, bw = ctx.forward, ctx.backward
    n = ctx.scenario.observables.ir_nodes
    v_err = max(_finite(fw.v_error_bound), _finite(bw.v_error_bound))
    rep = soft_photon_residual(ctx.sc_plus, ctx.sc_minus, fw.v_asymptotic, bw.v_asymptotic,
                               ctx.model, ctx.grid, n, v_error=v_err)
    _write_json(ctx.out / "soft_photon.json", rep.to_json())
    dirs = ctx.grid.directions
    _write_csv(ctx.out / "soft_photon_residual.csv",
               ["kx", "ky", "kz", "residual_e", "residual_b"],
               np.column_stack([dirs, rep.electric.per_direction, rep.magnetic.per_direction]))
    m = {"electric_relative": rep.electric.relative, "magnetic_relative": rep.magnetic.relative,
         "electric_residual": rep.electric.residual_norm,
         "magnetic_residual": rep.magnetic.residual_norm,
         "reference_norm": rep.electric.reference_norm,
         "budget": rep.budget, "budget_extrapolation": rep.budget_extrapolation,
         "budget_tail": rep.budget_tail}
    v0 = np.asarray(ctx.scenario.initial.v0)
    if not np.any(v0):
        # charge starts at rest: the future tail must be -P_tr of the final soliton tail
        tail = ir_extract(ctx.sc_plus.z_sc, ctx.grid, n)
        pred = transverse_formula_electric(fw.v_asymptotic, ctx.model, dirs)
        den = _angular_norm(pred, ctx.grid)
        num = _angular_norm(tail.e - pred, ctx.grid)
        m["transverse_formula_residual"] = num
        m["transverse_formula_relative"] = num / den if den > 0 else (0.0 if num == 0 else float("inf"))
    ctx.metrics["soft_photon"] = m
    return rep


def _finite(x):
    return float(x) if np.isfinite(x) else 0.0


def stage_coherent(ctx: RunContext):
    obs = ctx.scenario.observables
    v = ctx.forward.v_asymptotic if ctx.forward is not None else np.asarray(ctx.scenario.initial.v0)
    prof = CoherentProfile(v, ctx.model)
    dirs = fibonacci_directions(obs.coherent_directions)
    reports = [ir_match_check(prof, dirs, t) for t in obs.coherent_times]
    _write_json(ctx.out / "coherent.json", {"v_inf": prof.v_inf.tolist(),
                                            "reports": [r.to_json() for r in reports]})
    _write_csv(ctx.out / "coherent.csv", ["t", "kx", "ky", "kz", "residual_e", "residual_b"],
               [(r.t, *d, re, rb) for r in reports
                for d, re, rb in zip(r.directions, r.residual_e, r.residual_b)])
    spread = 0.0
    for r in reports[1:]:
        spread = max(spread, float(np.max(np.abs(r.residual_e - reports[0].residual_e))),
                     float(np.max(np.abs(r.residual_b - reports[0].residual_b))))
    ctx.metrics["coherent"] = {"max_residual": max(r.max_residual for r in reports),
                               "t_spread": spread, "v_inf": prof.v_inf.tolist()}


def stage_spatial_tail(ctx: RunContext):
    st = ctx.scenario.observables.spatial_tail
    if not st.enabled:
        return
    if ctx.forward is None:
        stage_simulate(ctx)
    snaps = ctx.forward.snapshots
    tails = []
    with _timed(ctx, "spatial_tail"):
        for t in st.times:
            s = min(snaps, key=lambda x: abs(x.t - t))
            if abs(s.t - t) > 1e-9 * max(1.0, abs(t)):
                raise ValueError(f"observables.spatial_tail.times: no snapshot at t={t}; "
                                 "choose times on the run.sample_every cadence")
            tails.append(spatial_tail(s.fields, s.particle, ctx.model, ctx.grid,
                                      radii=st.radii, label=f"t={s.t:g}"))
    _write_json(ctx.out / "spatial_tail.json", {"tails": [t.to_json() for t in tails]})
    ref = tails[0]
    scale = np.linalg.norm(ref.e, axis=1)
    drift = max(float(np.max(np.linalg.norm(t.e - ref.e, axis=1) / scale)) for t in tails)
    e = ctx.model.e
    flux = max(abs(flux_average(t) - e) / abs(e) for t in tails) if e != 0 else 0.0
    ctx.metrics["spatial_tail"] = {"max_relative_drift": drift, "max_flux_error": float(flux),
                                   "under_resolved": sorted({r for t in tails for r in t.under_resolved})}


def evaluate_acceptance(metrics: dict, scenario: Scenario) -> dict:
    """Apply the acceptance profile to measured metrics: ``{name: {value, threshold, passed}}``."""
    acc = scenario.acceptance
    checks = {}

    def add(name, value, threshold, passed):
        checks[name] = {"value": value, "threshold": threshold, "passed": bool(passed)}

    sim = metrics.get("simulation")
    if sim:
        add("energy_drift", sim["energy_drift"], acc.energy_drift, sim["energy_drift"] < acc.energy_drift)
        add("momentum_drift", sim["momentum_drift"], acc.momentum_drift,
            sim["momentum_drift"] < acc.momentum_drift)
        if scenario.initial.pulse is not None:
            ex = sim["tail_fit"]["exponent"]
            add("tail_exponent", ex, acc.tail_exponent,
                isinstance(ex, float) and ex <= acc.tail_exponent)
    irc = metrics.get("ir_conservation")
    if irc:
        add("ir_transverse_drift", irc["max_transverse_drift"], acc.ir_transverse_drift,
            irc["max_transverse_drift"] < acc.ir_transverse_drift)
        add("ir_longitudinal_drift", irc["max_longitudinal_drift"], acc.ir_longitudinal_drift,
            irc["max_longitudinal_drift"] < acc.ir_longitudinal_drift)
    sp = metrics.get("soft_photon")
    if sp:
        for sector in ("electric", "magnetic"):
            rel = sp[f"{sector}_relative"]
            res = sp[f"{sector}_residual"]
            if sp["reference_norm"] > 0:
                add(f"soft_photon_{sector}", rel, acc.soft_photon_relative,
                    rel < acc.soft_photon_relative)
            add(f"soft_photon_{sector}_within_budget", res, sp["budget"],
                res <= sp["budget"] + 1e-14)
        if "transverse_formula_relative" in sp and sp["reference_norm"] > 0:
            v = sp["transverse_formula_relative"]
            add("transverse_formula", v, acc.transverse_formula_relative,
                v < acc.transverse_formula_relative)
    wo = metrics.get("wave_operator")
    if wo and scenario.initial.pulse is not None:
        for tag, s in wo.items():
            add(f"wave_operator_{tag}_ratio", s["ratio"], acc.wave_operator_ratio,
                s["ratio"] < acc.wave_operator_ratio)
            add(f"wave_operator_{tag}_monotone", s["monotone_tail"], True, s["monotone_tail"])
    co = metrics.get("coherent")
    if co:
        add("coherent_residual", co["max_residual"], acc.coherent_residual,
            co["max_residual"] < acc.coherent_residual)
        add("coherent_t_independence", co["t_spread"], acc.coherent_t_independence,
            co["t_spread"] < acc.coherent_t_independence)
    st = metrics.get("spatial_tail")
    if st:
        add("spatial_tail_drift", st["max_relative_drift"], acc.spatial_tail_relative,
            st["max_relative_drift"] < acc.spatial_tail_relative)
        add("flux", st["max_flux_error"], acc.flux_relative, st["max_flux_error"] < acc.flux_relative)
    return checks


def finalize(ctx: RunContext) -> dict:
    """Write ``report.json`` (deterministic) and ``timings.json``; return the report."""
    checks = evaluate_acceptance(ctx.metrics, ctx.scenario)
    report = {
        "provenance": {"config_hash": ctx.scenario.config_hash(), "code_version": __version__,
                       "scenario": ctx.scenario.name},
        "metrics": ctx.metrics,
        "acceptance": {"checks": checks, "passed": all(c["passed"] for c in checks.values())},
    }
    _write_json(ctx.out / "report.json", report)
    _write_json(ctx.out / "timings.json", {k: round(v, 3) for k, v in ctx.timings.items()})
    return report


def run_scenario(scenario: Scenario, out_dir) -> dict:
    """Full pipeline: simulate, scatter, all checks, artifacts and ``report.json``."""
    ctx = build_context(scenario, out_dir)
    t0 = time.perf_counter()
    stage_simulate(ctx)
    stage_scatter(ctx)
    stage_conservation(ctx)
    stage_soft_photon(ctx)
    stage_coherent(ctx)
    stage_spatial_tail(ctx)
    ctx.timings["total"] = time.perf_counter() - t0
    return finalize(ctx)


def emit_plots_data(report_dir) -> list:
    """Write plot-ready CSVs from a finished run directory; returns their paths."""
    d = Path(report_dir)
    need = ["ir_conservation.json", "trajectory_forward.csv", "trajectory_forward.json",
            "scatter_plus.json"]
    missing = [n for n in need if not (d / n).exists()]
    if missing:
        raise FileNotFoundError(f"run directory {d} is missing: {', '.join(missing)}")
    written = []

    irc = json.loads((d / "ir_conservation.json").read_text())
    p = d / "plot_ir_drift.csv"
    _write_csv(p, ["t", "transverse_drift", "longitudinal_drift"],
               zip(irc["times"], irc["transverse_drift"], irc["longitudinal_drift"]))
    written.append(p)

    tr = np.loadtxt(d / "trajectory_forward.csv", delimiter=",", skiprows=1, ndmin=2)
    fit = json.loads((d / "trajectory_forward.json").read_text())["fit"]
    t = tr[:, 0]
    a = np.linalg.norm(tr[:, 7:10], axis=1)
    c, ex = fit["c"], fit["exponent"]
    if isinstance(c, str) or isinstance(ex, str):
        model = np.full_like(t, np.nan)
    else:
        model = c * (1.0 + np.abs(t - t[0])) ** ex
    p = d / "plot_vdot_tail.csv"
    _write_csv(p, ["t", "vdot", "fit"], zip(t, a, model))
    written.append(p)

    rows = []
    for tag in ("plus", "minus"):
        f = d / f"scatter_{tag}.json"
        if f.exists():
            rows += [(tag, T, dev) for T, dev in json.loads(f.read_text())["convergence_series"]]
    p = d / "plot_wave_operator.csv"
    _write_csv(p, ["direction", "T", "deviation"], rows)
    written.append(p)

    f = d / "soft_photon_residual.csv"
    if f.exists():
        p = d / "plot_soft_photon_residual.csv"
        p.write_text(f.read_text())
        written.append(p)
    return written
