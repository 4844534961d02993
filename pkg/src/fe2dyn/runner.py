"""Scenario orchestration and file output shared by the command line and the tests."""

from __future__ import annotations

import csv
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from fe2dyn import __version__, dns, macro, metrics
from fe2dyn import rve as rve_mod
from fe2dyn.config import ScenarioConfig
from fe2dyn.fe import build_layered_bar, build_rve_mesh, build_uniform_bar
from fe2dyn.homogenize import MODULI, audit_tangents

log = logging.getLogger(__name__)

SOLVER_TOLERANCES = {
    "macro_tol": 1e-8,
    "macro_max_iter": 20,
    "micro_tol_rel": 1e-10,
    "micro_max_iter": 25,
}


def fmt(x) -> str:
    return f"{float(x):.17g}"


def rve_model(cfg: ScenarioConfig, unit_cell=None, n_cells=None, constraint=None) -> rve_mod.RveModel:
    g, r = cfg.geometry, cfg.rve
    mesh = build_rve_mesh(unit_cell or r.unit_cell, n_cells or r.n_cells, g.l_M, g.l_E)
    return rve_mod.RveModel(
        mesh,
        cfg.phases.materials(),
        constraint or r.constraint,
        r.f_link,
        cfg.newmark_params,
        tol=SOLVER_TOLERANCES["micro_tol_rel"],
        max_iter=SOLVER_TOLERANCES["micro_max_iter"],
    )


def macro_model(cfg: ScenarioConfig, template: rve_mod.RveModel | None = None) -> macro.MacroModel:
    g = cfg.geometry
    return macro.MacroModel(
        build_uniform_bar(g.L, g.n_macro_elements),
        cfg.newmark_params,
        template or rve_model(cfg),
        cfg.load.u_max,
        cfg.load.T,
        tol=SOLVER_TOLERANCES["macro_tol"],
        max_iter=SOLVER_TOLERANCES["macro_max_iter"],
    )


def dns_model(cfg: ScenarioConfig) -> dns.DnsModel:
    g = cfg.geometry
    return dns.DnsModel(
        build_layered_bar(g.L, g.l_M, g.l_E),
        cfg.phases.materials(),
        cfg.newmark_params,
        cfg.load.u_max,
        cfg.load.T,
        tol=SOLVER_TOLERANCES["macro_tol"],
        max_iter=SOLVER_TOLERANCES["macro_max_iter"],
    )


@contextmanager
def gp_mapper(threads: int):
    """Order-preserving map over Gauss points, threaded when ``threads`` > 1."""
    if threads <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield pool.map


# ---------------------------------------------------------------- file output


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else fmt(x) if isinstance(x, float) else x for x in row])


def snapshot_indices(times, snapshot_times, dt: float) -> list[int]:
    """Indices of recorded instants nearest to each requested time; every instant if none requested."""
    times = np.asarray(times, dtype=float)
    if not snapshot_times:
        return list(range(times.size))
    out = []
    for ts in snapshot_times:
        k = int(np.argmin(np.abs(times - ts)))
        if abs(times[k] - ts) <= 0.5 * dt and k not in out:
            out.append(k)
    return out


def write_fields(path: Path, node_X, times, values, indices=None):
    indices = range(len(times)) if indices is None else indices
    header = ["node_X_mm"] + [f"t={fmt(times[k])}" for k in indices]
    cols = np.column_stack([np.asarray(node_X)] + [np.asarray(values[k]) for k in indices])
    _write_rows(path, header, ([float(x) for x in row] for row in cols))


def read_fields(path) -> metrics.FieldSeries:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "node_X_mm":
        raise ValueError(f"{path}: not a field CSV")
    times = [float(h.split("=", 1)[1]) for h in header[1:]]
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return metrics.FieldSeries(np.array(times), data[:, 0], data[:, 1:].T, str(path))


def write_convergence(path: Path, records):
    rows = []
    for rec in records:
        for k, d in enumerate(rec.deltas, start=1):
            rows.append([rec.step, float(rec.time), k, float(d)])
    _write_rows(path, ["step", "time_s", "iter", "delta_norm"], rows)


def write_timing(path: Path, records):
    rows = [[r.step, float(r.time), r.iterations, r.micro_iterations, float(r.wall_time)] for r in records]
    _write_rows(path, ["step", "time_s", "macro_iterations", "micro_iterations", "wall_time_s"], rows)


def write_manifest(out: Path, cfg: ScenarioConfig, command: str, extra: dict | None = None):
    manifest = {
        "command": command,
        "scenario": cfg.to_dict(),
        "rve_length_mm": cfg.rve_length,
        "scale_separated": cfg.scale_separated,
        "solver_tolerances": SOLVER_TOLERANCES,
        "code_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }
    manifest.update(extra or {})
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _path(cfg: ScenarioConfig, out: Path, key: str, default: str) -> Path:
    return out / cfg.outputs.paths.get(key, default)


# ---------------------------------------------------------------- commands


@dataclass
class ProbeRecorder:
    """Micro displacement of the RVE at the Gauss point nearest ``probe_X``, at chosen steps."""

    model: macro.MacroModel
    probe_X: float
    steps: set
    gp: int = field(init=False)
    rows: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gp = int(np.argmin(np.abs(self.model.quad.X.ravel() - self.probe_X)))

    @property
    def gp_X(self) -> float:
        return float(self.model.quad.X.ravel()[self.gp])

    def __call__(self, state, rec):
        if state.step in self.steps:
            r = state.rves[self.gp]
            table = rve_mod.field_rows(self.model.rve_template, r)
            self.rows[state.step] = (state.time, table[:, 1].copy(), float(r.load.u_bar))


def run_fe2_scenario(cfg: ScenarioConfig, out=None, threads: int = 1, template=None) -> macro.RunResult:
    model = macro_model(cfg, template)
    probe = None
    dt = cfg.time.dt
    all_times = [n * dt for n in range(cfg.time.n_steps + 1)]
    snaps = snapshot_indices(all_times, cfg.outputs.snapshot_times, dt)
    if cfg.outputs.probe_X is not None:
        probe = ProbeRecorder(model, cfg.outputs.probe_X, set(snaps))
    with gp_mapper(threads) as mapper:
        result = macro.run_fe2(model, cfg.time.n_steps, mapper, on_step=probe)
    log.info("fe2 %s: %d/%d steps%s", cfg.name, result.completed_steps, cfg.time.n_steps,
             "" if result.failure is None else f", failed: {result.failure}")
    if out is not None:
        out = Path(out)
        idx = [k for k in snaps if k < len(result.times)]
        write_fields(_path(cfg, out, "fields", "fields.csv"), result.node_X, result.times, result.displacements, idx)
        write_convergence(_path(cfg, out, "convergence", "convergence.csv"), result.records)
        write_timing(_path(cfg, out, "timing", "timing.csv"), result.records)
        extra = {
            "completed_steps": result.completed_steps,
            "failure": result.failure,
            "failure_step": result.failure_step,
        }
        if probe is not None and probe.rows:
            steps = sorted(probe.rows)
            X = model.rve_template.mesh.node_coords
            header = ["node_X_mm"] + [f"t={fmt(probe.rows[s][0])}" for s in steps]
            cols = np.column_stack([X] + [probe.rows[s][1] for s in steps])
            _write_rows(_path(cfg, out, "micro", "micro_probe.csv"), header, ([float(x) for x in r] for r in cols))
            norm = np.column_stack(
                [X] + [metrics.normalized_micro(probe.rows[s][1], np.full(X.size, probe.rows[s][2]), cfg.load.u_max)
                       for s in steps]
            )
            _write_rows(out / "micro_probe_normalized.csv", header, ([float(x) for x in r] for r in norm))
            extra["probe_gp_X_mm"] = probe.gp_X
        write_manifest(out, cfg, "fe2", extra)
    return result


def dns_probe_window(cfg: ScenarioConfig) -> tuple[float, float]:
    """DNS section matching the probed RVE: n_cells whole unit cells of the laminate around probe_X.

    The laminate starts with a stiff layer at X = 0, so type-B cells begin at
    l_M/2 + 2 l_M k and type-A cells at l_M + 2 l_M k.
    """
    g = cfg.geometry
    cell = 2.0 * g.l_M
    offset = g.l_M / 2.0 if cfg.rve.unit_cell == "B" else g.l_M
    length = cfg.rve_length
    k = round((cfg.outputs.probe_X - length / 2.0 - offset) / cell)
    lo = offset + k * cell
    lo = min(max(lo, 0.0), g.L - length)
    return lo, lo + length


def run_dns_scenario(cfg: ScenarioConfig, out=None) -> macro.RunResult:
    model = dns_model(cfg)
    result = dns.run_dns(model, cfg.time.n_steps)
    if out is not None:
        out = Path(out)
        dt = cfg.time.dt
        idx = snapshot_indices(result.times, cfg.outputs.snapshot_times, dt)
        write_fields(_path(cfg, out, "fields", "fields.csv"), result.node_X, result.times, result.displacements, idx)
        write_convergence(_path(cfg, out, "convergence", "convergence.csv"), result.records)
        write_timing(_path(cfg, out, "timing", "timing.csv"), result.records)
        extra = {"completed_steps": result.completed_steps, "failure": result.failure}
        if cfg.outputs.probe_X is not None:
            lo, hi = dns_probe_window(cfg)
            window = hi - lo
            sel = (result.node_X >= lo - 1e-9) & (result.node_X <= hi + 1e-9)
            U = np.array(result.displacements)
            u_bar = dns.dns_window_average(result.node_X, U, (lo + hi) / 2.0, window)
            header = ["node_X_mm"] + [f"t={fmt(result.times[k])}" for k in idx]
            cols = np.column_stack([result.node_X[sel] - (lo + hi) / 2.0] + [U[k, sel] for k in idx])
            _write_rows(_path(cfg, out, "micro", "micro_probe.csv"), header, ([float(x) for x in r] for r in cols))
            norm = np.column_stack(
                [result.node_X[sel] - (lo + hi) / 2.0]
                + [metrics.normalized_micro(U[k, sel], np.full(sel.sum(), u_bar[k]), cfg.load.u_max) for k in idx]
            )
            _write_rows(out / "micro_probe_normalized.csv", header, ([float(x) for x in r] for r in norm))
        write_manifest(out, cfg, "dns", extra)
    return result


@dataclass
class Comparison:
    times: np.ndarray
    epsilon: np.ndarray
    epsilon_time: float
    u_max: float

    @property
    def relative(self) -> float:
        return self.epsilon_time / self.u_max


def compare_series(a: metrics.FieldSeries, b: metrics.FieldSeries, u_max: float, out=None, label="fe2 vs dns"):
    t, eps = metrics.epsilon_series(a, b)
    cmp = Comparison(t, eps, metrics.epsilon_time(a, b), u_max)
    if out is not None:
        out = Path(out)
        _write_rows(out / "epsilon.csv", ["time_s", "epsilon_mm"], zip(map(float, t), map(float, eps)))
        (out / "summary.md").write_text(
            f"# Comparison: {label}\n\n"
            f"| quantity | value |\n|---|---|\n"
            f"| shared time instants | {t.size} |\n"
            f"| epsilon_time (mm) | {fmt(cmp.epsilon_time)} |\n"
            f"| epsilon_time / u_max | {fmt(cmp.relative)} |\n"
        )
    return cmp


def compare_scenario(cfg: ScenarioConfig, out=None, threads: int = 1):
    out = None if out is None else Path(out)
    fe2 = run_fe2_scenario(cfg, None if out is None else out / "fe2", threads)
    ref = run_dns_scenario(cfg, None if out is None else out / "dns")
    cmp = compare_series(
        metrics.FieldSeries.from_run(fe2, "fe2"), metrics.FieldSeries.from_run(ref, "dns"), cfg.load.u_max, out
    )
    if out is not None:
        write_manifest(out, cfg, "compare", {"epsilon_time": cmp.epsilon_time, "fe2_failure": fe2.failure})
    return fe2, ref, cmp


def check_tangents(cfg: ScenarioConfig, step: int = 50, out=None, threads: int = 1, gps=None):
    """FD audit of all four moduli at every (or the selected) Gauss point of a converged step."""
    model = macro_model(cfg)
    if not 1 <= step <= cfg.time.n_steps:
        raise ValueError(f"step must lie in [1, {cfg.time.n_steps}]")
    state = macro.initial_state(model)
    with gp_mapper(threads) as mapper:
        for n in range(1, step):
            state, _ = macro.step(model, state, n * cfg.time.dt, mapper)
        sol = macro.converge(model, state, step * cfg.time.dt, mapper)
    gps = range(model.n_gp) if gps is None else gps
    rows = []
    for g in gps:
        a = audit_tangents(model.rve_template, sol.rves[g], model.params)
        rows.append((sol.time, g, a))
    if out is not None:
        out = Path(out)
        header = ["time_s", "gp_id"] + list(MODULI) + [f"fd_{m}" for m in MODULI] + [f"rel_err_{m}" for m in MODULI]
        _write_rows(
            _path(cfg, out, "tangents", "tangent_audit.csv"),
            header,
            ([float(t), g, *map(float, a.analytic), *map(float, a.fd), *map(float, a.rel_err)] for t, g, a in rows),
        )
        worst = max(a.max_rel_err for _, _, a in rows)
        write_manifest(out, cfg, "check-tangents", {"step": step, "max_rel_err": worst})
    return rows


@dataclass
class SweepResult:
    outcomes: list
    epsilon_ab: dict
    epsilon_dns: dict
    runs: dict

    @property
    def tally(self) -> dict:
        return metrics.robustness_tally(self.outcomes)


def sweep_rve(
    cfg: ScenarioConfig,
    out=None,
    cells=(1, 3, 5, 7),
    unit_cells=("A", "B"),
    constraints=("volume", "fixed_corners"),
    threads: int = 1,
    with_dns: bool = True,
) -> SweepResult:
    """FE² runs over unit cell types, cell counts and displacement links.

    A failing run is recorded with its completed step count and does not stop
    the sweep. epsilon_ab compares type A with type B per (n_cells, constraint);
    epsilon_dns compares every run with the DNS reference.
    """
    out = None if out is None else Path(out)
    runs = {}
    outcomes = []
    for constraint in constraints:
        for n in cells:
            for uc in unit_cells:
                c = cfg.replace(rve={"unit_cell": uc, "n_cells": n, "constraint": constraint})
                sub = None if out is None else out / f"{uc}_{n}_{constraint}"
                res = run_fe2_scenario(c, sub, threads)
                runs[(uc, n, constraint)] = res
                outcomes.append(metrics.RunOutcome(uc, n, constraint, res.completed_steps, res.failure is not None))
    eps_ab = {}
    for constraint in constraints:
        for n in cells:
            if ("A", n, constraint) in runs and ("B", n, constraint) in runs:
                a = metrics.FieldSeries.from_run(runs[("A", n, constraint)], "A")
                b = metrics.FieldSeries.from_run(runs[("B", n, constraint)], "B")
                eps_ab[(n, constraint)] = metrics.epsilon_time(a, b)
    eps_dns = {}
    if with_dns:
        ref = metrics.FieldSeries.from_run(run_dns_scenario(cfg, None if out is None else out / "dns"), "dns")
        for key, res in runs.items():
            eps_dns[key] = metrics.epsilon_time(metrics.FieldSeries.from_run(res, "fe2"), ref)
    result = SweepResult(outcomes, eps_ab, eps_dns, runs)
    if out is not None:
        _write_rows(
            out / "sweep_runs.csv",
            ["unit_cell", "n_cells", "constraint", "completed_steps", "failed", "epsilon_time_vs_dns_mm"],
            [
                [o.unit_cell, o.n_cells, o.constraint, o.completed_steps, int(o.failed),
                 float(eps_dns.get((o.unit_cell, o.n_cells, o.constraint), float("nan")))]
                for o in outcomes
            ],
        )
        _write_rows(
            out / "epsilon_ab.csv",
            ["n_cells", "constraint", "epsilon_time_ab_mm"],
            [[n, c, float(v)] for (n, c), v in sorted(eps_ab.items(), key=lambda kv: (kv[0][1], kv[0][0]))],
        )
        lines = ["# RVE sweep", "", "## Completed time steps", "", metrics.tally_markdown(result.tally), "",
                 "## epsilon_time between unit cells A and B (mm)", "", "| n_cells | constraint | epsilon_time |",
                 "|---|---|---|"]
        lines += [f"| {n} | {c} | {fmt(v)} |" for (n, c), v in sorted(eps_ab.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
        if eps_dns:
            lines += ["", "## epsilon_time against DNS (mm)", "", "| unit cell | n_cells | constraint | epsilon_time |",
                      "|---|---|---|---|"]
            lines += [f"| {uc} | {n} | {c} | {fmt(v)} |" for (uc, n, c), v in sorted(eps_dns.items())]
        (out / "summary.md").write_text("\n".join(lines) + "\n")
        write_manifest(out, cfg, "sweep-rve", {"cells": list(cells), "unit_cells": list(unit_cells),
                                               "constraints": list(constraints)})
    return result
