"""Run orchestration: execute one mode and write its artifacts.

Every run directory receives ``manifest.json`` (resolved configuration, code
version, wall time, status) and, depending on the mode, ``series.csv``,
``snapshot_*.chfl`` files and a JSON report.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    ConservationMonitor,
    DiagnosticsRecord,
    aa_cancellation,
    blowup_monitor,
    inequality_audit,
    neg_entropy_bound_holds,
    read_series,
    record,
    write_series,
)
from .config import RunConfig
from .dynamics import State
from .errors import BlowupSuspected, ChemflowError, PicardDivergence
from .model import validate_assumptions
from .regularization import LadderSpec, run_ladder
from .snapshot import save_state
from .solver import contraction_sweep, full_rhs, integrate, picard_solve

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VIOLATION = 0, 2, 3, 4


@dataclass
class RunResult:
    exit_code: int
    status: str
    output_dir: Path
    artifacts: list[str] = field(default_factory=list)
    message: str = ""
    report: dict | None = None


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats with strings so the JSON stays standard."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return str(float(o))
    return o


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, default=_json_default) + "\n")


class _Simulation:
    """Stepping context for simulate/audit: records, monitor, snapshots."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.grid = cfg.grid()
        self.mf = cfg.model()
        self.pot = cfg.potential(self.grid)
        self.diag = cfg.diagnostics_config()
        rng = np.random.default_rng(cfg["seed"])
        self.s0 = cfg.scenario.initial_state(self.grid, cfg["scenario.params"], rng)
        self.records: list[DiagnosticsRecord] = [record(self.s0, self.mf, self.pot, self.diag)]
        self.series: list[DiagnosticsRecord] = [self.records[0]]
        self.monitor = ConservationMonitor(self.s0, pos_tol=cfg["solver.pos_tol"])
        self.aa_ratio = 0.0
        self.snapshots: list[str] = []
        self.steps = 0
        self._snapshot(self.s0)

    def _snapshot(self, s: State) -> None:
        name = f"snapshot_{self.steps:06d}.chfl"
        save_state(self.out / name, s)
        self.snapshots.append(name)

    def observe(self, s: State) -> None:
        self.steps += 1
        self.monitor.observe(s)
        rec = record(s, self.mf, self.pot, self.diag, self.records[-1])
        self.records.append(rec)
        if self.steps % self.cfg["output.series_stride"] == 0:
            self.series.append(rec)
        val, bound = aa_cancellation(s, self.mf)
        if bound > 0:
            self.aa_ratio = max(self.aa_ratio, val / bound)
        stride = self.cfg["output.snapshot_stride"]
        if stride and self.steps % stride == 0:
            self._snapshot(s)

    def run(self) -> State:
        final = integrate(self.s0, full_rhs(self.mf, self.pot), self.cfg.t_end,
                          self.cfg.step_config(), mf=self.mf, on_step=self.observe)
        if self.series[-1] is not self.records[-1]:
            self.series.append(self.records[-1])
        if not self.snapshots[-1].endswith(f"{self.steps:06d}.chfl"):
            self._snapshot(final)
        return final

    def flush(self) -> None:
        write_series(self.out / "series.csv", self.series)

    def blowup_report(self, completed: bool) -> dict:
        ref_path = self.cfg["diagnostics.reference_csv"]
        reference = None
        if ref_path:
            ref = read_series(ref_path)
            reference = _reference_at(ref, self.records[-1].time)
        rep = blowup_monitor(self.records, completed=completed,
                             threshold=self.cfg["diagnostics.stress_threshold"])
        d = rep.to_dict()
        if reference is not None:
            acc = self.records[-1].acc_grad_c_inf
            d.update(compare_accumulators(acc, reference, self.cfg["diagnostics.stress_threshold"]))
        return d


def _reference_at(series: dict, t: float) -> dict:
    times = series["time"]
    return {
        "reference_final_time": float(times[-1]),
        "reference_acc_final": float(series["acc_grad_c_inf"][-1]),
        "reference_acc_at_time": float(np.interp(t, times, series["acc_grad_c_inf"])),
    }


def compare_accumulators(acc: float, reference: dict, threshold: float) -> dict:
    """Stress-versus-reference comparison of int ||grad c||_inf^2 dt.

    The reference is read both at its own horizon and at the time the stress
    run stopped; the ratio and ordering use the matched time.
    """
    ref = reference["reference_acc_at_time"]
    ratio = acc / ref if ref > 0 else math.inf
    return {
        **reference,
        "acc_ratio": ratio,
        "threshold": threshold,
        "threshold_met": ratio >= threshold,
        "ordering_holds": acc >= ref,
    }


def _simulate(cfg: RunConfig, out: Path, result: RunResult, audit: bool) -> None:
    sim = _Simulation(cfg, out)
    c_max = max(1.0, float(sim.s0.c.values.max()))
    result.report = {"assumptions": asdict(validate_assumptions(sim.mf, c_max))}
    try:
        sim.run()
    except BlowupSuspected as exc:
        exc.last_record = sim.records[-1]
        sim.flush()
        result.report["blowup"] = sim.blowup_report(completed=False)
        write_json(out / "blowup_report.json", result.report["blowup"])
        result.artifacts += ["series.csv", "blowup_report.json", *sim.snapshots]
        result.exit_code, result.status, result.message = EXIT_BLOWUP, "blowup", str(exc)
        return
    sim.flush()
    result.report["blowup"] = sim.blowup_report(completed=True)
    result.report["invariants"] = {
        "violations": sim.monitor.violations,
        "max_mass_drift": sim.monitor.max_mass_drift,
        "aa_cancellation_ratio": sim.aa_ratio,
        "neg_entropy_bound": all(neg_entropy_bound_holds(r, sim.grid) for r in sim.records),
    }
    write_json(out / "blowup_report.json", result.report["blowup"])
    result.artifacts += ["series.csv", "blowup_report.json", *sim.snapshots]
    failures = list(sim.monitor.violations)
    if audit:
        form = sim.diag.form_for(sim.grid)
        rep = inequality_audit(sim.records, form=form).to_dict()
        rep["aa_cancellation_ratio"] = sim.aa_ratio
        rep["neg_entropy_bound"] = result.report["invariants"]["neg_entropy_bound"]
        result.report["audit"] = rep
        write_json(out / "audit_report.json", rep)
        result.artifacts.append("audit_report.json")
        if not rep["passed"]:
            failures.append(f"energy-inequality audit failed (fit residual {rep['fit_residual']:.3g})")
    if failures:
        result.exit_code, result.status = EXIT_VIOLATION, "invariant_violation"
        result.message = "; ".join(failures[:5])


def _picard(cfg: RunConfig, out: Path, result: RunResult) -> None:
    grid = cfg.grid()
    mf, pot = cfg.model(), cfg.potential(grid)
    s0 = cfg.scenario.initial_state(grid, cfg["scenario.params"], np.random.default_rng(cfg["seed"]))
    pc = cfg.values["picard"]
    try:
        _, rep = picard_solve(s0, pc["horizon"], mf, pot, m=pc["sobolev_m"], tol=pc["tol"],
                              max_iters=pc["max_iters"], dt=pc["dt"])
        report = rep.to_dict()
    except PicardDivergence as exc:
        report = exc.report.to_dict()
        result.exit_code, result.status, result.message = EXIT_VIOLATION, "picard_divergence", str(exc)
    if pc["sweep_doublings"]:
        sweep = contraction_sweep(s0, mf, pot, pc["horizon"], pc["sweep_doublings"],
                                  m=pc["sobolev_m"], dt=pc["dt"])
        report["sweep"] = sweep.to_dict()
    result.report = report
    write_json(out / "picard_report.json", report)
    result.artifacts.append("picard_report.json")


def _ladder(cfg: RunConfig, out: Path, result: RunResult) -> None:
    grid = cfg.grid()
    mf, pot = cfg.model(), cfg.potential(grid)
    s0 = cfg.scenario.initial_state(grid, cfg["scenario.params"], np.random.default_rng(cfg["seed"]))
    ld = cfg.values["ladder"]
    spec = LadderSpec(tuple(ld["k_values"]), tuple(ld["eps_values"]), cfg["scenario.id"],
                      ld["horizon"], ld["dt"], ld["reference"])
    rep = run_ladder(spec, s0, mf, pot, cfg.diagnostics_config(), cfg["solver.pos_tol"])
    for i, rung in enumerate(rep.rungs):
        name = f"rung_{i}_k{rung.k:g}_eps{rung.eps:g}.csv"
        write_series(out / name, rung.records)
        result.artifacts.append(name)
    report = rep.to_dict()
    result.report = report
    write_json(out / "ladder_report.json", report)
    result.artifacts.append("ladder_report.json")
    ok = rep.distances_monotone and rep.audits_pass and rep.jensen_ok and all(
        r.in_ball and r.invariants_ok for r in rep.rungs)
    if not ok:
        result.exit_code, result.status = EXIT_VIOLATION, "ladder_check_failed"
        result.message = "ladder checks failed; see ladder_report.json"


def run(cfg: RunConfig) -> RunResult:
    """Execute ``cfg.mode``; artifacts go to ``cfg.output_dir``."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    result = RunResult(EXIT_OK, "completed", out)
    start = time.perf_counter()
    log.info("chemflow %s: mode=%s scenario=%s", __version__, cfg.mode, cfg["scenario.id"])
    try:
        if cfg.mode in ("simulate", "audit"):
            _simulate(cfg, out, result, audit=cfg.mode == "audit")
        elif cfg.mode == "picard":
            _picard(cfg, out, result)
        else:
            _ladder(cfg, out, result)
    except ChemflowError as exc:
        result.exit_code, result.status, result.message = EXIT_VIOLATION, "error", str(exc)
    manifest = {
        "version": __version__,
        "mode": cfg.mode,
        "status": result.status,
        "exit_code": result.exit_code,
        "message": result.message,
        "wall_time_s": time.perf_counter() - start,
        "config": cfg.values,
        "artifacts": result.artifacts,
    }
    write_json(out / "manifest.json", manifest)
    return result
