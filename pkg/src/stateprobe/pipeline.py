"""End-to-end test of one scenario: plan, translate, run, validate, refine."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .harness import MONITOR_ALL, BackgroundFlow, Fault, MonitorLog, Simulator, inject_fault, run_script
from .network import Topology
from .planner import DEFAULT_MAX_LEN, Plan, plan_scenario
from .policy import PolicyScenario
from .translator import TestScript, expand, to_scripts
from .validator import BACKOFF, FAIL, UNKNOWN, Verdict, detect_interference, reconstruct, validate


@dataclass
class TestRun:
    __test__ = False  # not a pytest class

    verdict: Verdict
    plan: Plan | None = None
    scripts: list[TestScript] = field(default_factory=list)
    logs: list[tuple[str, MonitorLog]] = field(default_factory=list)  # (label, log) in run order


def faulted(topology: Topology, faults: Sequence[Fault]) -> Simulator:
    sim = Simulator.fault_free(topology)
    for fault in faults:
        sim = inject_fault(sim, fault)
    return sim


def run_test(topology: Topology, scenario: PolicyScenario, plan: Plan | None = None, faults: Sequence[Fault] = (),
             background: Sequence[BackgroundFlow] = (), mode: str = MONITOR_ALL,
             max_len: int = DEFAULT_MAX_LEN) -> TestRun:
    if plan is None:
        plan = plan_scenario(scenario, topology, max_len).plan
    if plan is None:
        return TestRun(Verdict(scenario.name, UNKNOWN, reason="no plan within maxLen"))
    scripts = to_scripts(plan)
    events = expand(scripts)
    model = Simulator.fault_free(topology)
    sim = faulted(topology, faults)
    run = TestRun(None, plan, scripts)

    def attempt(run_mode, elapsed=0, label="initial"):
        orig_log = run_script(model, events, run_mode)
        orig_full = reconstruct(run_script(model, events, MONITOR_ALL), topology)
        obs_log = run_script(sim, events, run_mode, background, elapsed)
        run.logs.append((label, obs_log))
        interference = detect_interference(obs_log, scenario, topology)
        return validate(reconstruct(orig_log, topology), reconstruct(obs_log, topology), interference, topology,
                        scenario, run_mode, orig_full)

    verdict = attempt(mode)
    elapsed = 0
    for n, delay in enumerate(BACKOFF, 1):
        if verdict.verdict != UNKNOWN:
            break
        elapsed += delay
        verdict = attempt(MONITOR_ALL, elapsed, f"rerun{n}")
        verdict.attempts = n
    if verdict.verdict == FAIL and verdict.localized is not None and verdict.localized.follow_up:
        segment = verdict.localized.segment
        refined = attempt(MONITOR_ALL, elapsed, "refine")
        if refined.verdict == FAIL and refined.localized is not None:
            refined.localized.segment = segment
            verdict = refined
    run.verdict = verdict
    return run
