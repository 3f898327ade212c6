"""Staged collection + analysis against a target, and the named harness profiles.

The stages follow the request budget: a 5-code static probe, 20 codes for the
cheap pattern tests, 1000 codes for the seed tests, and finally 2N codes (with
the budget cap lifted) for the fixed-period comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from .collector import CollectPlan, LocalTarget, collect
from .harness import OtpServer, ServerConfig, VulnProfile
from .policy import RenewalPolicy
from .prng import preset
from .rules import AnalysisConfig, AnalysisReport, analyze
from .sequence import OtpSequence


@dataclass
class StagedResult:
    report: AnalysisReport
    sequence: OtpSequence
    stages: List[int] = field(default_factory=list)


def _collect_more(target, account_id, have: Optional[OtpSequence], total: int, interval, lifted: bool):
    need = total - (len(have) if have is not None else 0)
    if need <= 0:
        return have
    plan = CollectPlan(target, account_id, need, interval=interval,
                       budget_cap=None if lifted else total)
    if have is not None and len(have) and getattr(target, "supports_clock", False):
        # keep pacing between the last old request and the first new one
        target.advance_clock(int(interval))
    more = collect(plan)
    if have is None:
        return more
    return have.extend(more)


def staged_detect(target, account_id: str, cfg: Optional[AnalysisConfig] = None,
                  interval: int = 60, budget_cap: int = 1000) -> StagedResult:
    """Collect in growing stages, stopping as soon as a stage reports a violation."""
    cfg = cfg or AnalysisConfig()
    probe, total20 = cfg.static_probe[0], cfg.static_total
    stages = []
    seq = _collect_more(target, account_id, None, probe, interval, False)
    stages.append(len(seq))
    targets = [total20, min(cfg.rule3_collect, budget_cap), 2 * cfg.period_N]
    report = None
    for size in targets:
        if len(seq) < stages[-1]:
            break  # truncated by quota
        lifted = size > budget_cap
        seq = _collect_more(target, account_id, seq, size, interval, lifted)
        stages.append(len(seq))
        report = analyze(seq, cfg)
        if report.violations or len(seq) < size:
            break
    if report is None:
        report = analyze(seq, cfg)
    return StagedResult(report, seq, stages)


# ---------------------------------------------------------------------------
# named profiles


@dataclass(frozen=True)
class E2EProfile:
    name: str
    build: Callable[[int], ServerConfig]
    rule: Optional[str]
    params: Dict[str, object] = field(default_factory=dict)


def _cfg(seed: int, **kw) -> ServerConfig:
    return ServerConfig(VulnProfile(daily_quota=None, **kw), base_seed=seed)


E2E_PROFILES: Dict[str, E2EProfile] = {
    p.name: p
    for p in [
        E2EProfile("static", lambda s: _cfg(s, kind="static_per_account"), "R1"),
        E2EProfile("fixed_table_624", lambda s: _cfg(s, kind="fixed_table", period=624), "R2_1",
                   {"period": 624}),
        E2EProfile("repeat_2", lambda s: _cfg(s, kind="repeat_n", n=2), "R2_2", {"repeat_n": 2}),
        E2EProfile("repeat_3", lambda s: _cfg(s, kind="repeat_n", n=3), "R2_2", {"repeat_n": 3}),
        E2EProfile("repeat_5", lambda s: _cfg(s, kind="repeat_n", n=5), "R2_2", {"repeat_n": 5}),
        E2EProfile("rotation_17", lambda s: _cfg(s, kind="rotation", width=17), "R2_3_shift",
                   {"width": 17, "direction": "anticlockwise"}),
        E2EProfile("rotation_081642", lambda s: _cfg(s, kind="rotation", width=17, start=81642), "R2_3_shift",
                   {"width": 17, "direction": "anticlockwise"}),
        E2EProfile("append_bit", lambda s: _cfg(s, kind="append_bit"), "R2_3_append"),
        E2EProfile("insert_bit", lambda s: _cfg(s, kind="insert_bit", position=3), "R2_3_insert",
                   {"position": 3}),
        E2EProfile("parity_even", lambda s: _cfg(s, kind="parity", parity="all_even"), "R2_3_parity",
                   {"pattern": "all_even"}),
        E2EProfile("parity_odd", lambda s: _cfg(s, kind="parity", parity="all_odd"), "R2_3_parity",
                   {"pattern": "all_odd"}),
        E2EProfile("parity_alternating", lambda s: _cfg(s, kind="parity", parity="alternating"),
                   "R2_3_parity", {"pattern": "alternating"}),
        E2EProfile("const_seed", lambda s: _cfg(s, kind="const_seed", spec=preset("c_rand").with_seed(1)),
                   "R3_const_seed", {"template": "c_rand", "seed": 1}),
        E2EProfile("timestamp_seed", lambda s: _cfg(s, kind="timestamp_seed", spec=preset("c_rand")),
                   "R3_time_seed", {"clock_offset": 0}),
        E2EProfile("timestamp_seed_skew3",
                   lambda s: _cfg(s, kind="timestamp_seed", spec=preset("c_rand"), clock_skew=3),
                   "R3_time_seed", {"clock_offset": 3}),
        E2EProfile("secure", lambda s: _cfg(s, kind="secure"), None),
    ]
}


def run_e2e(name: str, seed: int = 0, account_id: str = "victim",
            cfg: Optional[AnalysisConfig] = None) -> tuple:
    """Spin up a harness for the named profile, collect in stages, analyse.

    Returns ``(ok, result, profile)`` where ``ok`` means exactly the expected
    rule fired with the expected parameters (or nothing fired for ``secure``).
    """
    profile = E2E_PROFILES[name]
    server = OtpServer(profile.build(seed))
    server.register_account(account_id, "+10000000000")
    result = staged_detect(LocalTarget(server), account_id, cfg)
    return check_expectation(profile, result.report), result, profile


def check_expectation(profile: E2EProfile, report: AnalysisReport) -> bool:
    rules = report.rules
    if profile.rule is None:
        return not rules
    if rules != [profile.rule]:
        return False
    evidence = report.violations[0].evidence
    return all(evidence.get(k) == v for k, v in profile.params.items())


def describe_detection(report: AnalysisReport) -> List[str]:
    lines = []
    for v in report.violations:
        e = v.evidence
        detail = {
            "R1": lambda: f"code={e.get('code')} ({e.get('status')})",
            "R2_1": lambda: f"N={e.get('period')}",
            "R2_2": lambda: f"n={e.get('repeat_n')}",
            "R2_3_shift": lambda: f"width={e.get('width')}, {e.get('direction')}",
            "R2_3_append": lambda: "bit appended at LSB",
            "R2_3_insert": lambda: f"position={e.get('position')}",
            "R2_3_parity": lambda: f"pattern={e.get('pattern')}",
            "R3_const_seed": lambda: f"template={e.get('template')}, seed={e.get('seed')}, matched={e.get('matched')}",
            "R3_time_seed": lambda: f"template={e.get('template')}, offset={e.get('clock_offset')}s, matched={e.get('matched')}",
        }.get(v.rule, lambda: "")()
        lines.append(f"{v.rule} detected, {detail}")
    return lines


RENEWAL_PROFILES = {
    "per_request": RenewalPolicy("per_request"),
    "on_consume": RenewalPolicy("on_consume"),
    "after_duration_1200": RenewalPolicy("after_duration", 1200),
    "after_duration_3600": RenewalPolicy("after_duration", 3600),
}
