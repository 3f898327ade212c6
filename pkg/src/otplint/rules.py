"""Randomness rule checks over a collected OTP sequence.

Each ``check_*`` function takes an :class:`OtpSequence` (or a plain list of
code strings) and returns a :class:`Violation`, a list of them, or ``None``.
Chance probabilities are kept as base-10 logarithms because the interesting
ones (e.g. a 624-code period at six digits) underflow a float.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Union

from . import recovery
from .policy import PROBE_GAPS, RenewalPolicy, RenewalProbeResult
from .prng import OtpFormat, PrngSpec, otp_stream, preset
from .sequence import OtpSequence

log = logging.getLogger(__name__)

RULES = (
    "R1",
    "R2_1",
    "R2_2",
    "R2_3_shift",
    "R2_3_append",
    "R2_3_insert",
    "R2_3_parity",
    "R3_const_seed",
    "R3_time_seed",
)

LOG10_FLOOR = math.log10(5e-324)


class InsufficientDataError(ValueError):
    pass


class UnclassifiableError(ValueError):
    def __init__(self, message: str, evidence: dict):
        super().__init__(message)
        self.evidence = evidence


@dataclass
class Violation:
    rule: str
    evidence: dict
    chance_log10: float

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        self.chance_log10 = min(0.0, self.chance_log10)

    @property
    def chance_probability(self) -> float:
        # clamped to the smallest positive double so it stays in (0, 1]
        return 10.0 ** max(self.chance_log10, LOG10_FLOOR)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "evidence": self.evidence,
            "chance_probability": self.chance_probability,
            "chance_log10": round(self.chance_log10, 6),
        }


def _default_const_templates():
    return [preset("c_rand"), preset("mt19937")]


def _default_time_templates():
    return [preset("c_rand"), preset("mt19937")]


@dataclass
class AnalysisConfig:
    period_N: int = 624
    static_probe: tuple = (5, 15)
    repeat_n_max: int = 8
    parity_window: int = 20
    binary_window: int = 20
    rule3_collect: int = 1000
    rule3_sim_count: int = 50
    max_requests: int = 1000
    time_window: int = 5
    time_min_run: int = 3
    const_seed_templates: list = field(default_factory=_default_const_templates)
    time_seed_templates: list = field(default_factory=_default_time_templates)

    def __post_init__(self):
        counts = [self.period_N, self.repeat_n_max, self.parity_window, self.binary_window,
                  self.rule3_collect, self.rule3_sim_count, self.max_requests, self.time_min_run,
                  *self.static_probe]
        if any(c <= 0 for c in counts):
            raise ValueError("analysis counts must be positive")
        if self.rule3_sim_count > self.rule3_collect:
            raise ValueError("rule3_sim_count cannot exceed rule3_collect")
        if self.time_window < 0:
            raise ValueError("time_window must be >= 0")

    @property
    def static_total(self) -> int:
        return sum(self.static_probe)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.endswith("_templates")}
        d["static_probe"] = list(self.static_probe)
        d["const_seed_templates"] = [_template_label(t) for t in self.const_seed_templates]
        d["time_seed_templates"] = [_template_label(t) for t in self.time_seed_templates]
        return d


def _template_label(spec: PrngSpec) -> str:
    name = spec.preset_name or spec.algorithm
    return f"{name}(seed={spec.seed})"


@dataclass
class AnalysisReport:
    source: str
    config: AnalysisConfig
    violations: List[Violation]
    notes: List[str]

    @property
    def rules(self) -> List[str]:
        return [v.rule for v in self.violations]

    def find(self, rule: str) -> Optional[Violation]:
        return next((v for v in self.violations if v.rule == rule), None)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "config": self.config.to_dict(),
            "violations": [v.to_dict() for v in self.violations],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# helpers


@dataclass
class _View:
    codes: List[str]
    length: int
    times: List[Optional[int]]

    @property
    def values(self):
        return [int(c) for c in self.codes]


def _view(seq: Union[OtpSequence, Sequence[str]]) -> _View:
    if isinstance(seq, OtpSequence):
        return _View(seq.codes, seq.format.length, [r.request_time for r in seq.records])
    codes = [str(c) for c in seq]
    return _View(codes, len(codes[0]) if codes else 0, [None] * len(codes))


def _note(notes: Optional[list], text: str) -> None:
    log.debug(text)
    if notes is not None:
        notes.append(text)


def _run_lengths(codes: Sequence[str]) -> List[tuple]:
    runs = []
    for c in codes:
        if runs and runs[-1][0] == c:
            runs[-1][1] += 1
        else:
            runs.append([c, 1])
    return [tuple(r) for r in runs]


# ---------------------------------------------------------------------------
# Rule 1


def check_static(seq, cfg: Optional[AnalysisConfig] = None) -> Optional[Violation]:
    """Five-code probe, confirmed over twenty codes.

    Between the probe size and the confirmation size an all-identical run
    yields a ``suspected`` violation that needs more data.
    """
    cfg = cfg or AnalysisConfig()
    v = _view(seq)
    probe, total = cfg.static_probe[0], cfg.static_total
    if len(v.codes) < probe:
        raise InsufficientDataError(f"static probe needs {probe} codes, have {len(v.codes)}")
    if len(set(v.codes[:probe])) != 1:
        return None
    window = v.codes[:total]
    if len(set(window)) != 1:
        return None
    status = "confirmed" if len(window) >= total else "suspected"
    evidence = {"start": 0, "end": len(window) - 1, "code": window[0], "status": status}
    if status == "suspected":
        evidence["needs"] = total - len(window)
    return Violation("R1", evidence, -v.length * (len(window) - 1))


# ---------------------------------------------------------------------------
# Rule 2-1


def check_fixed_period(seq, N: int = 624) -> Optional[Violation]:
    v = _view(seq)
    if len(v.codes) < 2 * N:
        raise InsufficientDataError(
            f"period test with N={N} needs {2 * N} codes, have {len(v.codes)} (short by {2 * N - len(v.codes)})"
        )
    first, second = v.codes[:N], v.codes[N:2 * N]
    if first != second:
        return None
    return Violation("R2_1", {"start": 0, "end": 2 * N - 1, "period": N}, -v.length * N)


def min_period(seq, strict: bool = False) -> Optional[int]:
    """Smallest p with code[i+p] == code[i] wherever both exist.

    At least one comparison is required.  With ``strict`` the sequence must
    also hold two complete periods.
    """
    codes = _view(seq).codes
    n = len(codes)
    for p in range(1, n):
        if strict and n < 2 * p:
            break
        if all(codes[i] == codes[i + p] for i in range(n - p)):
            return p
    return None


# ---------------------------------------------------------------------------
# Rule 2-2


def check_consecutive_repeats(seq, notes: Optional[list] = None) -> Optional[Violation]:
    v = _view(seq)
    if len(v.codes) < 4:
        _note(notes, f"R2_2: repeat test needs 4 codes, have {len(v.codes)}")
        return None
    runs = _run_lengths(v.codes)
    if len(runs) < 2:
        return None  # one run is a static sequence, reported by R1
    n = runs[0][1]
    if n < 2:
        return None
    body, last = runs[:-1], runs[-1]
    complete = len(body) + (last[1] == n)
    # a partial final run is fine, but n must be seen at least twice
    if any(length != n for _, length in body) or last[1] > n or complete < 2:
        lengths = [length for _, length in runs]
        _note(notes, f"R2_2: repeated codes with inconsistent run lengths {lengths[:10]}")
        return None
    repeated = len(v.codes) - len(runs)
    return Violation(
        "R2_2",
        {"start": 0, "end": len(v.codes) - 1, "repeat_n": n, "runs": len(runs)},
        -v.length * repeated,
    )


# ---------------------------------------------------------------------------
# Rule 2-3


def rotate_left(value: int, width: int) -> int:
    return ((value << 1) & ((1 << width) - 1)) | (value >> (width - 1))


def rotate_right(value: int, width: int) -> int:
    return (value >> 1) | ((value & 1) << (width - 1))


def insert_bit(value: int, position: int, bit: int) -> int:
    """Insert ``bit`` so that ``position`` original low bits stay below it."""
    low = value & ((1 << position) - 1)
    return ((value >> position) << (position + 1)) | (bit << position) | low


def _insert_bits(values, position, modulus):
    bits = []
    for a, b in zip(values, values[1:]):
        for bit in (0, 1):
            if insert_bit(a, position, bit) % modulus == b:
                bits.append(bit)
                break
        else:
            return None
    return bits


def check_binary_patterns(seq, cfg: Optional[AnalysisConfig] = None, notes: Optional[list] = None) -> List[Violation]:
    cfg = cfg or AnalysisConfig()
    v = _view(seq)
    if len(v.codes) < 3:
        raise InsufficientDataError(f"binary pattern tests need 3 codes, have {len(v.codes)}")
    window = v.values[:min(cfg.binary_window, len(v.codes))]
    pairs = len(window) - 1
    end = len(window) - 1
    if window[0] == 0:
        _note(notes, "R2_3: first code is 0, binary width undefined; binary tests skipped")
        return []
    if len(set(window)) == 1:
        _note(notes, "R2_3: constant window; binary tests skipped")
        return []
    width = window[0].bit_length()
    modulus = 10 ** v.length
    found = []

    if all(x < (1 << width) for x in window):
        for direction, rot in (("anticlockwise", rotate_left), ("clockwise", rotate_right)):
            if all(rot(a, width) == b for a, b in zip(window, window[1:])):
                found.append(Violation(
                    "R2_3_shift",
                    {"start": 0, "end": end, "width": width, "direction": direction,
                     "binary": [format(x, f"0{width}b") for x in window[:3]]},
                    math.log10(2) - v.length * pairs,
                ))
                break
    else:
        _note(notes, f"R2_3: later codes exceed the {width}-bit width of the first code")

    appended = _insert_bits(window, 0, modulus)
    if appended is not None:
        found.append(Violation(
            "R2_3_append",
            {"start": 0, "end": end, "bits": appended},
            pairs * (math.log10(2) - v.length),
        ))
    else:
        for k in range(1, width + 1):
            bits = _insert_bits(window, k, modulus)
            if bits is not None:
                found.append(Violation(
                    "R2_3_insert",
                    {"start": 0, "end": end, "position": k, "bits": bits},
                    math.log10(width + 1) + pairs * (math.log10(2) - v.length),
                ))
                break
    return found


PARITY_PATTERNS = ("all_even", "all_odd", "alternating")


def check_parity_pattern(seq, cfg: Optional[AnalysisConfig] = None) -> Optional[Violation]:
    cfg = cfg or AnalysisConfig()
    v = _view(seq)
    w = cfg.parity_window
    if len(v.codes) < w:
        raise InsufficientDataError(f"parity test needs {w} codes, have {len(v.codes)}")
    bits = [x & 1 for x in v.values[:w]]
    if len(set(v.codes[:w])) == 1:
        return None  # static window, R1 territory
    if not any(bits):
        pattern = "all_even"
    elif all(bits):
        pattern = "all_odd"
    elif all(a != b for a, b in zip(bits, bits[1:])):
        pattern = "alternating"
    else:
        return None
    chance = math.log10(len(PARITY_PATTERNS)) + (1 - w) * math.log10(2)
    return Violation(
        "R2_3_parity",
        {"start": 0, "end": w - 1, "pattern": pattern, "first_parity": "odd" if bits[0] else "even"},
        chance,
    )


# ---------------------------------------------------------------------------
# Rule 3


def check_constant_seed(seq, templates: Optional[list] = None, cfg: Optional[AnalysisConfig] = None) -> Optional[Violation]:
    """Look for a constant-seed simulation run as a contiguous block of the sequence."""
    cfg = cfg or AnalysisConfig()
    templates = templates if templates is not None else cfg.const_seed_templates
    v = _view(seq)
    codes = v.codes[:cfg.rule3_collect]
    k = cfg.rule3_sim_count
    if len(codes) < k:
        raise InsufficientDataError(f"constant-seed test needs {k} codes, have {len(codes)}")
    fmt = OtpFormat(v.length)
    for spec in templates:
        simulated = otp_stream(spec, len(codes), fmt)
        head = simulated[:k]
        for offset in range(len(codes) - k + 1):
            if codes[offset:offset + k] == head:
                run = k
                while offset + run < len(codes) and codes[offset + run] == simulated[run]:
                    run += 1
                return Violation(
                    "R3_const_seed",
                    {"start": offset, "end": offset + run - 1, "offset": offset, "matched": run,
                     "template": spec.preset_name or spec.algorithm, "seed": spec.seed},
                    -v.length * run,
                )
    return None


def check_timestamp_seed(seq, templates: Optional[list] = None, cfg: Optional[AnalysisConfig] = None) -> Optional[Violation]:
    cfg = cfg or AnalysisConfig()
    templates = templates if templates is not None else cfg.time_seed_templates
    v = _view(seq)
    if any(t is None for t in v.times):
        raise ValueError("timestamp-seed test needs a request_time on every record")
    if len(v.codes) < cfg.time_min_run:
        raise InsufficientDataError(f"timestamp-seed test needs {cfg.time_min_run} codes")
    fmt = OtpFormat(v.length)
    obs = list(zip(v.times, v.codes))
    for spec in templates:
        res = recovery.timestamp_seed_match(spec, obs, fmt, cfg.time_window, cfg.time_min_run)
        if res.recovered is not None:
            start = res.start_index
            return Violation(
                "R3_time_seed",
                {"start": start, "end": start + res.verification_depth - 1,
                 "clock_offset": res.recovered, "matched": res.verification_depth,
                 "template": spec.preset_name or spec.algorithm, "window": cfg.time_window},
                -v.length * res.verification_depth,
            )
    return None


# ---------------------------------------------------------------------------
# renewal policy


def _all_differ(codes):
    return len(codes) >= 2 and all(a != b for a, b in zip(codes, codes[1:]))


def _constant(codes):
    return len(codes) >= 2 and len(set(codes)) == 1


def classify_renewal_policy(probe: RenewalProbeResult, gaps=PROBE_GAPS) -> RenewalPolicy:
    evidence = {f"{g}s/{'consume' if c else 'keep'}": list(codes) for (g, c), codes in sorted(probe.cells.items())}
    keep = [probe.arm(g, False) for g in gaps]
    used = [probe.arm(g, True) for g in gaps]
    if any(len(codes) < 2 for codes in keep):
        raise UnclassifiableError("probe lacks observations in a no-consume arm", evidence)
    if all(_all_differ(c) for c in keep):
        return RenewalPolicy("per_request")
    if all(_constant(c) for c in keep):
        if used and all(_all_differ(c) for c in used):
            return RenewalPolicy("on_consume")
        raise UnclassifiableError("codes never renew, even after consumption", evidence)
    for i, g in enumerate(gaps):
        if _all_differ(keep[i]):
            if all(_all_differ(c) for c in keep[i:]):
                return RenewalPolicy("after_duration", g)
            break
    raise UnclassifiableError("renewal behaviour is inconsistent across gaps", evidence)


# ---------------------------------------------------------------------------


def analyze(seq: OtpSequence, cfg: Optional[AnalysisConfig] = None) -> AnalysisReport:
    """Run every applicable check: R1, R2_2, R2_1, R2_3 (binary, parity), R3."""
    cfg = cfg or AnalysisConfig()
    violations: List[Violation] = []
    notes: List[str] = list(seq.notes)
    n = len(seq)

    def attempt(label, fn):
        try:
            return fn()
        except InsufficientDataError as exc:
            notes.append(f"{label}: {exc}")
        except ValueError as exc:
            notes.append(f"{label}: skipped ({exc})")
        return None

    r1 = attempt("R1", lambda: check_static(seq, cfg))
    if r1:
        violations.append(r1)

    r22 = check_consecutive_repeats(seq, notes)
    if r22:
        violations.append(r22)

    def period():
        window = seq.codes[:2 * cfg.period_N]
        if len(window) >= 2 * cfg.period_N and len(set(window)) == 1:
            notes.append("R2_1: constant window (period 1); left to R1")
            return None
        return check_fixed_period(seq, cfg.period_N)

    r21 = attempt("R2_1", period)
    if r21:
        violations.append(r21)

    binary = attempt("R2_3", lambda: check_binary_patterns(seq, cfg, notes)) or []
    violations.extend(binary)

    if any(v.rule.startswith("R2") for v in violations):
        notes.append("R2_3_parity: skipped, a pattern was already identified")
    else:
        parity = attempt("R2_3_parity", lambda: check_parity_pattern(seq, cfg))
        if parity:
            violations.append(parity)

    const = attempt("R3_const_seed", lambda: check_constant_seed(seq, cfg=cfg))
    if const:
        violations.append(const)

    if n and all(r.request_time is not None for r in seq.records):
        timed = attempt("R3_time_seed", lambda: check_timestamp_seed(seq, cfg=cfg))
        if timed:
            violations.append(timed)
    else:
        notes.append("R3_time_seed: skipped, records lack request times")

    return AnalysisReport(seq.source_label, cfg, violations, notes)
