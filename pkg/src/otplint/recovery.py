"""Attacks that rebuild generator state, parameters, or seeds from outputs."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .prng import (
    JAVA_INCREMENT,
    JAVA_MULTIPLIER,
    MASK32,
    MASK48,
    MT19937,
    LcgGenerator,
    OtpFormat,
    PrngSpec,
    ShapeError,
    make_generator,
    preset,
)

DEFAULT_SPACE = (0, 2**24 - 1)
MIN_CODES = 4
CHUNK = 1 << 16


class RecoveryError(Exception):
    pass


class InsufficientEvidenceError(RecoveryError, ValueError):
    pass


class NotThisGeneratorError(RecoveryError):
    """No state of the assumed generator explains the observations."""


class AmbiguousRecoveryError(RecoveryError):
    def __init__(self, message: str, gcd: int):
        super().__init__(message)
        self.gcd = gcd


@dataclass
class RecoveryResult:
    recovered: Any
    trials_examined: int
    verification_depth: int
    candidates: list = field(default_factory=list)
    start_index: Optional[int] = None

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, MT19937):
                return {"algorithm": "mt19937", "index": v.index, "words": v.mt}
            if isinstance(v, LcgGenerator):
                return {"algorithm": "lcg", "state": v.state}
            if isinstance(v, tuple):
                return list(v)
            return v

        return {
            "recovered": plain(self.recovered),
            "candidates": [plain(c) for c in self.candidates],
            "trials_examined": self.trials_examined,
            "verification_depth": self.verification_depth,
            "start_index": self.start_index,
        }


@dataclass(frozen=True)
class SeedSearchSpace:
    lower: int = DEFAULT_SPACE[0]
    upper: int = DEFAULT_SPACE[1]

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"empty search space [{self.lower}, {self.upper}]")
        if self.lower < 0 or self.upper >= 2**64:
            raise ValueError("search space must lie within [0, 2^64)")

    @classmethod
    def around(cls, center: int, window: int) -> "SeedSearchSpace":
        if window < 0:
            raise ValueError("window must be >= 0")
        return cls(max(0, center - window), center + window)

    def __len__(self):
        return self.upper - self.lower + 1


# ---------------------------------------------------------------------------
# Mersenne Twister


def _undo_right(y: int, shift: int) -> int:
    x = y
    for _ in range(32 // shift + 1):
        x = y ^ (x >> shift)
    return x & MASK32


def _undo_left(y: int, shift: int, mask: int) -> int:
    x = y
    for _ in range(32 // shift + 1):
        x = y ^ ((x << shift) & mask)
    return x & MASK32


def mt_untemper(y: int) -> int:
    y = _undo_right(y, 18)
    y = _undo_left(y, 15, 0xEFC60000)
    y = _undo_left(y, 7, 0x9D2C5680)
    return _undo_right(y, 11)


def mt_clone(outputs: Sequence[int]) -> MT19937:
    """State whose next outputs continue the 624 observed ones."""
    if len(outputs) != MT19937.N:
        raise ShapeError(f"mt_clone needs exactly 624 outputs, got {len(outputs)}")
    return MT19937([mt_untemper(o) for o in outputs], MT19937.N)


# ---------------------------------------------------------------------------
# LCG parameters


def lcg_recover_params(outputs: Sequence[int], m: int, cap: int = 1 << 16) -> RecoveryResult:
    """Solve ``a*(s2-s1) = s3-s2 (mod m)``; every consistent ``(a, c)`` is returned.

    Outputs beyond the third are used to prune candidates.
    """
    if len(outputs) < 3:
        raise ShapeError("need at least 3 consecutive outputs")
    s = [o % m for o in outputs]
    d1 = (s[1] - s[0]) % m
    d2 = (s[2] - s[1]) % m
    g = math.gcd(d1, m)
    if d2 % g:
        raise NotThisGeneratorError("no (a, c) maps these outputs onto each other")
    if g > cap:
        raise AmbiguousRecoveryError(f"{g} candidate multipliers exceed cap {cap}", gcd=g)
    step = m // g
    a0 = ((d2 // g) * pow(d1 // g, -1, step)) % step if step > 1 else 0
    candidates = []
    for t in range(g):
        a = a0 + t * step
        c = (s[1] - a * s[0]) % m
        if all((a * s[i] + c) % m == s[i + 1] for i in range(len(s) - 1)):
            candidates.append((a, c))
    if not candidates:
        raise NotThisGeneratorError("observations rule out every candidate")
    return RecoveryResult(
        recovered=candidates[0] if len(candidates) == 1 else None,
        trials_examined=g,
        verification_depth=len(s) - 1,
        candidates=candidates,
    )


# ---------------------------------------------------------------------------
# java.util.Random style 48-bit LCG


def java_state_recover(o1: int, o2: int, o3: Optional[int] = None) -> RecoveryResult:
    """Find the 48-bit state behind two consecutive top-32-bit outputs.

    The returned generator is positioned so its next output is the one after ``o2``.
    A third output, when given, prunes the candidates.
    """
    low = np.arange(1 << 16, dtype=np.uint64)
    states = (np.uint64(o1 & MASK32) << np.uint64(16)) | low
    nxt = (states * np.uint64(JAVA_MULTIPLIER) + np.uint64(JAVA_INCREMENT)) & np.uint64(MASK48)
    hits = nxt[(nxt >> np.uint64(16)) == np.uint64(o2 & MASK32)]
    params = preset("java_lcg").params
    gens = [LcgGenerator(params, int(s)) for s in hits]
    depth = 2
    if o3 is not None:
        gens = [g for g in gens if g.copy().next_raw() == o3 & MASK32]
        depth = 3
    if not gens:
        raise NotThisGeneratorError("no 48-bit state produces this output pair")
    return RecoveryResult(
        recovered=gens[0] if len(gens) == 1 else None,
        trials_examined=1 << 16,
        verification_depth=depth,
        candidates=gens,
    )


# ---------------------------------------------------------------------------
# seed search


def _vector_first_raw(template: PrngSpec, seeds: np.ndarray) -> Optional[np.ndarray]:
    """First raw output for many seeds at once, or None when no fast path exists."""
    seeds = seeds.astype(np.uint64)
    if template.algorithm == "mt19937":
        if int(seeds.max(initial=0)) > MASK32:
            return None
        m32 = np.uint64(MASK32)
        mt0 = seeds & m32
        prev = mt0
        mt1 = mt397 = None
        for i in range(1, 398):
            prev = (np.uint64(1812433253) * (prev ^ (prev >> np.uint64(30))) + np.uint64(i)) & m32
            if i == 1:
                mt1 = prev
        mt397 = prev
        y = (mt0 & np.uint64(0x80000000)) | (mt1 & np.uint64(0x7FFFFFFF))
        v = mt397 ^ (y >> np.uint64(1))
        v = np.where((y & np.uint64(1)) == 1, v ^ np.uint64(0x9908B0DF), v)
        v ^= v >> np.uint64(11)
        v ^= (v << np.uint64(7)) & np.uint64(0x9D2C5680)
        v ^= (v << np.uint64(15)) & np.uint64(0xEFC60000)
        v ^= v >> np.uint64(18)
        return v & m32
    if template.algorithm != "lcg":
        return None
    p = template.params
    pow2 = p.m & (p.m - 1) == 0 and p.m <= 2**64
    if not pow2 and (p.m > 2**32 or p.a >= 2**32):
        return None
    if p.output_transform == "high32_of_48":
        if int(seeds.max(initial=0)) > MASK48:
            return None
        state = (seeds ^ np.uint64(JAVA_MULTIPLIER)) & np.uint64(MASK48)
    else:
        if int(seeds.max(initial=0)) >= max(p.m, 2**32):
            return None
        state = seeds % np.uint64(p.m) if p.m < 2**64 else seeds
    with np.errstate(over="ignore"):
        nxt = state * np.uint64(p.a) + np.uint64(p.c)
    if p.m < 2**64:
        nxt = nxt & np.uint64(p.m - 1) if pow2 else nxt % np.uint64(p.m)
    if p.output_transform == "identity":
        return nxt
    if p.output_transform == "high16_mod32768":
        return (nxt >> np.uint64(16)) & np.uint64(0x7FFF)
    return (nxt >> np.uint64(16)) & np.uint64(MASK32)


def first_codes(template: PrngSpec, seeds: Sequence[int], fmt: OtpFormat) -> list:
    """First OTP code of a freshly seeded generator, for each seed."""
    arr = np.asarray(seeds, dtype=np.uint64) if len(seeds) else np.zeros(0, dtype=np.uint64)
    raw = _vector_first_raw(template, arr) if len(arr) else arr
    if raw is None:
        return [fmt.format(make_generator(template.with_seed(int(s))).next_raw()) for s in seeds]
    vals = raw % np.uint64(fmt.modulus)
    return [fmt.format(int(v)) for v in vals]


def _codes_for_seed(template: PrngSpec, seed: int, count: int, fmt: OtpFormat) -> list:
    gen = make_generator(template.with_seed(seed))
    return [gen.draw_otp(fmt) for _ in range(count)]


def _scan_chunk(template, lo, hi, observed, fmt):
    seeds = np.arange(lo, hi + 1, dtype=np.uint64)
    target = int(observed[0])
    raw = _vector_first_raw(template, seeds)
    if raw is None:
        survivors = [
            s for s in range(lo, hi + 1)
            if make_generator(template.with_seed(s)).next_raw() % fmt.modulus == target
        ]
    else:
        survivors = [int(s) for s in seeds[(raw % np.uint64(fmt.modulus)) == np.uint64(target)]]
    return [s for s in survivors if _codes_for_seed(template, s, len(observed), fmt) == list(observed)]


def seed_bruteforce(
    template: PrngSpec,
    observed_codes: Sequence[str],
    fmt: OtpFormat,
    space: SeedSearchSpace = SeedSearchSpace(),
    workers: int = 1,
) -> RecoveryResult:
    """Every seed in ``space`` whose code stream starts with ``observed_codes``."""
    if len(observed_codes) < MIN_CODES:
        raise InsufficientEvidenceError(
            f"seed search needs at least {MIN_CODES} consecutive codes, got {len(observed_codes)}"
        )
    if not template.deterministic:
        raise RecoveryError("cannot brute-force a nondeterministic generator")
    observed = list(observed_codes)
    chunks = [(lo, min(lo + CHUNK - 1, space.upper)) for lo in range(space.lower, space.upper + 1, CHUNK)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda c: _scan_chunk(template, c[0], c[1], observed, fmt), chunks))
    else:
        parts = [_scan_chunk(template, lo, hi, observed, fmt) for lo, hi in chunks]
    found = sorted(s for part in parts for s in part)
    return RecoveryResult(
        recovered=found[0] if len(found) == 1 else None,
        trials_examined=len(space),
        verification_depth=len(observed) if found else 0,
        candidates=found,
    )


def timestamp_seed_match(
    template: PrngSpec,
    observations: Sequence[tuple],
    fmt: OtpFormat,
    window: int = 5,
    min_run: int = 3,
) -> RecoveryResult:
    """Look for a clock offset ``d`` with code_i == first_code(seed = t_i + d).

    Each request is assumed to reseed with its own whole-second timestamp.
    Reports the offset explaining the longest consecutive run; ties go to the
    offset nearest zero (then the smaller one).  ``recovered`` is None when no
    run reaches ``min_run``.
    """
    if not observations:
        raise ShapeError("timestamp matching needs observations")
    if window < 0:
        raise ValueError("window must be >= 0")
    times = [int(t) for t, _ in observations]
    codes = [c for _, c in observations]
    offsets = list(range(-window, window + 1))
    seeds = [t + d for d in offsets for t in times]
    if min(seeds) < 0:
        raise ValueError("timestamp window reaches negative seeds")
    simulated = first_codes(template, seeds, fmt)
    n = len(times)
    best = (0, None, None)  # run length, offset, start index
    for k, d in enumerate(offsets):
        row = simulated[k * n:(k + 1) * n]
        run = start = 0
        for i, (sim, obs) in enumerate(zip(row, codes)):
            run = run + 1 if sim == obs else 0
            if run and (run > best[0] or (run == best[0] and best[1] is not None and abs(d) < abs(best[1]))):
                best = (run, d, i - run + 1)
    run, offset, start = best
    matched = run >= min_run
    return RecoveryResult(
        recovered=offset if matched else None,
        trials_examined=len(seeds),
        verification_depth=run if matched else 0,
        candidates=[offset] if matched else [],
        start_index=start if matched else None,
    )
