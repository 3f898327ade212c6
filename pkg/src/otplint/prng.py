"""Reference implementations of the generator families found behind OTP servers.

Every generator is a small mutable object with ``next_raw()`` and ``copy()``.
The module-level :func:`next_raw` / :func:`draw_otp` wrap those in a pure
``(value, new_state)`` interface for callers that want value semantics.

WELL512a transform (16 x 32-bit words, index ``i``)::

    z0 = S[i+15]; z1 = S[i] ^ S[i]<<16 ^ S[i+13] ^ S[i+13]<<15
    z2 = S[i+9] ^ S[i+9]>>11
    S[i] = z1 ^ z2
    S[i+15] = z0 ^ z0<<2 ^ z1 ^ z1<<18 ^ z2<<28 ^ (S[i] ^ (S[i]<<5 & 0xDA442D24))
    i = i+15; output S[i]

(all indices mod 16, all words masked to 32 bits).
"""

from __future__ import annotations

import copy as _copy
import re
import secrets
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

MASK32 = 0xFFFFFFFF
MASK48 = (1 << 48) - 1

ALGORITHMS = ("lcg", "lfib", "mt19937", "well512", "dual_lcg_combined", "os_csprng")
OUTPUT_TRANSFORMS = ("identity", "high16_mod32768", "high32_of_48")
LFIB_OPS = ("add", "sub", "mul", "xor")

JAVA_MULTIPLIER = 0x5DEECE66D
JAVA_INCREMENT = 0xB

# combined LCG pair used by PHP's lcg_value()
DUAL_M1, DUAL_A1, DUAL_Q1, DUAL_R1 = 2147483563, 40014, 53668, 12211
DUAL_M2, DUAL_A2, DUAL_Q2, DUAL_R2 = 2147483399, 40692, 52774, 3791


class PrngError(Exception):
    """Base class for generator configuration errors."""


class UnknownPresetError(PrngError, KeyError):
    pass


class SeedRangeError(PrngError, ValueError):
    pass


class ShapeError(PrngError, ValueError):
    pass


class EntropyUnavailableError(PrngError, RuntimeError):
    pass


@dataclass(frozen=True)
class LcgParams:
    a: int
    c: int
    m: int
    output_transform: str = "identity"

    def __post_init__(self):
        if self.m < 2:
            raise PrngError(f"LCG modulus must be >= 2, got {self.m}")
        if not (0 <= self.a < self.m and 0 <= self.c < self.m):
            raise PrngError(f"LCG requires 0 <= a, c < m (a={self.a}, c={self.c}, m={self.m})")
        if self.output_transform not in OUTPUT_TRANSFORMS:
            raise PrngError(f"unknown output transform {self.output_transform!r}")


@dataclass(frozen=True)
class LfibParams:
    lags: tuple
    op: str
    m: int
    initial_sequence: tuple

    def __post_init__(self):
        lags = tuple(self.lags)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "initial_sequence", tuple(self.initial_sequence))
        if len(lags) not in (2, 3) or any(l <= 0 for l in lags) or list(lags) != sorted(set(lags)):
            raise PrngError(f"LFib lags must be 2 or 3 strictly increasing positive ints, got {lags}")
        if self.op not in LFIB_OPS:
            raise PrngError(f"unknown LFib op {self.op!r}")
        if self.m < 2:
            raise PrngError(f"LFib modulus must be >= 2, got {self.m}")


@dataclass(frozen=True)
class PrngSpec:
    algorithm: str
    params: Union[LcgParams, LfibParams, None] = None
    seed: int = 0
    seed2: Optional[int] = None
    preset_name: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise PrngError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "lcg" and not isinstance(self.params, LcgParams):
            raise PrngError("lcg spec needs LcgParams")
        if self.algorithm == "lfib" and not isinstance(self.params, LfibParams):
            raise PrngError("lfib spec needs LfibParams")

    def with_seed(self, seed: int, seed2: Optional[int] = None) -> "PrngSpec":
        if seed2 is None:
            seed2 = self.seed2
        return replace(self, seed=seed, seed2=seed2)

    @property
    def deterministic(self) -> bool:
        return self.algorithm != "os_csprng"


@dataclass(frozen=True)
class OtpFormat:
    length: int = 6

    def __post_init__(self):
        if not 4 <= self.length <= 8:
            raise ValueError(f"OTP length must be in [4, 8], got {self.length}")

    @property
    def modulus(self) -> int:
        return 10 ** self.length

    def format(self, value: int) -> str:
        return str(value % self.modulus).zfill(self.length)

    def matches(self, code: str) -> bool:
        return re.fullmatch(rf"\d{{{self.length}}}", code) is not None


# ---------------------------------------------------------------------------
# generators


class Generator:
    algorithm = ""

    def next_raw(self) -> int:
        raise NotImplementedError

    def copy(self) -> "Generator":
        return _copy.deepcopy(self)

    def draw_otp(self, fmt: OtpFormat) -> str:
        return fmt.format(self.next_raw())


class LcgGenerator(Generator):
    algorithm = "lcg"

    def __init__(self, params: LcgParams, state: int):
        self.params = params
        self.state = state

    def next_raw(self) -> int:
        p = self.params
        self.state = (p.a * self.state + p.c) % p.m
        return lcg_output(self.state, p.output_transform)


def lcg_output(state: int, transform: str) -> int:
    if transform == "identity":
        return state
    if transform == "high16_mod32768":
        return (state // 65536) % 32768
    return (state >> 16) & MASK32


class LfibGenerator(Generator):
    algorithm = "lfib"

    def __init__(self, params: LfibParams, history: Sequence[int]):
        self.params = params
        # oldest value first; length equals the largest lag
        self.history = deque(history, maxlen=params.lags[-1])

    def next_raw(self) -> int:
        p = self.params
        h = self.history
        size = len(h)
        terms = [h[size - lag] for lag in p.lags]
        acc = terms[0]
        for t in terms[1:]:
            if p.op == "add":
                acc = acc + t
            elif p.op == "sub":
                acc = acc - t
            elif p.op == "mul":
                acc = acc * t
            else:
                acc = acc ^ t
        value = acc % p.m
        h.append(value)
        return value


class MT19937(Generator):
    algorithm = "mt19937"
    N, M = 624, 397
    MATRIX_A = 0x9908B0DF
    UPPER, LOWER = 0x80000000, 0x7FFFFFFF

    def __init__(self, mt: Sequence[int], index: int = 624):
        if len(mt) != self.N:
            raise ShapeError(f"MT19937 state needs 624 words, got {len(mt)}")
        if not 0 <= index <= self.N:
            raise ShapeError(f"MT19937 index must be in [0, 624], got {index}")
        self.mt = list(mt)
        self.index = index

    @classmethod
    def seeded(cls, seed: int) -> "MT19937":
        return cls(knuth_fill(seed, cls.N), cls.N)

    def twist(self) -> None:
        mt = self.mt
        n, m = self.N, self.M
        for i in range(n):
            y = (mt[i] & self.UPPER) | (mt[(i + 1) % n] & self.LOWER)
            v = mt[(i + m) % n] ^ (y >> 1)
            if y & 1:
                v ^= self.MATRIX_A
            mt[i] = v
        self.index = 0

    def next_raw(self) -> int:
        if self.index >= self.N:
            self.twist()
        y = self.mt[self.index]
        self.index += 1
        return temper(y)


def temper(y: int) -> int:
    y ^= y >> 11
    y ^= (y << 7) & 0x9D2C5680
    y ^= (y << 15) & 0xEFC60000
    y ^= y >> 18
    return y & MASK32


def knuth_fill(seed: int, n: int) -> list:
    """Standard MT seeding recurrence, also used to expand WELL512 seeds."""
    state = [seed & MASK32]
    for i in range(1, n):
        prev = state[-1]
        state.append((1812433253 * (prev ^ (prev >> 30)) + i) & MASK32)
    return state


class Well512(Generator):
    algorithm = "well512"

    def __init__(self, state: Sequence[int], index: int = 0):
        if len(state) != 16:
            raise ShapeError(f"WELL512 state needs 16 words, got {len(state)}")
        if not 0 <= index < 16:
            raise ShapeError(f"WELL512 index must be in [0, 16), got {index}")
        self.state = [w & MASK32 for w in state]
        self.index = index

    def next_raw(self) -> int:
        s = self.state
        i = self.index
        z0 = s[(i + 15) & 15]
        v0 = s[i]
        vm1 = s[(i + 13) & 15]
        vm2 = s[(i + 9) & 15]
        z1 = (v0 ^ (v0 << 16)) ^ (vm1 ^ (vm1 << 15))
        z2 = vm2 ^ (vm2 >> 11)
        new_v1 = (z1 ^ z2) & MASK32
        s[i] = new_v1
        s[(i + 15) & 15] = (
            (z0 ^ (z0 << 2)) ^ (z1 ^ (z1 << 18)) ^ (z2 << 28) ^ (new_v1 ^ ((new_v1 << 5) & 0xDA442D24))
        ) & MASK32
        self.index = (i + 15) & 15
        return s[self.index]


class DualLcg(Generator):
    """Two combined multiplicative LCGs; output is the 31-bit combined value."""

    algorithm = "dual_lcg_combined"

    def __init__(self, s1: int, s2: int):
        self.s1 = s1
        self.s2 = s2

    def next_raw(self) -> int:
        q, r = divmod(self.s1, DUAL_Q1)
        self.s1 = DUAL_A1 * r - DUAL_R1 * q
        if self.s1 < 0:
            self.s1 += DUAL_M1
        q, r = divmod(self.s2, DUAL_Q2)
        self.s2 = DUAL_A2 * r - DUAL_R2 * q
        if self.s2 < 0:
            self.s2 += DUAL_M2
        z = self.s1 - self.s2
        if z < 1:
            z += DUAL_M1 - 1
        return z


class OsCsprng(Generator):
    algorithm = "os_csprng"

    def next_raw(self) -> int:
        try:
            return secrets.randbits(32)
        except (OSError, NotImplementedError) as exc:  # pragma: no cover - platform specific
            raise EntropyUnavailableError(str(exc)) from exc

    def copy(self) -> "OsCsprng":
        return OsCsprng()


# ---------------------------------------------------------------------------
# presets


_C_RAND = LcgParams(a=1103515245, c=12345, m=2**31, output_transform="high16_mod32768")
_JAVA = LcgParams(a=JAVA_MULTIPLIER, c=JAVA_INCREMENT, m=2**48, output_transform="high32_of_48")

_PRESETS = {
    "c_rand": PrngSpec("lcg", _C_RAND, seed=1, preset_name="c_rand"),
    # PHP rand() defers to the C library generator
    "php_rand": PrngSpec("lcg", _C_RAND, seed=1, preset_name="php_rand"),
    "java_lcg": PrngSpec("lcg", _JAVA, seed=0, preset_name="java_lcg"),
    "lcg_value": PrngSpec("dual_lcg_combined", None, seed=1, seed2=1, preset_name="lcg_value"),
    "mt19937": PrngSpec("mt19937", None, seed=5489, preset_name="mt19937"),
    "mt_rand": PrngSpec("mt19937", None, seed=5489, preset_name="mt_rand"),
    "well512": PrngSpec("well512", None, seed=5489, preset_name="well512"),
    "os_csprng": PrngSpec("os_csprng", None, seed=0, preset_name="os_csprng"),
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> PrngSpec:
    try:
        return _PRESETS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}") from None


def make_generator(spec: PrngSpec) -> Generator:
    alg = spec.algorithm
    seed = spec.seed
    if alg == "os_csprng":
        return OsCsprng()
    if seed is None or seed < 0:
        raise SeedRangeError(f"seed must be a nonnegative integer, got {seed!r}")
    if alg == "lcg":
        p = spec.params
        if p.output_transform == "high32_of_48":
            if seed > MASK48:
                raise SeedRangeError(f"48-bit generator seed out of range: {seed}")
            # java.util.Random scrambles the seed with the multiplier
            return LcgGenerator(p, ((seed ^ JAVA_MULTIPLIER) & MASK48) % p.m)
        # srand() takes an unsigned 32-bit value; the state is that value mod m
        if seed >= max(p.m, 2**32):
            raise SeedRangeError(f"LCG seed out of range: {seed} (m={p.m})")
        return LcgGenerator(p, seed % p.m)
    if alg == "lfib":
        p = spec.params
        init = p.initial_sequence
        if len(init) != p.lags[-1]:
            raise ShapeError(f"LFib initial sequence needs {p.lags[-1]} values, got {len(init)}")
        if any(not 0 <= v < p.m for v in init):
            raise SeedRangeError("LFib initial values must lie in [0, m)")
        return LfibGenerator(p, init)
    if alg in ("mt19937", "well512"):
        if seed > MASK32:
            raise SeedRangeError(f"{alg} seed must fit in 32 bits, got {seed}")
        if alg == "mt19937":
            return MT19937.seeded(seed)
        return Well512(knuth_fill(seed, 16), 0)
    if alg == "dual_lcg_combined":
        s2 = spec.seed2 if spec.seed2 is not None else seed
        if not (1 <= seed < DUAL_M1 and 1 <= s2 < DUAL_M2):
            raise SeedRangeError(f"lcg_value seeds must be in [1, 2^31 - 85), got ({seed}, {s2})")
        return DualLcg(seed, s2)
    raise PrngError(f"unsupported algorithm {alg!r}")  # pragma: no cover


def next_raw(state: Generator) -> tuple:
    """Pure step: returns ``(value, advanced_copy)`` and leaves ``state`` untouched."""
    nxt = state.copy()
    return nxt.next_raw(), nxt


def draw_otp(state: Generator, fmt: OtpFormat) -> tuple:
    value, nxt = next_raw(state)
    return fmt.format(value), nxt


def stream(spec: PrngSpec, n: int) -> list:
    if n < 0:
        raise ValueError("n must be >= 0")
    gen = make_generator(spec)
    return [gen.next_raw() for _ in range(n)]


def otp_stream(spec: PrngSpec, n: int, fmt: OtpFormat) -> list:
    return [fmt.format(v) for v in stream(spec, n)]
