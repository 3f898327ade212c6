import json
import math
import random

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from otplint.policy import RenewalPolicy, RenewalProbeResult
from otplint.prng import OsCsprng, OtpFormat, otp_stream, preset
from otplint.rules import (
    AnalysisConfig,
    InsufficientDataError,
    UnclassifiableError,
    Violation,
    analyze,
    check_binary_patterns,
    check_consecutive_repeats,
    check_constant_seed,
    check_fixed_period,
    check_parity_pattern,
    check_static,
    check_timestamp_seed,
    classify_renewal_policy,
    min_period,
)
from otplint.sequence import OtpSequence

from oracles import c_rand_outputs, rotl_bits, rotr_bits

FMT6 = OtpFormat(6)


def csprng_codes(n, length=6):
    g = OsCsprng()
    fmt = OtpFormat(length)
    return [g.draw_otp(fmt) for _ in range(n)]


# --- R1 ---------------------------------------------------------------------

def test_static_twenty():
    v = check_static(["1234"] * 20)
    assert v.rule == "R1" and v.evidence["status"] == "confirmed"
    assert v.chance_log10 == -4 * 19
    assert v.chance_probability == pytest.approx(1e-76)


def test_static_probe_fails_at_fifth():
    assert check_static(["1234"] * 4 + ["9999"] + ["1234"] * 15) is None


def test_static_suspected_tier():
    v = check_static(["1234"] * 9)
    assert v.evidence["status"] == "suspected" and v.evidence["needs"] == 11


def test_static_needs_five():
    with pytest.raises(InsufficientDataError):
        check_static(["1234"] * 4)


def test_static_csprng():
    assert check_static(csprng_codes(20, 4)) is None


# --- R2_1 -------------------------------------------------------------------

def test_fixed_period_table():
    table = otp_stream(preset("mt19937"), 624, FMT6)
    v = check_fixed_period(table * 2, 624)
    assert v.rule == "R2_1" and v.evidence["period"] == 624


def test_fixed_period_small():
    assert check_fixed_period(["1", "2", "1", "2"], 2).evidence["period"] == 2


def test_fixed_period_csprng_and_shortfall():
    assert check_fixed_period(csprng_codes(1248), 624) is None
    with pytest.raises(InsufficientDataError, match="short by 1"):
        check_fixed_period(csprng_codes(1247), 624)


def test_min_period():
    assert min_period(["7", "7", "7"]) == 1
    assert min_period(["1", "2", "3", "1", "2", "3"]) == 3
    assert min_period(["1", "2", "3", "1", "2"]) == 3
    assert min_period(["1", "2", "3", "1", "2"], strict=True) is None


@given(st.lists(st.sampled_from("abc"), min_size=2, max_size=12))
def test_min_period_brute_force(codes):
    expected = next((p for p in range(1, len(codes))
                     if all(codes[i] == codes[i + p] for i in range(len(codes) - p))), None)
    assert min_period(codes) == expected


# --- R2_2 -------------------------------------------------------------------

def test_repeats():
    assert check_consecutive_repeats(["11", "11", "22", "22", "33", "33"]).evidence["repeat_n"] == 2
    codes = [c for c in ("1000", "2000", "3000", "4000") for _ in range(5)]
    assert check_consecutive_repeats(codes).evidence["repeat_n"] == 5


def test_repeats_mixed_runs_note():
    notes = []
    assert check_consecutive_repeats(["11", "11", "11", "22", "22"], notes) is None
    assert any("inconsistent" in n for n in notes)


def test_repeats_partial_last_run():
    assert check_consecutive_repeats(["1", "1", "1", "2", "2", "2", "3"]).evidence["repeat_n"] == 3


def _rle(codes):
    runs = []
    for c in codes:
        if runs and runs[-1][0] == c:
            runs[-1][1] += 1
        else:
            runs.append([c, 1])
    return [r[1] for r in runs]


@given(st.lists(st.sampled_from(["1111", "2222", "3333"]), min_size=4, max_size=30))
def test_repeats_against_rle_oracle(codes):
    lengths = _rle(codes)
    n = lengths[0]
    complete = len(lengths) - 1 + (lengths[-1] == n)
    fires = (len(lengths) >= 2 and n >= 2 and all(k == n for k in lengths[:-1])
             and lengths[-1] <= n and complete >= 2)
    v = check_consecutive_repeats(codes)
    assert (v is not None) == fires
    if v:
        assert v.evidence["repeat_n"] == n


# --- R2_3 -------------------------------------------------------------------

def test_rotation_sequence_081642():
    found = check_binary_patterns(["081642", "032213", "064426"])
    assert [v.rule for v in found] == ["R2_3_shift"]
    ev = found[0].evidence
    assert ev["width"] == 17 and ev["direction"] == "anticlockwise"
    assert ev["binary"][0] == "10011111011101010"


def test_clockwise_rotation():
    vals = [0b10110]
    for _ in range(5):
        vals.append(rotr_bits(vals[-1], 5))
    codes = [str(v).zfill(4) for v in vals]
    found = check_binary_patterns(codes)
    assert found[0].evidence["direction"] == "clockwise"


def test_append_doubling():
    found = check_binary_patterns(["0005", "0010", "0020", "0040"])
    assert [v.rule for v in found] == ["R2_3_append"]
    assert found[0].evidence["bits"] == [0, 0, 0]


def test_insert_position():
    vals = [0b1011011]
    bits = [1, 0, 0, 1, 1]
    for b in bits:
        v = vals[-1]
        vals.append(((v >> 2) << 3) | (b << 2) | (v & 0b11))
    found = check_binary_patterns([str(v).zfill(6) for v in vals])
    assert [v.rule for v in found] == ["R2_3_insert"]
    assert found[0].evidence["position"] == 2 and found[0].evidence["bits"] == bits


def test_binary_zero_first_code_skipped():
    notes = []
    assert check_binary_patterns(["0000", "0001", "0002"], notes=notes) == []
    assert any("width undefined" in n for n in notes)


def test_binary_csprng():
    assert check_binary_patterns(csprng_codes(20)) == []


def _oracle_shift(values):
    width = values[0].bit_length()
    if any(v >= 1 << width for v in values):
        return None
    for name, rot in (("anticlockwise", rotl_bits), ("clockwise", rotr_bits)):
        if all(rot(a, width) == b for a, b in zip(values, values[1:])):
            return name
    return None


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 20).flatmap(lambda w: st.tuples(
    st.just(w), st.integers(1 << (w - 1), (1 << w) - 1), st.integers(2, 8),
    st.sampled_from(["left", "right", "noise"]), st.integers(0, 2**20))))
def test_rotation_against_string_oracle(params):
    width, start, n, mode, noise = params
    vals = [start]
    for i in range(n - 1):
        if mode == "left":
            vals.append(rotl_bits(vals[-1], width))
        elif mode == "right":
            vals.append(rotr_bits(vals[-1], width))
        else:
            vals.append((noise * (i + 3)) % (1 << width))
    assume(len(set(vals)) > 1 and n >= 3)
    codes = [str(v).zfill(7) for v in vals]
    found = [v for v in check_binary_patterns(codes) if v.rule == "R2_3_shift"]
    expected = _oracle_shift(vals)
    assert (found[0].evidence["direction"] if found else None) == expected


def test_parity_patterns():
    even = [str(random.Random(i).randrange(5000) * 2).zfill(6) for i in range(20)]
    assert check_parity_pattern(even).evidence["pattern"] == "all_even"
    alt = [str(2 * i + (i % 2)).zfill(6) for i in range(1, 21)]
    assert check_parity_pattern(alt).evidence["pattern"] == "alternating"
    odd = [str(2 * i + 1).zfill(6) for i in range(20)]
    assert check_parity_pattern(odd).evidence["pattern"] == "all_odd"


def test_parity_chance_and_shortfall():
    v = check_parity_pattern([str(2 * i).zfill(6) for i in range(1, 21)])
    assert v.chance_probability == pytest.approx(3 * 2.0 ** -19)
    with pytest.raises(InsufficientDataError):
        check_parity_pattern(["000002"] * 19)


def test_parity_csprng_rarely_fires():
    fired = sum(check_parity_pattern(csprng_codes(20)) is not None for _ in range(200))
    assert fired <= 1


# --- R3 ---------------------------------------------------------------------

def test_constant_seed_at_zero():
    codes = [FMT6.format(v) for v in c_rand_outputs(1, 1000)]
    v = check_constant_seed(codes)
    assert v.evidence["offset"] == 0 and v.evidence["matched"] == 1000
    assert v.evidence["template"] == "c_rand"


def test_constant_seed_spliced():
    codes = csprng_codes(1000)
    codes[400:450] = otp_stream(preset("mt19937"), 50, FMT6)
    v = check_constant_seed(codes)
    assert v.evidence["offset"] == 400 and v.evidence["template"] == "mt19937"


def test_constant_seed_csprng_and_shortfall():
    assert check_constant_seed(csprng_codes(1000)) is None
    with pytest.raises(InsufficientDataError):
        check_constant_seed(csprng_codes(49))


def _timed(offset, n=20, t0=1_700_000_000):
    times = [t0 + 60 * i for i in range(n)]
    codes = [FMT6.format(c_rand_outputs(t + offset, 1)[0]) for t in times]
    return OtpSequence.from_codes(codes, times)


def test_timestamp_seed():
    assert check_timestamp_seed(_timed(0)).evidence["clock_offset"] == 0
    assert check_timestamp_seed(_timed(3)).evidence["clock_offset"] == 3
    seq = OtpSequence.from_codes(csprng_codes(20), [1_700_000_000 + 60 * i for i in range(20)])
    assert check_timestamp_seed(seq) is None


def test_timestamp_needs_times():
    with pytest.raises(ValueError):
        check_timestamp_seed(OtpSequence.from_codes(csprng_codes(5)))


# --- report -----------------------------------------------------------------

def test_analyze_static_only_r1():
    report = analyze(OtpSequence.from_codes(["123456"] * 20))
    assert report.rules == ["R1"]


def test_analyze_table_only_r21():
    table = otp_stream(preset("mt19937").with_seed(99), 624, FMT6)
    report = analyze(OtpSequence.from_codes(table * 2))
    assert report.rules == ["R2_1"]


def test_analyze_csprng_clean_and_pure():
    seq = OtpSequence.from_codes(csprng_codes(1000), [1_700_000_000 + 60 * i for i in range(1000)])
    first = analyze(seq)
    assert first.violations == []
    assert analyze(seq).to_json() == first.to_json()
    json.loads(first.to_json())


def test_analyze_collects_insufficiencies():
    report = analyze(OtpSequence.from_codes(["123456", "654321", "111111"]))
    assert report.violations == []
    assert any(n.startswith("R1") for n in report.notes)


def test_chance_clamped():
    v = Violation("R2_1", {}, -6 * 624)
    assert v.chance_probability == 5e-324


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["static", "repeat", "const", "rotation"]), st.integers(5, 60), st.integers(1, 40))
def test_monotone_evidence(kind, n, extra):
    if kind == "static":
        codes = ["424242"] * (n + extra)
        check = check_static
    elif kind == "repeat":
        codes = [c for c in otp_stream(preset("c_rand"), 40, FMT6) for _ in range(2)][: n + extra]
        check = check_consecutive_repeats
    elif kind == "const":
        codes = otp_stream(preset("c_rand"), 50 + n + extra, FMT6)
        n += 50
        check = check_constant_seed
    else:
        vals = [81642]
        for _ in range(n + extra):
            vals.append(rotl_bits(vals[-1], 17))
        codes = [FMT6.format(v) for v in vals]
        check = lambda c: check_binary_patterns(c)[0]
    small, large = check(codes[:n]), check(codes[: n + extra])
    assert large.chance_log10 <= small.chance_log10


# --- renewal ----------------------------------------------------------------

def _probe(fn):
    res = RenewalProbeResult()
    for gap in (120, 1200, 3600):
        for consume in (False, True):
            res.cells[(gap, consume)] = fn(gap, consume)
            res.complete[(gap, consume)] = True
    return res


def test_classify_policies():
    changing = lambda g, c: [str(1000 + i) for i in range(6)]
    assert classify_renewal_policy(_probe(changing)) == RenewalPolicy("per_request")
    on_consume = lambda g, c: [str(1000 + i) for i in range(6)] if c else ["1000"] * 6
    assert classify_renewal_policy(_probe(on_consume)) == RenewalPolicy("on_consume")
    twenty = lambda g, c: ["1000"] * 6 if g < 1200 and not c else [str(1000 + i) for i in range(6)]
    assert classify_renewal_policy(_probe(twenty)) == RenewalPolicy("after_duration", 1200)


def test_classify_unclassifiable():
    static = lambda g, c: ["1000"] * 6
    with pytest.raises(UnclassifiableError) as info:
        classify_renewal_policy(_probe(static))
    assert info.value.evidence
    weird = lambda g, c: ["1000", "1000", "2000", "3000", "3000", "4000"]
    with pytest.raises(UnclassifiableError):
        classify_renewal_policy(_probe(weird))


def test_config_validation():
    with pytest.raises(ValueError):
        AnalysisConfig(rule3_sim_count=2000)
    assert AnalysisConfig().to_dict()["const_seed_templates"]
