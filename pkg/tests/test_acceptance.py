"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import contextlib
import random
import time

import numpy as np
import pytest

from otplint import cli
from otplint.collector import CollectPlan, LocalTarget, PlanError, collect, run_renewal_probe
from otplint.harness import OtpServer, ServerConfig, VulnProfile
from otplint.locator import (
    LocatorConfig,
    bundled_path,
    load_corpus,
    locate_login,
    parse_candidates,
    sms_otp_activities,
)
from otplint.pipeline import E2E_PROFILES, RENEWAL_PROFILES, run_e2e
from otplint.prng import OtpFormat, otp_stream, preset, stream
from otplint.recovery import java_state_recover, lcg_recover_params, mt_clone, mt_untemper
from otplint.rules import analyze, check_binary_patterns, classify_renewal_policy
from otplint.sequence import OtpSequence

from doubles import CountingTarget, FakeWallClock
from oracles import JavaRandom, c_rand_outputs, java_unsigned, mt_outputs, temper


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, title, limit):
        start = time.perf_counter()
        try:
            yield
            elapsed = time.perf_counter() - start
            assert elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
        except BaseException as exc:
            with capsys.disabled():
                print(f"\n[FAIL] criterion {number}: {title} ({exc})")
            raise
        with capsys.disabled():
            print(f"\n[PASS] criterion {number}: {title} ({elapsed:.2f}s)")

    return run


def test_c1_prng_known_answers(criterion):
    with criterion(1, "generator known answers match independent oracles", 1.0):
        assert stream(preset("mt19937").with_seed(5489), 10) == mt_outputs(5489, 10)
        assert stream(preset("c_rand").with_seed(1), 1) == c_rand_outputs(1, 1) == [16838]
        got = stream(preset("java_lcg").with_seed(42), 5)
        r = JavaRandom(42)
        assert got == java_unsigned(42, 5)
        assert [v - (1 << 32) if v >= 1 << 31 else v for v in got] == [r.next_int() for _ in range(5)]


def test_c2_untemper_round_trip(criterion):
    words = np.random.default_rng(2).integers(0, 1 << 32, size=100_000, dtype=np.uint64).tolist()
    with criterion(2, "untemper(temper(w)) == w for 10^5 words", 1.0):
        assert all(mt_untemper(temper(w)) == w for w in words)


def test_c3_mt_clone(criterion):
    seeds = random.Random(3).sample(range(1 << 32), 50)
    truth = {s: mt_outputs(s, 1624) for s in seeds}
    with criterion(3, "MT clone from 624 outputs predicts the next 1000", 10.0):
        for s in seeds:
            out = truth[s]
            gen = mt_clone(out[:624])
            assert [gen.next_raw() for _ in range(1000)] == out[624:]


def test_c4_lcg_parameters(criterion):
    m = 2**31
    rng = random.Random(4)
    invertible = ambiguous = 0
    with criterion(4, "LCG (a, c) recovery at m=2^31 over 1000 instances", 5.0):
        for _ in range(1000):
            a, c, s = rng.randrange(m), rng.randrange(m), rng.randrange(m)
            states = []
            for _ in range(4):
                s = (a * s + c) % m
                states.append(s)
            res = lcg_recover_params(states[:3], m, cap=1 << 22)
            if res.recovered is not None:
                invertible += 1
                ra, rc = res.recovered
                assert (ra * states[2] + rc) % m == states[3]
            else:
                ambiguous += 1
                assert (a % m, c) in res.candidates
                assert all((ca * states[0] + cc) % m == states[1] for ca, cc in res.candidates)
        assert invertible + ambiguous == 1000 and invertible > 0 and ambiguous > 0


def test_c5_java_state(criterion):
    seeds = random.Random(5).sample(range(1 << 48), 100)
    with criterion(5, "48-bit state from two outputs predicts 10 more", 10.0):
        for seed in seeds:
            out = java_unsigned(seed, 12)
            res = java_state_recover(out[0], out[1])
            assert res.trials_examined <= 65536
            assert res.recovered is not None
            gen = res.recovered.copy()
            assert [gen.next_raw() for _ in range(10)] == out[2:]


def test_c6_end_to_end_rules(criterion):
    names = [n for n in E2E_PROFILES if n != "secure"]
    with criterion(6, "each harness profile yields exactly its rule, 20 seeds each", 60.0):
        for name in names:
            for seed in range(20):
                ok, result, profile = run_e2e(name, seed)
                assert ok, (name, seed, result.report.rules)
                if name == "static":
                    assert result.stages[:2] == [5, 20]
                    assert result.report.violations[0].evidence["status"] == "confirmed"
                if name.startswith("parity") or name.startswith("repeat") or name.startswith("rotation"):
                    assert result.stages[-1] == 20
                if name == "fixed_table_624":
                    assert result.stages[-1] == 2 * 624
                if name == "const_seed":
                    assert result.stages[-1] == 1000
                if name == "rotation_081642":
                    assert result.sequence.codes[:3] == ["081642", "032213", "064426"]
        found = check_binary_patterns(["081642", "032213", "064426"])
        assert [v.rule for v in found] == ["R2_3_shift"]
        assert found[0].evidence["width"] == 17


def test_c7_csprng_soundness(criterion):
    fmt = OtpFormat(6)
    times = [1_600_000_000 + 60 * i for i in range(1000)]
    total = 0
    with criterion(7, "100 csprng sequences of 1000 codes give at most 1 violation", 60.0):
        for _ in range(100):
            seq = OtpSequence.from_codes(otp_stream(preset("os_csprng"), 1000, fmt), times)
            total += len(analyze(seq).violations)
        assert total <= 1, f"{total} violations"


def test_c8_renewal_classification(criterion):
    with criterion(8, "renewal policies classified by the gap x arm probe", 5.0):
        for name, policy in RENEWAL_PROFILES.items():
            for quota in (20, None):
                server = OtpServer(ServerConfig(VulnProfile("secure", renewal=policy, daily_quota=quota)))
                server.register_account("victim")
                probe = run_renewal_probe(LocalTarget(server), "victim")
                assert probe.is_complete
                assert classify_renewal_policy(probe) == policy, name


LOGIN_TRUTH = {
    "login01_sms": "SmsLoginActivity",
    "login02_sms": "PhoneVerifyActivity",
    "login03_sms": "OtpActivity",
    "login04_sms": "AuthActivity",
    "login05_sms": "QuickLoginActivity",
    "login06_sms": "BindPhoneActivity",
    "login07_pwd": "SignInActivity",
    "login08_pwd": "AccountActivity",
    "login09_pwd": "EmailLoginActivity",
    "login10_token": "ResumeActivity",
}


def test_c9_locator_corpus(criterion, monkeypatch):
    corpus = load_corpus()
    candidates = parse_candidates(bundled_path("candidates.txt"))
    monkeypatch.setenv(cli.SEED_ENV, "9")

    def sweep():
        cfg = LocatorConfig(seed=cli.env_seed(0))
        return {name: locate_login(model, candidates, cfg) for name, model in sorted(corpus.items())}

    with criterion(9, "locator recall >= 9/10, no false positives, 6 SMS activities", 30.0):
        assert len(corpus) == 20
        first, second = sweep(), sweep()
        assert {k: v.to_dict() for k, v in first.items()} == {k: v.to_dict() for k, v in second.items()}
        hits = sum(first[name].activity == act for name, act in LOGIN_TRUTH.items())
        false_pos = sum(r.activity is not None for name, r in first.items() if name not in LOGIN_TRUTH)
        assert hits >= 9, f"recall {hits}/10"
        assert false_pos == 0
        assert all(r.iterations <= 1000 for r in first.values())
        sms = sorted(a for model in corpus.values() for a in sms_otp_activities(model))
        assert sms == sorted(LOGIN_TRUTH[f"login0{i}_sms"] for i in range(1, 7))


def test_c10_budget_and_pacing(criterion):
    rng = random.Random(10)
    with criterion(10, "collector respects count, default cap and pacing interval", 30.0):
        for _ in range(300):
            count = rng.randrange(0, 1300)
            interval = rng.randrange(0, 5000)
            clocked = rng.random() < 0.5
            t = CountingTarget(supports_clock=clocked)
            clock = None if clocked else FakeWallClock(t)
            plan = CollectPlan(t, "victim", count, interval=interval)
            if count > 1000:
                with pytest.raises(PlanError):
                    collect(plan, clock=clock)
                assert t.requests == 0
                continue
            seq = collect(plan, clock=clock)
            assert t.requests == len(seq) == count <= 1000
            assert all(b - a >= interval for a, b in zip(t.request_times, t.request_times[1:]))
