"""``otplint`` command line.

Exit codes: 0 ok / nothing found, 1 violations (or nothing recovered),
2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from typing import List, Optional

from . import recovery, rules, sequence
from .collector import CollectPlan, CollectorError, HttpTarget, collect
from .config import ConfigError, load_kv, parse_int, spec_from_kv
from .harness import HarnessError, OtpServer, make_http_server, server_config_from_kv
from .locator import (
    LocatorConfig,
    ModelError,
    LocatorConfigError,
    locate_login,
    parse_app_model,
    parse_candidates,
    sms_otp_activities,
)
from .pipeline import E2E_PROFILES, describe_detection, run_e2e
from .prng import OtpFormat, PRESET_NAMES, PrngError, make_generator, preset

EXIT_OK, EXIT_FOUND, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
SEED_ENV = "OTPLINT_SEED"


def env_seed(default: int) -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else default


def _out(text: str = "") -> None:
    print(text, flush=True)


def _spec(args):
    if getattr(args, "spec", None):
        spec = spec_from_kv(load_kv(args.spec))
    else:
        spec = preset(args.preset)
    if getattr(args, "seed", None) is not None:
        spec = spec.with_seed(args.seed, getattr(args, "seed2", None))
    return spec


def analysis_config_from_kv(kv: dict) -> rules.AnalysisConfig:
    ints = ("period_N", "repeat_n_max", "parity_window", "binary_window", "rule3_collect",
            "rule3_sim_count", "max_requests", "time_window", "time_min_run")
    fields = {k: parse_int(kv[k]) for k in ints if k in kv}
    if "static_probe" in kv:
        fields["static_probe"] = tuple(parse_int(p) for p in kv["static_probe"].split(","))
    for key in ("const_seed_templates", "time_seed_templates"):
        if key in kv:
            fields[key] = [preset(p.strip()) for p in kv[key].split(",") if p.strip()]
    unknown = set(kv) - set(ints) - {"static_probe", "const_seed_templates", "time_seed_templates"}
    if unknown:
        raise ConfigError(f"unknown analysis keys: {sorted(unknown)}")
    return rules.AnalysisConfig(**fields)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    spec = _spec(args)
    gen = make_generator(spec)
    if args.codes:
        fmt = OtpFormat(args.otp_length)
        for _ in range(args.count):
            _out(gen.draw_otp(fmt))
    else:
        for _ in range(args.count):
            _out(str(gen.next_raw()))
    return EXIT_OK


def _interrupt(signum, frame):
    raise KeyboardInterrupt


def cmd_serve(args) -> int:
    kv = load_kv(args.config) if args.config else {}
    if SEED_ENV in os.environ:
        kv["base_seed"] = str(env_seed(0))
    server = OtpServer(server_config_from_kv(kv))
    httpd = make_http_server(server, args.host, args.port)
    host, port = httpd.server_address[:2]
    _out(f"serving {server.profile.kind} on http://{host}:{port}")
    signal.signal(signal.SIGTERM, _interrupt)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return EXIT_OK


def cmd_collect(args) -> int:
    target = HttpTarget(args.target)
    if args.register:
        target.register(args.account, args.phone)
    plan = CollectPlan(target, args.account, args.count, interval=args.interval,
                       consume_each=args.consume, budget_cap=None if args.lift_cap else args.budget_cap)
    seq = collect(plan)
    seq.source_label = args.target
    sequence.write(seq, args.out)
    _out(f"collected {len(seq)} codes into {args.out}")
    for note in seq.notes:
        _out(f"note: {note}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    seq = sequence.read(args.input)
    cfg = analysis_config_from_kv(load_kv(args.config)) if args.config else rules.AnalysisConfig()
    report = rules.analyze(seq, cfg)
    if args.json:
        _out(report.to_json())
    else:
        _out(f"source: {report.source or args.input}  codes: {len(seq)}")
        for v in report.violations:
            _out(f"{v.rule}: {json.dumps(v.evidence, sort_keys=True)}  chance=10^{v.chance_log10:.2f}")
        for note in report.notes:
            _out(f"note: {note}")
        if not report.violations:
            _out("no violations")
    return EXIT_FOUND if report.violations else EXIT_OK


def _read_ints(path: str) -> List[int]:
    with open(path, encoding="utf-8") as fh:
        return [parse_int(line) for line in (l.split("#", 1)[0].strip() for l in fh) if line]


def cmd_recover(args) -> int:
    mode = args.mode
    extra = {}
    if mode == "mt-clone":
        values = _read_ints(args.input)
        gen = recovery.mt_clone(values[:624])
        predicted = [gen.next_raw() for _ in range(args.predict)]
        result = recovery.RecoveryResult(gen, 624, 624)
        extra["predicted"] = predicted
        if len(values) > 624:
            tail = values[624:624 + args.predict]
            extra["verified"] = predicted[:len(tail)] == tail
    elif mode == "lcg-params":
        values = _read_ints(args.input)
        result = recovery.lcg_recover_params(values, parse_int(args.modulus), cap=args.cap)
    elif mode == "java-state":
        values = _read_ints(args.input)
        result = recovery.java_state_recover(*values[:3])
        if result.recovered is not None:
            gen = result.recovered.copy()
            extra["predicted"] = [gen.next_raw() for _ in range(args.predict)]
    else:
        seq = sequence.read(args.input)
        template = _spec(args)
        if mode == "seed-brute":
            space = recovery.SeedSearchSpace(args.lower, args.upper)
            result = recovery.seed_bruteforce(template, seq.codes[:args.depth], seq.format, space,
                                              workers=args.workers)
        else:
            obs = [(r.request_time, r.code) for r in seq.records]
            result = recovery.timestamp_seed_match(template, obs, seq.format, args.window, args.min_run)
    payload = result.to_dict()
    payload.update(extra)
    if args.json:
        _out(json.dumps(payload, sort_keys=True))
    else:
        rec = payload["recovered"]
        if isinstance(rec, dict) and "words" in rec:
            rec = f"MT19937 state (index {rec['index']})"
        _out(f"recovered: {rec}")
        _out(f"candidates: {len(payload['candidates'])}  trials: {payload['trials_examined']}  "
             f"verification depth: {payload['verification_depth']}")
        if payload.get("start_index") is not None:
            _out(f"run starts at index {payload['start_index']}")
        for key in ("predicted", "verified"):
            if key in extra:
                _out(f"{key}: {extra[key]}")
    return EXIT_OK if result.recovered is not None else EXIT_FOUND


def cmd_locate(args) -> int:
    model = parse_app_model(args.model)
    candidates = parse_candidates(args.candidates)
    cfg = LocatorConfig(max_iterations=args.max_iterations, lcs_thresh=args.thresh,
                        seed=env_seed(args.seed))
    result = locate_login(model, candidates, cfg)
    widgets = sms_otp_activities(model)
    if args.json:
        payload = result.to_dict()
        payload["sms_otp_activities"] = widgets
        _out(json.dumps(payload, sort_keys=True))
    else:
        if result.activity:
            _out(f"login activity: {result.activity} (iteration {result.iterations})")
            _out("witness: " + " -> ".join(result.witness))
        else:
            _out(f"no login activity after {result.iterations} iterations")
        _out("sms otp activities: " + (", ".join(widgets) if widgets else "none"))
    return EXIT_OK


def cmd_e2e(args) -> int:
    names = list(E2E_PROFILES) if args.profile == "all" else [args.profile]
    seed = env_seed(args.seed)
    failed = 0
    for name in names:
        ok, result, profile = run_e2e(name, seed)
        failed += not ok
        if args.json:
            _out(json.dumps({"profile": name, "ok": ok, "expected": profile.rule,
                             "stages": result.stages, "report": result.report.to_dict()}, sort_keys=True))
            continue
        lines = describe_detection(result.report) or ["no violations"]
        prefix = f"[{name}] " if len(names) > 1 else ""
        for line in lines:
            _out(prefix + line)
        if not ok:
            _out(f"{prefix}expected {profile.rule or 'no violations'} {profile.params or ''}".rstrip())
    return EXIT_OK if not failed else EXIT_FOUND


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otplint", description="Audit OTP generation for weak randomness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def spec_args(sp, required=True):
        g = sp.add_mutually_exclusive_group(required=required)
        g.add_argument("--spec", help="generator spec file (key = value)")
        g.add_argument("--preset", choices=PRESET_NAMES)
        sp.add_argument("--seed", type=parse_int)
        sp.add_argument("--seed2", type=parse_int)

    sp = sub.add_parser("simulate", help="print a generator's raw outputs or OTP codes")
    spec_args(sp)
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--codes", action="store_true", help="print OTP codes instead of raw values")
    sp.add_argument("--otp-length", type=int, default=6)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("serve", help="run the simulated OTP server over HTTP")
    sp.add_argument("--config")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8080)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("collect", help="request codes from a server into a sequence file")
    sp.add_argument("--target", required=True)
    sp.add_argument("--account", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--interval", type=float, default=60)
    sp.add_argument("--consume", action="store_true")
    sp.add_argument("--budget-cap", type=int, default=1000)
    sp.add_argument("--lift-cap", action="store_true")
    sp.add_argument("--register", action="store_true", help="register the account first")
    sp.add_argument("--phone", default="")
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("analyze", help="check a sequence file against the rules")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--config")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("recover", help="recover generator state, parameters or seeds")
    sp.add_argument("--mode", required=True,
                    choices=["mt-clone", "lcg-params", "seed-brute", "time-seed", "java-state"])
    sp.add_argument("--in", dest="input", required=True,
                    help="raw integers (one per line) or, for seed modes, a sequence file")
    spec_args(sp, required=False)
    sp.add_argument("--modulus", default="2^31")
    sp.add_argument("--cap", type=int, default=1 << 16)
    sp.add_argument("--lower", type=parse_int, default=0)
    sp.add_argument("--upper", type=parse_int, default=2**24 - 1)
    sp.add_argument("--depth", type=int, default=8, help="codes to match in seed-brute")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--window", type=int, default=5)
    sp.add_argument("--min-run", type=int, default=3)
    sp.add_argument("--predict", type=int, default=10)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("locate", help="find the login activity in an app model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--candidates", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-iterations", type=int, default=1000)
    sp.add_argument("--thresh", type=float, default=0.5)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_locate)

    sp = sub.add_parser("e2e", help="collect from an in-process harness profile and analyze")
    sp.add_argument("--profile", required=True, choices=list(E2E_PROFILES) + ["all"])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_e2e)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "recover" and args.mode in ("seed-brute", "time-seed") and not (args.spec or args.preset):
        print("otplint recover: error: --preset or --spec is required for seed modes", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, LocatorConfigError, ModelError, sequence.SequenceFormatError) as exc:
        print(f"otplint: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PrngError, recovery.RecoveryError, HarnessError, CollectorError, OSError, ValueError) as exc:
        print(f"otplint: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def run() -> None:
    sys.exit(main())
