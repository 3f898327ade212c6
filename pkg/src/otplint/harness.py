"""Simulated OTP servers with configurable, deliberately weak code generation.

An :class:`OtpServer` is the in-process core; :func:`make_http_server` wraps it
in a small JSON-over-HTTP API so the collector can drive it like a real
service.  Time only moves through :meth:`OtpServer.advance_clock`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import pickle
import threading
from dataclasses import asdict, dataclass, field, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Dict, Optional, Union

from .config import ConfigError, parse_int, spec_from_kv, spec_to_kv, SPEC_KEYS
from .policy import RenewalPolicy
from .prng import (
    MT19937,
    Generator,
    LfibGenerator,
    LfibParams,
    OsCsprng,
    OtpFormat,
    PrngSpec,
    make_generator,
    preset,
)

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "Your verification code is {code}. Valid for 5 minutes."
DAY = 86400
PROFILE_KINDS = (
    "static_per_account",
    "fixed_table",
    "repeat_n",
    "rotation",
    "append_bit",
    "insert_bit",
    "parity",
    "const_seed",
    "timestamp_seed",
    "secure",
)


class HarnessError(Exception):
    pass


class HarnessConfigError(HarnessError, ConfigError):
    pass


class QuotaExceededError(HarnessError):
    pass


class UnknownAccountError(HarnessError, KeyError):
    pass


class AccountExistsError(HarnessError):
    pass


class TemplateError(HarnessError, ValueError):
    pass


def render_sms(code: str, template: str = DEFAULT_TEMPLATE) -> str:
    if not template or template.count("{code}") != 1:
        raise TemplateError("SMS template needs exactly one {code} placeholder")
    return template.replace("{code}", code)


def stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class VulnProfile:
    kind: str = "secure"
    otp_length: int = 6
    renewal: RenewalPolicy = RenewalPolicy("per_request")
    daily_quota: Optional[int] = 20
    period: int = 624
    table_spec: Optional[PrngSpec] = None
    n: int = 2
    width: Optional[int] = None
    direction: str = "anticlockwise"
    position: int = 1
    parity: str = "all_even"
    spec: Optional[PrngSpec] = None
    start: Optional[int] = None
    clock_skew: int = 0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise HarnessConfigError(f"unknown profile kind {self.kind!r}")
        if not 4 <= self.otp_length <= 8:
            raise HarnessConfigError("otp_length must be in [4, 8]")
        if self.daily_quota is not None and self.daily_quota < 1:
            raise HarnessConfigError("daily_quota must be positive or None")
        if self.kind == "repeat_n" and self.n < 2:
            raise HarnessConfigError("repeat_n needs n >= 2")
        if self.kind == "fixed_table" and self.period < 1:
            raise HarnessConfigError("fixed_table needs N >= 1")
        if self.kind == "rotation":
            w = self.width or 17
            if not 2 <= w or 2**w > 10**self.otp_length:
                raise HarnessConfigError(f"rotation width {w} does not fit {self.otp_length}-digit codes")
            if self.direction not in ("anticlockwise", "clockwise"):
                raise HarnessConfigError(f"unknown rotation direction {self.direction!r}")
        if self.kind == "parity" and self.parity not in ("all_even", "all_odd", "alternating"):
            raise HarnessConfigError(f"unknown parity pattern {self.parity!r}")
        if self.kind in ("const_seed", "timestamp_seed") and self.spec is None:
            raise HarnessConfigError(f"{self.kind} needs a generator spec")
        if self.kind == "insert_bit" and self.position < 0:
            raise HarnessConfigError("insert position must be >= 0")

    @property
    def format(self) -> OtpFormat:
        return OtpFormat(self.otp_length)

    def describe(self) -> dict:
        d = {"kind": self.kind, "otp_length": self.otp_length, "renewal": str(self.renewal),
             "daily_quota": self.daily_quota}
        extra = {
            "fixed_table": {"period": self.period},
            "repeat_n": {"n": self.n},
            "rotation": {"width": self.width or 17, "direction": self.direction, "start": self.start},
            "insert_bit": {"position": self.position},
            "parity": {"parity": self.parity},
            "const_seed": {"spec": spec_to_kv(self.spec) if self.spec else None},
            "timestamp_seed": {"spec": spec_to_kv(self.spec) if self.spec else None,
                               "clock_skew": self.clock_skew},
        }.get(self.kind, {})
        d.update(extra)
        return d


@dataclass(frozen=True)
class ServerConfig:
    profile: VulnProfile = VulnProfile()
    base_seed: int = 0
    clock_start: int = 1_600_000_000
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        render_sms("0" * self.profile.otp_length, self.template)


# ---------------------------------------------------------------------------
# code sources, one per account


class _Source:
    def next_code(self, now: int) -> str:
        raise NotImplementedError


class _Static(_Source):
    def __init__(self, code):
        self.code = code

    def next_code(self, now):
        return self.code


class _Table(_Source):
    def __init__(self, table):
        self.table = table
        self.pos = 0

    def next_code(self, now):
        code = self.table[self.pos % len(self.table)]
        self.pos += 1
        return code


class _Repeat(_Source):
    def __init__(self, gen: Generator, fmt: OtpFormat, n: int):
        self.gen, self.fmt, self.n = gen, fmt, n
        self.current = None
        self.left = 0

    def next_code(self, now):
        if self.left == 0:
            code = self.gen.draw_otp(self.fmt)
            while code == self.current:
                code = self.gen.draw_otp(self.fmt)
            self.current, self.left = code, self.n
        self.left -= 1
        return self.current


class _Rotation(_Source):
    def __init__(self, start, width, direction, fmt):
        self.value, self.width, self.direction, self.fmt = start, width, direction, fmt
        self.first = True

    def next_code(self, now):
        if not self.first:
            w = self.width
            v = self.value
            if self.direction == "anticlockwise":
                self.value = ((v << 1) & ((1 << w) - 1)) | (v >> (w - 1))
            else:
                self.value = (v >> 1) | ((v & 1) << (w - 1))
        self.first = False
        return self.fmt.format(self.value)


class _Insert(_Source):
    """Shift in one fresh bit per code; position 0 appends at the low end."""

    def __init__(self, start, position, bits: Generator, fmt):
        self.value, self.position, self.bits, self.fmt = start, position, bits, fmt
        self.first = True

    def next_code(self, now):
        if not self.first:
            k = self.position
            bit = self.bits.next_raw() & 1
            low = self.value & ((1 << k) - 1)
            grown = ((self.value >> k) << (k + 1)) | (bit << k) | low
            self.value = grown % self.fmt.modulus
        self.first = False
        return self.fmt.format(self.value)


class _Parity(_Source):
    def __init__(self, gen: Generator, pattern, fmt):
        self.gen, self.pattern, self.fmt = gen, pattern, fmt
        self.count = 0

    def next_code(self, now):
        value = self.gen.next_raw() % self.fmt.modulus
        if self.pattern == "all_odd":
            value |= 1
        elif self.pattern == "alternating":
            value = (value & ~1) | (self.count & 1)
        self.count += 1
        return self.fmt.format(value)


class _Draw(_Source):
    def __init__(self, gen: Generator, fmt):
        self.gen, self.fmt = gen, fmt

    def next_code(self, now):
        return self.gen.draw_otp(self.fmt)


class _Timestamp(_Source):
    """Reseeds with the request's clock reading (plus skew) before every draw."""

    def __init__(self, spec: PrngSpec, skew, fmt):
        self.spec, self.skew, self.fmt = spec, skew, fmt

    def next_code(self, now):
        return make_generator(self.spec.with_seed(now + self.skew)).draw_otp(self.fmt)


def _mt_table(seed: int, size: int, fmt: OtpFormat) -> list:
    gen = MT19937.seeded(seed)
    table, seen = [], set()
    while len(table) < size:
        code = gen.draw_otp(fmt)
        if code not in seen:
            seen.add(code)
            table.append(code)
    return table


def build_source(profile: VulnProfile, base_seed: int, account_id: str, shared: dict) -> _Source:
    fmt = profile.format
    acct_seed = stable_seed(base_seed, account_id)
    rng = MT19937.seeded(acct_seed)
    kind = profile.kind
    if kind == "static_per_account":
        return _Static(fmt.format(int(hashlib.sha256(f"{base_seed}:{account_id}".encode()).hexdigest(), 16)))
    if kind == "fixed_table":
        if "table" not in shared:
            if profile.table_spec is not None:
                gen = make_generator(profile.table_spec)
                shared["table"] = [gen.draw_otp(fmt) for _ in range(profile.period)]
            else:
                shared["table"] = _mt_table(base_seed & 0xFFFFFFFF, profile.period, fmt)
        return _Table(shared["table"])
    if kind == "repeat_n":
        return _Repeat(rng, fmt, profile.n)
    if kind == "rotation":
        w = profile.width or 17
        start = profile.start
        if start is None:
            top = 1 << (w - 1)
            start = top | (rng.next_raw() & (top - 1))
            while start == (1 << w) - 1:
                start = top | (rng.next_raw() & (top - 1))
        return _Rotation(start, w, profile.direction, fmt)
    if kind in ("append_bit", "insert_bit"):
        start = profile.start if profile.start is not None else 1 + rng.next_raw() % (fmt.modulus - 1)
        position = 0 if kind == "append_bit" else profile.position
        return _Insert(start, position, rng, fmt)
    if kind == "parity":
        if profile.parity == "all_even":
            # lagged Fibonacci seeded with even values only ever yields even values
            init = tuple((rng.next_raw() & ~1) & 0xFFFFFFFF for _ in range(17))
            gen = LfibGenerator(LfibParams((5, 17), "add", 2**32, init), init)
            return _Parity(gen, "all_even", fmt)
        return _Parity(rng, profile.parity, fmt)
    if kind == "const_seed":
        return _Draw(make_generator(profile.spec), fmt)
    if kind == "timestamp_seed":
        return _Timestamp(profile.spec, profile.clock_skew, fmt)
    return _Draw(OsCsprng(), fmt)


# ---------------------------------------------------------------------------


@dataclass
class AccountState:
    account_id: str
    phone: str
    source: _Source
    current_code: Optional[str] = None
    issue_count: int = 0
    quota_used_today: int = 0
    quota_day: Optional[int] = None
    last_issue_time: Optional[int] = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.lock = threading.Lock()


class SimClock:
    def __init__(self, start: int = 0):
        self._now = int(start)
        self._lock = threading.Lock()

    @property
    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("cannot move the clock backwards")
        with self._lock:
            self._now += int(seconds)
            return self._now


class OtpServer:
    def __init__(self, config: ServerConfig = ServerConfig()):
        if not isinstance(config.profile, VulnProfile):
            raise HarnessConfigError("config.profile must be a VulnProfile")
        self.config = config
        self.clock = SimClock(config.clock_start)
        self.accounts: Dict[str, AccountState] = {}
        self._shared: dict = {}
        self._registry = threading.Lock()

    @property
    def profile(self) -> VulnProfile:
        return self.config.profile

    @property
    def now(self) -> int:
        return self.clock.now

    def register_account(self, account_id: str, phone: str = "") -> AccountState:
        with self._registry:
            if account_id in self.accounts:
                raise AccountExistsError(f"account {account_id!r} already registered")
            src = build_source(self.profile, self.config.base_seed, account_id, self._shared)
            acct = AccountState(account_id, phone, src)
            self.accounts[account_id] = acct
            return acct

    def _account(self, account_id: str) -> AccountState:
        try:
            return self.accounts[account_id]
        except KeyError:
            raise UnknownAccountError(account_id) from None

    def request_otp(self, account_id: str) -> str:
        acct = self._account(account_id)
        policy = self.profile.renewal
        quota = self.profile.daily_quota
        with acct.lock:
            now = self.clock.now
            day = now // DAY
            if acct.quota_day != day:
                acct.quota_day, acct.quota_used_today = day, 0
            if quota is not None and acct.quota_used_today >= quota:
                raise QuotaExceededError(f"daily quota of {quota} reached for {account_id!r}")
            renew = (
                acct.current_code is None
                or policy.kind == "per_request"
                or (policy.kind == "after_duration" and now - acct.last_issue_time >= policy.seconds)
            )
            if renew:
                acct.current_code = acct.source.next_code(now)
                acct.last_issue_time = now
                acct.issue_count += 1
            acct.quota_used_today += 1
            return render_sms(acct.current_code, self.config.template)

    def consume(self, account_id: str, code: str) -> bool:
        acct = self._account(account_id)
        with acct.lock:
            if acct.current_code is None or code != acct.current_code:
                return False
            if self.profile.renewal.kind == "on_consume":
                acct.current_code = None
            return True

    def advance_clock(self, seconds: int) -> int:
        return self.clock.advance(seconds)

    def describe(self) -> dict:
        return {"profile": self.profile.describe(), "now": self.clock.now, "clock": True,
                "template": self.config.template}

    def save_snapshot(self, path: Union[str, Path]) -> None:
        with self._registry:
            blob = pickle.dumps({"config": self.config, "now": self.clock.now,
                                 "accounts": self.accounts, "shared": self._shared})
        Path(path).write_bytes(blob)

    @classmethod
    def load_snapshot(cls, path: Union[str, Path]) -> "OtpServer":
        data = pickle.loads(Path(path).read_bytes())
        server = cls(data["config"])
        server.clock = SimClock(data["now"])
        server.accounts = data["accounts"]
        server._shared = data["shared"]
        return server


# ---------------------------------------------------------------------------
# config files


def _quota(text: str) -> Optional[int]:
    if text.strip().lower() in ("none", "off", "disabled", "0", ""):
        return None
    return parse_int(text)


def server_config_from_kv(kv: Dict[str, str]) -> ServerConfig:
    kind = kv.get("profile", "secure")
    try:
        spec = spec_from_kv(kv) if ("preset" in kv or "algorithm" in kv) else None
        if kind == "const_seed" and spec is None:
            spec = preset("c_rand")
        if kind == "timestamp_seed" and spec is None:
            spec = preset("c_rand")
        profile = VulnProfile(
            kind=kind,
            otp_length=parse_int(kv.get("otp_length", "6")),
            renewal=RenewalPolicy.parse(kv.get("renewal", "per_request")),
            daily_quota=_quota(kv.get("quota", "20")),
            period=parse_int(kv.get("period", "624")),
            table_spec=spec if kind == "fixed_table" else None,
            n=parse_int(kv.get("n", "2")),
            width=parse_int(kv["width"]) if "width" in kv else None,
            direction=kv.get("direction", "anticlockwise"),
            position=parse_int(kv.get("position", "1")),
            parity=kv.get("parity", "all_even"),
            spec=spec if kind in ("const_seed", "timestamp_seed") else None,
            start=parse_int(kv["start"]) if "start" in kv else None,
            clock_skew=parse_int(kv.get("clock_skew", "0")),
        )
        return ServerConfig(
            profile=profile,
            base_seed=parse_int(kv.get("base_seed", "0")),
            clock_start=parse_int(kv.get("clock_start", "1600000000")),
            template=kv.get("template", DEFAULT_TEMPLATE),
        )
    except (ValueError, TemplateError) as exc:
        raise HarnessConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# HTTP


def _make_handler(server: OtpServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("harness: " + fmt, *args)

        def _send(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b"{}"
            body = json.loads(raw or b"{}")
            if not isinstance(body, dict):
                raise ValueError("JSON body must be an object")
            return body

        def do_GET(self):
            if self.path == "/profile":
                self._send(200, server.describe())
            elif self.path == "/clock":
                self._send(200, {"now": server.now})
            else:
                self._send(404, {"error": "not_found"})

        def do_POST(self):
            try:
                body = self._body()
            except (ValueError, json.JSONDecodeError) as exc:
                self._send(400, {"error": "bad_request", "detail": str(exc)})
                return
            try:
                if self.path == "/accounts":
                    server.register_account(str(body["account_id"]), str(body.get("phone", "")))
                    self._send(201, {"account_id": body["account_id"]})
                elif self.path == "/otp/request":
                    self._send(200, {"sms": server.request_otp(str(body["account_id"]))})
                elif self.path == "/otp/consume":
                    valid = server.consume(str(body["account_id"]), str(body["code"]))
                    self._send(200, {"valid": valid})
                elif self.path == "/clock/advance":
                    self._send(200, {"now": server.advance_clock(int(body.get("seconds", 0)))})
                else:
                    self._send(404, {"error": "not_found"})
            except KeyError as exc:
                if isinstance(exc, UnknownAccountError):
                    self._send(404, {"error": "unknown_account"})
                else:
                    self._send(400, {"error": "bad_request", "detail": f"missing {exc}"})
            except QuotaExceededError:
                self._send(429, {"error": "quota"})
            except AccountExistsError:
                self._send(409, {"error": "exists"})
            except ValueError as exc:
                self._send(400, {"error": "bad_request", "detail": str(exc)})

    return Handler


def make_http_server(server: OtpServer, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    httpd = ThreadingHTTPServer((host, port), _make_handler(server))
    httpd.daemon_threads = True
    return httpd


class running_http_server:
    """Context manager serving ``server`` on a background thread; yields the base URL."""

    def __init__(self, server: OtpServer, host: str = "127.0.0.1", port: int = 0):
        self.httpd = make_http_server(server, host, port)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)
