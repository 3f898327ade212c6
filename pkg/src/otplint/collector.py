"""Drive login requests against a server, pull codes out of SMS text and build sequences."""

from __future__ import annotations

import json
import logging
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

from .harness import AccountExistsError, OtpServer, QuotaExceededError, UnknownAccountError
from .policy import PROBE_GAPS, PROBE_REQUESTS, RenewalProbeResult
from .prng import OtpFormat
from .sequence import OtpRecord, OtpSequence

log = logging.getLogger(__name__)

DEFAULT_BUDGET_CAP = 1000
DEFAULT_INTERVAL = 60
RETRIES = 3
_DIGITS = re.compile(r"\d+")


class CollectorError(Exception):
    pass


class ExtractionError(CollectorError, ValueError):
    def __init__(self, text: str):
        super().__init__(f"no 4-8 digit code in SMS text {text!r}")
        self.text = text


class TransportError(CollectorError):
    pass


class PlanError(CollectorError, ValueError):
    pass


class QuotaError(CollectorError):
    pass


def parse_sms(text: str) -> str:
    if not text:
        raise ExtractionError(text)
    best = ""
    for run in _DIGITS.findall(text):
        if 4 <= len(run) <= 8 and len(run) > len(best):
            best = run
    if not best:
        raise ExtractionError(text)
    return best


# ---------------------------------------------------------------------------
# targets


class LocalTarget:
    """In-process adapter over an :class:`OtpServer`."""

    supports_clock = True

    def __init__(self, server: OtpServer):
        self.server = server

    def register(self, account_id: str, phone: str = "") -> None:
        try:
            self.server.register_account(account_id, phone)
        except AccountExistsError:
            pass

    def request_otp(self, account_id: str) -> str:
        try:
            return self.server.request_otp(account_id)
        except QuotaExceededError as exc:
            raise QuotaError(str(exc)) from None
        except UnknownAccountError as exc:
            raise TransportError(f"unknown account {exc}") from None

    def consume(self, account_id: str, code: str) -> bool:
        return self.server.consume(account_id, code)

    def now(self) -> int:
        return self.server.now

    def advance_clock(self, seconds: int) -> int:
        return self.server.advance_clock(seconds)


class HttpTarget:
    """Client for the harness HTTP API (or anything speaking the same JSON)."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._clock: Optional[bool] = None

    def _call(self, method: str, path: str, body: Optional[dict] = None) -> Tuple[int, dict]:
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(self.base_url + path, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, json.loads(resp.read() or b"{}")
        except urllib.error.HTTPError as exc:
            try:
                payload = json.loads(exc.read() or b"{}")
            except json.JSONDecodeError:
                payload = {}
            return exc.code, payload
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"{method} {path}: {exc}") from exc

    @property
    def supports_clock(self) -> bool:
        if self._clock is None:
            try:
                status, body = self._call("GET", "/profile")
                self._clock = status == 200 and bool(body.get("clock"))
            except TransportError:
                self._clock = False
        return self._clock

    def register(self, account_id: str, phone: str = "") -> None:
        status, body = self._call("POST", "/accounts", {"account_id": account_id, "phone": phone})
        if status not in (201, 409):
            raise TransportError(f"register failed: HTTP {status} {body}")

    def request_otp(self, account_id: str) -> str:
        status, body = self._call("POST", "/otp/request", {"account_id": account_id})
        if status == 429:
            raise QuotaError(body.get("error", "quota"))
        if status != 200:
            raise TransportError(f"request failed: HTTP {status} {body}")
        return body["sms"]

    def consume(self, account_id: str, code: str) -> bool:
        status, body = self._call("POST", "/otp/consume", {"account_id": account_id, "code": code})
        if status != 200:
            raise TransportError(f"consume failed: HTTP {status} {body}")
        return bool(body.get("valid"))

    def now(self) -> int:
        status, body = self._call("GET", "/clock")
        return int(body["now"])

    def advance_clock(self, seconds: int) -> int:
        status, body = self._call("POST", "/clock/advance", {"seconds": seconds})
        if status != 200:
            raise TransportError(f"clock advance failed: HTTP {status} {body}")
        return int(body["now"])


# ---------------------------------------------------------------------------


@dataclass
class CollectPlan:
    target: object
    account_id: str
    count: int
    interval: float = DEFAULT_INTERVAL
    consume_each: bool = False
    budget_cap: Optional[int] = DEFAULT_BUDGET_CAP
    otp_length: Optional[int] = None

    def validate(self) -> None:
        if self.count < 0:
            raise PlanError("count must be non-negative")
        if self.interval < 0:
            raise PlanError("interval must be non-negative")
        if self.budget_cap is not None and self.count > self.budget_cap:
            raise PlanError(f"count {self.count} exceeds the request budget of {self.budget_cap}")


class WallClock:
    """Real time source used when the target cannot fast-forward its own clock."""

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


def _with_retries(fn, *args):
    last = None
    for attempt in range(RETRIES):
        try:
            return fn(*args)
        except TransportError as exc:
            last = exc
            log.warning("transport error (attempt %d/%d): %s", attempt + 1, RETRIES, exc)
    raise TransportError(f"giving up after {RETRIES} attempts: {last}")


def collect(plan: CollectPlan, clock=None) -> OtpSequence:
    """Issue ``plan.count`` requests, one every ``plan.interval`` seconds."""
    plan.validate()
    target = plan.target
    simulated = clock is None and getattr(target, "supports_clock", False)
    clock = clock or (None if simulated else WallClock())
    records: List[OtpRecord] = []
    notes: List[str] = []
    length = plan.otp_length
    last_time = None
    for i in range(plan.count):
        if i > 0 and plan.interval > 0:
            if simulated:
                now = _with_retries(target.advance_clock, int(plan.interval))
            else:
                clock.sleep(plan.interval)
                now = None
        else:
            now = None
        if now is None:
            now = _with_retries(target.now) if simulated else clock.now()
        try:
            sms = _with_retries(target.request_otp, plan.account_id)
        except QuotaError as exc:
            notes.append(f"truncated after {i} requests: quota ({exc})")
            break
        last_time = now
        try:
            code = parse_sms(sms)
        except ExtractionError as exc:
            log.warning("request %d: %s", i, exc)
            notes.append(f"request {i}: extraction failed")
            continue
        if length is None:
            length = len(code)
        consumed = False
        if plan.consume_each:
            consumed = _with_retries(target.consume, plan.account_id, code)
        records.append(OtpRecord(i, code, int(now) if simulated else int(round(now)), consumed, plan.account_id))
    if length is None:
        length = 6
    return OtpSequence(records, OtpFormat(length), f"collect:{plan.account_id}", notes)


def run_renewal_probe(target, account_id: str, gaps=PROBE_GAPS, requests: int = PROBE_REQUESTS,
                      clock=None) -> RenewalProbeResult:
    """Gap x {no-consume, consume} matrix of ``requests`` codes per cell.

    On a clock-controlled target each cell starts at the next UTC midnight so the
    daily quota is fresh and earlier cells cannot leak state through time.
    """
    result = RenewalProbeResult()
    simulated = clock is None and getattr(target, "supports_clock", False)
    for gap in gaps:
        for consume in (False, True):
            if simulated:
                now = target.now()
                target.advance_clock(86400 - now % 86400)
            codes = []
            complete = True
            for i in range(requests):
                if i > 0:
                    if simulated:
                        target.advance_clock(gap)
                    else:
                        (clock or WallClock()).sleep(gap)
                try:
                    code = parse_sms(_with_retries(target.request_otp, account_id))
                except QuotaError:
                    complete = False
                    break
                codes.append(code)
                if consume:
                    _with_retries(target.consume, account_id, code)
            result.cells[(gap, consume)] = codes
            result.complete[(gap, consume)] = complete and len(codes) == requests
    return result
