"""Key-value config files for generator specs, harness servers and analysis.

Format: one ``key = value`` (or ``key: value``) per line, ``#`` comments.
Integers may be decimal or 0x-prefixed hex.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Union

from .prng import LcgParams, LfibParams, PrngSpec, preset


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_kv(path: Union[str, Path]) -> Dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def parse_int(text: str) -> int:
    text = text.strip().replace("_", "")
    try:
        if text.lower().startswith(("0x", "-0x")):
            return int(text, 16)
        if "^" in text:
            base, exp = text.split("^", 1)
            return int(base) ** int(exp)
        return int(text, 10)
    except ValueError:
        raise ConfigError(f"not an integer: {text!r}") from None


def _int_list(text: str) -> list:
    return [parse_int(p) for p in text.split(",") if p.strip()]


SPEC_KEYS = {"algorithm", "preset", "seed", "seed2", "a", "c", "m", "output", "lags", "op", "init", "otp_length"}


def spec_from_kv(kv: Dict[str, str]) -> PrngSpec:
    """Build a PrngSpec; ``preset`` supplies defaults that other keys override."""
    try:
        if "preset" in kv:
            spec = preset(kv["preset"])
            if "seed" in kv or "seed2" in kv:
                spec = spec.with_seed(
                    parse_int(kv["seed"]) if "seed" in kv else spec.seed,
                    parse_int(kv["seed2"]) if "seed2" in kv else None,
                )
            return spec
        alg = kv.get("algorithm")
        if alg is None:
            raise ConfigError("spec needs 'preset' or 'algorithm'")
        seed = parse_int(kv.get("seed", "0"))
        seed2 = parse_int(kv["seed2"]) if "seed2" in kv else None
        params = None
        if alg == "lcg":
            params = LcgParams(parse_int(kv["a"]), parse_int(kv["c"]), parse_int(kv["m"]),
                               kv.get("output", "identity"))
        elif alg == "lfib":
            params = LfibParams(tuple(_int_list(kv["lags"])), kv.get("op", "add"),
                                parse_int(kv["m"]), tuple(_int_list(kv["init"])))
        return PrngSpec(alg, params, seed, seed2)
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}") from None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def spec_to_kv(spec: PrngSpec, otp_length: int = None) -> Dict[str, str]:
    if spec.preset_name:
        kv = {"preset": spec.preset_name, "seed": str(spec.seed)}
        if spec.seed2 is not None:
            kv["seed2"] = str(spec.seed2)
    else:
        kv = {"algorithm": spec.algorithm, "seed": str(spec.seed)}
        if spec.seed2 is not None:
            kv["seed2"] = str(spec.seed2)
        p = spec.params
        if isinstance(p, LcgParams):
            kv.update(a=hex(p.a), c=hex(p.c), m=hex(p.m), output=p.output_transform)
        elif isinstance(p, LfibParams):
            kv.update(lags=",".join(map(str, p.lags)), op=p.op, m=str(p.m),
                      init=",".join(map(str, p.initial_sequence)))
    if otp_length is not None:
        kv["otp_length"] = str(otp_length)
    return kv


def dump_kv(kv: Dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in kv.items())
