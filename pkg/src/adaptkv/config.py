"""Strict JSON scenario configuration.

Every object in the file is checked against a fixed key set; unknown or
misspelled keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .cache import Deployment
from .errors import ConfigError
from .streamgen import DriftEvent, StreamSpec
from .subspace import OjaConfig

REGIMES = ("full", "static", "static_hybrid", "oja_hybrid")
TOP_KEYS = {
    "stream", "oja", "ranks", "regime", "prompt_len", "decode_steps",
    "eviction", "deployment", "checkpoints",
}
STREAM_KEYS = {
    "d_h", "true_rank", "spectrum", "noise_sigma", "drift", "seed", "scale",
    "heads", "calibration_rows",
}
DRIFT_KEYS = {"step", "angle", "plane_seed", "spectrum"}
OJA_KEYS = {
    "eta_pre", "eta_dec", "buffer_period", "n_start", "n_recent", "window",
    "topk_fraction", "energy_threshold",
}
DEPLOY_KEYS = {"batch", "layers", "kv_heads", "bytes_per_scalar"}


@dataclass(frozen=True)
class ScenarioConfig:
    stream: StreamSpec
    oja: OjaConfig
    r_k: int | None
    r_v: int | None
    regime: str
    prompt_len: int
    decode_steps: int
    heads: int = 1
    calibration_rows: int = 512
    eviction: float | None = None
    deployment: Deployment = Deployment()
    checkpoints: tuple | str = "flush"

    @property
    def adaptive(self) -> bool:
        return self.regime == "oja_hybrid"

    @property
    def exempt(self) -> bool:
        return self.regime in ("static_hybrid", "oja_hybrid")

    def with_regime(self, regime: str) -> "ScenarioConfig":
        if regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {regime!r}")
        return replace(self, regime=regime)


def _check_keys(obj, allowed: set, where: str, required: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing key(s) {sorted(missing)}")
    return obj


def _int(v, where: str, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {v}")
    return v


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _spectrum(v, where: str):
    if isinstance(v, list):
        return tuple(_num(s, f"{where}[{i}]") for i, s in enumerate(v))
    return _num(v, where)


def _parse_stream(obj) -> tuple[StreamSpec, int, int]:
    s = _check_keys(obj, STREAM_KEYS, "stream", {"d_h", "true_rank"})
    drift = []
    for i, ev in enumerate(s.get("drift", [])):
        where = f"stream.drift[{i}]"
        ev = _check_keys(ev, DRIFT_KEYS, where, {"step", "angle", "plane_seed"})
        spec = ev.get("spectrum")
        drift.append(DriftEvent(
            _int(ev["step"], f"{where}.step"),
            _num(ev["angle"], f"{where}.angle"),
            _int(ev["plane_seed"], f"{where}.plane_seed", 0),
            None if spec is None else _spectrum(spec, f"{where}.spectrum"),
        ))
    try:
        stream = StreamSpec(
            d_h=_int(s["d_h"], "stream.d_h", 1),
            true_rank=_int(s["true_rank"], "stream.true_rank", 1),
            spectrum=_spectrum(s.get("spectrum", 0.8), "stream.spectrum"),
            noise_sigma=_num(s.get("noise_sigma", 0.0), "stream.noise_sigma"),
            drift=tuple(drift),
            seed=_int(s.get("seed", 0), "stream.seed", 0),
            scale=_num(s.get("scale", 1.0), "stream.scale"),
        )
    except ValueError as e:
        raise ConfigError(f"stream: {e}") from e
    heads = _int(s.get("heads", 1), "stream.heads", 1)
    calib = _int(s.get("calibration_rows", 512), "stream.calibration_rows", 1)
    return stream, heads, calib


def _parse_oja(obj) -> OjaConfig:
    o = _check_keys(obj if obj is not None else {}, OJA_KEYS, "oja")
    kwargs = {}
    for key in OJA_KEYS & set(o):
        if key in ("buffer_period", "n_start", "n_recent", "window"):
            kwargs[key] = _int(o[key], f"oja.{key}")
        else:
            kwargs[key] = _num(o[key], f"oja.{key}")
    try:
        return OjaConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"oja: {e}") from e


def _parse_ranks(obj, d_h: int):
    r = _check_keys(obj, {"r_k", "r_v", "energy_threshold"}, "ranks")
    explicit = {"r_k", "r_v"} & set(r)
    if explicit and "energy_threshold" in r:
        raise ConfigError("ranks: give either r_k/r_v or energy_threshold, not both")
    if explicit:
        if explicit != {"r_k", "r_v"}:
            raise ConfigError("ranks: r_k and r_v must be given together")
        rk, rv = _int(r["r_k"], "ranks.r_k", 1), _int(r["r_v"], "ranks.r_v", 1)
        if rk > d_h or rv > d_h:
            raise ConfigError(f"ranks: must not exceed d_h={d_h}")
        return rk, rv, None
    if "energy_threshold" not in r:
        raise ConfigError("ranks: need r_k/r_v or energy_threshold")
    eps = _num(r["energy_threshold"], "ranks.energy_threshold")
    if not 0 < eps <= 1:
        raise ConfigError("ranks.energy_threshold must lie in (0, 1]")
    return None, None, eps


def parse_config(obj) -> ScenarioConfig:
    top = _check_keys(obj, TOP_KEYS, "config", {"stream", "ranks", "regime", "prompt_len", "decode_steps"})
    stream, heads, calib = _parse_stream(top["stream"])
    oja = _parse_oja(top.get("oja"))
    rk, rv, eps = _parse_ranks(top["ranks"], stream.d_h)
    if eps is not None:
        oja = replace(oja, energy_threshold=eps)
    regime = top["regime"]
    if regime not in REGIMES:
        raise ConfigError(f"regime must be one of {REGIMES}, got {regime!r}")
    prompt_len = _int(top["prompt_len"], "prompt_len", 1)
    decode_steps = _int(top["decode_steps"], "decode_steps", 0)

    eviction = top.get("eviction")
    if eviction is not None:
        eviction = _num(eviction, "eviction")
        if not 0 < eviction <= 1:
            raise ConfigError("eviction: keep fraction must lie in (0, 1]")

    try:
        deploy = Deployment(**{
            k: _int(v, f"deployment.{k}", 1)
            for k, v in _check_keys(top.get("deployment", {}), DEPLOY_KEYS, "deployment").items()
        })
    except ValueError as e:
        raise ConfigError(f"deployment: {e}") from e

    checkpoints = top.get("checkpoints", "flush")
    if checkpoints != "flush":
        if not isinstance(checkpoints, list) or not checkpoints:
            raise ConfigError('checkpoints: expected "flush" or a non-empty list of steps')
        steps = [_int(c, "checkpoints[]", 0) for c in checkpoints]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("checkpoints: steps must be strictly increasing")
        if steps[-1] > decode_steps:
            raise ConfigError(f"checkpoints: step {steps[-1]} beyond decode_steps={decode_steps}")
        checkpoints = tuple(steps)

    return ScenarioConfig(
        stream=stream, oja=oja, r_k=rk, r_v=rv, regime=regime,
        prompt_len=prompt_len, decode_steps=decode_steps, heads=heads,
        calibration_rows=calib, eviction=eviction, deployment=deploy,
        checkpoints=checkpoints,
    )


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        obj = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return parse_config(obj)


def shipped_scenario(name: str) -> Path:
    """Path of a scenario file bundled with the package (``drift45`` ...)."""
    return Path(str(resources.files("adaptkv") / "scenarios" / f"{name}.json"))


def shipped_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("adaptkv").joinpath("scenarios").iterdir()
                  if p.name.endswith(".json"))
