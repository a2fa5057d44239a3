"""Flat `key = value` experiment configuration files.

Lines are `key = value`; blank lines and `#` comments are ignored (inline
`# ...` tails are stripped).  Unknown keys are hard errors that name the
key and its line number.  parse_config returns an ExperimentConfig whose
resolved values round-trip exactly through to_lines(), which is what makes
repeated runs byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from fracvisc.hamiltonians import HamiltonianSpec, make_hamiltonian
from fracvisc.hj import ConstantForcing, CosWaveForcing, ZeroForcing
from fracvisc.rates import InitialData, make_initial_data

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "parse_config_file"]


class ConfigError(ValueError):
    """Invalid configuration input; carries the offending key and line."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key is not None:
            where += f" (key {key!r}"
            where += f", line {line})" if line is not None else ")"
        elif line is not None:
            where += f" (line {line})"
        super().__init__(message + where)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings (raw strings kept for exact echo)."""

    dim: int
    n_points: int | None  # None means automatic resolution selection
    s_list: tuple[float, ...]
    epsilon_list: tuple[float, ...]
    hamiltonian_kind: str
    hamiltonian_params: tuple[float, ...]
    u0: InitialData
    forcing_spec: str
    T: float
    p_list: tuple[float, ...]
    snapshot_count: int
    dt_cfl: float
    mollify_scale: float
    reference: str
    fine_factor: int
    output_dir: str
    seed: int
    raw: tuple[tuple[str, str], ...]

    def hamiltonian(self) -> HamiltonianSpec:
        return make_hamiltonian(self.hamiltonian_kind, self.dim, self.hamiltonian_params)

    def forcing(self):
        return _parse_forcing(self.forcing_spec)

    def snapshot_times(self) -> tuple[float, ...]:
        import numpy as np

        return tuple(np.linspace(0.0, self.T, self.snapshot_count).tolist())

    def to_lines(self) -> str:
        """Canonical config text reproducing this configuration."""
        return "".join(f"{k} = {v}\n" for k, v in self.raw)


_DEFAULTS: dict[str, str] = {
    "dim": "1",
    "n_points": "auto",
    "s_list": "0.5",
    "epsilon_list": "geometric:0.0625,0.5,7",
    "hamiltonian": "quadratic",
    "u0": "cos",
    "forcing": "zero",
    "T": "2.0",
    "p_list": "1.5,2,4,inf",
    "snapshot_count": "16",
    "dt_cfl": "0.5",
    "mollify_scale": "0.05",
    "reference": "hopf_lax",
    "output_dir": "out",
    "seed": "0",
}

_KNOWN_KEYS = tuple(_DEFAULTS)


def _fail(msg: str, key: str, line: int | None) -> None:
    raise ConfigError(msg, key=key, line=line)


def _parse_float(text: str, key: str, line: int | None) -> float:
    try:
        v = float(text)
    except ValueError:
        _fail(f"expected a number, got {text!r}", key, line)
    if not math.isfinite(v):
        _fail(f"expected a finite number, got {text!r}", key, line)
    return v


def _parse_int(text: str, key: str, line: int | None) -> int:
    try:
        return int(text)
    except ValueError:
        _fail(f"expected an integer, got {text!r}", key, line)


def _parse_float_list(text: str, key: str, line: int | None, allow_inf: bool = False) -> tuple[float, ...]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            _fail("empty entry in list", key, line)
        if allow_inf and part in ("inf", "Inf", "INF"):
            out.append(math.inf)
            continue
        out.append(_parse_float(part, key, line))
    return tuple(out)


def _parse_epsilons(text: str, key: str, line: int | None) -> tuple[float, ...]:
    if text.startswith("geometric:"):
        body = text[len("geometric:") :]
        parts = [p.strip() for p in body.split(",")]
        if len(parts) != 3:
            _fail("geometric viscosity ladders need start,ratio,count", key, line)
        start = _parse_float(parts[0], key, line)
        ratio = _parse_float(parts[1], key, line)
        count = _parse_int(parts[2], key, line)
        if start <= 0 or not 0 < ratio < 1 or count < 1:
            _fail("geometric ladder needs start > 0, 0 < ratio < 1, count >= 1", key, line)
        return tuple(start * ratio**i for i in range(count))
    eps = _parse_float_list(text, key, line)
    if any(e <= 0 for e in eps):
        _fail("viscosities must be positive", key, line)
    return eps


def _parse_u0(text: str, key: str, line: int | None) -> InitialData:
    if text.startswith("coeffs:"):
        params = _parse_float_list(text[len("coeffs:") :], key, line)
        try:
            return make_initial_data("coeffs", params)
        except ValueError as exc:
            _fail(str(exc), key, line)
    if text in ("cos", "cos2d", "bump"):
        return make_initial_data(text)
    _fail(f"unknown initial data {text!r}; use cos, cos2d, bump or coeffs:...", key, line)


def _parse_forcing(text: str):
    if text == "zero":
        return ZeroForcing()
    if text.startswith("const:"):
        return ConstantForcing(float(text[len("const:") :]))
    if text.startswith("cos_wave:"):
        parts = text[len("cos_wave:") :].split(",")
        if len(parts) != 2:
            raise ConfigError("cos_wave forcing needs amp,omega", key="forcing")
        return CosWaveForcing(float(parts[0]), float(parts[1]))
    raise ConfigError(
        f"unknown forcing {text!r}; use zero, const:c or cos_wave:amp,omega", key="forcing"
    )


def _parse_hamiltonian(text: str, key: str, line: int | None, dim: int) -> tuple[str, tuple[float, ...]]:
    if ":" in text:
        kind, body = text.split(":", 1)
        params = _parse_float_list(body, key, line)
    else:
        kind, params = text, ()
    try:
        make_hamiltonian(kind, dim, params)
    except ValueError as exc:
        _fail(str(exc), key, line)
    return kind, params


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    """Parse config text into an ExperimentConfig; raises ConfigError."""
    values = dict(_DEFAULTS)
    lines_seen: dict[str, int | None] = {k: None for k in values}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        stripped = rawline.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: expected 'key = value'", line=lineno)
        key, _, val = stripped.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}", key=key, line=lineno)
        if not val:
            raise ConfigError(f"{path}: empty value", key=key, line=lineno)
        values[key] = val
        lines_seen[key] = lineno

    ln = lines_seen
    dim = _parse_int(values["dim"], "dim", ln["dim"])
    if dim not in (1, 2):
        _fail(f"dim must be 1 or 2, got {dim}", "dim", ln["dim"])
    if values["n_points"] == "auto":
        n_points = None
    else:
        n_points = _parse_int(values["n_points"], "n_points", ln["n_points"])
        if n_points < 8 or n_points & (n_points - 1):
            _fail("n_points must be 'auto' or a power of two >= 8", "n_points", ln["n_points"])
    s_list = _parse_float_list(values["s_list"], "s_list", ln["s_list"])
    if any(not 0.0 < s <= 1.0 for s in s_list):
        _fail("s values must lie in (0, 1]", "s_list", ln["s_list"])
    epsilon_list = _parse_epsilons(values["epsilon_list"], "epsilon_list", ln["epsilon_list"])
    kind, params = _parse_hamiltonian(values["hamiltonian"], "hamiltonian", ln["hamiltonian"], dim)
    u0 = _parse_u0(values["u0"], "u0", ln["u0"])
    try:
        _parse_forcing(values["forcing"])
    except ConfigError as exc:
        raise ConfigError(str(exc), key="forcing", line=ln["forcing"]) from None
    T = _parse_float(values["T"], "T", ln["T"])
    if T <= 0:
        _fail("T must be positive", "T", ln["T"])
    p_list = _parse_float_list(values["p_list"], "p_list", ln["p_list"], allow_inf=True)
    if any(p < 1 for p in p_list):
        _fail("p values must satisfy p >= 1", "p_list", ln["p_list"])
    snapshot_count = _parse_int(values["snapshot_count"], "snapshot_count", ln["snapshot_count"])
    if snapshot_count < 2:
        _fail("snapshot_count must be >= 2", "snapshot_count", ln["snapshot_count"])
    dt_cfl = _parse_float(values["dt_cfl"], "dt_cfl", ln["dt_cfl"])
    if not 0.0 < dt_cfl <= 0.6:
        _fail("dt_cfl must lie in (0, 0.6]", "dt_cfl", ln["dt_cfl"])
    mollify_scale = _parse_float(values["mollify_scale"], "mollify_scale", ln["mollify_scale"])
    if mollify_scale < 0.0:
        _fail("mollify_scale must be >= 0", "mollify_scale", ln["mollify_scale"])
    ref = values["reference"]
    fine_factor = 4
    if ref.startswith("monotone"):
        if ":" in ref:
            fine_factor = _parse_int(ref.split(":", 1)[1], "reference", ln["reference"])
            if fine_factor < 4 or fine_factor & (fine_factor - 1):
                _fail("monotone fine factor must be a power of two >= 4", "reference", ln["reference"])
        ref = "monotone"
    elif ref != "hopf_lax":
        _fail(f"reference must be hopf_lax or monotone[:factor], got {ref!r}", "reference", ln["reference"])
    seed = _parse_int(values["seed"], "seed", ln["seed"])

    raw = tuple((k, values[k]) for k in _KNOWN_KEYS)
    return ExperimentConfig(
        dim=dim,
        n_points=n_points,
        s_list=s_list,
        epsilon_list=epsilon_list,
        hamiltonian_kind=kind,
        hamiltonian_params=params,
        u0=u0,
        forcing_spec=values["forcing"],
        T=T,
        p_list=p_list,
        snapshot_count=snapshot_count,
        dt_cfl=dt_cfl,
        mollify_scale=mollify_scale,
        reference=ref,
        fine_factor=fine_factor,
        output_dir=values["output_dir"],
        seed=seed,
        raw=raw,
    )


def parse_config_file(path: str) -> ExperimentConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read(), path=path)
