"""Scenario configuration: parsing and validation.

A scenario is a YAML or JSON mapping::

    name: product-s1-t2
    domain: {dim: 3, metric: [[1,0,0],[0,1,0],[0,0,1]], orientation: 1}
    couple:
      gamma: {degree: 1, terms: [{k: [0,0,0], I: [0], c: 1}]}
      X: {constant: [1, 0, 0]}
    tolerances: {tol: 1.0e-10, rank: 1.0e-9}
    bandwidth: 3
    analyses:
      - frobenius
      - cohomology: {degrees: [0, 1], B: 3}

Instead of ``domain`` and ``couple`` a Levi-flat scenario gives
``ambient: {m, Gamma: standard, J: standard}`` and
``defining_function: {axis, scale}``; the domain is then the hypersurface.

A form is ``{degree, terms}``; each term has a frequency ``k``, a 0-based
index set ``I`` (default empty) and exactly one amplitude: ``c`` (real),
``re``/``im``, ``cos`` or ``sin`` (amplitude of a real cosine or sine mode).
A vector field is ``{constant: [...]}`` or a list of function forms.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .forms import FlatTorusDomain, TrigForm, TrigVectorField, cos_mode, exp_mode, sin_mode

DIRECTIVES = (
    "frobenius", "mc-residual", "formal-extend", "cohomology", "tangent-cone", "levi-scan",
    "rigidity", "uniqueness", "spectrum", "c-class", "gauge-derivative", "deformation-derivative",
    "leaf-kernel", "gamma-wedge-omega",
)

DEFAULT_TOLERANCES = {"tol": 1e-10, "rank": 1e-9, "levi": 1e-8}


class ConfigError(ValueError):
    """Invalid scenario configuration."""


def number(x, what: str = "value") -> float:
    """Parse a decimal double from a YAML scalar (strings such as '1e-10' included)."""
    if isinstance(x, bool):
        raise ConfigError(f"{what}: expected a number, got a boolean")
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise ConfigError(f"{what}: expected a number, got {x!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{what}: must be finite")
    return v


def integer(x, what: str = "value") -> int:
    v = number(x, what)
    if v != int(v):
        raise ConfigError(f"{what}: expected an integer, got {x!r}")
    return int(v)


@dataclass
class ScenarioConfig:
    name: str
    raw: dict
    domain: FlatTorusDomain | None
    couple_spec: dict | None
    levi_spec: dict | None
    tolerances: dict
    bandwidth: int | None
    analyses: list = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        """Hash of the file contents together with the effective tolerances and bandwidth."""
        payload = {"raw": self.raw, "tolerances": self.tolerances, "bandwidth": self.bandwidth}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def load_text(text: str, source: str = "<config>") -> dict:
    try:
        obj = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: cannot parse: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return obj


def load_path(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return load_text(p.read_text(), str(p))


def parse_domain(obj) -> FlatTorusDomain:
    if not isinstance(obj, dict) or "dim" not in obj:
        raise ConfigError("domain needs 'dim'")
    n = integer(obj["dim"], "domain.dim")
    if n < 1:
        raise ConfigError("domain.dim must be positive")
    metric = obj.get("metric")
    G = None
    if metric is not None:
        G = np.array([number(v, "domain.metric") for v in np.ravel(np.array(metric, dtype=object))])
        if G.size != n * n:
            raise ConfigError(f"domain.metric needs {n * n} entries")
        G = G.reshape(n, n)
    try:
        return FlatTorusDomain(n, G, integer(obj.get("orientation", 1), "domain.orientation"))
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from None


def parse_form(obj, domain: FlatTorusDomain, what: str = "form") -> TrigForm:
    if not isinstance(obj, dict):
        raise ConfigError(f"{what}: expected a mapping with degree and terms")
    deg = integer(obj.get("degree", 0), f"{what}.degree")
    if not 0 <= deg <= domain.dim:
        raise ConfigError(f"{what}: degree {deg} outside 0..{domain.dim}")
    out = TrigForm.zero(domain, deg)
    for j, t in enumerate(obj.get("terms", [])):
        tw = f"{what}.terms[{j}]"
        if not isinstance(t, dict) or "k" not in t:
            raise ConfigError(f"{tw}: needs k")
        k = tuple(integer(v, f"{tw}.k") for v in t["k"])
        if len(k) != domain.dim:
            raise ConfigError(f"{tw}: k must have {domain.dim} entries")
        I = tuple(integer(v, f"{tw}.I") for v in t.get("I", []))
        if len(I) != deg or len(set(I)) != len(I) or any(not 0 <= i < domain.dim for i in I):
            raise ConfigError(f"{tw}: index set {list(I)} invalid for degree {deg}")
        kinds = [key for key in ("c", "cos", "sin") if key in t] + (["re/im"] if ("re" in t or "im" in t) else [])
        if len(kinds) != 1:
            raise ConfigError(f"{tw}: give exactly one of c, re/im, cos, sin")
        try:
            if kinds[0] == "c":
                out = out + exp_mode(domain, k, number(t["c"], tw), I)
            elif kinds[0] == "re/im":
                out = out + exp_mode(domain, k, complex(number(t.get("re", 0), tw), number(t.get("im", 0), tw)), I)
            elif kinds[0] == "cos":
                out = out + cos_mode(domain, k, number(t["cos"], tw), I)
            else:
                out = out + sin_mode(domain, k, number(t["sin"], tw), I)
        except ValueError as exc:
            raise ConfigError(f"{tw}: {exc}") from None
    return out


def parse_field(obj, domain: FlatTorusDomain, what: str = "field") -> TrigVectorField:
    if isinstance(obj, dict) and "constant" in obj:
        vec = [number(v, what) for v in obj["constant"]]
        if len(vec) != domain.dim:
            raise ConfigError(f"{what}: constant needs {domain.dim} entries")
        return TrigVectorField.constant(domain, vec)
    if isinstance(obj, list) and len(obj) == domain.dim:
        return TrigVectorField([parse_form({**c, "degree": 0}, domain, f"{what}[{i}]") for i, c in enumerate(obj)])
    raise ConfigError(f"{what}: expected {{constant: [...]}} or {domain.dim} function forms")


def _directive(entry, j: int) -> tuple[str, dict]:
    if isinstance(entry, str):
        name, params = entry, {}
    elif isinstance(entry, dict) and len(entry) == 1:
        name, params = next(iter(entry.items()))
        params = {} if params is None else params
    else:
        raise ConfigError(f"analyses[{j}]: expected a name or a one-key mapping")
    if name not in DIRECTIVES:
        raise ConfigError(f"analyses[{j}]: unknown directive {name!r}")
    if not isinstance(params, dict):
        raise ConfigError(f"analyses[{j}] ({name}): parameters must be a mapping")
    return name, params


REQUIRED = {
    "mc-residual": ("a",),
    "formal-extend": ("beta",),
    "tangent-cone": ("beta", "basis"),
    "levi-scan": ("graphs",),
    "uniqueness": ("beta",),
    "gauge-derivative": ("Y",),
    "deformation-derivative": ("p",),
}
NEEDS_COUPLE = {"frobenius", "mc-residual", "formal-extend", "tangent-cone", "rigidity", "c-class",
                "gauge-derivative"}
NEEDS_LEVI = {"levi-scan", "deformation-derivative", "leaf-kernel", "gamma-wedge-omega"}


def validate(raw: dict, source: str = "<config>", tol: float | None = None,
             bandwidth: int | None = None) -> ScenarioConfig:
    name = str(raw.get("name", Path(source).stem if source != "<config>" else "scenario"))
    tols = dict(DEFAULT_TOLERANCES)
    for key, v in (raw.get("tolerances") or {}).items():
        tols[key] = number(v, f"tolerances.{key}")
    if tol is not None:
        tols["tol"] = float(tol)
    if any(v <= 0 for v in tols.values()):
        raise ConfigError("tolerances must be positive")
    B = raw.get("bandwidth")
    B = integer(B, "bandwidth") if B is not None else None
    if bandwidth is not None:
        B = int(bandwidth)
    if B is not None and B < 0:
        raise ConfigError("bandwidth must be nonnegative")
    levi = None
    domain = None
    couple = None
    if "ambient" in raw or "defining_function" in raw:
        amb = raw.get("ambient") or {}
        df = raw.get("defining_function") or {}
        if "m" not in amb or "axis" not in df:
            raise ConfigError("Levi scenarios need ambient.m and defining_function.axis")
        for key in ("Gamma", "J"):
            if amb.get(key, "standard") != "standard":
                raise ConfigError(f"ambient.{key}: only 'standard' is supported")
        m = integer(amb["m"], "ambient.m")
        axis = integer(df["axis"], "defining_function.axis")
        if m < 1 or not 0 <= axis < 2 * m:
            raise ConfigError("ambient.m or defining_function.axis out of range")
        scale = number(df.get("scale", 1.0), "defining_function.scale")
        if scale == 0:
            raise ConfigError("defining_function.scale must be nonzero (dr vanishes)")
        metric = amb.get("metric")
        levi = {"m": m, "axis": axis, "scale": scale, "metric": metric}
        G = None
        if metric is not None:
            G = parse_domain({"dim": 2 * m, "metric": metric}).metric
        full = FlatTorusDomain(2 * m, G)
        ax = [j for j in range(2 * m) if j != axis]
        domain = FlatTorusDomain(2 * m - 1, full.metric[np.ix_(ax, ax)])
    elif "domain" in raw:
        domain = parse_domain(raw["domain"])
        if "couple" in raw:
            cs = raw["couple"]
            if not isinstance(cs, dict) or "gamma" not in cs or "X" not in cs:
                raise ConfigError("couple needs gamma and X")
            couple = cs
    analyses = raw.get("analyses")
    if not analyses:
        raise ConfigError("analysis list is empty")
    parsed = []
    for j, entry in enumerate(analyses):
        dname, params = _directive(entry, j)
        for req in REQUIRED.get(dname, ()):
            if req not in params:
                raise ConfigError(f"analyses[{j}] ({dname}): missing {req}")
        if dname in NEEDS_COUPLE and couple is None and levi is None:
            raise ConfigError(f"analyses[{j}] ({dname}): needs a couple or a Levi scenario")
        if dname in NEEDS_LEVI and levi is None:
            raise ConfigError(f"analyses[{j}] ({dname}): needs ambient and defining_function")
        if dname in ("cohomology", "spectrum") and domain is None and "leaf" not in params:
            raise ConfigError(f"analyses[{j}] ({dname}): needs a domain")
        parsed.append((dname, params))
    return ScenarioConfig(name, raw, domain, couple, levi, tols, B, parsed)
