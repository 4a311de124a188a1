"""Run configuration: a JSON document validated into typed pieces.

Schema (defaults in parentheses):

    {
      "layout":      {"factors": [{"name", "levels", "role"}, ...]},
      "plots":       {"b": int, "sizes": [int, ...]},
      "requirement": ["x1", "x2L", "x1*x3", ...],
      "variance":    {"sigma_eps_sq" (1.0), "sigma_gamma_sq" (1.0)},
      "alpha":       float (1.0),
      "anneal":      {"T0" (0.001), "M0" (50), "N_T" (100), "a_b" (3),
                      "e_max" (3), "f" (0.8), "seed" (0), "restarts" (10),
                      "refresh_interval" (64)},
      "output":      {"format" ("text"), "trace" (null)}
    }

Validation failures raise :class:`ConfigError` whose message names the
offending key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .annealer import AnnealParams
from .contrasts import FactorLayout, RequirementSet
from .design import VarianceSpec
from .errors import ConfigError, InvalidTermError

_ANNEAL_DEFAULTS = {
    "T0": 0.001, "M0": 50, "N_T": 100, "a_b": 3, "e_max": 3,
    "f": 0.8, "seed": 0, "restarts": 10, "refresh_interval": 64,
}
_FORMATS = ("text", "json", "csv")


@dataclass(frozen=True)
class RunConfig:
    layout: FactorLayout
    b: int
    sizes: tuple[int, ...]
    requirement: RequirementSet
    term_strings: tuple[str, ...]
    variance: VarianceSpec
    alpha: float
    anneal: AnnealParams
    out_format: str
    trace_path: str | None

    def resolved_dict(self) -> dict:
        """The fully resolved config, defaults included, for report echoes."""
        return {
            "layout": {
                "factors": [
                    {"name": f.name, "levels": f.levels, "role": f.role}
                    for f in self.layout.factors
                ]
            },
            "plots": {"b": self.b, "sizes": list(self.sizes)},
            "requirement": list(self.term_strings),
            "variance": {
                "sigma_eps_sq": self.variance.sigma_eps_sq,
                "sigma_gamma_sq": self.variance.sigma_gamma_sq,
            },
            "alpha": self.alpha,
            "anneal": {
                "T0": self.anneal.t0,
                "M0": self.anneal.m0,
                "N_T": self.anneal.n_t,
                "a_b": self.anneal.a_b,
                "e_max": list(self.anneal.e_max)
                if isinstance(self.anneal.e_max, tuple)
                else self.anneal.e_max,
                "f": self.anneal.f,
                "seed": self.anneal.seed,
                "restarts": self.anneal.restarts,
                "refresh_interval": self.anneal.refresh_interval,
            },
            "output": {"format": self.out_format, "trace": self.trace_path},
        }


def _need(mapping, key, path):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return mapping[key]


def _as_int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _as_number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return float(value)


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {"layout", "plots", "requirement", "variance", "alpha", "anneal", "output"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown key")

    layout_doc = _need(doc, "layout", "")
    factors_doc = _need(layout_doc, "factors", "layout")
    if not isinstance(factors_doc, list) or not factors_doc:
        raise ConfigError("layout.factors", "expected a non-empty list")
    specs = []
    for i, f in enumerate(factors_doc):
        key = f"layout.factors[{i}]"
        name = _need(f, "name", key)
        levels = _as_int(_need(f, "levels", key), f"{key}.levels", minimum=2)
        role = _need(f, "role", key)
        if role not in ("whole-plot", "subplot"):
            raise ConfigError(f"{key}.role", f"must be 'whole-plot' or 'subplot', got {role!r}")
        specs.append((name, levels, role))
    try:
        layout = FactorLayout.create(specs)
    except ValueError as exc:
        raise ConfigError("layout.factors", str(exc)) from None

    plots_doc = _need(doc, "plots", "")
    b = _as_int(_need(plots_doc, "b", "plots"), "plots.b", minimum=1)
    sizes_doc = _need(plots_doc, "sizes", "plots")
    if not isinstance(sizes_doc, list) or len(sizes_doc) != b:
        raise ConfigError("plots.sizes", f"expected a list of {b} plot sizes")
    sizes = tuple(
        _as_int(s, f"plots.sizes[{i}]", minimum=1) for i, s in enumerate(sizes_doc)
    )

    req_doc = _need(doc, "requirement", "")
    if not isinstance(req_doc, list) or not req_doc:
        raise ConfigError("requirement", "expected a non-empty list of term strings")
    try:
        requirement = RequirementSet.parse([str(s) for s in req_doc], layout)
        requirement.validate(layout)
    except InvalidTermError as exc:
        raise ConfigError("requirement", str(exc)) from None

    var_doc = doc.get("variance", {})
    try:
        variance = VarianceSpec(
            sigma_eps_sq=_as_number(var_doc.get("sigma_eps_sq", 1.0), "variance.sigma_eps_sq"),
            sigma_gamma_sq=_as_number(
                var_doc.get("sigma_gamma_sq", 1.0), "variance.sigma_gamma_sq"
            ),
        )
    except ValueError as exc:
        raise ConfigError("variance", str(exc)) from None

    alpha = _as_number(doc.get("alpha", 1.0), "alpha")
    if alpha < 0:
        raise ConfigError("alpha", f"must be >= 0, got {alpha}")

    ann_doc = dict(_ANNEAL_DEFAULTS)
    ann_doc.update(doc.get("anneal", {}))
    for key in ann_doc:
        if key not in _ANNEAL_DEFAULTS:
            raise ConfigError(f"anneal.{key}", "unknown key")
    e_max = ann_doc["e_max"]
    if isinstance(e_max, list):
        e_max = tuple(_as_int(e, "anneal.e_max", minimum=1) for e in e_max)
    else:
        e_max = _as_int(e_max, "anneal.e_max", minimum=1)
    try:
        anneal = AnnealParams(
            t0=_as_number(ann_doc["T0"], "anneal.T0"),
            m0=_as_int(ann_doc["M0"], "anneal.M0", minimum=1),
            n_t=_as_int(ann_doc["N_T"], "anneal.N_T", minimum=0),
            a_b=_as_int(ann_doc["a_b"], "anneal.a_b", minimum=1),
            e_max=e_max,
            f=_as_number(ann_doc["f"], "anneal.f"),
            seed=_as_int(ann_doc["seed"], "anneal.seed"),
            restarts=_as_int(ann_doc["restarts"], "anneal.restarts", minimum=1),
            refresh_interval=_as_int(
                ann_doc["refresh_interval"], "anneal.refresh_interval", minimum=0
            ),
        )
        anneal.check_a_b(b)
        anneal.resolve_e_max(sizes)
    except ValueError as exc:
        raise ConfigError("anneal", str(exc)) from None

    out_doc = doc.get("output", {})
    out_format = out_doc.get("format", "text")
    if out_format not in _FORMATS:
        raise ConfigError("output.format", f"must be one of {_FORMATS}, got {out_format!r}")
    trace_path = out_doc.get("trace")
    if trace_path is not None and not isinstance(trace_path, str):
        raise ConfigError("output.trace", "expected a path string or null")

    return RunConfig(
        layout=layout,
        b=b,
        sizes=sizes,
        requirement=requirement,
        term_strings=tuple(str(s) for s in req_doc),
        variance=variance,
        alpha=alpha,
        anneal=anneal,
        out_format=out_format,
        trace_path=trace_path,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from None
    return parse_config(doc)
