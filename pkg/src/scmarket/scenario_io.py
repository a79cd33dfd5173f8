"""JSON scenario files.

Schema (``version`` 1)::

    {
      "version": 1,
      "scs": [{"id", "alpha", "beta", "tau", "vm_min", "vm_max", "tau_rho",
               "channels": {"reserved": {...overrides...} | null, ...}}],
      "customers": [{"id", "sc_id", "alpha", "beta", "tau", "vm_min", "vm_max",
                     "kappa1", "kappa2"}]
    }

Every SC row supplies default coefficients shared by all of its channels.
``channels`` is optional; when absent all three channels are enabled with
the defaults. When present, only the listed channels are enabled and each
may override ``alpha``, ``beta``, ``tau``, ``vm_min``, ``vm_max`` or set
``enabled``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .model import (
    CHANNELS,
    CustomerParams,
    MarketError,
    MarketScenario,
    QuadraticCoefficients,
    ScenarioError,
    SmallCloudParams,
    SupplyChannelParams,
    check_scenario,
)

SCHEMA_VERSION = 1

_SC_KEYS = {"id", "alpha", "beta", "tau", "vm_min", "vm_max", "tau_rho", "channels"}
_CHANNEL_KEYS = {"alpha", "beta", "tau", "vm_min", "vm_max", "enabled"}
_CUSTOMER_KEYS = {
    "id", "sc_id", "alpha", "beta", "tau", "vm_min", "vm_max", "kappa1", "kappa2",
    "alpha_e", "beta_e", "alpha_c", "beta_c", "alpha_s", "beta_s",
}


class ScenarioFileError(MarketError):
    pass


def make_sc(
    id: str,
    alpha: float,
    beta: float,
    tau: float,
    vm_min: float = 0.0,
    vm_max: float = 1e9,
    tau_rho: float = 1.0,
    channels: Optional[Mapping[str, Optional[Mapping[str, Any]]]] = None,
) -> SmallCloudParams:
    """Build an SC whose channels share one row of defaults, with optional per-channel overrides."""
    if channels is None:
        channels = {name: None for name in CHANNELS}
    built = []
    for name, override in channels.items():
        o = dict(override or {})
        vm_hi = float(o.get("vm_max", vm_max))
        built.append(
            SupplyChannelParams(
                channel=name,
                coeffs=QuadraticCoefficients(float(o.get("alpha", alpha)), float(o.get("beta", beta))),
                vm_min=float(o.get("vm_min", vm_min)),
                vm_max=vm_hi,
                tau=float(o.get("tau", tau)),
                enabled=bool(o.get("enabled", vm_hi > 0)),
            )
        )
    return SmallCloudParams(id=id, channels=tuple(built), tau_rho=float(tau_rho))


def make_customer(
    id: str,
    sc_id: str,
    alpha: float,
    beta: float,
    tau: float,
    vm_min: float = 0.0,
    vm_max: float = 1e9,
    kappa1: float = 0.0,
    kappa2: float = 0.0,
    **job_types: float,
) -> CustomerParams:
    extra = {}
    for name in ("e", "c", "s"):
        a, b = job_types.get(f"alpha_{name}"), job_types.get(f"beta_{name}")
        if a is not None or b is not None:
            if a is None or b is None:
                raise ScenarioFileError(f"customer {id}: alpha_{name} and beta_{name} must be given together")
            extra[f"coeffs_{name}"] = QuadraticCoefficients(float(a), float(b))
    return CustomerParams(
        id=id,
        sc_id=sc_id,
        coeffs_ag=QuadraticCoefficients(float(alpha), float(beta)),
        tau_ag=float(tau),
        vm_min=float(vm_min),
        vm_max=float(vm_max),
        kappa1=float(kappa1),
        kappa2=float(kappa2),
        **extra,
    )


def _reject_unknown(where: str, obj: Mapping, allowed: set) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ScenarioFileError(f"{where}: unknown keys {unknown}")


def _required(where: str, obj: Mapping, keys: Sequence[str]) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise ScenarioFileError(f"{where}: missing keys {missing}")


def scenario_from_dict(doc: Mapping[str, Any], validate: bool = True) -> MarketScenario:
    if not isinstance(doc, Mapping):
        raise ScenarioFileError("top level must be a JSON object")
    _reject_unknown("scenario", doc, {"version", "scs", "customers"})
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioFileError(f"unsupported schema version {version!r}")
    _required("scenario", doc, ["scs", "customers"])
    scs = []
    for k, row in enumerate(doc["scs"]):
        where = f"scs[{k}]"
        _reject_unknown(where, row, _SC_KEYS)
        _required(where, row, ["id", "alpha", "beta", "tau", "vm_min", "vm_max", "tau_rho"])
        channels = row.get("channels")
        if channels is not None:
            _reject_unknown(f"{where}.channels", channels, set(CHANNELS))
            for name, override in channels.items():
                if override is not None:
                    _reject_unknown(f"{where}.channels.{name}", override, _CHANNEL_KEYS)
        scs.append(
            make_sc(
                str(row["id"]), row["alpha"], row["beta"], row["tau"],
                row["vm_min"], row["vm_max"], row["tau_rho"], channels,
            )
        )
    customers = []
    for k, row in enumerate(doc["customers"]):
        where = f"customers[{k}]"
        _reject_unknown(where, row, _CUSTOMER_KEYS)
        _required(where, row, ["id", "sc_id", "alpha", "beta", "tau", "vm_min", "vm_max"])
        kwargs = {key: row[key] for key in row if key not in ("id", "sc_id")}
        customers.append(make_customer(str(row["id"]), str(row["sc_id"]), **kwargs))
    scenario = MarketScenario(scs=tuple(scs), customers=tuple(customers))
    return check_scenario(scenario) if validate else scenario


def scenario_to_dict(scenario: MarketScenario) -> dict[str, Any]:
    """Serialise with every channel written out explicitly so the file round-trips."""
    scs = []
    for sc in scenario.scs:
        base = sc.channels[0]
        channels = {}
        for ch in sc.channels:
            channels[ch.channel] = {
                "alpha": ch.coeffs.alpha,
                "beta": ch.coeffs.beta,
                "tau": ch.tau,
                "vm_min": ch.vm_min,
                "vm_max": ch.vm_max,
                "enabled": ch.enabled,
            }
        scs.append(
            {
                "id": sc.id,
                "alpha": base.coeffs.alpha,
                "beta": base.coeffs.beta,
                "tau": base.tau,
                "vm_min": base.vm_min,
                "vm_max": base.vm_max,
                "tau_rho": sc.tau_rho,
                "channels": channels,
            }
        )
    customers = []
    for c in scenario.customers:
        row = {
            "id": c.id,
            "sc_id": c.sc_id,
            "alpha": c.coeffs_ag.alpha,
            "beta": c.coeffs_ag.beta,
            "tau": c.tau_ag,
            "vm_min": c.vm_min,
            "vm_max": c.vm_max,
            "kappa1": c.kappa1,
            "kappa2": c.kappa2,
        }
        for name in ("e", "c", "s"):
            coeffs = getattr(c, f"coeffs_{name}")
            if coeffs is not None:
                row[f"alpha_{name}"] = coeffs.alpha
                row[f"beta_{name}"] = coeffs.beta
        customers.append(row)
    return {"version": SCHEMA_VERSION, "scs": scs, "customers": customers}


def loads_scenario(text: str, validate: bool = True) -> MarketScenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(doc, validate=validate)


def load_scenario(path) -> MarketScenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioFileError(f"cannot read {path}: {exc}") from exc
    try:
        return loads_scenario(text)
    except ScenarioError:
        raise
    except ScenarioFileError as exc:
        raise ScenarioFileError(f"{path}: {exc}") from exc


def dumps_scenario(scenario: MarketScenario) -> str:
    return json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=False) + "\n"


def save_scenario(scenario: MarketScenario, path) -> None:
    Path(path).write_text(dumps_scenario(scenario), encoding="utf-8", newline="\n")


def bundled_path(name: str = "tables.json") -> Path:
    return Path(str(resources.files("scmarket") / "data" / name))


def load_tables() -> MarketScenario:
    """The five-SC, fifteen-customer evaluation market shipped with the package."""
    return load_scenario(bundled_path("tables.json"))
