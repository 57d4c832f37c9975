"""Deterministic simulated fleet: in-process app servers and client sites.

Sites keep a flat keyed file namespace instead of a real filesystem, consume
integer virtual-clock ticks per primitive, and support bit-exact snapshot and
restore (the compensation oracle). Fault plans arm step-level failures by
step path or primitive kind with an occurrence index.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import orchestrator as orch
from .errors import StepFailure, UnknownUnitError
from .expr import DISK_FREE, evaluate, parse_expression
from .model import (
    ClientSiteState,
    DeployedUnit,
    MachineKind,
    apply_property_change,
    derive_products,
    enterprise_from_json,
    validate_enterprise,
)
from .process import ActivityKind, LifecycleState, transition
from .roles import ResourcePayload
from .safety import SafetyPolicy
from .units import unit_from_json
from .universe import (
    Universe,
    empty_universe,
    publish_unit,
    universe_digest,
)
from .values import Size, Version, value_from_json, value_to_json


class VirtualClock:
    """Integer tick counter; every primitive consumes at least one tick."""

    def __init__(self):
        self.tick = 0

    def now(self) -> int:
        self.tick += 1
        return self.tick

    def advance(self, n: int) -> None:
        self.tick += n


@dataclass(frozen=True)
class Fault:
    site_id: str
    match: str  # step path ("root.2") or primitive kind ("install")
    mode: str = "FAIL"  # FAIL | HANG_THEN_FAIL
    occurrence: int = 1

    def __post_init__(self):
        if self.occurrence < 1:
            raise ValueError("occurrence index must be >= 1")


@dataclass
class CallLogEntry:
    tick: int
    role: str  # "site" | "server"
    actor: str
    method: str
    detail: str

    def to_json(self) -> dict:
        return {
            "tick": self.tick,
            "role": self.role,
            "actor": self.actor,
            "method": self.method,
            "detail": self.detail,
        }


# ---------------------------------------------------------------------------
# Simulated client site


class SimulatedSite:
    """In-process client site honoring the client-site role contract."""

    def __init__(self, machine_id, properties, constraints, clock, call_log, state=None):
        self.machine_id = machine_id
        self.properties = dict(properties)
        self.constraints = list(constraints)
        self.clock = clock
        self.call_log = call_log
        self.units: dict[str, dict] = {}
        self.files: dict[str, str] = {}
        self._faults: list[dict] = []
        if state is not None:
            for du in state.deployed_units:
                self.units[du.unit_id] = _entry_from_deployed(du)

    # -- role surface -------------------------------------------------------

    def get_properties(self):
        self._log("get_properties", "")
        return dict(self.properties)

    def set_property(self, name, value=None, *, remove=False):
        self._log("set_property", name)
        machine_view = _MachineView(self.machine_id, self.properties)
        updated, event = apply_property_change(machine_view, name, value, remove=remove)
        self.properties = dict(updated.properties)
        return event

    def get_constraints(self):
        self._log("get_constraints", "")
        return list(self.constraints)

    def set_constraint(self, text):
        parse_expression(text)  # reject unparseable constraints
        self._log("set_constraint", text)
        self.constraints.append(text)

    def get_state(self) -> ClientSiteState:
        units = tuple(
            _deployed_from_entry(self.units[k]) for k in sorted(self.units)
        )
        return ClientSiteState(
            machine_id=self.machine_id,
            deployed_units=units,
            products=derive_products(units),
        )

    def snapshot(self) -> dict:
        """Bit-exact state capture: compare snapshots with ``==``."""
        return copy.deepcopy(
            {
                "properties": {k: value_to_json(v) for k, v in sorted(self.properties.items())},
                "constraints": list(self.constraints),
                "units": {k: self.units[k] for k in sorted(self.units)},
                "files": {k: self.files[k] for k in sorted(self.files)},
            }
        )

    def restore(self, snap: dict) -> None:
        self.properties = {k: value_from_json(v) for k, v in snap["properties"].items()}
        self.constraints = list(snap["constraints"])
        self.units = copy.deepcopy(snap["units"])
        self.files = copy.deepcopy(snap["files"])

    # -- fault injection ----------------------------------------------------

    def arm(self, fault: Fault) -> None:
        self._faults.append({"fault": fault, "hits": 0})

    def _check_fault(self, path: str, kind: ActivityKind) -> None:
        for armed in self._faults:
            f = armed["fault"]
            if f.match == path or f.match == kind.value:
                armed["hits"] += 1
                if armed["hits"] == f.occurrence:
                    if f.mode == "HANG_THEN_FAIL":
                        self.clock.advance(5)  # hang: burn virtual time first
                    raise StepFailure(f"injected fault at {path} ({kind.value})")

    # -- primitives ---------------------------------------------------------

    def run_primitive(self, path, activity, ctx):
        kind = activity.kind
        unit_id = ctx.params.get("unit_id")
        self._log("run_primitive", f"{kind.value} unit={unit_id} path={path}")
        self.clock.advance(1)
        self._check_fault(path, kind)

        entry = self.units.get(unit_id)
        state = LifecycleState(entry["state"]) if entry else LifecycleState.ABSENT
        new_state = transition(state, kind)  # raises IllegalTransitionError

        if kind is ActivityKind.TRANSFER:
            payload = ctx.params.get("_payload")
            resource = activity.param("resource")
            created = entry is None
            if created:
                entry = _entry_from_unit(ctx.unit, LifecycleState.STAGED)
                self.units[unit_id] = entry
            key = f"staged/{unit_id}/{resource}"
            self.files[key] = payload.digest if payload is not None else ""
            entry["state"] = new_state.value
            return {"kind": kind.value, "unit": unit_id, "key": key, "created": created}

        if kind is ActivityKind.INSTALL:
            created = entry is None
            if created:  # resourceless unit installing straight from absent
                entry = _entry_from_unit(ctx.unit, LifecycleState.INSTALLED)
                self.units[unit_id] = entry
            staged = [k for k in sorted(self.files) if k.startswith(f"staged/{unit_id}/")]
            for key in staged:
                self.files[key.replace("staged/", "installed/", 1)] = self.files.pop(key)
            self._adjust_disk(-entry["footprint"])
            entry["state"] = new_state.value
            return {
                "kind": kind.value,
                "unit": unit_id,
                "created": created,
                "staged": staged,
                "footprint": entry["footprint"],
            }

        if kind in (ActivityKind.ACTIVATE, ActivityKind.DEACTIVATE):
            prior = entry["state"]
            entry["state"] = new_state.value
            return {"kind": kind.value, "unit": unit_id, "prior": prior}

        if kind is ActivityKind.CONFIGURE:
            prior = dict(entry["config"])
            params = activity.param("params") or {}
            entry["config"].update({str(k): str(v) for k, v in params.items()})
            return {"kind": kind.value, "unit": unit_id, "prior": prior}

        if kind is ActivityKind.UPDATE:
            new_unit = ctx.params.get("_new_unit")
            if new_unit is None:
                raise StepFailure("update: no replacement unit supplied")
            prior_entry = copy.deepcopy(entry)
            prior_files = {
                k: v for k, v in self.files.items() if k.startswith(f"installed/{unit_id}/")
            }
            for k in list(prior_files):
                del self.files[k]
            del self.units[unit_id]
            fresh = _entry_from_unit(new_unit, LifecycleState.INSTALLED)
            self.units[new_unit.id] = fresh
            for r in new_unit.resources:
                self.files[f"installed/{new_unit.id}/{r.name}"] = r.digest
            self._adjust_disk(prior_entry["footprint"] - fresh["footprint"])
            ctx.params["unit_id"] = new_unit.id  # later steps address the new unit
            return {
                "kind": kind.value,
                "old_entry": prior_entry,
                "old_files": prior_files,
                "old_unit": unit_id,
                "new_unit": new_unit.id,
            }

        if kind is ActivityKind.UNINSTALL:
            removed = copy.deepcopy(entry)
            for k in list(self.files):
                if k.startswith(f"installed/{unit_id}/"):
                    del self.files[k]
            del self.units[unit_id]
            self._adjust_disk(removed["footprint"])
            return None  # non-compensable pivot

        if kind is ActivityKind.COPY:
            src = activity.param("from")
            dst = activity.param("to")
            existed = dst in self.files
            old = self.files.get(dst)
            self.files[dst] = self.files.get(src, f"copy-of:{src}")
            return {"kind": kind.value, "dst": dst, "existed": existed, "old": old}

        if kind is ActivityKind.VERIFY:
            text = activity.param("expr")
            if text is not None:
                outcome = evaluate(parse_expression(text), self.properties)
                if not outcome.is_satisfied:
                    raise StepFailure(f"verify failed: {json.dumps(outcome.to_json())}")
            return None

        raise StepFailure(f"unknown primitive {kind!r}")

    def compensate(self, path, activity, token, ctx):
        kind = activity.kind
        self._log("compensate", f"{kind.value} path={path}")
        self.clock.advance(1)

        if kind is ActivityKind.TRANSFER:
            self.files.pop(token["key"], None)
            if token["created"]:
                self.units.pop(token["unit"], None)
            return
        if kind is ActivityKind.INSTALL:
            unit_id = token["unit"]
            entry = self.units.get(unit_id)
            for key in token["staged"]:
                installed = key.replace("staged/", "installed/", 1)
                if installed in self.files:
                    self.files[key] = self.files.pop(installed)
            self._adjust_disk(token["footprint"])
            if token["created"]:
                self.units.pop(unit_id, None)
            elif entry is not None:
                entry["state"] = LifecycleState.STAGED.value
            return
        if kind is ActivityKind.ACTIVATE or kind is ActivityKind.DEACTIVATE:
            entry = self.units.get(token["unit"])
            if entry is not None:
                entry["state"] = token["prior"]
            return
        if kind is ActivityKind.CONFIGURE:
            entry = self.units.get(token["unit"])
            if entry is not None:
                entry["config"] = dict(token["prior"])
            return
        if kind is ActivityKind.UPDATE:
            new_id = token["new_unit"]
            fresh = self.units.pop(new_id, None)
            for k in list(self.files):
                if k.startswith(f"installed/{new_id}/"):
                    del self.files[k]
            self.units[token["old_unit"]] = copy.deepcopy(token["old_entry"])
            self.files.update(token["old_files"])
            if fresh is not None:
                self._adjust_disk(fresh["footprint"] - token["old_entry"]["footprint"])
            ctx.params["unit_id"] = token["old_unit"]
            return
        if kind is ActivityKind.COPY:
            if token["existed"]:
                self.files[token["dst"]] = token["old"]
            else:
                self.files.pop(token["dst"], None)
            return
        # verify: nothing to undo

    # -- internals ----------------------------------------------------------

    def _adjust_disk(self, delta: int) -> None:
        free = self.properties.get(DISK_FREE)
        if isinstance(free, Size):
            self.properties[DISK_FREE] = Size(max(0, free.count + delta))

    def _log(self, method, detail):
        self.call_log.append(
            CallLogEntry(self.clock.tick, "site", self.machine_id, method, detail)
        )


@dataclass(frozen=True)
class _MachineView:
    """Just enough machine shape for apply_property_change."""

    id: str
    properties: dict


def _entry_from_unit(unit, state: LifecycleState) -> dict:
    return {
        "unit": unit.id,
        "product": unit.product_id,
        "version": str(unit.product_version),
        "state": state.value,
        "footprint": unit.footprint.count,
        "provides": [[n, str(v)] for n, v in unit.provides],
        "requires": [[n, str(v)] for n, v in unit.requires],
        "constraints": list(unit.constraints),
        "config": {},
    }


def _entry_from_deployed(du: DeployedUnit) -> dict:
    return {
        "unit": du.unit_id,
        "product": du.product_id,
        "version": str(du.version),
        "state": du.state,
        "footprint": du.footprint.count,
        "provides": [[n, str(v)] for n, v in du.provides],
        "requires": [[n, str(v)] for n, v in du.requires],
        "constraints": list(du.constraints),
        "config": {k: v for k, v in du.config},
    }


def _deployed_from_entry(entry: dict) -> DeployedUnit:
    return DeployedUnit(
        unit_id=entry["unit"],
        product_id=entry["product"],
        version=Version.parse(entry["version"]),
        state=entry["state"],
        footprint=Size(entry["footprint"]),
        provides=tuple((n, Version.parse(v)) for n, v in entry["provides"]),
        requires=tuple((n, Version.parse(v)) for n, v in entry["requires"]),
        constraints=tuple(entry["constraints"]),
        config=tuple(sorted(entry["config"].items())),
    )


# ---------------------------------------------------------------------------
# Simulated app server


class SimulatedAppServer:
    def __init__(self, server_id, units, clock, call_log):
        self.server_id = server_id
        self.units = {u.id: u for u in units}
        self.clock = clock
        self.call_log = call_log

    def list_units(self):
        self._log("list_units", "")
        return sorted(self.units)

    def add_unit(self, unit):
        self._log("add_unit", unit.id)
        if unit.id in self.units:
            raise UnknownUnitError(f"unit {unit.id!r} already present")
        self.units[unit.id] = unit

    def remove_unit(self, unit_id):
        self._log("remove_unit", unit_id)
        if unit_id not in self.units:
            raise UnknownUnitError(f"unit {unit_id!r} not present")
        del self.units[unit_id]

    def fetch_resource(self, unit_id, resource_name):
        self._log("fetch_resource", f"{unit_id}/{resource_name}")
        self.clock.advance(1)
        unit = self.units.get(unit_id)
        if unit is None:
            raise UnknownUnitError(f"unit {unit_id!r} not present")
        for r in unit.resources:
            if r.name == resource_name:
                return ResourcePayload(unit_id, r.name, r.size, r.digest)
        raise UnknownUnitError(f"resource {resource_name!r} not in unit {unit_id!r}")

    def unit_info(self, unit_id):
        self._log("unit_info", unit_id)
        unit = self.units.get(unit_id)
        if unit is None:
            raise UnknownUnitError(f"unit {unit_id!r} not present")
        return unit

    def _log(self, method, detail):
        self.call_log.append(
            CallLogEntry(self.clock.tick, "server", self.server_id, method, detail)
        )


# ---------------------------------------------------------------------------
# Fleet


@dataclass
class Fleet:
    sites: dict[str, SimulatedSite]
    servers: dict[str, SimulatedAppServer]
    clock: VirtualClock
    call_log: list[CallLogEntry] = field(default_factory=list)


def build_fleet(u: Universe) -> Fleet:
    """Spin up simulated role handles for every machine in the universe."""
    clock = VirtualClock()
    call_log: list[CallLogEntry] = []
    sites: dict[str, SimulatedSite] = {}
    servers: dict[str, SimulatedAppServer] = {}
    for m in u.enterprise.machines:
        if m.kind is MachineKind.CLIENT_SITE:
            sites[m.id] = SimulatedSite(
                m.id,
                m.properties,
                m.standing_constraints,
                clock,
                call_log,
                state=u.site_states.get(m.id),
            )
        else:
            servers[m.id] = SimulatedAppServer(
                m.id, u.catalog.get(m.id, ()), clock, call_log
            )
    return Fleet(sites=sites, servers=servers, clock=clock, call_log=call_log)


def sync_properties(u: Universe, fleet: Fleet) -> Universe:
    """Copy live site properties back onto the enterprise model machines."""
    machines = []
    for m in u.enterprise.machines:
        site = fleet.sites.get(m.id)
        if site is not None:
            from dataclasses import replace as _replace

            m = _replace(m, properties=dict(site.properties),
                         standing_constraints=tuple(site.constraints))
        machines.append(m)
    from dataclasses import replace as _replace

    enterprise = _replace(u.enterprise, machines=tuple(machines))
    return _replace(u, enterprise=enterprise)


def inject(fleet: Fleet, plan) -> Fleet:
    """Arm a fault plan; an empty plan is a no-op."""
    for fault in plan:
        site = fleet.sites.get(fault.site_id)
        if site is None:
            raise UnknownUnitError(f"no such site {fault.site_id!r}")
        site.arm(fault)
    return fleet


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class ExpectResult:
    clause: dict
    passed: bool
    detail: str = ""

    def to_json(self) -> dict:
        return {"clause": self.clause, "passed": self.passed, "detail": self.detail}


@dataclass(frozen=True)
class ScenarioReport:
    results: tuple[ExpectResult, ...]
    universe_digest: str

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "digest": self.universe_digest,
            "results": [r.to_json() for r in self.results],
        }


@dataclass
class Scenario:
    seed: int
    enterprise: dict
    catalog: dict
    script: list
    expects: list

    @classmethod
    def from_json(cls, doc: dict) -> "Scenario":
        return cls(
            seed=doc.get("seed", 0),
            enterprise=doc["enterprise"],
            catalog=doc.get("catalog", {}),
            script=list(doc.get("script", ())),
            expects=list(doc.get("expects", ())),
        )


def load_scenario(path: str | Path) -> Scenario:
    return Scenario.from_json(json.loads(Path(path).read_text()))


def spawn_fleet(scenario: Scenario) -> tuple[Universe, Fleet]:
    """Build the universe and role handles a scenario script runs against."""
    enterprise = enterprise_from_json(scenario.enterprise)
    report = validate_enterprise(enterprise)
    if not report.ok:
        raise ValueError(f"scenario enterprise invalid: {report.to_json()}")
    u = empty_universe()
    from dataclasses import replace as _replace

    u = _replace(u, enterprise=enterprise)
    for server_id in sorted(scenario.catalog):
        for manifest in scenario.catalog[server_id]:
            u = publish_unit(u, server_id, unit_from_json(manifest))
    return u, build_fleet(u)


def run_scenario(source: str | Path | dict) -> ScenarioReport:
    """Execute a scenario script and judge its expect clauses."""
    scenario = (
        Scenario.from_json(source) if isinstance(source, dict) else load_scenario(source)
    )
    u, fleet = spawn_fleet(scenario)
    step_reports: dict[str, object] = {}

    for index, cmd in enumerate(scenario.script):
        step_id = cmd.get("id", str(index))
        u, result = _run_command(u, fleet, cmd)
        step_reports[step_id] = result

    u = sync_properties(u, fleet)
    digest = universe_digest(u)
    results = tuple(
        _judge(clause, u, fleet, step_reports) for clause in scenario.expects
    )
    return ScenarioReport(results, digest)


def _run_command(u, fleet, cmd):
    name = cmd["cmd"]
    if name == "publish":
        unit = unit_from_json(cmd["unit"])
        u = publish_unit(u, cmd["server"], unit)
        fleet.servers[cmd["server"]].add_unit(unit)
        return u, {"published": unit.id}
    if name == "deploy":
        target = cmd.get("group") or tuple(cmd.get("sites", ()))
        req = orch.DeployRequest(
            target=target,
            product_id=cmd["product"],
            policy=SafetyPolicy(cmd.get("policy", "reject")),
            dry_run=bool(cmd.get("dry_run", False)),
            extra_filters=tuple(cmd.get("filters", ())),
        )
        u, report = orch.push_deploy(u, req, fleet)
        return u, report
    if name == "pull":
        u, report = orch.pull_update(
            u, cmd["site"], cmd["product"], fleet,
            policy=SafetyPolicy(cmd.get("policy", "reject")),
        )
        return u, report
    if name == "set-prop":
        site = fleet.sites[cmd["site"]]
        if cmd.get("remove"):
            event = site.set_property(cmd["name"], remove=True)
        else:
            event = site.set_property(cmd["name"], value_from_json(cmd["value"]))
        result = orch.on_property_change(
            u, cmd["site"], event, fleet, apply=bool(cmd.get("apply", False))
        )
        if isinstance(result, tuple):
            u, report = result
            return u, report
        return u, result
    if name == "undeploy":
        u, report = orch.undeploy(
            u, cmd["site"], cmd["unit"], fleet, force=bool(cmd.get("force", False))
        )
        return u, report
    if name == "activate":
        u, report = orch.activate(u, cmd["site"], cmd["unit"], fleet)
        return u, report
    if name == "deactivate":
        u, report = orch.deactivate(u, cmd["site"], cmd["unit"], fleet)
        return u, report
    if name == "inject":
        faults = [
            Fault(
                site_id=f["site"],
                match=f["step"],
                mode=f.get("mode", "FAIL"),
                occurrence=int(f.get("occurrence", 1)),
            )
            for f in cmd["faults"]
        ]
        inject(fleet, faults)
        return u, {"armed": len(faults)}
    raise ValueError(f"unknown scenario command {name!r}")


def _judge(clause: dict, u, fleet, step_reports) -> ExpectResult:
    kind = clause["expect"]
    if kind == "lifecycle":
        site = fleet.sites.get(clause["site"])
        entry = site.units.get(clause["unit"]) if site else None
        actual = entry["state"] if entry else "ABSENT"
        ok = actual == clause["state"]
        return ExpectResult(clause, ok, f"actual state {actual}")
    if kind == "outcome":
        report = step_reports.get(str(clause["step"]))
        if not isinstance(report, orch.FleetReport):
            return ExpectResult(clause, False, "step produced no fleet report")
        matches = [e for e in report.entries if e.site_id == clause["site"]]
        if not matches:
            return ExpectResult(clause, False, "no entry for site")
        entry = matches[0]
        ok = entry.outcome == clause["value"]
        detail = f"actual {entry.outcome} ({entry.reason})"
        if not ok and entry.selection is not None:
            detail += f"; selection: {json.dumps(entry.selection.to_json())}"
        return ExpectResult(clause, ok, detail)
    if kind == "conflict":
        report = step_reports.get(str(clause["step"]))
        if not isinstance(report, orch.FleetReport):
            return ExpectResult(clause, False, "step produced no fleet report")
        found = []
        for e in report.entries:
            found.extend(e.conflicts)
            if e.selection is not None:
                for c in e.selection.candidates:
                    found.extend(c.conflicts)
        ok = any(
            c.kind.value == clause["kind"]
            and c.name == clause.get("name", c.name)
            and c.blocking == clause.get("blocking", c.blocking)
            for c in found
        )
        return ExpectResult(clause, ok, f"{len(found)} conflicts seen")
    if kind == "property":
        site = fleet.sites.get(clause["site"])
        actual = site.properties.get(clause["name"]) if site else None
        expected = value_from_json(clause["value"]) if clause.get("value") is not None else None
        ok = actual == expected
        return ExpectResult(clause, ok, f"actual {actual!r}")
    if kind == "plan-nonempty":
        plan = step_reports.get(str(clause["step"]))
        ok = isinstance(plan, orch.ReconfigurationPlan) and not plan.empty
        return ExpectResult(clause, ok, "")
    if kind == "record-count":
        actual = len(u.deployments)
        return ExpectResult(clause, actual == clause["value"], f"actual {actual}")
    raise ValueError(f"unknown expect clause {kind!r}")
