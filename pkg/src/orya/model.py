"""Enterprise domain types: groups, machines, users, products, site states.

The enterprise model is a forest of groups over machines of two kinds
(app servers and client sites), plus the users and roles that may touch
them. All types are immutable values; mutation helpers return new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from . import expr as expr_mod
from .errors import (
    ExpressionSyntaxError,
    PropertyTypeChangeError,
    UnknownTargetError,
)
from .values import (
    PropertyValue,
    Size,
    Version,
    kind_of,
    parse_property_map,
    property_map_to_json,
    valid_name,
)


class MachineKind(str, Enum):
    APP_SERVER = "app-server"
    CLIENT_SITE = "client-site"


@dataclass(frozen=True)
class Group:
    id: str
    parent: str | None = None
    members: tuple[str, ...] = ()  # machine ids
    subgroups: tuple[str, ...] = ()
    description: str = ""


@dataclass(frozen=True)
class Machine:
    id: str
    kind: MachineKind
    properties: dict[str, PropertyValue] = field(default_factory=dict)
    standing_constraints: tuple[str, ...] = ()  # constraint source text
    group_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class User:
    id: str
    roles: tuple[str, ...] = ()
    machine_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class EnterpriseModel:
    id: str
    groups: tuple[Group, ...] = ()
    machines: tuple[Machine, ...] = ()
    users: tuple[User, ...] = ()
    roles: tuple[str, ...] = ()


@dataclass(frozen=True)
class Product:
    id: str
    name: str
    version: Version
    unit_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class DeployedUnit:
    """A unit's retained footprint on one client site.

    Carries enough of the original manifest (constraints, components,
    footprint) for reconfiguration and removal-safety checks to work even
    after the unit disappears from every catalog.
    """

    unit_id: str
    product_id: str
    version: Version
    state: str  # LifecycleState value, kept as text to avoid an import cycle
    footprint: Size = Size(0)
    provides: tuple[tuple[str, Version], ...] = ()
    requires: tuple[tuple[str, Version], ...] = ()
    constraints: tuple[str, ...] = ()
    config: tuple[tuple[str, str], ...] = ()

    @property
    def id(self) -> str:  # installed-unit protocol used by the safety checks
        return self.unit_id


@dataclass(frozen=True)
class ClientSiteState:
    machine_id: str
    deployed_units: tuple[DeployedUnit, ...] = ()
    products: tuple[str, ...] = ()


def empty_site_state(machine_id: str) -> ClientSiteState:
    return ClientSiteState(machine_id=machine_id)


def derive_products(units) -> tuple[str, ...]:
    """Products present on a site: those with >= 1 installed/active unit."""
    seen = []
    for u in units:
        if u.state in ("INSTALLED", "ACTIVE") and u.product_id not in seen:
            seen.append(u.product_id)
    return tuple(sorted(seen))


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str  # DUP_ID | GROUP_CYCLE | DANGLING_REF | NO_ROLE | BAD_CONSTRAINT
    subject: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"code": v.code, "subject": v.subject, "detail": v.detail}
                for v in self.violations
            ],
        }


def validate_enterprise(model: EnterpriseModel) -> ValidationReport:
    """Check every structural invariant; total, reports all violations."""
    violations: list[Violation] = []

    def dup_check(ids, what):
        seen = set()
        for i in ids:
            if i in seen:
                violations.append(Violation("DUP_ID", i, f"duplicate {what} id"))
            seen.add(i)

    group_ids = [g.id for g in model.groups]
    machine_ids = [m.id for m in model.machines]
    user_ids = [u.id for u in model.users]
    dup_check(group_ids, "group")
    dup_check(machine_ids, "machine")
    dup_check(user_ids, "user")

    groups = {g.id: g for g in model.groups}
    machines = {m.id: m for m in model.machines}

    # Forest check: parent pointers must be acyclic and resolve.
    for g in model.groups:
        if g.parent == g.id:
            violations.append(Violation("GROUP_CYCLE", g.id, "group is its own parent"))
            continue
        if g.parent is not None and g.parent not in groups:
            violations.append(Violation("DANGLING_REF", g.id, f"parent {g.parent!r} missing"))
    for g in model.groups:
        seen = {g.id}
        cur = groups.get(g.parent) if g.parent else None
        while cur is not None:
            if cur.id in seen:
                violations.append(Violation("GROUP_CYCLE", g.id, f"cycle through {cur.id!r}"))
                break
            seen.add(cur.id)
            cur = groups.get(cur.parent) if cur.parent else None

    for g in model.groups:
        for m in g.members:
            if m not in machines:
                violations.append(Violation("DANGLING_REF", g.id, f"member {m!r} missing"))
        for s in g.subgroups:
            if s not in groups:
                violations.append(Violation("DANGLING_REF", g.id, f"subgroup {s!r} missing"))

    for m in model.machines:
        for name in m.properties:
            if not valid_name(name):
                violations.append(Violation("BAD_CONSTRAINT", m.id, f"bad property name {name!r}"))
        for text in m.standing_constraints:
            try:
                expr_mod.parse_expression(text)
            except ExpressionSyntaxError as err:
                violations.append(Violation("BAD_CONSTRAINT", m.id, f"{text!r}: {err.message}"))
        for gid in m.group_ids:
            if gid not in groups:
                violations.append(Violation("DANGLING_REF", m.id, f"group {gid!r} missing"))

    for u in model.users:
        if not u.roles:
            violations.append(Violation("NO_ROLE", u.id, "user has no role"))
        for mid in u.machine_ids:
            if mid not in machines:
                violations.append(Violation("DANGLING_REF", u.id, f"machine {mid!r} missing"))

    # Report order-insensitively: sort for a stable, permutation-proof output.
    ordered = tuple(sorted(set(violations), key=lambda v: (v.code, v.subject, v.detail)))
    return ValidationReport(ordered)


# ---------------------------------------------------------------------------
# Target resolution


def resolve_targets(model: EnterpriseModel, target) -> set[str]:
    """Expand a group id or explicit machine-id list into client-site ids.

    Group membership is expanded transitively through subgroups; only
    machines of kind client-site survive the filter.
    """
    machines = {m.id: m for m in model.machines}
    groups = {g.id: g for g in model.groups}

    if isinstance(target, str):
        if target not in groups:
            raise UnknownTargetError(f"unknown group {target!r}")
        collected: set[str] = set()
        stack = [target]
        seen_groups: set[str] = set()
        while stack:
            gid = stack.pop()
            if gid in seen_groups:
                continue
            seen_groups.add(gid)
            g = groups.get(gid)
            if g is None:
                raise UnknownTargetError(f"unknown group {gid!r}")
            for m in g.members:
                if m not in machines:
                    raise UnknownTargetError(f"unknown machine {m!r} in group {gid!r}")
                collected.add(m)
            stack.extend(g.subgroups)
        return {m for m in collected if machines[m].kind is MachineKind.CLIENT_SITE}

    collected = set()
    for mid in target:
        if mid not in machines:
            raise UnknownTargetError(f"unknown machine {mid!r}")
        collected.add(mid)
    return {m for m in collected if machines[m].kind is MachineKind.CLIENT_SITE}


def lookup_machine(model: EnterpriseModel, machine_id: str) -> Machine:
    for m in model.machines:
        if m.id == machine_id:
            return m
    raise UnknownTargetError(f"unknown machine {machine_id!r}")


# ---------------------------------------------------------------------------
# Property changes


@dataclass(frozen=True)
class ChangeEvent:
    machine_id: str
    name: str
    old: PropertyValue | None
    new: PropertyValue | None
    removed: bool = False
    noop: bool = False


def apply_property_change(
    machine: Machine,
    name: str,
    value: PropertyValue | None = None,
    *,
    remove: bool = False,
) -> tuple[Machine, ChangeEvent]:
    """Set or remove one property, returning the updated machine and event.

    Setting an equal value is a flagged no-op. Changing the kind of an
    existing property is rejected; remove it first.
    """
    if not valid_name(name):
        raise ValueError(f"invalid property name {name!r}")
    props = dict(machine.properties)
    old = props.get(name)
    if remove:
        if name not in props:
            return machine, ChangeEvent(machine.id, name, None, None, removed=True, noop=True)
        del props[name]
        updated = replace(machine, properties=props)
        return updated, ChangeEvent(machine.id, name, old, None, removed=True)
    if value is None:
        raise ValueError("value required unless remove=True")
    if name in props:
        if old == value and kind_of(old) == kind_of(value):
            return machine, ChangeEvent(machine.id, name, old, value, noop=True)
        if kind_of(old) != kind_of(value):
            raise PropertyTypeChangeError(
                f"property {name!r} is {kind_of(old)}, cannot assign {kind_of(value)}"
            )
    props[name] = value
    updated = replace(machine, properties=props)
    return updated, ChangeEvent(machine.id, name, old, value)


# ---------------------------------------------------------------------------
# JSON document codec (enterprise model document)

_TOP_LEVEL_KEYS = {"id", "groups", "machines", "users", "roles"}


def enterprise_from_json(doc: dict) -> EnterpriseModel:
    """Decode the enterprise model document; rejects unknown top-level keys."""
    if not isinstance(doc, dict):
        raise ValueError("enterprise document must be an object")
    unknown = set(doc) - _TOP_LEVEL_KEYS
    if unknown:
        raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
    groups = tuple(
        Group(
            id=g["id"],
            parent=g.get("parent"),
            members=tuple(g.get("members", ())),
            subgroups=tuple(g.get("subgroups", ())),
            description=g.get("description", ""),
        )
        for g in doc.get("groups", ())
    )
    machines = tuple(
        Machine(
            id=m["id"],
            kind=MachineKind(m["kind"]),
            properties=parse_property_map(m.get("properties", {}), f"machine {m['id']}"),
            standing_constraints=tuple(m.get("constraints", ())),
            group_ids=tuple(m.get("groups", ())),
        )
        for m in doc.get("machines", ())
    )
    users = tuple(
        User(
            id=u["id"],
            roles=tuple(u.get("roles", ())),
            machine_ids=tuple(u.get("machines", ())),
        )
        for u in doc.get("users", ())
    )
    return EnterpriseModel(
        id=doc.get("id", "enterprise"),
        groups=groups,
        machines=machines,
        users=users,
        roles=tuple(doc.get("roles", ())),
    )


def enterprise_to_json(model: EnterpriseModel) -> dict:
    return {
        "id": model.id,
        "groups": [
            {
                "id": g.id,
                "parent": g.parent,
                "members": list(g.members),
                "subgroups": list(g.subgroups),
                "description": g.description,
            }
            for g in model.groups
        ],
        "machines": [
            {
                "id": m.id,
                "kind": m.kind.value,
                "properties": property_map_to_json(m.properties),
                "constraints": list(m.standing_constraints),
                "groups": list(m.group_ids),
            }
            for m in model.machines
        ],
        "users": [
            {"id": u.id, "roles": list(u.roles), "machines": list(u.machine_ids)}
            for u in model.users
        ],
        "roles": list(model.roles),
    }


def deployed_unit_from_json(d: dict) -> DeployedUnit:
    return DeployedUnit(
        unit_id=d["unit"],
        product_id=d["product"],
        version=Version.parse(d["version"]),
        state=d["state"],
        footprint=Size.parse(d["footprint"]) if isinstance(d["footprint"], str) else Size(d["footprint"]),
        provides=tuple((p["name"], Version.parse(p["version"])) for p in d.get("provides", ())),
        requires=tuple((r["name"], Version.parse(r["min"])) for r in d.get("requires", ())),
        constraints=tuple(d.get("constraints", ())),
        config=tuple((k, v) for k, v in sorted(d.get("config", {}).items())),
    )


def deployed_unit_to_json(u: DeployedUnit) -> dict:
    return {
        "unit": u.unit_id,
        "product": u.product_id,
        "version": str(u.version),
        "state": u.state,
        "footprint": str(u.footprint),
        "provides": [{"name": n, "version": str(v)} for n, v in u.provides],
        "requires": [{"name": n, "min": str(v)} for n, v in u.requires],
        "constraints": list(u.constraints),
        "config": {k: v for k, v in u.config},
    }


def site_state_from_json(doc: dict) -> ClientSiteState:
    units = tuple(deployed_unit_from_json(d) for d in doc.get("units", ()))
    return ClientSiteState(
        machine_id=doc["machine"],
        deployed_units=units,
        products=tuple(doc.get("products", derive_products(units))),
    )


def site_state_to_json(state: ClientSiteState) -> dict:
    return {
        "machine": state.machine_id,
        "units": [deployed_unit_to_json(u) for u in state.deployed_units],
        "products": list(state.products),
    }
