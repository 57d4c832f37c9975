"""The deployment service: global view, push/pull/reconfigure over a fleet.

App servers and client sites never address each other; every resource fetch
is brokered here. Per-site failures never abort a fleet loop, and all
operations are pure over the universe: they return the updated value plus a
report.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import expr as expr_mod
from .errors import (
    IllegalTransitionError,
    NotDeployedError,
    StepFailure,
    UnknownProductError,
    UnknownUnitError,
)
from .expr import Expression, Status
from .model import ChangeEvent, DeployedUnit, resolve_targets
from .process import (
    Activity,
    ActivityKind,
    ExecutionContext,
    LifecycleState,
    ProcessDef,
    Seq,
    TraceStatus,
    default_process_for,
    execute,
    transition,
    validate_process,
)
from .safety import SafetyPolicy, blocking_conflicts, check_removal_safety
from .selection import SelectionReport, select_package
from .units import PackagedUnit
from .universe import (
    DeployMode,
    DeploymentRecord,
    Universe,
    record_deployment,
    set_site_state,
)

# ---------------------------------------------------------------------------
# Requests and reports


@dataclass(frozen=True)
class DeployRequest:
    target: str | tuple[str, ...]  # group id or explicit machine ids
    product_id: str
    mode: DeployMode = DeployMode.PUSH
    policy: SafetyPolicy = SafetyPolicy.REJECT
    dry_run: bool = False
    extra_filters: tuple[str, ...] = ()  # constraint text over candidate properties


@dataclass(frozen=True)
class SiteOutcome:
    site_id: str
    outcome: str  # DEPLOYED | SKIPPED | FAILED | ROLLED_BACK | WOULD_DEPLOY | ...
    reason: str = ""
    unit_id: str | None = None
    record_id: str | None = None
    selection: SelectionReport | None = None
    conflicts: tuple = ()

    def to_json(self) -> dict:
        out = {"site": self.site_id, "outcome": self.outcome}
        if self.reason:
            out["reason"] = self.reason
        if self.unit_id:
            out["unit"] = self.unit_id
        if self.record_id:
            out["record"] = self.record_id
        if self.selection is not None:
            out["selection"] = self.selection.to_json()
        if self.conflicts:
            out["conflicts"] = [c.to_json() for c in self.conflicts]
        return out


@dataclass(frozen=True)
class FleetReport:
    entries: tuple[SiteOutcome, ...] = ()

    @property
    def summary(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.outcome] = counts.get(e.outcome, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "entries": [e.to_json() for e in self.entries],
            "summary": dict(sorted(self.summary.items())),
        }


@dataclass(frozen=True)
class PlanAction:
    unit_id: str
    action: str  # RESELECT | DEACTIVATE | NONE
    replacement: str | None = None
    reasons: tuple[str, ...] = ()

    def to_json(self) -> dict:
        out = {"unit": self.unit_id, "action": self.action, "reasons": list(self.reasons)}
        if self.replacement:
            out["replacement"] = self.replacement
        return out


@dataclass(frozen=True)
class ReconfigurationPlan:
    site_id: str
    actions: tuple[PlanAction, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.actions

    def to_json(self) -> dict:
        return {"site": self.site_id, "actions": [a.to_json() for a in self.actions]}


# ---------------------------------------------------------------------------
# Brokered primitive execution


class BrokeredExecutor:
    """Runs primitives against one site; resource and unit lookups go through
    the deployment service, never from the site to an app server."""

    def __init__(self, site, fetcher, units_by_id):
        self.site = site
        self.fetcher = fetcher  # (unit_id, resource_name) -> ResourcePayload
        self.units_by_id = units_by_id

    def run(self, path: str, activity: Activity, ctx: ExecutionContext):
        if activity.kind is ActivityKind.TRANSFER:
            unit = ctx.unit
            resource = activity.param("resource")
            try:
                ctx.params["_payload"] = self.fetcher(unit.id, resource)
            except Exception as err:
                raise StepFailure(f"fetch {resource!r} failed: {err}") from err
        elif activity.kind is ActivityKind.UPDATE:
            new_id = activity.param("unit")
            new_unit = self.units_by_id.get(new_id)
            if new_unit is None:
                raise StepFailure(f"update target unit {new_id!r} unknown")
            ctx.params["_new_unit"] = new_unit
        try:
            return self.site.run_primitive(path, activity, ctx)
        except StepFailure:
            raise
        except IllegalTransitionError as err:
            raise StepFailure(err.message) from err

    def compensate(self, path: str, activity: Activity, token, ctx: ExecutionContext):
        self.site.compensate(path, activity, token, ctx)


def _catalog_candidates(u: Universe, product_id: str) -> dict[str, PackagedUnit]:
    """Candidates across all app servers; duplicate unit ids resolve to the
    first server in id order."""
    by_id: dict[str, PackagedUnit] = {}
    for server in sorted(u.catalog):
        for unit in u.catalog[server]:
            if unit.product_id == product_id and unit.id not in by_id:
                by_id[unit.id] = unit
    return by_id


def _make_fetcher(u: Universe, fleet):
    def fetch(unit_id: str, resource_name: str):
        for server in sorted(u.catalog):
            if any(unit.id == unit_id for unit in u.catalog[server]):
                return fleet.servers[server].fetch_resource(unit_id, resource_name)
        raise UnknownUnitError(f"no server holds unit {unit_id!r}")

    return fetch


def _site_view(site_id, handle):
    """Machine-shaped view over a live site handle for constraint checks."""

    class _View:
        id = site_id
        properties = handle.get_properties()
        standing_constraints = tuple(handle.get_constraints())

    return _View()


def _parse_filters(texts) -> tuple[Expression, ...]:
    return tuple(expr_mod.parse_expression(t) for t in texts)


def _run_process(
    u: Universe,
    fleet,
    site_id: str,
    unit: PackagedUnit,
    process: ProcessDef,
    mode: DeployMode,
    units_by_id,
    result_unit_id: str | None = None,
) -> tuple[Universe, DeploymentRecord]:
    """Execute one process on one site, commit site state, append the record."""
    handle = fleet.sites[site_id]
    executor = BrokeredExecutor(handle, _make_fetcher(u, fleet), units_by_id)
    deployment_id = u.next_deployment_id()
    ctx = ExecutionContext(
        deployment_id=deployment_id,
        unit=unit,
        params={"unit_id": unit.id},
        clock=fleet.clock.now,
    )
    started = fleet.clock.now()
    trace = execute(process, ctx, executor)
    finished = fleet.clock.now()
    # Site state commits before the record: a crash in between leaves only a
    # record-less state change, which open_universe tolerates.
    u = set_site_state(u, handle.get_state())
    record = DeploymentRecord(
        id=deployment_id,
        site_id=site_id,
        product_id=unit.product_id,
        unit_id=result_unit_id or unit.id,
        process=process,
        params=(),
        trace=trace,
        mode=mode,
        started_at=started,
        finished_at=finished,
    )
    u = record_deployment(u, record)
    return u, record


_STATUS_OUTCOME = {
    TraceStatus.SUCCESS: "DEPLOYED",
    TraceStatus.ROLLED_BACK: "ROLLED_BACK",
    TraceStatus.PARTIALLY_ROLLED_BACK: "FAILED",
}


# ---------------------------------------------------------------------------
# Push deployment


def push_deploy(u: Universe, req: DeployRequest, fleet) -> tuple[Universe, FleetReport]:
    """Deploy one product to every resolved target site.

    Per site: gather candidates across all app servers, select, execute the
    chosen unit's process, record the outcome. Sites with no admissible
    candidate are skipped with the per-candidate reasons attached.
    """
    units_by_id = _catalog_candidates(u, req.product_id)
    if not units_by_id:
        raise UnknownProductError(f"product {req.product_id!r} not in any catalog")
    filters = _parse_filters(req.extra_filters)
    targets = resolve_targets(u.enterprise, req.target)

    entries: list[SiteOutcome] = []
    for site_id in sorted(targets):
        try:
            entry, u = _deploy_one(u, fleet, site_id, req, units_by_id, filters)
        except Exception as err:  # per-site isolation: never abort the loop
            entry = SiteOutcome(site_id, "FAILED", reason=str(err))
        entries.append(entry)
    return u, FleetReport(tuple(entries))


def _deploy_one(u, fleet, site_id, req, units_by_id, filters):
    handle = fleet.sites[site_id]
    view = _site_view(site_id, handle)
    state = handle.get_state()
    # Push deployment is idempotent per unit: units already on the site are
    # not candidates again, and a site holding every candidate is skipped.
    present = {
        du.unit_id for du in state.deployed_units if du.state != LifecycleState.REMOVED.value
    }
    candidates = [units_by_id[k] for k in sorted(units_by_id) if k not in present]
    if not candidates:
        return SiteOutcome(site_id, "SKIPPED", reason="ALREADY_DEPLOYED"), u
    sel = select_package(
        req.product_id, candidates, view, state, policy=req.policy, extra_filters=filters
    )
    if sel.chosen is None:
        return SiteOutcome(site_id, "SKIPPED", reason="NO_ADMISSIBLE", selection=sel), u
    if req.dry_run:
        return SiteOutcome(site_id, "WOULD_DEPLOY", unit_id=sel.chosen, selection=sel), u

    unit = units_by_id[sel.chosen]
    process = unit.process or default_process_for(unit)
    report = validate_process(process)
    if not report.ok:
        return SiteOutcome(site_id, "FAILED", reason="INVALID_PROCESS", selection=sel), u
    u, record = _run_process(u, fleet, site_id, unit, process, req.mode, units_by_id)
    outcome = _STATUS_OUTCOME[record.trace.status]
    return (
        SiteOutcome(
            site_id, outcome, unit_id=sel.chosen, record_id=record.id, selection=sel
        ),
        u,
    )


# ---------------------------------------------------------------------------
# Pull update


def pull_update(
    u: Universe,
    site_id: str,
    product_id: str,
    fleet,
    policy: SafetyPolicy = SafetyPolicy.REJECT,
) -> tuple[Universe, FleetReport]:
    """User-requested update of one deployed product on one site.

    Only candidates strictly newer than the deployed version are considered;
    the chosen one replaces the old unit in place (deactivate, update,
    re-activate when the unit was active)."""
    if not any(
        r.site_id == site_id and r.product_id == product_id for r in u.deployments.values()
    ):
        raise NotDeployedError(f"product {product_id!r} was never deployed to {site_id!r}")
    handle = fleet.sites[site_id]
    state = handle.get_state()
    current = next(
        (
            du
            for du in state.deployed_units
            if du.product_id == product_id and du.state in ("INSTALLED", "ACTIVE")
        ),
        None,
    )
    if current is None:
        raise NotDeployedError(f"product {product_id!r} is not installed on {site_id!r}")

    units_by_id = _catalog_candidates(u, product_id)
    newer = {k: v for k, v in units_by_id.items() if v.product_version > current.version}
    if not newer:
        entry = SiteOutcome(site_id, "SKIPPED", reason="UP_TO_DATE", unit_id=current.unit_id)
        return u, FleetReport((entry,))

    view = _site_view(site_id, handle)
    sel = select_package(
        product_id,
        [newer[k] for k in sorted(newer)],
        view,
        state,
        policy=policy,
        replacing=current,
    )
    if sel.chosen is None:
        entry = SiteOutcome(site_id, "SKIPPED", reason="UP_TO_DATE", selection=sel)
        return u, FleetReport((entry,))

    u, record = _apply_update(u, fleet, site_id, current, newer[sel.chosen], DeployMode.PULL, units_by_id)
    outcome = "UPDATED" if record.trace.status is TraceStatus.SUCCESS else _STATUS_OUTCOME[record.trace.status]
    entry = SiteOutcome(
        site_id, outcome, unit_id=sel.chosen, record_id=record.id, selection=sel
    )
    return u, FleetReport((entry,))


def _apply_update(u, fleet, site_id, current: DeployedUnit, new_unit: PackagedUnit, mode, units_by_id):
    steps = [Activity.make(ActivityKind.UPDATE, unit=new_unit.id)]
    if current.state == LifecycleState.ACTIVE.value:
        steps = (
            [Activity.make(ActivityKind.DEACTIVATE)]
            + steps
            + [Activity.make(ActivityKind.ACTIVATE)]
        )
    process = ProcessDef(id=f"{current.unit_id}.update", root=Seq(tuple(steps)))
    # ctx.unit must be the unit currently on site; the update activity swaps it.
    old_like = units_by_id.get(current.unit_id) or _unit_stub(current)
    return _run_process(u, fleet, site_id, old_like, process, mode, units_by_id, result_unit_id=new_unit.id)


def _unit_stub(du: DeployedUnit) -> PackagedUnit:
    """Minimal unit view for site-local operations on already-deployed units."""
    return PackagedUnit(
        id=du.unit_id,
        product_id=du.product_id,
        product_version=du.version,
        footprint=du.footprint,
        provides=du.provides,
        requires=du.requires,
        constraints=du.constraints,
    )


# ---------------------------------------------------------------------------
# Reconfiguration


def on_property_change(
    u: Universe,
    site_id: str,
    change: ChangeEvent | None,
    fleet,
    apply: bool = False,
    policy: SafetyPolicy = SafetyPolicy.REJECT,
):
    """React to changed site characteristics using the retained unit data.

    Re-evaluates every deployed unit's constraints plus the site's standing
    constraints under the new properties. Returns a ReconfigurationPlan when
    ``apply`` is false, else executes the plan and returns
    ``(universe, FleetReport)``.
    """
    handle = fleet.sites[site_id]
    view = _site_view(site_id, handle)
    state = handle.get_state()

    standing_ok = all(
        s.outcome.status is Status.SATISFIED for s in expr_mod.check_standing(view, 0)
    )

    actions: list[PlanAction] = []
    for du in state.deployed_units:
        if du.state not in ("INSTALLED", "ACTIVE"):
            continue
        reasons: list[str] = []
        for text in du.constraints:
            outcome = expr_mod.evaluate(expr_mod.parse_expression(text), view.properties)
            if outcome.status is not Status.SATISFIED:
                reasons.append(f"{outcome.status.value}: {text}")
        if not standing_ok:
            reasons.append("STANDING_VIOLATED")
        if not reasons:
            continue

        units_by_id = _catalog_candidates(u, du.product_id)
        candidates = [units_by_id[k] for k in sorted(units_by_id)]
        replacement = None
        if candidates:
            sel = select_package(
                du.product_id, candidates, view, state, policy=policy, replacing=du
            )
            if sel.chosen is not None and sel.chosen != du.unit_id:
                replacement = sel.chosen
        if replacement is not None:
            actions.append(PlanAction(du.unit_id, "RESELECT", replacement, tuple(reasons)))
        elif du.state == LifecycleState.ACTIVE.value:
            actions.append(PlanAction(du.unit_id, "DEACTIVATE", reasons=tuple(reasons)))
        else:
            actions.append(PlanAction(du.unit_id, "NONE", reasons=tuple(reasons)))

    plan = ReconfigurationPlan(site_id, tuple(actions))
    if not apply:
        return plan
    return apply_reconfiguration(u, plan, fleet)


def apply_reconfiguration(u: Universe, plan: ReconfigurationPlan, fleet) -> tuple[Universe, FleetReport]:
    entries: list[SiteOutcome] = []
    site_id = plan.site_id
    handle = fleet.sites[site_id]
    for action in plan.actions:
        state = handle.get_state()
        du = next((d for d in state.deployed_units if d.unit_id == action.unit_id), None)
        if du is None:
            entries.append(SiteOutcome(site_id, "SKIPPED", reason="GONE", unit_id=action.unit_id))
            continue
        if action.action == "RESELECT":
            units_by_id = _catalog_candidates(u, du.product_id)
            new_unit = units_by_id[action.replacement]
            u, record = _apply_update(u, fleet, site_id, du, new_unit, DeployMode.RECONFIGURE, units_by_id)
            outcome = (
                "RECONFIGURED" if record.trace.status is TraceStatus.SUCCESS
                else _STATUS_OUTCOME[record.trace.status]
            )
            entries.append(
                SiteOutcome(site_id, outcome, unit_id=action.replacement, record_id=record.id)
            )
        elif action.action == "DEACTIVATE":
            u, entry = _single_transition(
                u, fleet, site_id, du, ActivityKind.DEACTIVATE, DeployMode.RECONFIGURE
            )
            entries.append(entry)
        else:
            entries.append(SiteOutcome(site_id, "SKIPPED", reason="NO_ACTION", unit_id=du.unit_id))
    return u, FleetReport(tuple(entries))


# ---------------------------------------------------------------------------
# Removal, activation, deactivation


def undeploy(
    u: Universe, site_id: str, unit_id: str, fleet, force: bool = False
) -> tuple[Universe, FleetReport]:
    handle = fleet.sites[site_id]
    state = handle.get_state()
    du = next((d for d in state.deployed_units if d.unit_id == unit_id), None)
    if du is None:
        raise UnknownUnitError(f"unit {unit_id!r} is not deployed on {site_id!r}")

    conflicts = check_removal_safety(state, state.deployed_units, unit_id)
    if blocking_conflicts(conflicts) and not force:
        entry = SiteOutcome(
            site_id, "SKIPPED", reason="UNSAFE_REMOVAL", unit_id=unit_id,
            conflicts=tuple(conflicts),
        )
        return u, FleetReport((entry,))

    steps = [Activity.make(ActivityKind.UNINSTALL)]
    if du.state == LifecycleState.ACTIVE.value:
        steps.insert(0, Activity.make(ActivityKind.DEACTIVATE))
    process = ProcessDef(id=f"{unit_id}.uninstall", root=Seq(tuple(steps)))
    units_by_id = _catalog_candidates(u, du.product_id)
    u, record = _run_process(u, fleet, site_id, _unit_stub(du), process, DeployMode.PUSH, units_by_id)
    outcome = "REMOVED" if record.trace.status is TraceStatus.SUCCESS else _STATUS_OUTCOME[record.trace.status]
    entry = SiteOutcome(
        site_id, outcome, unit_id=unit_id, record_id=record.id,
        conflicts=tuple(conflicts) if force else (),
    )
    return u, FleetReport((entry,))


def _single_transition(u, fleet, site_id, du: DeployedUnit, kind: ActivityKind, mode: DeployMode):
    try:
        transition(LifecycleState(du.state), kind)
    except IllegalTransitionError as err:
        return u, SiteOutcome(
            site_id, "SKIPPED", reason="ILLEGAL_TRANSITION", unit_id=du.unit_id
        )
    process = ProcessDef(id=f"{du.unit_id}.{kind.value}", root=Seq((Activity.make(kind),)))
    u, record = _run_process(u, fleet, site_id, _unit_stub(du), process, mode, {})
    if record.trace.status is TraceStatus.SUCCESS:
        outcome = "ACTIVATED" if kind is ActivityKind.ACTIVATE else "DEACTIVATED"
    else:
        outcome = _STATUS_OUTCOME[record.trace.status]
    return u, SiteOutcome(site_id, outcome, unit_id=du.unit_id, record_id=record.id)


def activate(u: Universe, site_id: str, unit_id: str, fleet) -> tuple[Universe, FleetReport]:
    return _activation(u, site_id, unit_id, fleet, ActivityKind.ACTIVATE)


def deactivate(u: Universe, site_id: str, unit_id: str, fleet) -> tuple[Universe, FleetReport]:
    return _activation(u, site_id, unit_id, fleet, ActivityKind.DEACTIVATE)


def _activation(u, site_id, unit_id, fleet, kind):
    handle = fleet.sites[site_id]
    state = handle.get_state()
    du = next((d for d in state.deployed_units if d.unit_id == unit_id), None)
    if du is None:
        raise UnknownUnitError(f"unit {unit_id!r} is not deployed on {site_id!r}")
    u, entry = _single_transition(u, fleet, site_id, du, kind, DeployMode.PUSH)
    return u, FleetReport((entry,))


# ---------------------------------------------------------------------------
# Status


def status(
    u: Universe,
    site: str | None = None,
    product: str | None = None,
    outcome: str | None = None,
    mode: str | None = None,
) -> FleetReport:
    """Read-only aggregation over deployment records."""
    entries = []
    for r in _query(u, site, product, outcome, mode):
        entries.append(
            SiteOutcome(
                r.site_id,
                r.trace.status.value,
                reason=r.mode.value,
                unit_id=r.unit_id,
                record_id=r.id,
            )
        )
    return FleetReport(tuple(entries))


def _query(u, site, product, outcome, mode):
    from .universe import query_status

    return query_status(u, site=site, product=product, outcome=outcome, mode=mode)
