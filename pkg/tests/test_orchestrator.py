from dataclasses import replace

import pytest

from conftest import make_enterprise, make_unit
from orya import orchestrator as orch
from orya.errors import NotDeployedError, UnknownProductError, UnknownUnitError
from orya.safety import ConflictKind
from orya.simharness import Fault, build_fleet, inject
from orya.universe import empty_universe, publish_unit, universe_digest
from orya.values import Size


def make_universe(sites, units, servers=("srv1",)):
    u = replace(empty_universe(), enterprise=make_enterprise(sites, servers=servers))
    for server, unit in units:
        u = publish_unit(u, server, unit)
    return u


LINUX = {"os": "linux", "disk.free": "10GB"}
WIN = {"os": "win", "disk.free": "10GB"}


def linux_unit(unit_id="ed-1.0", version="1.0", **kw):
    kw.setdefault("constraints", ['os = "linux"'])
    kw.setdefault("resources", [("bin", 10**6, "x")])
    kw.setdefault("footprint", 10**6)
    return make_unit(unit_id, product="editor", version=version, **kw)


def deploy(u, fleet, sites=("s1",), product="editor", **kw):
    req = orch.DeployRequest(target=tuple(sites), product_id=product, **kw)
    return orch.push_deploy(u, req, fleet)


class TestPushDeploy:
    def test_partition_by_constraint(self):
        u = make_universe({"s1": (LINUX, ()), "s2": (WIN, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, report = deploy(u, fleet, sites=("s1", "s2"))
        by_site = {e.site_id: e for e in report.entries}
        assert by_site["s1"].outcome == "DEPLOYED"
        assert by_site["s2"].outcome == "SKIPPED"
        assert by_site["s2"].reason == "NO_ADMISSIBLE"
        cand = by_site["s2"].selection.candidates[0]
        assert any(r.code == "FALSE_CLAUSE" for r in cand.constraint_outcome.reasons)
        assert report.summary == {"DEPLOYED": 1, "SKIPPED": 1}

    def test_deployed_site_state_and_record(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, report = deploy(u, fleet)
        assert report.entries[0].record_id == "d000000"
        state = u.site_states["s1"]
        assert state.deployed_units[0].unit_id == "ed-1.0"
        assert state.deployed_units[0].state == "ACTIVE"
        assert state.products == ("editor",)
        assert fleet.sites["s1"].properties["disk.free"] == Size(10**10 - 10**6)

    def test_dry_run_purity(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        before = universe_digest(u)
        snap = fleet.sites["s1"].snapshot()
        u2, report = deploy(u, fleet, dry_run=True)
        assert report.entries[0].outcome == "WOULD_DEPLOY"
        assert universe_digest(u2) == before
        assert fleet.sites["s1"].snapshot() == snap

    def test_unknown_product(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        with pytest.raises(UnknownProductError):
            deploy(u, build_fleet(u), product="ghost")

    def test_group_target(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, report = orch.push_deploy(
            u, orch.DeployRequest(target="all", product_id="editor"), fleet
        )
        assert report.entries[0].outcome == "DEPLOYED"

    def test_idempotent_redeploy(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        u, report = deploy(u, fleet)
        assert report.entries[0].outcome == "SKIPPED"
        assert report.entries[0].reason == "ALREADY_DEPLOYED"

    def test_per_site_fault_isolation(self):
        u = make_universe(
            {"s1": (LINUX, ()), "s2": (LINUX, ())}, [("srv1", linux_unit())]
        )
        fleet = build_fleet(u)
        inject(fleet, [Fault(site_id="s1", match="install")])
        u, report = deploy(u, fleet, sites=("s1", "s2"))
        by_site = {e.site_id: e for e in report.entries}
        assert by_site["s1"].outcome == "ROLLED_BACK"
        assert by_site["s2"].outcome == "DEPLOYED"

    def test_dedupe_across_servers_first_in_id_order(self):
        unit_a = linux_unit()
        unit_b = replace(linux_unit(), footprint=Size(5))  # same id, other server
        u = make_universe(
            {"s1": (LINUX, ())},
            [("srv1", unit_a), ("srv2", unit_b)],
            servers=("srv1", "srv2"),
        )
        fleet = build_fleet(u)
        u, report = deploy(u, fleet)
        assert report.entries[0].outcome == "DEPLOYED"
        # srv1 sorts first, so its copy (1MB footprint) won
        assert u.site_states["s1"].deployed_units[0].footprint == Size(10**6)


class TestBrokerIsolation:
    def test_sites_never_talk_to_servers(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        deploy(u, fleet)
        site_methods = {e.method for e in fleet.call_log if e.role == "site"}
        server_methods = {e.method for e in fleet.call_log if e.role == "server"}
        assert "fetch_resource" not in site_methods
        assert server_methods <= {"fetch_resource", "list_units", "add_unit", "remove_unit", "unit_info"}

    def test_every_transfer_is_brokered(self):
        u = make_universe(
            {"s1": (LINUX, ())},
            [("srv1", linux_unit(resources=[("a", 1, "x"), ("b", 1, "y")]))],
        )
        fleet = build_fleet(u)
        deploy(u, fleet)
        log = fleet.call_log
        for i, entry in enumerate(log):
            if entry.role == "site" and "transfer" in entry.detail:
                assert any(
                    prev.role == "server" and prev.method == "fetch_resource"
                    for prev in log[max(0, i - 2) : i]
                )


class TestPullUpdate:
    def _deployed(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        return u, fleet

    def test_update_to_newer(self):
        u, fleet = self._deployed()
        u = publish_unit(u, "srv1", linux_unit("ed-2.0", version="2.0"))
        u, report = orch.pull_update(u, "s1", "editor", fleet)
        assert report.entries[0].outcome == "UPDATED"
        units = {du.unit_id: du for du in u.site_states["s1"].deployed_units}
        assert set(units) == {"ed-2.0"}
        assert units["ed-2.0"].state == "ACTIVE"  # re-activated after update

    def test_up_to_date(self):
        u, fleet = self._deployed()
        u, report = orch.pull_update(u, "s1", "editor", fleet)
        assert report.entries[0].outcome == "SKIPPED"
        assert report.entries[0].reason == "UP_TO_DATE"

    def test_older_versions_not_considered(self):
        u, fleet = self._deployed()
        u = publish_unit(u, "srv1", linux_unit("ed-0.9", version="0.9"))
        u, report = orch.pull_update(u, "s1", "editor", fleet)
        assert report.entries[0].reason == "UP_TO_DATE"

    def test_never_deployed_raises(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        with pytest.raises(NotDeployedError):
            orch.pull_update(u, "s1", "editor", build_fleet(u))


class TestReconfiguration:
    def _universe(self):
        units = [
            ("srv1", linux_unit("ed-full-1.1", version="1.1", constraints=["ram >= 8"])),
            ("srv1", linux_unit("ed-lite-1.0", version="1.0", constraints=[])),
        ]
        return make_universe({"s1": ({**LINUX, "ram": 16}, ())}, units)

    def test_plan_reselect(self):
        u = self._universe()
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        event = fleet.sites["s1"].set_property("ram", 4)
        plan = orch.on_property_change(u, "s1", event, fleet)
        assert not plan.empty
        action = plan.actions[0]
        assert (action.unit_id, action.action, action.replacement) == (
            "ed-full-1.1", "RESELECT", "ed-lite-1.0",
        )

    def test_apply_reselect(self):
        u = self._universe()
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        event = fleet.sites["s1"].set_property("ram", 4)
        u, report = orch.on_property_change(u, "s1", event, fleet, apply=True)
        assert report.entries[0].outcome == "RECONFIGURED"
        units = {du.unit_id for du in u.site_states["s1"].deployed_units}
        assert units == {"ed-lite-1.0"}
        assert u.deployments["d000001"].mode.value == "RECONFIGURE"

    def test_deactivate_when_no_replacement(self):
        u = make_universe(
            {"s1": ({**LINUX, "ram": 16}, ())},
            [("srv1", linux_unit(constraints=["ram >= 8"]))],
        )
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        event = fleet.sites["s1"].set_property("ram", 4)
        plan = orch.on_property_change(u, "s1", event, fleet)
        assert plan.actions[0].action == "DEACTIVATE"

    def test_satisfied_units_untouched(self):
        u = self._universe()
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        event = fleet.sites["s1"].set_property("ram", 32)
        plan = orch.on_property_change(u, "s1", event, fleet)
        assert plan.empty


class TestRemoval:
    def _with_dependency(self):
        lib = make_unit(
            "libz-1.1", product="zlib", version="1.1",
            provides=[("libz", "1.1")], resources=[("so", 1, "z")],
        )
        app = make_unit(
            "app-1.0", product="app", version="1.0",
            requires=[("libz", "1.1")], resources=[("tar", 1, "a")],
        )
        u = make_universe({"s1": (LINUX, ())}, [("srv1", lib), ("srv1", app)])
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet, product="zlib")
        u, _ = deploy(u, fleet, product="app")
        return u, fleet

    def test_unsafe_removal_blocked(self):
        u, fleet = self._with_dependency()
        u, report = orch.undeploy(u, "s1", "libz-1.1", fleet)
        entry = report.entries[0]
        assert entry.outcome == "SKIPPED"
        assert entry.reason == "UNSAFE_REMOVAL"
        assert entry.conflicts[0].kind is ConflictKind.STILL_REQUIRED

    def test_forced_removal_carries_conflicts(self):
        u, fleet = self._with_dependency()
        u, report = orch.undeploy(u, "s1", "libz-1.1", fleet, force=True)
        entry = report.entries[0]
        assert entry.outcome == "REMOVED"
        assert entry.conflicts
        assert all(du.unit_id != "libz-1.1" for du in u.site_states["s1"].deployed_units)

    def test_safe_removal(self):
        u, fleet = self._with_dependency()
        u, report = orch.undeploy(u, "s1", "app-1.0", fleet)
        assert report.entries[0].outcome == "REMOVED"
        assert report.entries[0].conflicts == ()

    def test_unknown_unit(self):
        u, fleet = self._with_dependency()
        with pytest.raises(UnknownUnitError):
            orch.undeploy(u, "s1", "ghost", fleet)


class TestActivation:
    def test_cycle_and_illegal(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)  # lands ACTIVE
        u, report = orch.activate(u, "s1", "ed-1.0", fleet)
        assert report.entries[0].outcome == "SKIPPED"
        assert report.entries[0].reason == "ILLEGAL_TRANSITION"
        u, report = orch.deactivate(u, "s1", "ed-1.0", fleet)
        assert report.entries[0].outcome == "DEACTIVATED"
        u, report = orch.activate(u, "s1", "ed-1.0", fleet)
        assert report.entries[0].outcome == "ACTIVATED"


class TestStatus:
    def test_status_lists_records(self):
        u = make_universe({"s1": (LINUX, ())}, [("srv1", linux_unit())])
        fleet = build_fleet(u)
        u, _ = deploy(u, fleet)
        report = orch.status(u)
        assert len(report.entries) == 1
        assert report.entries[0].outcome == "SUCCESS"
        assert orch.status(u, site="nowhere").entries == ()
