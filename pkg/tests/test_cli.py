import json
from pathlib import Path

import pytest

from conftest import make_enterprise, make_unit
from orya.cli import main
from orya.model import enterprise_to_json
from orya.units import unit_to_json
from orya.universe import open_universe

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def store(tmp_path):
    ent = make_enterprise(
        {
            "site1": ({"os": "linux", "disk.free": "10GB"}, ()),
            "site2": ({"os": "win", "disk.free": "10GB"}, ()),
        }
    )
    ent_path = tmp_path / "enterprise.json"
    ent_path.write_text(json.dumps(enterprise_to_json(ent)))
    root = tmp_path / "universe"
    assert main(["--universe", str(root), "init", "--enterprise", str(ent_path)]) == 0
    return root


def run(store, *argv, fmt="json"):
    return main(["--universe", str(store), "--format", fmt, *argv])


def run_json(store, capsys, *argv):
    code = run(store, *argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


def write_manifest(tmp_path, unit, name="unit.json"):
    path = tmp_path / name
    path.write_text(json.dumps(unit_to_json(unit)))
    return str(path)


def publish_editor(store, tmp_path, capsys, version="1.2", constraints=('os = "linux"',)):
    manifest = write_manifest(
        tmp_path,
        make_unit(
            f"editor-{version}",
            product="editor",
            version=version,
            constraints=constraints,
            footprint="500MB",
            resources=[("editor.bin", 500 * 10**6, "abc")],
        ),
        name=f"editor-{version}.json",
    )
    code, doc = run_json(store, capsys, "publish", "srv1", manifest)
    assert code == 0 and doc["published"] == f"editor-{version}"


class TestInit:
    def test_init_refuses_non_empty(self, tmp_path, capsys):
        (tmp_path / "junk").write_text("x")
        assert main(["--universe", str(tmp_path), "init"]) == 2

    def test_missing_universe_flag_is_usage_error(self, capsys, monkeypatch):
        monkeypatch.delenv("ORYA_UNIVERSE", raising=False)
        with pytest.raises(SystemExit) as exc:
            main(["digest"])
        assert exc.value.code == 2

    def test_universe_from_env(self, store, capsys, monkeypatch):
        monkeypatch.setenv("ORYA_UNIVERSE", str(store))
        assert main(["--format", "json", "digest"]) == 0


class TestModel:
    def test_validate_ok(self, store, capsys):
        code, doc = run_json(store, capsys, "model", "validate")
        assert code == 0 and doc["report"]["ok"]

    def test_show_round_trips(self, store, capsys):
        code, doc = run_json(store, capsys, "model", "show")
        assert code == 0
        assert {m["id"] for m in doc["model"]["machines"]} == {"srv1", "site1", "site2"}


class TestCatalog:
    def test_publish_and_unpublish(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        assert open_universe(store).catalog["srv1"][0].id == "editor-1.2"
        code, doc = run_json(store, capsys, "unpublish", "srv1", "editor-1.2")
        assert code == 0 and doc["removed"] == "editor-1.2"

    def test_duplicate_publish_is_refusal(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        manifest = write_manifest(tmp_path, make_unit("editor-1.2", product="editor", version="1.2"))
        assert run(store, "publish", "srv1", manifest) == 1

    def test_bad_manifest_path(self, store, capsys):
        assert run(store, "publish", "srv1", "/nonexistent.json") == 2


class TestDeploy:
    def test_group_deploy_partitions(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        code, doc = run_json(store, capsys, "deploy", "--product", "editor", "--group", "all")
        assert code == 0
        by_site = {e["site"]: e["outcome"] for e in doc["report"]["entries"]}
        assert by_site == {"site1": "DEPLOYED", "site2": "SKIPPED"}

    def test_site_deploy_all_skipped_exits_1(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        assert run(store, "deploy", "--product", "editor", "--site", "site2") == 1

    def test_dry_run_leaves_store_unchanged(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        _, before = run_json(store, capsys, "digest")
        code, doc = run_json(
            store, capsys, "deploy", "--product", "editor", "--site", "site1", "--dry-run"
        )
        assert code == 0
        assert doc["report"]["entries"][0]["outcome"] == "WOULD_DEPLOY"
        _, after = run_json(store, capsys, "digest")
        assert before["digest"] == after["digest"]

    def test_group_and_site_together_is_usage_error(self, store, capsys):
        assert run(store, "deploy", "--product", "p", "--group", "g", "--site", "s") == 2

    def test_neither_group_nor_site_is_usage_error(self, store, capsys):
        assert run(store, "deploy", "--product", "p") == 2

    def test_unknown_product_is_refusal(self, store, capsys):
        assert run(store, "deploy", "--product", "ghost", "--group", "all") == 1


class TestLifecycleCommands:
    def test_deactivate_activate_undeploy(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        run(store, "deploy", "--product", "editor", "--site", "site1")
        capsys.readouterr()
        assert run(store, "deactivate", "--site", "site1", "--unit", "editor-1.2") == 0
        capsys.readouterr()
        assert run(store, "activate", "--site", "site1", "--unit", "editor-1.2") == 0
        capsys.readouterr()
        code, doc = run_json(store, capsys, "undeploy", "--site", "site1", "--unit", "editor-1.2")
        assert code == 0
        assert doc["report"]["entries"][0]["outcome"] == "REMOVED"

    def test_activate_when_active_is_refusal(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        run(store, "deploy", "--product", "editor", "--site", "site1")
        capsys.readouterr()
        assert run(store, "activate", "--site", "site1", "--unit", "editor-1.2") == 1

    def test_pull_with_newer_version(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        run(store, "deploy", "--product", "editor", "--site", "site1")
        capsys.readouterr()
        publish_editor(store, tmp_path, capsys, version="1.3")
        code, doc = run_json(store, capsys, "pull", "--site", "site1", "--product", "editor")
        assert code == 0
        assert doc["report"]["entries"][0]["outcome"] == "UPDATED"


class TestSetProp:
    def test_assignment_and_plan(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        run(store, "deploy", "--product", "editor", "--site", "site1")
        capsys.readouterr()
        code, doc = run_json(store, capsys, "set-prop", "--site", "site1", 'os=win')
        assert code == 0
        assert doc["plan"]["actions"], "constrained unit should be flagged"

    def test_remove_with_apply(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        run(store, "deploy", "--product", "editor", "--site", "site1")
        capsys.readouterr()
        publish_editor(store, tmp_path, capsys, version="1.1", constraints=())
        code, doc = run_json(
            store, capsys, "set-prop", "--site", "site1", "--remove", "os", "--apply-reconfig"
        )
        assert code == 0
        outcomes = [e["outcome"] for e in doc["report"]["entries"]]
        assert "RECONFIGURED" in outcomes

    def test_missing_assignment_is_usage_error(self, store, capsys):
        assert run(store, "set-prop", "--site", "site1") == 2


class TestStatusAndDigest:
    def test_status_filters(self, store, tmp_path, capsys):
        publish_editor(store, tmp_path, capsys)
        run(store, "deploy", "--product", "editor", "--group", "all")
        capsys.readouterr()
        code, doc = run_json(store, capsys, "status", "--site", "site1")
        assert code == 0 and len(doc["report"]["entries"]) == 1
        code, doc = run_json(store, capsys, "status", "--site", "site2")
        assert code == 0 and doc["report"]["entries"] == []

    def test_digest_stable(self, store, capsys):
        _, a = run_json(store, capsys, "digest")
        _, b = run_json(store, capsys, "digest")
        assert a["digest"] == b["digest"]

    def test_text_format_runs(self, store, capsys):
        assert run(store, "digest", fmt="text") == 0
        assert capsys.readouterr().out.strip()


class TestSimulate:
    def test_scenario_passes(self, store, capsys):
        code = main(["--format", "json", "simulate", str(SCENARIO_DIR / "basic_push.json")])
        out = json.loads(capsys.readouterr().out)
        assert code == 0 and out["passed"]

    def test_failing_scenario_exits_1(self, tmp_path, capsys):
        doc = json.loads((SCENARIO_DIR / "basic_push.json").read_text())
        doc["expects"] = [
            {"expect": "lifecycle", "site": "site2", "unit": "editor-1.2", "state": "ACTIVE"}
        ]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        assert main(["simulate", str(path)]) == 1

    def test_missing_scenario_file(self, capsys):
        assert main(["simulate", "/nonexistent.json"]) == 2
