"""The common universe: persistent store of all shared deployment data.

On disk the universe is a directory of JSON documents::

    enterprise.json
    catalog/<server>/<unit>.json
    sites/<machine>/state.json
    deployments/<id>.json
    universe.lock            (present only while a writer holds the store)

Deployment records are append-only; they embed a full copy of the executed
process so pull updates and reconfiguration survive catalog removal.
"""

from __future__ import annotations

import hashlib
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import (
    DuplicateUnitError,
    StoreCorruptError,
    StoreLockedError,
    UnknownTargetError,
    UnknownUnitError,
)
from .model import (
    ClientSiteState,
    EnterpriseModel,
    MachineKind,
    enterprise_from_json,
    enterprise_to_json,
    site_state_from_json,
    site_state_to_json,
)
from .process import (
    ExecutionTrace,
    ProcessDef,
    process_digest,
    process_from_json,
    process_to_json,
    trace_from_json,
)
from .units import PackagedUnit, unit_from_json, unit_to_json

ENV_UNIVERSE = "ORYA_UNIVERSE"
LOCK_FILE = "universe.lock"


class DeployMode(str, Enum):
    PUSH = "PUSH"
    PULL = "PULL"
    RECONFIGURE = "RECONFIGURE"


@dataclass(frozen=True)
class DeploymentRecord:
    id: str
    site_id: str
    product_id: str
    unit_id: str
    process: ProcessDef  # retained copy of the exact process executed
    params: tuple[tuple[str, str], ...]
    trace: ExecutionTrace
    mode: DeployMode
    started_at: int
    finished_at: int

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "site": self.site_id,
            "product": self.product_id,
            "unit": self.unit_id,
            "process": process_to_json(self.process),
            "params": {k: v for k, v in self.params},
            "trace": self.trace.to_json(),
            "mode": self.mode.value,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def record_from_json(doc: dict) -> DeploymentRecord:
    return DeploymentRecord(
        id=doc["id"],
        site_id=doc["site"],
        product_id=doc["product"],
        unit_id=doc["unit"],
        process=process_from_json(doc["process"]),
        params=tuple(sorted(doc.get("params", {}).items())),
        trace=trace_from_json(doc["trace"]),
        mode=DeployMode(doc["mode"]),
        started_at=doc["started_at"],
        finished_at=doc["finished_at"],
    )


@dataclass(frozen=True)
class Universe:
    enterprise: EnterpriseModel
    catalog: dict[str, tuple[PackagedUnit, ...]] = field(default_factory=dict)
    site_states: dict[str, ClientSiteState] = field(default_factory=dict)
    deployments: dict[str, DeploymentRecord] = field(default_factory=dict)
    root: Path | None = None

    def servers(self) -> list[str]:
        return sorted(
            m.id for m in self.enterprise.machines if m.kind is MachineKind.APP_SERVER
        )

    def next_deployment_id(self) -> str:
        return f"d{len(self.deployments):06d}"


def empty_universe(root: Path | None = None) -> Universe:
    return Universe(enterprise=EnterpriseModel(id="enterprise"), root=root)


# ---------------------------------------------------------------------------
# Canonical serialization and digests


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def universe_to_json(u: Universe) -> dict:
    return {
        "enterprise": enterprise_to_json(u.enterprise),
        "catalog": {
            server: [unit_to_json(unit) for unit in units]
            for server, units in sorted(u.catalog.items())
        },
        "sites": {
            site: site_state_to_json(state) for site, state in sorted(u.site_states.items())
        },
        "deployments": {
            rid: record.to_json() for rid, record in sorted(u.deployments.items())
        },
    }


def universe_digest(u: Universe) -> str:
    return hashlib.sha256(_canonical(universe_to_json(u)).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Referential integrity


def cross_validate(u: Universe) -> None:
    """Raise StoreCorruptError on any referential-integrity breach."""
    machines = {m.id: m for m in u.enterprise.machines}
    for server in u.catalog:
        m = machines.get(server)
        if m is None or m.kind is not MachineKind.APP_SERVER:
            raise StoreCorruptError(f"catalog/{server}", "not an app-server machine")
        ids = [unit.id for unit in u.catalog[server]]
        if len(ids) != len(set(ids)):
            raise StoreCorruptError(f"catalog/{server}", "duplicate unit ids")
    for site, state in u.site_states.items():
        m = machines.get(site)
        if m is None or m.kind is not MachineKind.CLIENT_SITE:
            raise StoreCorruptError(f"sites/{site}", "not a client-site machine")
        if state.machine_id != site:
            raise StoreCorruptError(f"sites/{site}", "machine id mismatch")
        ids = [du.unit_id for du in state.deployed_units]
        if len(ids) != len(set(ids)):
            raise StoreCorruptError(f"sites/{site}", "duplicate deployed unit ids")
        contributing = {du.product_id for du in state.deployed_units if du.state in ("INSTALLED", "ACTIVE")}
        for product in state.products:
            if product not in contributing:
                raise StoreCorruptError(f"sites/{site}", f"product {product!r} has no deployed unit")
    for rid, record in u.deployments.items():
        if record.id != rid:
            raise StoreCorruptError(f"deployments/{rid}", "record id mismatch")
        if record.site_id not in machines:
            raise StoreCorruptError(f"deployments/{rid}", f"unknown site {record.site_id!r}")
        if process_digest(record.process) != record.trace.process_digest:
            raise StoreCorruptError(f"deployments/{rid}", "process copy does not match trace digest")


# ---------------------------------------------------------------------------
# Locking


@contextmanager
def store_lock(root: Path, writer_id: str = "orya"):
    """Advisory single-writer lock; the second writer gets LOCKED."""
    lock_path = root / LOCK_FILE
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        try:
            holder = lock_path.read_text().strip()
        except OSError:
            holder = "unknown"
        raise StoreLockedError(holder) from None
    try:
        os.write(fd, writer_id.encode())
        os.close(fd)
        yield
    finally:
        try:
            lock_path.unlink()
        except FileNotFoundError:
            pass


# ---------------------------------------------------------------------------
# Open / init / save


def init_universe(path: str | Path) -> Universe:
    """Write an empty skeleton; the path must be empty or absent."""
    root = Path(path)
    if root.exists() and any(root.iterdir()):
        raise StoreCorruptError(str(root), "directory not empty")
    root.mkdir(parents=True, exist_ok=True)
    u = empty_universe(root)
    save_universe(u)
    return u


def _read_json(path: Path, document: str) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise StoreCorruptError(document, str(err)) from None


def open_universe(path: str | Path) -> Universe:
    """Load and cross-validate every document in the store."""
    root = Path(path)
    if not root.is_dir():
        raise StoreCorruptError(str(root), "not a directory")
    ent_path = root / "enterprise.json"
    if not ent_path.exists():
        raise StoreCorruptError("enterprise.json", "missing")
    try:
        enterprise = enterprise_from_json(_read_json(ent_path, "enterprise.json"))
    except (ValueError, KeyError) as err:
        raise StoreCorruptError("enterprise.json", str(err)) from None

    catalog: dict[str, tuple[PackagedUnit, ...]] = {}
    catalog_dir = root / "catalog"
    if catalog_dir.is_dir():
        for server_dir in sorted(catalog_dir.iterdir()):
            if not server_dir.is_dir():
                continue
            units = []
            for unit_path in sorted(server_dir.glob("*.json")):
                doc_name = f"catalog/{server_dir.name}/{unit_path.name}"
                try:
                    units.append(unit_from_json(_read_json(unit_path, doc_name)))
                except (ValueError, KeyError) as err:
                    raise StoreCorruptError(doc_name, str(err)) from None
            catalog[server_dir.name] = tuple(units)

    site_states: dict[str, ClientSiteState] = {}
    sites_dir = root / "sites"
    if sites_dir.is_dir():
        for site_dir in sorted(sites_dir.iterdir()):
            state_path = site_dir / "state.json"
            if not state_path.exists():
                continue
            doc_name = f"sites/{site_dir.name}/state.json"
            try:
                site_states[site_dir.name] = site_state_from_json(_read_json(state_path, doc_name))
            except (ValueError, KeyError) as err:
                raise StoreCorruptError(doc_name, str(err)) from None

    deployments: dict[str, DeploymentRecord] = {}
    dep_dir = root / "deployments"
    if dep_dir.is_dir():
        for rec_path in sorted(dep_dir.glob("*.json")):
            doc_name = f"deployments/{rec_path.name}"
            try:
                record = record_from_json(_read_json(rec_path, doc_name))
            except (ValueError, KeyError) as err:
                raise StoreCorruptError(doc_name, str(err)) from None
            deployments[record.id] = record

    u = Universe(enterprise, catalog, site_states, deployments, root)
    cross_validate(u)
    return u


def save_universe(u: Universe, path: str | Path | None = None, writer_id: str = "orya") -> None:
    """Persist the universe under the single-writer lock.

    Site states are committed before deployment records, so a crash between
    writes leaves at worst a record-less state change. Existing deployment
    records are never rewritten.
    """
    root = Path(path) if path is not None else u.root
    if root is None:
        raise ValueError("universe has no root path")
    root.mkdir(parents=True, exist_ok=True)
    with store_lock(root, writer_id):
        _write_json(root / "enterprise.json", enterprise_to_json(u.enterprise))

        catalog_dir = root / "catalog"
        for server, units in u.catalog.items():
            server_dir = catalog_dir / server
            server_dir.mkdir(parents=True, exist_ok=True)
            wanted = {f"{unit.id}.json" for unit in units}
            for stale in server_dir.glob("*.json"):
                if stale.name not in wanted:
                    stale.unlink()
            for unit in units:
                _write_json(server_dir / f"{unit.id}.json", unit_to_json(unit))
        if catalog_dir.is_dir():
            for server_dir in catalog_dir.iterdir():
                if server_dir.is_dir() and server_dir.name not in u.catalog:
                    for stale in server_dir.glob("*.json"):
                        stale.unlink()
                    server_dir.rmdir()

        sites_dir = root / "sites"
        for site, state in u.site_states.items():
            site_dir = sites_dir / site
            site_dir.mkdir(parents=True, exist_ok=True)
            _write_json(site_dir / "state.json", site_state_to_json(state))

        dep_dir = root / "deployments"
        dep_dir.mkdir(parents=True, exist_ok=True)
        for rid, record in u.deployments.items():
            rec_path = dep_dir / f"{rid}.json"
            if not rec_path.exists():  # append-only
                _write_json(rec_path, record.to_json())


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# Catalog and record operations (pure: they return a new Universe)


def publish_unit(u: Universe, server_id: str, unit: PackagedUnit) -> Universe:
    machines = {m.id: m for m in u.enterprise.machines}
    m = machines.get(server_id)
    if m is None or m.kind is not MachineKind.APP_SERVER:
        raise UnknownTargetError(f"{server_id!r} is not an app server")
    units = u.catalog.get(server_id, ())
    if any(existing.id == unit.id for existing in units):
        raise DuplicateUnitError(f"unit {unit.id!r} already published on {server_id!r}")
    catalog = dict(u.catalog)
    catalog[server_id] = tuple(sorted(units + (unit,), key=lambda x: x.id))
    return replace(u, catalog=catalog)


def remove_unit(u: Universe, server_id: str, unit_id: str) -> Universe:
    machines = {m.id: m for m in u.enterprise.machines}
    m = machines.get(server_id)
    if m is None or m.kind is not MachineKind.APP_SERVER:
        raise UnknownTargetError(f"{server_id!r} is not an app server")
    units = u.catalog.get(server_id, ())
    if not any(existing.id == unit_id for existing in units):
        raise UnknownUnitError(f"unit {unit_id!r} not published on {server_id!r}")
    catalog = dict(u.catalog)
    catalog[server_id] = tuple(x for x in units if x.id != unit_id)
    return replace(u, catalog=catalog)


def list_units(u: Universe, server_id: str) -> list[str]:
    return sorted(unit.id for unit in u.catalog.get(server_id, ()))


def record_deployment(u: Universe, record: DeploymentRecord) -> Universe:
    if record.id in u.deployments:
        raise DuplicateUnitError(f"deployment record {record.id!r} already exists")
    deployments = dict(u.deployments)
    deployments[record.id] = record
    return replace(u, deployments=deployments)


def set_site_state(u: Universe, state: ClientSiteState) -> Universe:
    site_states = dict(u.site_states)
    site_states[state.machine_id] = state
    return replace(u, site_states=site_states)


def get_site_state(u: Universe, site_id: str) -> ClientSiteState:
    try:
        return u.site_states[site_id]
    except KeyError:
        raise UnknownTargetError(f"no state for site {site_id!r}") from None


def query_status(
    u: Universe,
    site: str | None = None,
    product: str | None = None,
    outcome: str | None = None,
    mode: str | None = None,
) -> list[DeploymentRecord]:
    records = []
    for rid in sorted(u.deployments):
        r = u.deployments[rid]
        if site is not None and r.site_id != site:
            continue
        if product is not None and r.product_id != product:
            continue
        if outcome is not None and r.trace.status.value != outcome:
            continue
        if mode is not None and r.mode.value != mode:
            continue
        records.append(r)
    return records
