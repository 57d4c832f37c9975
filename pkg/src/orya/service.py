"""Operation engine plus the newline-delimited JSON service protocol.

Every orchestrator and universe operation is reachable as one JSON request
object per line: ``{"op": "deploy", ...}`` in, one JSON response object out.
The CLI speaks the same request shapes whether it executes locally or
against a remote service, so no business rule lives in either adapter.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from pathlib import Path

from . import orchestrator as orch
from .errors import OryaError
from .model import apply_property_change, enterprise_to_json, lookup_machine, validate_enterprise
from .safety import SafetyPolicy
from .simharness import build_fleet, sync_properties
from .units import unit_from_json
from .universe import (
    Universe,
    open_universe,
    publish_unit,
    remove_unit,
    save_universe,
    universe_digest,
)

# Outcomes that count as "the operation did something" for exit-code purposes.
POSITIVE_OUTCOMES = {
    "DEPLOYED",
    "WOULD_DEPLOY",
    "UPDATED",
    "REMOVED",
    "ACTIVATED",
    "DEACTIVATED",
    "RECONFIGURED",
}

# Errors that are the operator's problem (bad store, bad usage) exit 2;
# everything else is a domain refusal and exits 1.
USAGE_ERROR_CODES = {"CORRUPT", "LOCKED", "USAGE", "SYNTAX", "ERROR"}


def _error(code: str, message: str) -> dict:
    return {"ok": False, "error": {"code": code, "message": message}}


def _report_response(report: orch.FleetReport) -> dict:
    refusal = bool(report.entries) and not any(
        e.outcome in POSITIVE_OUTCOMES for e in report.entries
    )
    return {"ok": True, "refusal": refusal, "report": report.to_json()}


class LocalEngine:
    """Executes protocol requests against one universe store."""

    def __init__(self, store: str | Path):
        self.store = Path(store)
        self.universe: Universe = open_universe(self.store)

    def reload(self) -> None:
        self.universe = open_universe(self.store)

    def _commit(self, u: Universe, fleet=None) -> None:
        if fleet is not None:
            u = sync_properties(u, fleet)
        save_universe(u, self.store)
        self.universe = u

    def handle(self, req: dict) -> dict:
        op = req.get("op")
        handler = getattr(self, f"op_{op}", None) if isinstance(op, str) else None
        if handler is None:
            return _error("USAGE", f"unknown op {op!r}")
        try:
            return handler(req)
        except OryaError as err:
            return _error(err.code, err.message)
        except (KeyError, ValueError, TypeError) as err:
            return _error("USAGE", str(err))

    # -- model ---------------------------------------------------------------

    def op_ping(self, req):
        return {"ok": True, "pong": True}

    def op_model_validate(self, req):
        report = validate_enterprise(self.universe.enterprise)
        return {"ok": True, "refusal": not report.ok, "report": report.to_json()}

    def op_model_show(self, req):
        return {"ok": True, "model": enterprise_to_json(self.universe.enterprise)}

    # -- catalog ---------------------------------------------------------------

    def op_publish(self, req):
        unit = unit_from_json(req["manifest"])
        u = publish_unit(self.universe, req["server"], unit)
        self._commit(u)
        return {"ok": True, "published": unit.id, "server": req["server"]}

    def op_unpublish(self, req):
        u = remove_unit(self.universe, req["server"], req["unit"])
        self._commit(u)
        return {"ok": True, "removed": req["unit"], "server": req["server"]}

    # -- deployment -------------------------------------------------------------

    def op_deploy(self, req):
        fleet = build_fleet(self.universe)
        target = req.get("group") or tuple(req.get("sites", ()))
        if not target:
            return _error("USAGE", "deploy needs a group or at least one site")
        request = orch.DeployRequest(
            target=target,
            product_id=req["product"],
            policy=SafetyPolicy(req.get("policy", "reject")),
            dry_run=bool(req.get("dry_run", False)),
            extra_filters=tuple(req.get("filters", ())),
        )
        u, report = orch.push_deploy(self.universe, request, fleet)
        if not request.dry_run:
            self._commit(u, fleet)
        return _report_response(report)

    def op_pull(self, req):
        fleet = build_fleet(self.universe)
        u, report = orch.pull_update(
            self.universe,
            req["site"],
            req["product"],
            fleet,
            policy=SafetyPolicy(req.get("policy", "reject")),
        )
        self._commit(u, fleet)
        return _report_response(report)

    def op_undeploy(self, req):
        fleet = build_fleet(self.universe)
        u, report = orch.undeploy(
            self.universe, req["site"], req["unit"], fleet, force=bool(req.get("force", False))
        )
        self._commit(u, fleet)
        return _report_response(report)

    def op_activate(self, req):
        return self._activation(req, orch.activate)

    def op_deactivate(self, req):
        return self._activation(req, orch.deactivate)

    def _activation(self, req, fn):
        fleet = build_fleet(self.universe)
        u, report = fn(self.universe, req["site"], req["unit"], fleet)
        self._commit(u, fleet)
        return _report_response(report)

    def op_set_prop(self, req):
        from dataclasses import replace as _replace

        from .values import value_from_json

        site_id = req["site"]
        machine = lookup_machine(self.universe.enterprise, site_id)
        if req.get("remove"):
            machine, event = apply_property_change(machine, req["name"], remove=True)
        else:
            machine, event = apply_property_change(
                machine, req["name"], value_from_json(req["value"])
            )
        machines = tuple(
            machine if m.id == site_id else m for m in self.universe.enterprise.machines
        )
        u = _replace(
            self.universe, enterprise=_replace(self.universe.enterprise, machines=machines)
        )

        fleet = build_fleet(u)
        result = orch.on_property_change(
            u, site_id, event, fleet, apply=bool(req.get("apply", False))
        )
        if isinstance(result, tuple):
            u, report = result
            self._commit(u, fleet)
            response = _report_response(report)
            response["noop"] = event.noop
            return response
        self._commit(u, fleet)
        return {"ok": True, "refusal": False, "plan": result.to_json(), "noop": event.noop}

    def op_status(self, req):
        report = orch.status(
            self.universe,
            site=req.get("site"),
            product=req.get("product"),
            outcome=req.get("outcome"),
            mode=req.get("mode"),
        )
        return {"ok": True, "refusal": False, "report": report.to_json()}

    def op_digest(self, req):
        return {"ok": True, "digest": universe_digest(self.universe)}


# ---------------------------------------------------------------------------
# Socket transport


def _parse_addr(addr: str):
    """``host:port`` for TCP, anything with a slash for a unix socket."""
    if "/" in addr:
        return ("unix", addr)
    host, _, port = addr.rpartition(":")
    return ("tcp", (host or "127.0.0.1", int(port)))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode().strip()
            if not line:
                continue
            try:
                req = json.loads(line)
            except json.JSONDecodeError as err:
                resp = _error("USAGE", f"bad request line: {err}")
            else:
                with self.server.engine_lock:
                    resp = self.server.engine.handle(req)
            self.wfile.write((json.dumps(resp, sort_keys=True) + "\n").encode())
            self.wfile.flush()


class ServiceServer:
    """NDJSON request/response service over a local socket."""

    def __init__(self, store: str | Path, addr: str):
        self.engine = LocalEngine(store)
        kind, target = _parse_addr(addr)
        if kind == "unix":
            server_cls = type(
                "_UnixServer",
                (socketserver.ThreadingUnixStreamServer,),
                {"daemon_threads": True, "block_on_close": False},
            )
            self._server = server_cls(target, _Handler)
            self.address = target
        else:
            server_cls = type("_TcpServer", (socketserver.ThreadingTCPServer,), {
                "allow_reuse_address": True,
                "daemon_threads": True,
                "block_on_close": False,
            })
            self._server = server_cls(target, _Handler)
            host, port = self._server.server_address
            self.address = f"{host}:{port}"
        self._server.engine = self.engine
        self._server.engine_lock = threading.Lock()
        self._thread: threading.Thread | None = None

    def serve_forever(self):
        self._server.serve_forever()

    def start_background(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def request(addr: str, req: dict, timeout: float = 10.0) -> dict:
    """Send one request line to a service and read one response line."""
    kind, target = _parse_addr(addr)
    if kind == "unix":
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    else:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.settimeout(timeout)
    try:
        sock.connect(target)
        sock.sendall((json.dumps(req) + "\n").encode())
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = sock.recv(65536)
            if not chunk:
                break
            buf += chunk
        return json.loads(buf.decode())
    finally:
        sock.close()
