"""Role interfaces of the federation: tools are only reachable through these.

Three contracts exist: the deployment service (global view, push/pull/
reconfigure), the app-server role (manage and serve packaged units) and the
client-site role (properties, constraints, state, primitives). Simulated or
real, every tool plugs in behind one of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from .model import ClientSiteState
from .units import PackagedUnit
from .values import PropertyValue, Size


@dataclass(frozen=True)
class ResourcePayload:
    """Simulated resource content: identity plus size and digest."""

    unit_id: str
    name: str
    size: Size
    digest: str


@runtime_checkable
class AppServerRole(Protocol):
    def list_units(self) -> list[str]: ...

    def add_unit(self, unit: PackagedUnit) -> None: ...

    def remove_unit(self, unit_id: str) -> None: ...

    def fetch_resource(self, unit_id: str, resource_name: str) -> ResourcePayload: ...

    def unit_info(self, unit_id: str) -> PackagedUnit: ...


@runtime_checkable
class ClientSiteRole(Protocol):
    def get_properties(self) -> dict[str, PropertyValue]: ...

    def set_property(self, name: str, value: PropertyValue | None = None, *, remove: bool = False): ...

    def get_constraints(self) -> list[str]: ...

    def set_constraint(self, text: str) -> None: ...

    def get_state(self) -> ClientSiteState: ...

    def run_primitive(self, path: str, activity, ctx) -> object: ...

    def compensate(self, path: str, activity, token, ctx) -> None: ...

    def snapshot(self) -> dict: ...

    def restore(self, snap: dict) -> None: ...


@runtime_checkable
class DeploymentServiceRole(Protocol):
    def deploy(self, request): ...

    def update(self, site_id: str, product_id: str): ...

    def undeploy(self, site_id: str, unit_id: str, force: bool = False): ...

    def reconfigure(self, site_id: str, change, apply: bool = False): ...

    def status(self, **filters): ...
