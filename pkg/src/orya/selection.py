"""Constraint-based package selection for one product on one site.

A candidate is admissible when its own constraints hold on the site, the
site's standing constraints survive the extra footprint, and installing it
raises no blocking safety conflict. Among admissible candidates the highest
product version wins, then the smallest footprint, then the smallest id.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

from . import expr as expr_mod
from .expr import EvalOutcome, StandingCheck, Status, check_standing
from .safety import Conflict, SafetyPolicy, blocking_conflicts, check_safety


@dataclass(frozen=True)
class CandidateReport:
    unit_id: str
    constraint_outcome: EvalOutcome
    standing: tuple[StandingCheck, ...]
    conflicts: tuple[Conflict, ...]
    filter_outcome: EvalOutcome | None  # None when no extra filters given
    admissible: bool
    reasons: tuple[str, ...] = ()

    def to_json(self) -> dict:
        out = {
            "unit": self.unit_id,
            "admissible": self.admissible,
            "constraints": self.constraint_outcome.to_json(),
            "standing": [
                {"constraint": s.constraint, "outcome": s.outcome.to_json()} for s in self.standing
            ],
            "conflicts": [c.to_json() for c in self.conflicts],
            "reasons": list(self.reasons),
        }
        if self.filter_outcome is not None:
            out["filter"] = self.filter_outcome.to_json()
        return out


@dataclass(frozen=True)
class SelectionReport:
    product_id: str
    candidates: tuple[CandidateReport, ...]
    chosen: str | None
    rationale: str

    def to_json(self) -> dict:
        return {
            "product": self.product_id,
            "chosen": self.chosen,
            "rationale": self.rationale,
            "candidates": [c.to_json() for c in self.candidates],
        }


def _candidate_order(a, b) -> int:
    """Highest version first, then smallest footprint, then smallest id."""
    if a.product_version != b.product_version:
        return -1 if a.product_version > b.product_version else 1
    if a.footprint != b.footprint:
        return -1 if a.footprint < b.footprint else 1
    return -1 if a.id < b.id else (1 if a.id > b.id else 0)


def select_package(
    product_id: str,
    candidates,
    site,
    state,
    policy: SafetyPolicy = SafetyPolicy.REJECT,
    extra_filters=(),
    replacing=None,
) -> SelectionReport:
    """Rank the product's candidates for one site and pick the winner.

    ``extra_filters`` are evaluated against each candidate's descriptive
    properties (operator-supplied wishes); any non-satisfied filter rules a
    candidate out before the site checks run. Unknown outcomes count as
    inadmissible but stay distinguishable in the report.

    For update flows ``replacing`` names the deployed unit the winner will
    replace: it is excluded from the safety baseline and its footprint is
    credited back before the standing-constraint check.
    """
    for unit in candidates:
        if unit.product_id != product_id:
            raise ValueError(f"candidate {unit.id!r} does not belong to product {product_id!r}")

    installed = list(state.deployed_units) if state is not None else []
    freed = 0
    if replacing is not None:
        installed = [du for du in installed if du.unit_id != replacing.unit_id]
        freed = replacing.footprint.count
    reports: list[CandidateReport] = []
    admissible_units = []

    for unit in candidates:
        reasons: list[str] = []

        filter_outcome = None
        if extra_filters:
            outcomes = [
                expr_mod.evaluate(f, unit.descriptive_properties) for f in extra_filters
            ]
            filter_outcome = functools.reduce(expr_mod.combine_and, outcomes)
            if not filter_outcome.is_satisfied:
                reasons.append("FILTERED")

        parsed = unit.parsed_constraints()
        if parsed:
            constraint_outcome = functools.reduce(
                expr_mod.combine_and, (expr_mod.evaluate(e, site.properties) for e in parsed)
            )
        else:
            constraint_outcome = EvalOutcome.satisfied()
        if constraint_outcome.status is Status.VIOLATED:
            reasons.append("CONSTRAINT_VIOLATED")
        elif constraint_outcome.status is Status.UNKNOWN:
            reasons.append("CONSTRAINT_UNKNOWN")

        standing = tuple(check_standing(site, unit.footprint.count - freed))
        for s in standing:
            if s.outcome.status is Status.VIOLATED:
                reasons.append("STANDING_VIOLATED")
                break
            if s.outcome.status is Status.UNKNOWN:
                reasons.append("STANDING_UNKNOWN")
                break

        conflicts = tuple(check_safety(state, installed, unit, policy))
        if blocking_conflicts(conflicts):
            reasons.append("SAFETY_CONFLICT")

        admissible = not reasons
        reports.append(
            CandidateReport(
                unit_id=unit.id,
                constraint_outcome=constraint_outcome,
                standing=standing,
                conflicts=conflicts,
                filter_outcome=filter_outcome,
                admissible=admissible,
                reasons=tuple(reasons),
            )
        )
        if admissible:
            admissible_units.append(unit)

    admissible_units.sort(key=functools.cmp_to_key(_candidate_order))
    if admissible_units:
        chosen = admissible_units[0]
        rationale = (
            f"chose {chosen.id}: version {chosen.product_version}, "
            f"footprint {chosen.footprint} among {len(admissible_units)} admissible"
        )
        chosen_id = chosen.id
    else:
        chosen_id = None
        rationale = "no admissible candidate"

    ordered = tuple(sorted(reports, key=lambda r: r.unit_id))
    return SelectionReport(product_id, ordered, chosen_id, rationale)
