"""Conformance validation: building law hierarchies and checking deltas.

A child law conforms to its ancestry when every override it declares targets
an ancestor's default rule and is covered by a meta permission of compatible
direction granted by the law that owns that rule.  Categorical rules can
never be overridden.  New rules a child introduces need no permission; they
are only reachable where no ancestor rule already matches, because ancestor
rules are always scanned first.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

from . import law_lang
from .model import (
    Law,
    LawHierarchy,
    MetaDirection,
    Override,
    OverrideKind,
    Rule,
    RuleMode,
)


class ViolationKind(Enum):
    OVERRIDES_CATEGORICAL = "OverridesCategorical"
    NO_META_PERMISSION = "NoMetaPermission"
    WRONG_DIRECTION = "WrongDirection"
    UNKNOWN_PARENT = "UnknownParent"
    DUPLICATE_NAME = "DuplicateName"
    CYCLE_DETECTED = "CycleDetected"
    MULTIPLE_ROOTS = "MultipleRoots"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ConformanceViolation:
    kind: ViolationKind
    law: str      # name of the offending law
    detail: str

    def __str__(self) -> str:
        return f"{self.kind.value}: law {self.law!r}: {self.detail}"


_COMPATIBLE = {
    OverrideKind.PERMIT: (MetaDirection.MAY_PERMIT, MetaDirection.MAY_REPLACE),
    OverrideKind.BLOCK: (MetaDirection.MAY_PROHIBIT, MetaDirection.MAY_REPLACE),
    OverrideKind.REPLACE: (MetaDirection.MAY_REPLACE,),
}


def _resolve_target(chain: Sequence[Law], target: str) -> Optional[tuple[Law, Rule]]:
    """Find the nearest ancestor (chain is root-first) owning rule `target`."""
    for law in reversed(chain):
        rule = law.rule(target)
        if rule is not None:
            return law, rule
    return None


def derive_law(parent: Law, child: Law,
               ancestors: Sequence[Law] = ()) -> tuple[Optional[Law], list[ConformanceViolation]]:
    """Validate a child law against its parent (plus the parent's ancestry).

    Returns the child with every override annotated with the name of the law
    owning its target rule, or None plus the violations found.  ``ancestors``
    are the laws above the parent, root first; omit it for a two-level
    hierarchy.
    """
    chain: list[Law] = list(ancestors) + [parent]
    violations: list[ConformanceViolation] = []
    annotated: list[Override] = []
    for ov in child.overrides:
        resolved = _resolve_target(chain, ov.target)
        if resolved is None:
            violations.append(ConformanceViolation(
                ViolationKind.NO_META_PERMISSION, child.name,
                f"override targets {ov.target!r}, which no ancestor law declares"))
            continue
        owner, rule = resolved
        if rule.mode is RuleMode.CATEGORICAL:
            violations.append(ConformanceViolation(
                ViolationKind.OVERRIDES_CATEGORICAL, child.name,
                f"override targets categorical rule {ov.target!r} of law {owner.name!r}"))
            continue
        grants = owner.grants(ov.target)
        if not grants:
            violations.append(ConformanceViolation(
                ViolationKind.NO_META_PERMISSION, child.name,
                f"law {owner.name!r} grants no override permission on {ov.target!r}"))
            continue
        if not any(g in _COMPATIBLE[ov.kind] for g in grants):
            granted = ", ".join(str(g) for g in grants)
            violations.append(ConformanceViolation(
                ViolationKind.WRONG_DIRECTION, child.name,
                f"{ov.kind.value} override of {ov.target!r} not covered by "
                f"granted direction(s) {granted}"))
            continue
        annotated.append(replace(ov, owner=owner.name))
    if violations:
        return None, violations
    return replace(child, overrides=tuple(annotated)), []


def check_strengthening(parent: Law, child: Law) -> bool:
    """True iff the child only tightens the parent.

    Every override must be a Block carved out of a permitting default; a
    child with no overrides strengthens vacuously.
    """
    for ov in child.overrides:
        if ov.kind is not OverrideKind.BLOCK:
            return False
        rule = parent.rule(ov.target)
        if rule is None or rule.mode is not RuleMode.DEFAULT:
            return False
        if rule.terminal != "permit":
            return False
    return True


def build_hierarchy(laws: Iterable[Law]) -> tuple[Optional[LawHierarchy], list[ConformanceViolation]]:
    """Assemble and validate a full law tree.

    Structural checks (names, parent links, single root, acyclicity) run
    first; conformance of every law against its ancestry runs root-down.
    All violations found are returned together.
    """
    violations: list[ConformanceViolation] = []
    by_name: dict[str, Law] = {}
    for law in laws:
        if not law.hash:
            law = law_lang.finalize(law)
        if law.name in by_name:
            violations.append(ConformanceViolation(
                ViolationKind.DUPLICATE_NAME, law.name,
                "another law in the set has the same name"))
            continue
        by_name[law.name] = law

    roots = [law for law in by_name.values() if law.parent is None]
    for law in by_name.values():
        if law.parent is not None and law.parent not in by_name:
            violations.append(ConformanceViolation(
                ViolationKind.UNKNOWN_PARENT, law.name,
                f"parent law {law.parent!r} is not in the set"))

    # Cycle detection over the parent links that do resolve.
    state: dict[str, int] = {}  # 1 = on current walk, 2 = done
    cycles_reported: set[str] = set()
    for start in sorted(by_name):
        if state.get(start):
            continue
        trail: list[str] = []
        cursor: Optional[str] = start
        while cursor is not None and cursor in by_name and not state.get(cursor):
            state[cursor] = 1
            trail.append(cursor)
            cursor = by_name[cursor].parent
        if cursor is not None and state.get(cursor) == 1:
            loop = trail[trail.index(cursor):]
            key = min(loop)
            if key not in cycles_reported:
                cycles_reported.add(key)
                violations.append(ConformanceViolation(
                    ViolationKind.CYCLE_DETECTED, key,
                    "parent chain loops: " + " -> ".join(loop + [cursor])))
        for name in trail:
            state[name] = 2

    if len(roots) > 1:
        names = ", ".join(sorted(law.name for law in roots))
        violations.append(ConformanceViolation(
            ViolationKind.MULTIPLE_ROOTS, sorted(law.name for law in roots)[0],
            f"parentless laws: {names}"))
    elif not roots and not violations:
        violations.append(ConformanceViolation(
            ViolationKind.CYCLE_DETECTED, min(by_name) if by_name else "",
            "no root law (every law names a parent)"))

    if violations:
        return None, violations

    root = roots[0]
    # Walk root-down so every law is validated against an already-annotated
    # ancestry; children in name order for deterministic reports.
    children: dict[str, list[str]] = {name: [] for name in by_name}
    for law in by_name.values():
        if law.parent is not None:
            children[law.parent].append(law.name)
    validated: dict[str, Law] = {root.name: by_name[root.name]}
    order: list[str] = [root.name]
    queue = [root.name]
    while queue:
        current = queue.pop(0)
        for child_name in sorted(children[current]):
            order.append(child_name)
            queue.append(child_name)
    # Unreached laws would mean a cycle, which was already rejected.
    for name in order[1:]:
        law = by_name[name]
        chain_names = []
        cursor: Optional[str] = law.parent
        while cursor is not None:
            chain_names.append(cursor)
            cursor = by_name[cursor].parent
        chain_names.reverse()  # root first
        chain = [validated[n] for n in chain_names]
        derived, child_violations = derive_law(chain[-1], law, ancestors=chain[:-1])
        if child_violations:
            violations.extend(child_violations)
            validated[name] = law  # unannotated, so descendants still get checked
        else:
            validated[name] = derived

    if violations:
        return None, violations

    lineage: dict[str, tuple[str, ...]] = {}
    for name in order:
        law = validated[name]
        if law.parent is None:
            lineage[name] = (law.hash,)
        else:
            lineage[name] = lineage[law.parent] + (law.hash,)
    return LawHierarchy(root=root.name, laws=validated, lineage=lineage), []
