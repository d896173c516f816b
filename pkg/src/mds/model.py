"""Data model for interaction laws and the conformance hierarchy.

A distributed module is the set of components whose messaging is governed by
a shared interaction law.  Laws form a tree: every law except the root names
a parent and may deviate from it only where the parent's meta permissions
allow.  This module holds the in-memory representation of laws (rules,
predicates, actions, meta permissions, overrides) and of a validated
hierarchy.  Text parsing and printing live in ``law_lang``; tree validation
lives in ``conformance``.

Values here are immutable once constructed; evaluation never mutates a law.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union


# A law name doubles as a module name.  Identifiers (law names, rule ids,
# profile labels, outside addresses) share one token charset.
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")


def valid_name(token: str) -> bool:
    """True if token is usable as a law name, rule id, label, or address."""
    return bool(_NAME_RE.match(token))


class FlowKind(Enum):
    """How a message relates to the module whose law is doing the judging."""

    INNER = "inner"      # both endpoints inside the module
    INFLOW = "inflow"    # receipt from another module of the same system
    OUTFLOW = "outflow"  # send to another module of the same system
    IMPORT = "import"    # receipt from outside the system
    EXPORT = "export"    # send to outside the system

    def __str__(self) -> str:
        return self.value


class EventKind(Enum):
    ADOPTED = "adopted"
    SENT = "sent"
    ARRIVED = "arrived"

    def __str__(self) -> str:
        return self.value


class RuleMode(Enum):
    # Categorical rules bind all subordinate laws unconditionally; default
    # rules may be deviated from where a meta permission says so.
    CATEGORICAL = "categorical"
    DEFAULT = "default"

    def __str__(self) -> str:
        return self.value


class MetaDirection(Enum):
    MAY_PERMIT = "may-permit"      # carve permits out of a blocking default
    MAY_PROHIBIT = "may-prohibit"  # carve blocks out of a permitting default
    MAY_REPLACE = "may-replace"    # arbitrary replacement

    def __str__(self) -> str:
        return self.value


class OverrideKind(Enum):
    PERMIT = "permit"
    BLOCK = "block"
    REPLACE = "replace"

    def __str__(self) -> str:
        return self.value


class SpecialValue(Enum):
    """Action values resolved against the adopting agent, not literals."""

    MODULE_NAME = "module-name"        # name of the leaf law being adopted
    MODULE_PROFILE = "module-profile"  # comma-joined declared profile labels

    def __str__(self) -> str:
        return self.value


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------
# Atoms are total: a missing state key, absent peer profile, or absent
# certificate attribute makes the atom false, never an error.


@dataclass(frozen=True)
class TruePred:
    """Empty guard; matches every event."""


@dataclass(frozen=True)
class OpEquals:
    value: str


@dataclass(frozen=True)
class OpGlob:
    pattern: str


@dataclass(frozen=True)
class FlowIs:
    kind: FlowKind


@dataclass(frozen=True)
class PeerModuleIs:
    # Matches the peer's module name, or its address token when the peer is
    # outside the system.
    name: str


@dataclass(frozen=True)
class PeerProfileHas:
    label: str


@dataclass(frozen=True)
class PeerOutside:
    pass


@dataclass(frozen=True)
class StateEquals:
    key: str
    value: Union[str, int]  # comparison is type-sensitive


@dataclass(frozen=True)
class StateLess:
    key: str
    bound: int


@dataclass(frozen=True)
class CertEquals:
    # Reads the local agent's verified certificate attributes.
    attr: str
    value: str


@dataclass(frozen=True)
class Not:
    inner: "Predicate"


@dataclass(frozen=True)
class And:
    # N-ary and flattened: parts never contains another And.
    parts: tuple["Predicate", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Predicate", ...]


Predicate = Union[
    TruePred, OpEquals, OpGlob, FlowIs, PeerModuleIs, PeerProfileHas,
    PeerOutside, StateEquals, StateLess, CertEquals, Not, And, Or,
]


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Permit:
    pass


@dataclass(frozen=True)
class Block:
    pass


@dataclass(frozen=True)
class SetState:
    key: str
    value: Union[str, int, SpecialValue]


@dataclass(frozen=True)
class IncrementState:
    key: str
    delta: int


@dataclass(frozen=True)
class NotifyRegistry:
    pass


@dataclass(frozen=True)
class CertConstraint:
    attr: str
    op: str  # "equals" | "contains"
    value: Union[str, SpecialValue]


@dataclass(frozen=True)
class RequireCertificate:
    constraints: tuple[CertConstraint, ...]


@dataclass(frozen=True)
class AppendProfile:
    labels: tuple[str, ...]


Action = Union[
    Permit, Block, SetState, IncrementState, NotifyRegistry,
    RequireCertificate, AppendProfile,
]

TERMINALS = (Permit, Block)


def terminal_of(actions: tuple[Action, ...]) -> Optional[str]:
    """'permit', 'block', or None when the body carries no terminal."""
    if actions and isinstance(actions[-1], Permit):
        return "permit"
    if actions and isinstance(actions[-1], Block):
        return "block"
    return None


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    id: str
    mode: RuleMode
    events: tuple[EventKind, ...]  # canonical order: adopted, sent, arrived
    predicate: Predicate
    actions: tuple[Action, ...]    # terminal, if any, is last

    @property
    def terminal(self) -> Optional[str]:
        return terminal_of(self.actions)


@dataclass(frozen=True)
class MetaPermission:
    rule_id: str
    direction: MetaDirection


@dataclass(frozen=True)
class Override:
    """A child law's deviation from an ancestor's default rule.

    ``owner`` is the name of the law that declares the target rule; it is
    resolved during conformance validation and is None on freshly parsed laws.
    """

    target: str
    kind: OverrideKind
    events: tuple[EventKind, ...]
    predicate: Predicate
    actions: tuple[Action, ...]
    owner: Optional[str] = None

    @property
    def terminal(self) -> Optional[str]:
        return terminal_of(self.actions)


@dataclass(frozen=True)
class Law:
    name: str
    parent: Optional[str]          # None only for the root
    profile: tuple[str, ...]
    rules: tuple[Rule, ...]        # textual order is evaluation order
    meta: tuple[MetaPermission, ...]
    overrides: tuple[Override, ...]
    hash: str = ""                 # digest of the canonical serialized text

    def rule(self, rule_id: str) -> Optional[Rule]:
        for r in self.rules:
            if r.id == rule_id:
                return r
        return None

    def grants(self, rule_id: str) -> tuple[MetaDirection, ...]:
        return tuple(m.direction for m in self.meta if m.rule_id == rule_id)


class UnknownLawError(LookupError):
    pass


@dataclass
class LawHierarchy:
    """A validated law tree.

    ``lineage[name]`` is the chain of law hashes from the root down to
    ``name`` inclusive, so ``lineage[name][0]`` is always the root's hash.
    ``cache`` holds per-leaf compiled artifacts; it never affects equality.
    """

    root: str
    laws: dict[str, Law]
    lineage: dict[str, tuple[str, ...]]
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    def law(self, name: str) -> Law:
        try:
            return self.laws[name]
        except KeyError:
            raise UnknownLawError(f"no law named {name!r} in hierarchy") from None

    def path(self, leaf: str) -> tuple[str, ...]:
        """Law names from the root down to leaf, inclusive."""
        chain: list[str] = []
        cursor: Optional[str] = leaf
        while cursor is not None:
            law = self.law(cursor)
            chain.append(law.name)
            cursor = law.parent
        chain.reverse()
        return tuple(chain)

    @property
    def root_hash(self) -> str:
        return self.lineage[self.root][0]


def effective_rules(h: LawHierarchy, leaf: str) -> list[tuple[str, Rule]]:
    """All rules a leaf-law agent evaluates under, root first.

    The order is the evaluation order: laws root-to-leaf, rules in textual
    order within each law.  Overrides are not rules and are not listed; they
    substitute into their target rule's body during evaluation.
    """
    out: list[tuple[str, Rule]] = []
    for name in h.path(leaf):
        law = h.law(name)
        for rule in law.rules:
            out.append((name, rule))
    return out
