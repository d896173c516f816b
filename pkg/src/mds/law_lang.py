"""Textual law language: parser, canonical printer, and law hashing.

Grammar (``#`` starts a comment; input must be UTF-8 without a BOM)::

    law NAME [extends NAME] {
      profile [LABEL, ...];
      (rule | allow-override | override)*
    }

    rule           ::= (categorical|default) rule ID on EVENTS [if PRED] BODY
    allow-override ::= allow-override ID (may-permit|may-prohibit|may-replace) ;
    override       ::= override RULE_ID (permit|block|replace) on EVENTS [if PRED] BODY
    EVENTS         ::= (adopted|sent|arrived) (, (adopted|sent|arrived))*
    BODY           ::= { (action ;)* }

    action ::= permit | block
             | set state.KEY = (STRING | INT | module-name | module-profile)
             | increment state.KEY by INT
             | notify-registry
             | require-cert CONSTR (, CONSTR)*
             | append-profile LABEL (, LABEL)*
    CONSTR ::= ATTR == STRING | ATTR contains (STRING | module-name)

    PRED   ::= disjunction of conjunctions of (possibly negated) atoms;
               not binds tightest, then and, then or; parentheses group
    atom   ::= op == STRING | op matches STRING
             | flow == (inflow|outflow|import|export|inner)
             | peer.module == NAME | peer.profile has STRING | peer.outside
             | state.KEY == (STRING|INT) | state.KEY < INT
             | cert.ATTR == STRING

A rule body carries at most one terminal action (permit/block), and only in
last position; a body without a terminal applies its actions and lets the
scan continue.  Identifiers must not start with a digit or ``-``.

The canonical form emitted by :func:`print_law` is what gets hashed: profile
line first, then rules in textual order, then allow-override lines, then
overrides, two-space indent, comments stripped.  ``print_law`` is idempotent
across a parse round trip.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from typing import Optional, Union

from .model import (
    Action,
    And,
    AppendProfile,
    Block,
    CertConstraint,
    CertEquals,
    EventKind,
    FlowIs,
    FlowKind,
    IncrementState,
    Law,
    MetaDirection,
    MetaPermission,
    Not,
    NotifyRegistry,
    OpEquals,
    OpGlob,
    Or,
    Override,
    OverrideKind,
    PeerModuleIs,
    PeerOutside,
    PeerProfileHas,
    Permit,
    Predicate,
    RequireCertificate,
    Rule,
    RuleMode,
    SetState,
    SpecialValue,
    StateEquals,
    StateLess,
    TruePred,
    valid_name,
)

HASH_ALGORITHM = "sha256"

_EVENT_ORDER = (EventKind.ADOPTED, EventKind.SENT, EventKind.ARRIVED)
_FLOW_TOKENS = {k.value: k for k in FlowKind}
_EVENT_TOKENS = {e.value: e for e in EventKind}
_DIRECTION_TOKENS = {d.value: d for d in MetaDirection}
_OVERRIDE_TOKENS = {k.value: k for k in OverrideKind}


@dataclass(frozen=True)
class LawSource:
    text: str
    origin: str = "<law>"


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: str  # "error" | "warning"
    line: int      # 1-based
    col: int       # 1-based
    message: str

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.severity}: {self.message}"


class LawParseError(ValueError):
    def __init__(self, origin: str, diagnostics: list[ParseDiagnostic]):
        self.origin = origin
        self.diagnostics = diagnostics
        lines = "; ".join(str(d) for d in diagnostics[:4])
        super().__init__(f"{origin}: {lines}")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_PUNCT_DOUBLE = ("==",)
_PUNCT_SINGLE = "{}[](),;.=<"
_NAME_CHARS = set("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-")


@dataclass(frozen=True)
class _Token:
    kind: str  # NAME NUMBER STRING PUNCT EOF
    value: str
    line: int
    col: int


class _Abort(Exception):
    pass


def _tokenize(text: str, diags: list[ParseDiagnostic]) -> list[_Token]:
    if text.startswith("\ufeff"):
        diags.append(ParseDiagnostic("error", 1, 1, "byte order mark not allowed"))
        raise _Abort
    toks: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == '"':
            start_line, start_col = line, col
            i += 1
            col += 1
            buf: list[str] = []
            closed = False
            while i < n:
                c = text[i]
                if c == '"':
                    i += 1
                    col += 1
                    closed = True
                    break
                if c == "\n":
                    break
                if c == "\\":
                    if i + 1 >= n:
                        break
                    esc = text[i + 1]
                    mapped = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}.get(esc)
                    if mapped is None:
                        diags.append(ParseDiagnostic(
                            "error", line, col, f"unknown escape \\{esc}"))
                        raise _Abort
                    buf.append(mapped)
                    i += 2
                    col += 2
                    continue
                if ord(c) < 0x20:
                    diags.append(ParseDiagnostic(
                        "error", line, col, "control character in string"))
                    raise _Abort
                buf.append(c)
                i += 1
                col += 1
            if not closed:
                diags.append(ParseDiagnostic(
                    "error", start_line, start_col, "unterminated string"))
                raise _Abort
            toks.append(_Token("STRING", "".join(buf), start_line, start_col))
            continue
        if text.startswith("==", i):
            toks.append(_Token("PUNCT", "==", line, col))
            i += 2
            col += 2
            continue
        if ch in _NAME_CHARS:
            start_line, start_col = line, col
            j = i
            while j < n and text[j] in _NAME_CHARS:
                j += 1
            word = text[i:j]
            col += j - i
            i = j
            if re.fullmatch(r"-?\d+", word):
                toks.append(_Token("NUMBER", word, start_line, start_col))
            elif valid_name(word):
                toks.append(_Token("NAME", word, start_line, start_col))
            else:
                diags.append(ParseDiagnostic(
                    "error", start_line, start_col,
                    f"bad identifier {word!r} (must not start with a digit or '-')"))
                raise _Abort
            continue
        if ch in _PUNCT_SINGLE:
            toks.append(_Token("PUNCT", ch, line, col))
            i += 1
            col += 1
            continue
        diags.append(ParseDiagnostic(
            "error", line, col, f"unexpected character {ch!r}"))
        raise _Abort
    toks.append(_Token("EOF", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, toks: list[_Token], diags: list[ParseDiagnostic]):
        self.toks = toks
        self.pos = 0
        self.diags = diags

    def peek(self, ahead: int = 0) -> _Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def advance(self) -> _Token:
        tok = self.toks[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def fail(self, tok: _Token, message: str):
        self.diags.append(ParseDiagnostic("error", tok.line, tok.col, message))
        raise _Abort

    def expect_punct(self, value: str) -> _Token:
        tok = self.peek()
        if tok.kind != "PUNCT" or tok.value != value:
            self.fail(tok, f"expected {value!r}, found {tok.value or tok.kind!r}")
        return self.advance()

    def expect_name(self, what: str) -> _Token:
        tok = self.peek()
        if tok.kind != "NAME":
            self.fail(tok, f"expected {what}, found {tok.value or tok.kind!r}")
        return self.advance()

    def expect_keyword(self, word: str):
        tok = self.expect_name(f"keyword {word!r}")
        if tok.value != word:
            self.fail(tok, f"expected keyword {word!r}, found {tok.value!r}")
        return tok

    def at_name(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "NAME" and tok.value == word

    # -- top level ----------------------------------------------------------

    def parse(self) -> Law:
        self.expect_keyword("law")
        name_tok = self.expect_name("law name")
        parent: Optional[str] = None
        if self.at_name("extends"):
            self.advance()
            parent = self.expect_name("parent law name").value
        self.expect_punct("{")
        profile: tuple[str, ...] = ()
        profile_seen = False
        rules: list[Rule] = []
        meta: list[MetaPermission] = []
        overrides: list[Override] = []
        while True:
            tok = self.peek()
            if tok.kind == "PUNCT" and tok.value == "}":
                self.advance()
                break
            if tok.kind == "EOF":
                self.fail(tok, "unexpected end of input inside law body")
            if self.at_name("profile"):
                if profile_seen:
                    self.fail(tok, "duplicate profile declaration")
                profile = self.parse_profile()
                profile_seen = True
            elif self.at_name("categorical") or self.at_name("default"):
                rules.append(self.parse_rule())
            elif self.at_name("allow-override"):
                meta.append(self.parse_meta())
            elif self.at_name("override"):
                overrides.append(self.parse_override())
            else:
                self.fail(tok, f"expected rule, allow-override, override, or profile; "
                               f"found {tok.value or tok.kind!r}")
        tail = self.peek()
        if tail.kind != "EOF":
            self.fail(tail, "trailing input after law")
        law = Law(
            name=name_tok.value,
            parent=parent,
            profile=profile,
            rules=tuple(rules),
            meta=tuple(meta),
            overrides=tuple(overrides),
        )
        self.validate(law, name_tok)
        return law

    def parse_profile(self) -> tuple[str, ...]:
        self.expect_keyword("profile")
        self.expect_punct("[")
        labels: list[str] = []
        if not (self.peek().kind == "PUNCT" and self.peek().value == "]"):
            while True:
                tok = self.expect_name("profile label")
                if tok.value in labels:
                    self.fail(tok, f"duplicate profile label {tok.value!r}")
                labels.append(tok.value)
                if self.peek().kind == "PUNCT" and self.peek().value == ",":
                    self.advance()
                    continue
                break
        self.expect_punct("]")
        self.expect_punct(";")
        return tuple(labels)

    def parse_events(self) -> tuple[EventKind, ...]:
        self.expect_keyword("on")
        seen: list[EventKind] = []
        while True:
            tok = self.expect_name("event kind (adopted, sent, arrived)")
            kind = _EVENT_TOKENS.get(tok.value)
            if kind is None:
                self.fail(tok, f"unknown event kind {tok.value!r}")
            if kind in seen:
                self.fail(tok, f"duplicate event kind {tok.value!r}")
            seen.append(kind)
            if self.peek().kind == "PUNCT" and self.peek().value == ",":
                self.advance()
                continue
            break
        return tuple(e for e in _EVENT_ORDER if e in seen)

    def parse_rule(self) -> Rule:
        mode_tok = self.advance()
        mode = RuleMode.CATEGORICAL if mode_tok.value == "categorical" else RuleMode.DEFAULT
        self.expect_keyword("rule")
        id_tok = self.expect_name("rule id")
        events = self.parse_events()
        predicate: Predicate = TruePred()
        if self.at_name("if"):
            self.advance()
            predicate = self.parse_predicate()
        actions = self.parse_body(id_tok)
        return Rule(id=id_tok.value, mode=mode, events=events,
                    predicate=predicate, actions=actions)

    def parse_meta(self) -> MetaPermission:
        self.expect_keyword("allow-override")
        id_tok = self.expect_name("rule id")
        dir_tok = self.expect_name("override direction")
        direction = _DIRECTION_TOKENS.get(dir_tok.value)
        if direction is None:
            self.fail(dir_tok, f"unknown override direction {dir_tok.value!r}")
        self.expect_punct(";")
        return MetaPermission(rule_id=id_tok.value, direction=direction)

    def parse_override(self) -> Override:
        self.expect_keyword("override")
        target_tok = self.expect_name("target rule id")
        kind_tok = self.expect_name("override kind (permit, block, replace)")
        kind = _OVERRIDE_TOKENS.get(kind_tok.value)
        if kind is None:
            self.fail(kind_tok, f"unknown override kind {kind_tok.value!r}")
        events = self.parse_events()
        predicate: Predicate = TruePred()
        if self.at_name("if"):
            self.advance()
            predicate = self.parse_predicate()
        actions = self.parse_body(target_tok)
        term = None
        if actions and isinstance(actions[-1], Permit):
            term = "permit"
        elif actions and isinstance(actions[-1], Block):
            term = "block"
        if kind is OverrideKind.PERMIT:
            if term is None:
                actions = actions + (Permit(),)
            elif term != "permit":
                self.fail(kind_tok, "permit override body ends in block")
        elif kind is OverrideKind.BLOCK:
            if term is None:
                actions = actions + (Block(),)
            elif term != "block":
                self.fail(kind_tok, "block override body ends in permit")
        else:
            if term is None:
                self.fail(kind_tok, "replace override body needs a terminal action")
        return Override(target=target_tok.value, kind=kind, events=events,
                        predicate=predicate, actions=actions)

    # -- bodies / actions ---------------------------------------------------

    def parse_body(self, anchor: _Token) -> tuple[Action, ...]:
        self.expect_punct("{")
        actions: list[Action] = []
        while True:
            tok = self.peek()
            if tok.kind == "PUNCT" and tok.value == "}":
                self.advance()
                break
            if tok.kind == "EOF":
                self.fail(tok, "unexpected end of input inside rule body")
            if actions and isinstance(actions[-1], (Permit, Block)):
                self.fail(tok, "terminal action must be last in the body")
            actions.append(self.parse_action())
            self.expect_punct(";")
        return tuple(actions)

    def parse_action(self) -> Action:
        tok = self.peek()
        if tok.kind != "NAME":
            self.fail(tok, f"expected action, found {tok.value or tok.kind!r}")
        word = tok.value
        if word == "permit":
            self.advance()
            return Permit()
        if word == "block":
            self.advance()
            return Block()
        if word == "set":
            self.advance()
            key = self.parse_state_key()
            self.expect_punct("=")
            return SetState(key=key, value=self.parse_value())
        if word == "increment":
            self.advance()
            key = self.parse_state_key()
            self.expect_keyword("by")
            num = self.peek()
            if num.kind != "NUMBER":
                self.fail(num, "expected integer delta")
            self.advance()
            return IncrementState(key=key, delta=int(num.value))
        if word == "notify-registry":
            self.advance()
            return NotifyRegistry()
        if word == "require-cert":
            self.advance()
            constraints: list[CertConstraint] = []
            while True:
                constraints.append(self.parse_cert_constraint())
                if self.peek().kind == "PUNCT" and self.peek().value == ",":
                    self.advance()
                    continue
                break
            return RequireCertificate(constraints=tuple(constraints))
        if word == "append-profile":
            self.advance()
            labels: list[str] = []
            while True:
                labels.append(self.expect_name("profile label").value)
                if self.peek().kind == "PUNCT" and self.peek().value == ",":
                    self.advance()
                    continue
                break
            return AppendProfile(labels=tuple(labels))
        self.fail(tok, f"unknown action {word!r}")

    def parse_state_key(self) -> str:
        self.expect_keyword("state")
        self.expect_punct(".")
        return self.expect_name("state key").value

    def parse_value(self) -> Union[str, int, SpecialValue]:
        tok = self.peek()
        if tok.kind == "STRING":
            self.advance()
            return tok.value
        if tok.kind == "NUMBER":
            self.advance()
            return int(tok.value)
        if tok.kind == "NAME" and tok.value == SpecialValue.MODULE_NAME.value:
            self.advance()
            return SpecialValue.MODULE_NAME
        if tok.kind == "NAME" and tok.value == SpecialValue.MODULE_PROFILE.value:
            self.advance()
            return SpecialValue.MODULE_PROFILE
        self.fail(tok, "expected string, integer, module-name, or module-profile")

    def parse_cert_constraint(self) -> CertConstraint:
        attr = self.expect_name("certificate attribute").value
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.value == "==":
            self.advance()
            val = self.peek()
            if val.kind != "STRING":
                self.fail(val, "expected string after '=='")
            self.advance()
            return CertConstraint(attr=attr, op="equals", value=val.value)
        if tok.kind == "NAME" and tok.value == "contains":
            self.advance()
            val = self.peek()
            if val.kind == "STRING":
                self.advance()
                return CertConstraint(attr=attr, op="contains", value=val.value)
            if val.kind == "NAME" and val.value == SpecialValue.MODULE_NAME.value:
                self.advance()
                return CertConstraint(attr=attr, op="contains",
                                      value=SpecialValue.MODULE_NAME)
            self.fail(val, "expected string or module-name after 'contains'")
        self.fail(tok, "expected '==' or 'contains' in certificate constraint")

    # -- predicates ---------------------------------------------------------

    def parse_predicate(self) -> Predicate:
        return self.parse_or()

    def parse_or(self) -> Predicate:
        parts: list[Predicate] = []
        first = self.parse_and()
        parts.extend(first.parts if isinstance(first, Or) else (first,))
        while self.at_name("or"):
            self.advance()
            nxt = self.parse_and()
            parts.extend(nxt.parts if isinstance(nxt, Or) else (nxt,))
        return parts[0] if len(parts) == 1 else Or(parts=tuple(parts))

    def parse_and(self) -> Predicate:
        parts: list[Predicate] = []
        first = self.parse_not()
        parts.extend(first.parts if isinstance(first, And) else (first,))
        while self.at_name("and"):
            self.advance()
            nxt = self.parse_not()
            parts.extend(nxt.parts if isinstance(nxt, And) else (nxt,))
        return parts[0] if len(parts) == 1 else And(parts=tuple(parts))

    def parse_not(self) -> Predicate:
        if self.at_name("not"):
            self.advance()
            return Not(inner=self.parse_not())
        return self.parse_primary()

    def parse_primary(self) -> Predicate:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.value == "(":
            self.advance()
            inner = self.parse_or()
            self.expect_punct(")")
            return inner
        if tok.kind != "NAME":
            self.fail(tok, f"expected predicate atom, found {tok.value or tok.kind!r}")
        word = tok.value
        if word == "op":
            self.advance()
            nxt = self.peek()
            if nxt.kind == "PUNCT" and nxt.value == "==":
                self.advance()
                val = self.peek()
                if val.kind != "STRING":
                    self.fail(val, "expected string operation name")
                self.advance()
                return OpEquals(value=val.value)
            if nxt.kind == "NAME" and nxt.value == "matches":
                self.advance()
                val = self.peek()
                if val.kind != "STRING":
                    self.fail(val, "expected string glob pattern")
                self.advance()
                return OpGlob(pattern=val.value)
            self.fail(nxt, "expected '==' or 'matches' after op")
        if word == "flow":
            self.advance()
            self.expect_punct("==")
            val = self.expect_name("flow kind")
            kind = _FLOW_TOKENS.get(val.value)
            if kind is None:
                self.fail(val, f"unknown flow kind {val.value!r}")
            return FlowIs(kind=kind)
        if word == "peer":
            self.advance()
            self.expect_punct(".")
            what = self.expect_name("peer attribute")
            if what.value == "module":
                self.expect_punct("==")
                return PeerModuleIs(name=self.expect_name("module name").value)
            if what.value == "profile":
                self.expect_keyword("has")
                val = self.peek()
                if val.kind != "STRING":
                    self.fail(val, "expected string label")
                self.advance()
                return PeerProfileHas(label=val.value)
            if what.value == "outside":
                return PeerOutside()
            self.fail(what, f"unknown peer attribute {what.value!r}")
        if word == "state":
            self.advance()
            self.expect_punct(".")
            key = self.expect_name("state key").value
            nxt = self.peek()
            if nxt.kind == "PUNCT" and nxt.value == "==":
                self.advance()
                val = self.peek()
                if val.kind == "STRING":
                    self.advance()
                    return StateEquals(key=key, value=val.value)
                if val.kind == "NUMBER":
                    self.advance()
                    return StateEquals(key=key, value=int(val.value))
                self.fail(val, "expected string or integer")
            if nxt.kind == "PUNCT" and nxt.value == "<":
                self.advance()
                val = self.peek()
                if val.kind != "NUMBER":
                    self.fail(val, "expected integer bound")
                self.advance()
                return StateLess(key=key, bound=int(val.value))
            self.fail(nxt, "expected '==' or '<' after state key")
        if word == "cert":
            self.advance()
            self.expect_punct(".")
            attr = self.expect_name("certificate attribute").value
            self.expect_punct("==")
            val = self.peek()
            if val.kind != "STRING":
                self.fail(val, "expected string value")
            self.advance()
            return CertEquals(attr=attr, value=val.value)
        self.fail(tok, f"expected predicate atom, found {word!r}")

    # -- law-level validation ----------------------------------------------

    def validate(self, law: Law, anchor: _Token):
        seen_ids: set[str] = set()
        for rule in law.rules:
            if rule.id in seen_ids:
                self.diags.append(ParseDiagnostic(
                    "error", anchor.line, anchor.col,
                    f"duplicate rule id {rule.id!r}"))
            seen_ids.add(rule.id)
            for act in rule.actions[:-1]:
                if isinstance(act, (Permit, Block)):
                    self.diags.append(ParseDiagnostic(
                        "error", anchor.line, anchor.col,
                        f"rule {rule.id!r}: terminal action not in last position"))
        seen_meta: set[tuple[str, MetaDirection]] = set()
        for grant in law.meta:
            rule = law.rule(grant.rule_id)
            if rule is None:
                self.diags.append(ParseDiagnostic(
                    "error", anchor.line, anchor.col,
                    f"allow-override names unknown rule {grant.rule_id!r}"))
            elif rule.mode is not RuleMode.DEFAULT:
                self.diags.append(ParseDiagnostic(
                    "error", anchor.line, anchor.col,
                    f"allow-override names categorical rule {grant.rule_id!r}"))
            pair = (grant.rule_id, grant.direction)
            if pair in seen_meta:
                self.diags.append(ParseDiagnostic(
                    "error", anchor.line, anchor.col,
                    f"duplicate allow-override for {grant.rule_id!r}"))
            seen_meta.add(pair)


def parse_law(source: Union[str, LawSource]) -> Law:
    """Parse one law and return it with its canonical-text hash filled in.

    Raises :class:`LawParseError` carrying 1-based positioned diagnostics.
    """
    src = source if isinstance(source, LawSource) else LawSource(text=source)
    diags: list[ParseDiagnostic] = []
    law: Optional[Law] = None
    try:
        toks = _tokenize(src.text, diags)
        law = _Parser(toks, diags).parse()
    except _Abort:
        pass
    errors = [d for d in diags if d.severity == "error"]
    if errors or law is None:
        if not errors:
            errors = [ParseDiagnostic("error", 1, 1, "parse failed")]
        raise LawParseError(src.origin, errors)
    return finalize(law)


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------


def _quote(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"')
    out = out.replace("\n", "\\n").replace("\t", "\\t")
    return f'"{out}"'


def _pred_prec(p: Predicate) -> int:
    if isinstance(p, Or):
        return 1
    if isinstance(p, And):
        return 2
    if isinstance(p, Not):
        return 3
    return 4


def print_predicate(p: Predicate, parent_prec: int = 0) -> str:
    if isinstance(p, Or):
        text = " or ".join(print_predicate(x, 1) for x in p.parts)
    elif isinstance(p, And):
        text = " and ".join(print_predicate(x, 2) for x in p.parts)
    elif isinstance(p, Not):
        text = "not " + print_predicate(p.inner, 3)
    elif isinstance(p, OpEquals):
        text = f"op == {_quote(p.value)}"
    elif isinstance(p, OpGlob):
        text = f"op matches {_quote(p.pattern)}"
    elif isinstance(p, FlowIs):
        text = f"flow == {p.kind.value}"
    elif isinstance(p, PeerModuleIs):
        text = f"peer.module == {p.name}"
    elif isinstance(p, PeerProfileHas):
        text = f"peer.profile has {_quote(p.label)}"
    elif isinstance(p, PeerOutside):
        text = "peer.outside"
    elif isinstance(p, StateEquals):
        rhs = _quote(p.value) if isinstance(p.value, str) else str(p.value)
        text = f"state.{p.key} == {rhs}"
    elif isinstance(p, StateLess):
        text = f"state.{p.key} < {p.bound}"
    elif isinstance(p, CertEquals):
        text = f"cert.{p.attr} == {_quote(p.value)}"
    elif isinstance(p, TruePred):
        text = ""
    else:  # pragma: no cover - exhaustive over the model
        raise TypeError(f"unknown predicate node {p!r}")
    if _pred_prec(p) < parent_prec:
        return f"({text})"
    return text


def _print_value(v: Union[str, int, SpecialValue]) -> str:
    if isinstance(v, SpecialValue):
        return v.value
    if isinstance(v, str):
        return _quote(v)
    return str(v)


def _print_action(a: Action) -> str:
    if isinstance(a, Permit):
        return "permit;"
    if isinstance(a, Block):
        return "block;"
    if isinstance(a, SetState):
        return f"set state.{a.key} = {_print_value(a.value)};"
    if isinstance(a, IncrementState):
        return f"increment state.{a.key} by {a.delta};"
    if isinstance(a, NotifyRegistry):
        return "notify-registry;"
    if isinstance(a, RequireCertificate):
        parts = []
        for c in a.constraints:
            if c.op == "equals":
                parts.append(f"{c.attr} == {_print_value(c.value)}")
            else:
                rhs = c.value.value if isinstance(c.value, SpecialValue) else _quote(c.value)
                parts.append(f"{c.attr} contains {rhs}")
        return "require-cert " + ", ".join(parts) + ";"
    if isinstance(a, AppendProfile):
        return "append-profile " + ", ".join(a.labels) + ";"
    raise TypeError(f"unknown action {a!r}")  # pragma: no cover


def _print_events(events: tuple[EventKind, ...]) -> str:
    return ", ".join(e.value for e in events)


def _print_block(head: str, predicate: Predicate, actions: tuple[Action, ...],
                 out: list[str]):
    guard = print_predicate(predicate)
    if guard:
        head += f" if {guard}"
    out.append(f"  {head} {{")
    for act in actions:
        out.append(f"    {_print_action(act)}")
    out.append("  }")


def print_law(law: Law) -> str:
    """Canonical text: the serialization that gets hashed and served."""
    head = f"law {law.name}"
    if law.parent is not None:
        head += f" extends {law.parent}"
    out = [head + " {"]
    out.append("  profile [" + ", ".join(law.profile) + "];")
    for rule in law.rules:
        _print_block(
            f"{rule.mode.value} rule {rule.id} on {_print_events(rule.events)}",
            rule.predicate, rule.actions, out)
    for grant in law.meta:
        out.append(f"  allow-override {grant.rule_id} {grant.direction.value};")
    for ov in law.overrides:
        _print_block(
            f"override {ov.target} {ov.kind.value} on {_print_events(ov.events)}",
            ov.predicate, ov.actions, out)
    out.append("}")
    return "\n".join(out) + "\n"


canonical_serialize = print_law


def law_hash(law: Law) -> str:
    """Content digest (sha256 hex) of the canonical serialized law text."""
    return hashlib.sha256(print_law(law).encode("utf-8")).hexdigest()


def finalize(law: Law) -> Law:
    """Return the law with its hash field set from the canonical text."""
    return replace(law, hash=law_hash(law))
