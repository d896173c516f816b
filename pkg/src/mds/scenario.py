"""Parser for the line-oriented .mds scenario format.

A scenario declares a law directory, a cast of components (each adopting one
or more modules) and outside parties, then a script of deliveries:

    scenario purchase-flow
    law ../laws
    component buyer modules P,MS cert dept=finance
    component approver modules P
    outside wild
    send buyer@P -> approver op approve payload "PO-7"
    expect delivered
    outsidesend wild -> approver op probe
    expect blocked-at-receiver
    advance 5

`expect` binds to the nearest preceding send step; `@LAW` picks which of a
component's modules speaks or listens and may be dropped when only one was
declared.  Lines starting with `#` and blank lines are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .model import valid_name

OUTCOMES = ("delivered", "blocked-at-sender", "blocked-at-receiver")


class ScenarioError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class ComponentDecl:
    name: str
    modules: tuple[str, ...]
    cert_attrs: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Expectation:
    outcome: str
    matched: Optional[str]
    line: int


@dataclass
class SendStep:
    sender: str
    sender_law: Optional[str]
    target: str
    target_law: Optional[str]
    operation: str
    payload: bytes
    from_outside: bool
    line: int
    expect: Optional[Expectation] = None


@dataclass
class AdvanceStep:
    ticks: int
    line: int


Step = Union[SendStep, AdvanceStep]


@dataclass
class Scenario:
    name: str
    law_dir: str
    components: list[ComponentDecl] = field(default_factory=list)
    outsides: list[str] = field(default_factory=list)
    steps: list[Step] = field(default_factory=list)

    def component(self, name: str) -> Optional[ComponentDecl]:
        for decl in self.components:
            if decl.name == name:
                return decl
        return None


def _split(line: str, lineno: int) -> list[str]:
    """Whitespace split that keeps one double-quoted string per token."""
    out: list[str] = []
    i, n = 0, len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        if line[i] == '"':
            i += 1
            buf = []
            while i < n and line[i] != '"':
                if line[i] == "\\" and i + 1 < n and line[i + 1] in '"\\':
                    buf.append(line[i + 1])
                    i += 2
                else:
                    buf.append(line[i])
                    i += 1
            if i >= n:
                raise ScenarioError(lineno, "unterminated string")
            i += 1
            out.append('"' + "".join(buf))  # marker so callers see a string
        else:
            j = i
            while j < n and not line[j].isspace():
                j += 1
            out.append(line[i:j])
            i = j
    return out


def _endpoint(token: str, lineno: int) -> tuple[str, Optional[str]]:
    if "@" in token:
        name, law = token.split("@", 1)
        if not valid_name(name) or not valid_name(law):
            raise ScenarioError(lineno, f"bad endpoint {token!r}")
        return name, law
    if not valid_name(token):
        raise ScenarioError(lineno, f"bad endpoint {token!r}")
    return token, None


def _parse_cert(tokens: list[str], lineno: int) -> tuple[tuple[str, str], ...]:
    attrs: list[tuple[str, str]] = []
    for pair in " ".join(tokens).split(","):
        pair = pair.strip()
        if not pair:
            continue
        if "=" not in pair:
            raise ScenarioError(lineno, f"cert attribute {pair!r} needs k=v")
        key, value = pair.split("=", 1)
        attrs.append((key.strip(), value.strip()))
    return tuple(attrs)


def parse_scenario(text: str, origin: str = "<scenario>") -> Scenario:
    name: Optional[str] = None
    law_dir: Optional[str] = None
    components: list[ComponentDecl] = []
    outsides: list[str] = []
    steps: list[Step] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        words = _split(line, lineno)
        head = words[0]

        if head == "scenario":
            if name is not None:
                raise ScenarioError(lineno, "second scenario line")
            if len(words) != 2 or not valid_name(words[1]):
                raise ScenarioError(lineno, "expected: scenario NAME")
            name = words[1]

        elif head == "law":
            if law_dir is not None:
                raise ScenarioError(lineno, "second law line")
            if len(words) != 2:
                raise ScenarioError(lineno, "expected: law PATH")
            law_dir = words[1].lstrip('"')

        elif head == "component":
            if len(words) < 4 or words[2] != "modules":
                raise ScenarioError(
                    lineno, "expected: component NAME modules M1[,M2] "
                            "[cert k=v,...]")
            cname = words[1]
            if not valid_name(cname):
                raise ScenarioError(lineno, f"bad component name {cname!r}")
            if any(d.name == cname for d in components) or cname in outsides:
                raise ScenarioError(lineno, f"duplicate name {cname!r}")
            modules = tuple(m.strip() for m in words[3].split(",") if m.strip())
            if not modules:
                raise ScenarioError(lineno, "component needs at least one module")
            for m in modules:
                if not valid_name(m):
                    raise ScenarioError(lineno, f"bad module name {m!r}")
            if len(set(modules)) != len(modules):
                raise ScenarioError(lineno, "repeated module")
            cert_attrs: tuple[tuple[str, str], ...] = ()
            if len(words) > 4:
                if words[4] != "cert":
                    raise ScenarioError(lineno, f"unexpected {words[4]!r}")
                cert_attrs = _parse_cert(words[5:], lineno)
            components.append(ComponentDecl(cname, modules, cert_attrs))

        elif head == "outside":
            if len(words) != 2 or not valid_name(words[1]):
                raise ScenarioError(lineno, "expected: outside NAME")
            oname = words[1]
            if oname in outsides or any(d.name == oname for d in components):
                raise ScenarioError(lineno, f"duplicate name {oname!r}")
            outsides.append(oname)

        elif head in ("send", "outsidesend"):
            if len(words) < 6 or words[2] != "->" or words[4] != "op":
                raise ScenarioError(
                    lineno, f"expected: {head} FROM -> TO op OP "
                            "[payload \"TEXT\"]")
            sender, sender_law = _endpoint(words[1], lineno)
            target, target_law = _endpoint(words[3], lineno)
            operation = words[5]
            payload = b""
            rest = words[6:]
            if rest:
                if rest[0] != "payload" or len(rest) != 2:
                    raise ScenarioError(lineno,
                                        "expected: payload \"TEXT\"")
                if not rest[1].startswith('"'):
                    raise ScenarioError(lineno, "payload must be quoted")
                payload = rest[1][1:].encode("utf-8")
            if head == "outsidesend" and sender_law is not None:
                raise ScenarioError(lineno, "outside senders hold no law")
            steps.append(SendStep(sender=sender, sender_law=sender_law,
                                  target=target, target_law=target_law,
                                  operation=operation, payload=payload,
                                  from_outside=(head == "outsidesend"),
                                  line=lineno))

        elif head == "advance":
            if len(words) != 2 or not words[1].isdigit():
                raise ScenarioError(lineno, "expected: advance N")
            steps.append(AdvanceStep(ticks=int(words[1]), line=lineno))

        elif head == "expect":
            if len(words) not in (2, 4):
                raise ScenarioError(
                    lineno, "expected: expect OUTCOME [matched TOKEN]")
            outcome = words[1]
            if outcome not in OUTCOMES:
                raise ScenarioError(
                    lineno, f"outcome must be one of {', '.join(OUTCOMES)}")
            matched = None
            if len(words) == 4:
                if words[2] != "matched" or not words[3]:
                    raise ScenarioError(lineno, "expected: matched TOKEN")
                matched = words[3]
            target_step = None
            for step in reversed(steps):
                if isinstance(step, SendStep):
                    target_step = step
                    break
            if target_step is None:
                raise ScenarioError(lineno, "expect with no send before it")
            if target_step.expect is not None:
                raise ScenarioError(lineno, "step already has an expectation")
            target_step.expect = Expectation(outcome=outcome, matched=matched,
                                             line=lineno)

        else:
            raise ScenarioError(lineno, f"unknown directive {head!r}")

    if name is None:
        raise ScenarioError(1, "missing scenario line")
    if law_dir is None:
        raise ScenarioError(1, "missing law line")

    scn = Scenario(name=name, law_dir=law_dir, components=components,
                   outsides=outsides, steps=steps)
    _check_endpoints(scn)
    return scn


def _check_endpoints(scn: Scenario):
    outside = set(scn.outsides)
    decls = {d.name: d for d in scn.components}
    for step in scn.steps:
        if not isinstance(step, SendStep):
            continue
        if step.from_outside:
            if step.sender not in outside:
                raise ScenarioError(step.line,
                                    f"{step.sender!r} is not an outside party")
            if step.target not in decls:
                raise ScenarioError(step.line,
                                    f"{step.target!r} is not a component")
        else:
            if step.sender not in decls:
                raise ScenarioError(step.line,
                                    f"{step.sender!r} is not a component")
            if step.target not in decls and step.target not in outside:
                raise ScenarioError(step.line, f"unknown target {step.target!r}")
        for endpoint, law in ((step.sender, step.sender_law),
                              (step.target, step.target_law)):
            decl = decls.get(endpoint)
            if decl is None:
                continue
            if law is not None and law not in decl.modules:
                raise ScenarioError(
                    step.line, f"{endpoint!r} adopted no module {law!r}")
            if law is None and len(decl.modules) > 1:
                raise ScenarioError(
                    step.line,
                    f"{endpoint!r} holds several modules; write "
                    f"{endpoint}@MODULE")


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read(), origin=path)
