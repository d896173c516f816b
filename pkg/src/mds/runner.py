"""Scenario execution: build the system a script describes, then drive it.

Two transports share one code path.  In ``sim`` mode messages travel a
deterministic in-process network on a logical clock, so a scenario plus a
seed fixes the audit byte for byte.  In ``tcp`` mode every adopted persona
listens on its own loopback socket and frames cross real connections.

Either way the run leaves an audit trail, one line per controller event:

    ts | agent | event | flow | decision | matched

with ``matched`` naming the deciding rule as LAW:rule, the built-in
fallback as default:FLOW, or ``-`` when nothing applied.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from . import fabric, law_lang
from .conformance import build_hierarchy
from .controller import (OUTSIDE, AdoptionRefused, Agent, BareInbound,
                         ComponentId, Decision, DemoIssuer, Ruling, adopt,
                         handle_arrive, handle_send, matched_token)
from .model import FlowKind, Law, LawHierarchy
from .scenario import (AdvanceStep, Scenario, SendStep, load_scenario)

ENV_LAW_SERVER = "MDS_LAW_SERVER"
ENV_REGISTRY = "MDS_REGISTRY"

DELIVERED = "delivered"
BLOCKED_AT_SENDER = "blocked-at-sender"
BLOCKED_AT_RECEIVER = "blocked-at-receiver"


class RunnerError(RuntimeError):
    pass


def load_law_dir(path: Union[str, Path]) -> tuple[list[Law], list[str]]:
    """Parse every *.law file under path.  Returns (laws, problems).

    Name clashes are left in the list on purpose; the conformance check
    reports them with the other hierarchy violations.
    """
    laws: list[Law] = []
    problems: list[str] = []
    for file in sorted(Path(path).glob("*.law")):
        try:
            text = file.read_text(encoding="utf-8")
        except OSError as exc:
            problems.append(f"{file.name}: unreadable ({exc})")
            continue
        try:
            law = law_lang.parse_law(law_lang.LawSource(text, str(file)))
        except law_lang.LawParseError as exc:
            problems.extend(
                f"{file.name}:{d.line}:{d.col}: {d.message}"
                for d in exc.diagnostics)
            continue
        laws.append(law)
    return laws, problems


def check_law_dir(path: Union[str, Path]) -> tuple[Optional[LawHierarchy], list[str]]:
    """Parse and conformance-check a law directory."""
    laws, problems = load_law_dir(path)
    if problems:
        return None, problems
    if not laws:
        return None, ["no .law files found"]
    h, violations = build_hierarchy(laws)
    if h is None:
        return None, [f"{v.kind.value}: {v.law}: {v.detail}" for v in violations]
    return h, []


def _parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise RunnerError(f"bad address {text!r}, expected host:port")
    return host, int(port)


@dataclass
class StepReport:
    line: int
    text: str
    ok: bool


@dataclass
class RunReport:
    scenario: str
    mode: str
    seed: int
    ok: bool
    steps: list[StepReport]
    audit_lines: list[str]

    def failures(self) -> list[StepReport]:
        return [s for s in self.steps if not s.ok]


class ScenarioRunner:
    """One scenario, assembled and executed."""

    def __init__(self, scn: Scenario, base_dir: Union[str, Path],
                 mode: str = "sim", seed: int = 0):
        if mode not in ("sim", "tcp"):
            raise RunnerError(f"unknown mode {mode!r}")
        self.scn = scn
        self.mode = mode
        self.seed = seed
        self.rng = random.Random(seed)
        self.audit: list[str] = []
        self.reports: list[StepReport] = []
        self.outbound: list[tuple[str, str, bytes]] = []  # left the system
        self._audit_lock = threading.Lock()
        self._tick = 0
        self._last_arrival: Optional[tuple[str, Ruling]] = None

        law_dir = (Path(base_dir) / scn.law_dir).resolve()
        h0, problems = check_law_dir(law_dir)
        if h0 is None:
            raise RunnerError("law directory rejected:\n  " +
                              "\n  ".join(problems))
        self.h = self._distribute(h0)

        self.registry = fabric.Registry()
        self._remote_registry: Optional[tuple[str, int]] = None
        if mode == "tcp" and os.environ.get(ENV_REGISTRY):
            self._remote_registry = _parse_addr(os.environ[ENV_REGISTRY])

        self.issuer = DemoIssuer("demo-ca")
        self.decls = {d.name: d for d in scn.components}
        self.agents: dict[str, Agent] = {}

        if mode == "sim":
            self.net = fabric.SimNetwork()
        else:
            self._services: dict[str, fabric.TcpService] = {}
            self._locks: dict[str, threading.Lock] = {}
            self._handled = 0
            self._cv = threading.Condition()

        self._adopt_all()

    # -- law distribution ---------------------------------------------------

    def _distribute(self, h0: LawHierarchy) -> LawHierarchy:
        """Re-obtain every law through the law server and verify hashes."""
        fetched: dict[str, Law] = {}
        if self.mode == "tcp":
            env = os.environ.get(ENV_LAW_SERVER)
            service = None
            if env:
                addr = _parse_addr(env)
            else:
                service = fabric.serve_law_server(h0)
                addr = service.address
            try:
                for name in sorted(h0.laws):
                    resp = fabric.fetch_law(addr, name)
                    if not resp.found:
                        raise RunnerError(f"law server lacks {name!r}")
                    if resp.algo != law_lang.HASH_ALGORITHM:
                        raise RunnerError(
                            f"law server hashes with {resp.algo!r}")
                    fetched[name] = self._verify_text(name, resp.text,
                                                      resp.lineage)
            finally:
                if service is not None:
                    service.close()
        else:
            server = fabric.LawServer(h0)
            for name in server.names():
                text, lineage = server.get(name)
                fetched[name] = self._verify_text(name, text, lineage)
        h, violations = build_hierarchy(fetched.values())
        if h is None:
            raise RunnerError(
                "fetched laws failed hierarchy checks: " +
                "; ".join(f"{v.kind.value}: {v.law}" for v in violations))
        for name in h.laws:
            if h.lineage[name] != h0.lineage[name]:
                raise RunnerError(f"lineage drift for {name!r} after fetch")
        return h

    @staticmethod
    def _verify_text(name: str, text: str, lineage: tuple[str, ...]) -> Law:
        law = law_lang.parse_law(law_lang.LawSource(text, f"lawserver:{name}"))
        if law.name != name:
            raise RunnerError(f"law server sent {law.name!r} for {name!r}")
        if not lineage or law.hash != lineage[-1]:
            raise RunnerError(f"hash mismatch for fetched law {name!r}")
        return law

    # -- assembly -----------------------------------------------------------

    def _mint(self, decl):
        attrs = dict(decl.cert_attrs)
        attrs.setdefault("modules", ",".join(decl.modules))
        return self.issuer.issue(decl.name, attrs)

    def _adopt_all(self):
        for decl in self.scn.components:
            cert = self._mint(decl)
            for module in decl.modules:
                label = f"{decl.name}@{module}"
                if self.mode == "tcp":
                    self._locks[label] = threading.Lock()
                    service = fabric.TcpService(self._tcp_handler(label))
                try:
                    agent, ruling = adopt(
                        ComponentId(name=decl.name, address=label),
                        self.h, module, cert=cert)
                except AdoptionRefused as exc:
                    if self.mode == "tcp":
                        service.close()
                    matched = (matched_token(exc.outcome.matched)
                               if exc.outcome else "-")
                    self._audit_line(label, "adopted", None, "refused", matched)
                    self.reports.append(StepReport(
                        0, f"adopt {label}: refused ({exc.reason})", True))
                    continue
                self.agents[label] = agent
                if self.mode == "sim":
                    address = label
                    self.net.register(label, self._sim_handler(label))
                else:
                    self._services[label] = service
                    address = f"{service.address[0]}:{service.address[1]}"
                if ("notify-registry",) in ruling.effects:
                    self._register(decl.name, module, address)
                self._audit_line(label, "adopted", None, "adopted",
                                 matched_token(ruling.matched))
                self.reports.append(StepReport(0, f"adopt {label}: adopted",
                                               True))

    def _register(self, component: str, module: str, address: str):
        self.registry.register(component, module, address)
        if self._remote_registry is not None:
            try:
                fabric.call_remote(
                    self._remote_registry,
                    fabric.Registration(component=component, module=module,
                                        address=address),
                    expect_reply=False)
            except OSError:
                pass  # registration is best effort

    # -- delivery -----------------------------------------------------------

    def _sim_handler(self, label: str):
        def handle(msg: fabric.WireMessage):
            self._deliver(label, msg)
        return handle

    def _tcp_handler(self, label: str):
        def handle(msg: fabric.WireMessage):
            with self._locks[label]:
                self._deliver(label, msg)
            with self._cv:
                self._handled += 1
                self._cv.notify_all()
            return None
        return handle

    def _deliver(self, label: str, msg: fabric.WireMessage):
        agent = self.agents.get(label)
        if agent is None:
            return
        if isinstance(msg, fabric.Enveloped):
            inbound: Union[BareInbound, object] = msg.envelope
        elif isinstance(msg, fabric.Bare):
            inbound = BareInbound(sender_address=msg.sender_address,
                                  target=msg.target, operation=msg.operation,
                                  payload=msg.payload)
        else:
            return
        ruling, _delivery = handle_arrive(agent, self.h, inbound)
        self._audit_line(label, "arrived", ruling.flow, str(ruling.decision),
                         matched_token(ruling.matched))
        with self._audit_lock:
            self._last_arrival = (label, ruling)

    def _audit_line(self, agent_label: str, event: str,
                    flow: Optional[FlowKind], decision: str, matched: str):
        with self._audit_lock:
            ts = self.net.clock if self.mode == "sim" else self._tick
            self._tick += 1
            flow_tok = flow.value if flow is not None else "-"
            self.audit.append(
                f"{ts} | {agent_label} | {event} | {flow_tok} | {decision}"
                f" | {matched}")

    def _transmit(self, label: str, msg: fabric.WireMessage):
        if self.mode == "sim":
            self.net.send(label, msg, latency=self.rng.randint(1, 3))
        else:
            addr = self._services[label].address
            fabric.call_remote(addr, msg, expect_reply=False)

    def _drain(self, expected: int):
        if self.mode == "sim":
            self.net.run_until_idle()
            return
        with self._cv:
            target = expected
            if not self._cv.wait_for(lambda: self._handled >= target,
                                     timeout=10.0):
                raise RunnerError("tcp delivery timed out")

    # -- steps --------------------------------------------------------------

    def run(self) -> RunReport:
        try:
            for step in self.scn.steps:
                if isinstance(step, AdvanceStep):
                    self._advance(step)
                else:
                    self._send_step(step)
        finally:
            if self.mode == "tcp":
                for service in self._services.values():
                    service.close()
        ok = all(r.ok for r in self.reports)
        return RunReport(scenario=self.scn.name, mode=self.mode,
                         seed=self.seed, ok=ok, steps=self.reports,
                         audit_lines=list(self.audit))

    def _advance(self, step: AdvanceStep):
        if self.mode == "sim":
            self.net.advance(step.ticks)
            text = f"advance {step.ticks} -> t={self.net.clock}"
        else:
            time.sleep(step.ticks * 0.01)
            text = f"advance {step.ticks}"
        self.reports.append(StepReport(step.line, text, True))

    def _persona(self, name: str, explicit: Optional[str]) -> str:
        decl = self.decls[name]
        module = explicit if explicit is not None else decl.modules[0]
        label = f"{name}@{module}"
        if label not in self.agents:
            raise RunnerError(f"{label} refused adoption; cannot take part")
        return label

    def _expected_handled(self) -> int:
        if self.mode == "sim":
            return 0
        with self._cv:
            return self._handled

    def _send_step(self, step: SendStep):
        sender_part = step.sender + (f"@{step.sender_law}"
                                     if step.sender_law else "")
        target_part = step.target + (f"@{step.target_law}"
                                     if step.target_law else "")
        verb = "outsidesend" if step.from_outside else "send"
        desc = f"{verb} {sender_part} -> {target_part} op {step.operation}"
        with self._audit_lock:
            self._last_arrival = None
        before = self._expected_handled()

        if step.from_outside:
            tlabel = self._persona(step.target, step.target_law)
            bare = fabric.Bare(sender_address=step.sender, target=step.target,
                               operation=step.operation, payload=step.payload)
            self._transmit(tlabel, bare)
            self._drain(before + 1)
            outcome, matched = self._arrival_outcome()
        else:
            slabel = self._persona(step.sender, step.sender_law)
            agent = self.agents[slabel]
            if step.target in self.decls:
                tlabel = self._persona(step.target, step.target_law)
                locus: object = tlabel.split("@", 1)[1]
            else:
                tlabel = None
                locus = OUTSIDE
            ruling, env = handle_send(agent, self.h, step.operation,
                                      step.payload, step.target, locus)
            self._audit_line(slabel, "sent", ruling.flow,
                             str(ruling.decision),
                             matched_token(ruling.matched))
            if ruling.decision is Decision.BLOCK_NOTICE:
                outcome, matched = BLOCKED_AT_SENDER, matched_token(
                    ruling.matched)
            elif tlabel is None:
                self.outbound.append((step.target, step.operation,
                                      step.payload))
                outcome, matched = DELIVERED, matched_token(ruling.matched)
            else:
                assert env is not None
                self._transmit(tlabel, fabric.Enveloped(env))
                self._drain(before + 1)
                outcome, matched = self._arrival_outcome()

        text = f"{desc}: {outcome}"
        if matched != "-":
            text += f" matched={matched}"
        ok = True
        if step.expect is not None:
            ok = (step.expect.outcome == outcome
                  and (step.expect.matched is None
                       or step.expect.matched == matched))
            if ok:
                text += " [ok]"
            else:
                want = step.expect.outcome
                if step.expect.matched:
                    want += f" matched {step.expect.matched}"
                text += f" [FAIL expected {want}]"
        self.reports.append(StepReport(step.line, text, ok))

    def _arrival_outcome(self) -> tuple[str, str]:
        with self._audit_lock:
            arrival = self._last_arrival
        if arrival is None:
            raise RunnerError("message was sent but never handled")
        _label, ruling = arrival
        token = matched_token(ruling.matched)
        if ruling.decision is Decision.DELIVER:
            return DELIVERED, token
        return BLOCKED_AT_RECEIVER, token


def run_scenario(path: Union[str, Path], mode: str = "sim",
                 seed: int = 0) -> RunReport:
    path = Path(path)
    scn = load_scenario(str(path))
    runner = ScenarioRunner(scn, base_dir=path.parent, mode=mode, seed=seed)
    return runner.run()
