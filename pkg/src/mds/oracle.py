"""Second-opinion evaluator and randomized differential checking.

The production controller compiles each hierarchy into a flat program of
closures.  This module reaches the same verdicts by a deliberately different
route: it walks the law syntax trees directly, re-derives the scan order
from parent pointers on every call, resolves overrides by its own search,
and applies actions interpretively to a copied state.  Randomly generated
systems are then driven through both and any daylight between the answers
is a bug in one of them.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Optional

from .conformance import build_hierarchy
from .controller import (OUTSIDE, BareInbound, ComponentId, DemoIssuer, adopt,
                         handle_arrive, handle_send, matched_token)
from .model import (And, AppendProfile, Block, CertEquals, EventKind, FlowIs,
                    FlowKind, IncrementState, Law, MetaDirection,
                    MetaPermission, Not, NotifyRegistry, OpEquals, OpGlob, Or,
                    Override, OverrideKind, Permit, PeerModuleIs, PeerOutside,
                    PeerProfileHas, Predicate, RequireCertificate, Rule,
                    RuleMode, SetState, SpecialValue, StateEquals, StateLess,
                    TruePred)


# ---------------------------------------------------------------------------
# Interpretive evaluation
# ---------------------------------------------------------------------------


@dataclass
class OracleEvent:
    event: EventKind
    operation: str = ""
    flow: Optional[FlowKind] = None
    peer_name: Optional[str] = None
    peer_profile: frozenset = frozenset()
    peer_outside: bool = False


def oracle_path(laws: dict[str, Law], leaf: str) -> list[Law]:
    chain = []
    cursor: Optional[str] = leaf
    while cursor is not None:
        law = laws[cursor]
        chain.append(law)
        cursor = law.parent
    chain.reverse()
    return chain


def _eval_pred(p: Predicate, ev: OracleEvent, state: dict,
               cert_attrs: dict) -> bool:
    if isinstance(p, TruePred):
        return True
    if isinstance(p, OpEquals):
        return ev.operation == p.value
    if isinstance(p, OpGlob):
        return fnmatchcase(ev.operation, p.pattern)
    if isinstance(p, FlowIs):
        return ev.flow is p.kind
    if isinstance(p, PeerModuleIs):
        return ev.peer_name == p.name
    if isinstance(p, PeerProfileHas):
        return p.label in ev.peer_profile
    if isinstance(p, PeerOutside):
        return ev.peer_outside
    if isinstance(p, StateEquals):
        have = state.get(p.key)
        if isinstance(p.value, str):
            return have == p.value
        return (isinstance(have, int) and not isinstance(have, bool)
                and have == p.value)
    if isinstance(p, StateLess):
        have = state.get(p.key)
        return (isinstance(have, int) and not isinstance(have, bool)
                and have < p.bound)
    if isinstance(p, CertEquals):
        return cert_attrs.get(p.attr) == p.value
    if isinstance(p, Not):
        return not _eval_pred(p.inner, ev, state, cert_attrs)
    if isinstance(p, And):
        return all(_eval_pred(x, ev, state, cert_attrs) for x in p.parts)
    if isinstance(p, Or):
        return any(_eval_pred(x, ev, state, cert_attrs) for x in p.parts)
    raise TypeError(f"unknown predicate {p!r}")  # pragma: no cover


def _owning_law(chain: list[Law], upto: int, target: str) -> Optional[str]:
    """Nearest law before index ``upto`` declaring a rule named target."""
    for k in range(upto - 1, -1, -1):
        for rule in chain[k].rules:
            if rule.id == target:
                return chain[k].name
    return None


def _find_override(chain: list[Law], law_index: int, rule: Rule,
                   ev: OracleEvent, state: dict,
                   cert_attrs: dict) -> Optional[tuple[str, Override]]:
    if rule.mode is not RuleMode.DEFAULT:
        return None
    for j in range(len(chain) - 1, law_index, -1):
        for ov in chain[j].overrides:
            if ov.target != rule.id:
                continue
            if _owning_law(chain, j, ov.target) != chain[law_index].name:
                continue
            if ev.event not in ov.events:
                continue
            if _eval_pred(ov.predicate, ev, state, cert_attrs):
                return chain[j].name, ov
    return None


def _run_body(actions, leaf: str, leaf_profile: tuple[str, ...], state: dict,
              cert_attrs: dict) -> Optional[str]:
    """Apply a body to state; returns 'permit', 'block', or None."""
    for act in actions:
        if isinstance(act, Permit):
            return "permit"
        if isinstance(act, Block):
            return "block"
        if isinstance(act, SetState):
            if act.value is SpecialValue.MODULE_NAME:
                state[act.key] = leaf
            elif act.value is SpecialValue.MODULE_PROFILE:
                state[act.key] = ",".join(leaf_profile)
            else:
                state[act.key] = act.value
        elif isinstance(act, IncrementState):
            have = state.get(act.key)
            if not (isinstance(have, int) and not isinstance(have, bool)):
                have = 0
            state[act.key] = have + act.delta
        elif isinstance(act, NotifyRegistry):
            pass
        elif isinstance(act, AppendProfile):
            raw = state.get("profile")
            labels = raw.split(",") if isinstance(raw, str) and raw else []
            for lbl in act.labels:
                if lbl not in labels:
                    labels.append(lbl)
            state["profile"] = ",".join(labels)
        elif isinstance(act, RequireCertificate):
            for c in act.constraints:
                want = leaf if isinstance(c.value, SpecialValue) else c.value
                have = cert_attrs.get(c.attr)
                if c.op == "equals":
                    if have != want:
                        return "block"
                else:
                    listed = [] if have is None else [
                        x.strip() for x in have.split(",")]
                    if want not in listed:
                        return "block"
    return None


def oracle_evaluate(laws: dict[str, Law], leaf: str, state: dict,
                    cert_attrs: dict,
                    ev: OracleEvent) -> tuple[str, str, dict]:
    """Independent ruling: returns (verdict, matched token, new state)."""
    chain = oracle_path(laws, leaf)
    leaf_profile = chain[-1].profile
    st = dict(state)
    for i, law in enumerate(chain):
        for rule in law.rules:
            if ev.event not in rule.events:
                continue
            if not _eval_pred(rule.predicate, ev, st, cert_attrs):
                continue
            found = _find_override(chain, i, rule, ev, st, cert_attrs)
            if found is not None:
                source, ov = found
                verdict = _run_body(ov.actions, leaf, leaf_profile, st,
                                    cert_attrs)
                token = f"{source}:{rule.id}"
            else:
                verdict = _run_body(rule.actions, leaf, leaf_profile, st,
                                    cert_attrs)
                token = f"{law.name}:{rule.id}"
            if verdict is not None:
                return verdict, token, st
    if ev.event is EventKind.ADOPTED or ev.flow in (FlowKind.OUTFLOW,
                                                    FlowKind.INNER):
        verdict = "permit"
    else:
        verdict = "block"
    flow_tok = ev.flow.value if ev.flow is not None else "adopted"
    return verdict, f"default:{flow_tok}", st


def oracle_flow(perspective: str, sender_module: Optional[str],
                target_module: Optional[str]) -> FlowKind:
    """Flow taxonomy re-derived for the oracle's half of the comparison."""
    if target_module is None:
        return FlowKind.EXPORT
    if sender_module is None:
        return FlowKind.IMPORT
    if sender_module == perspective and target_module == perspective:
        return FlowKind.INNER
    if sender_module == perspective:
        return FlowKind.OUTFLOW
    return FlowKind.INFLOW


def _profile_labels(state: dict) -> tuple[str, ...]:
    raw = state.get("profile")
    if not isinstance(raw, str) or not raw:
        return ()
    return tuple(x for x in raw.split(",") if x)


# ---------------------------------------------------------------------------
# Random system generation
# ---------------------------------------------------------------------------


_OPS = ("ping", "report", "approve", "log", "sync", "probe")
_STATE_KEYS = ("mode", "count", "budget")
_LABELS = ("audited", "probation", "trusted")
_CERT_ATTRS = (("dept", ("finance", "eng")), ("clearance", ("high", "low")))
_OUTSIDERS = ("wild", "visitor")
_PAYLOADS = (b"", b"x", b"hello", b"42")


@dataclass(frozen=True)
class GenComponent:
    name: str
    modules: tuple[str, ...]
    cert_attrs: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class GenMessage:
    sender: str                      # component or outsider name
    sender_module: Optional[str]     # None when from outside
    target: str
    target_module: Optional[str]     # None when aimed outside
    operation: str
    payload: bytes


@dataclass
class GeneratedSystem:
    seed: int
    laws: dict[str, Law]
    root: str
    components: list[GenComponent]
    script: list[GenMessage]


def _gen_predicate(rng: random.Random, modules: list[str],
                   depth: int, top: bool = True) -> Predicate:
    if depth <= 0 or rng.random() < 0.45:
        # The grammar has no literal for "always": a whole predicate may be
        # TruePred (prints as a missing if clause) but subterms may not.
        pick = rng.randrange(9) if top else rng.randrange(1, 9)
        if pick == 0:
            return TruePred()
        if pick == 1:
            return OpEquals(rng.choice(_OPS))
        if pick == 2:
            return OpGlob(rng.choice(("p*", "*o*", "re*", "*g")))
        if pick == 3:
            return FlowIs(rng.choice(list(FlowKind)))
        if pick == 4:
            return PeerModuleIs(rng.choice(modules + list(_OUTSIDERS)))
        if pick == 5:
            return PeerProfileHas(rng.choice(_LABELS))
        if pick == 6:
            return PeerOutside()
        if pick == 7:
            key = rng.choice(_STATE_KEYS)
            if rng.random() < 0.5:
                return StateEquals(key, rng.choice(("on", "off", 1, 2)))
            return StateLess(key, rng.randint(1, 3))
        attr, values = rng.choice(_CERT_ATTRS)
        return CertEquals(attr, rng.choice(values))
    shape = rng.random()
    if shape < 0.25:
        return Not(_gen_predicate(rng, modules, depth - 1, top=False))
    parts = tuple(_gen_predicate(rng, modules, depth - 1, top=False)
                  for _ in range(rng.randint(2, 3)))
    return And(parts) if shape < 0.65 else Or(parts)


def _gen_actions(rng: random.Random, terminal_pool: tuple[str, ...]) -> tuple:
    acts: list = []
    for _ in range(rng.randint(0, 2)):
        pick = rng.randrange(4)
        if pick == 0:
            acts.append(SetState(rng.choice(_STATE_KEYS),
                                 rng.choice(("on", "off", 0, 2))))
        elif pick == 1:
            acts.append(IncrementState(rng.choice(_STATE_KEYS),
                                       rng.randint(1, 2)))
        elif pick == 2:
            acts.append(NotifyRegistry())
        else:
            acts.append(AppendProfile((rng.choice(_LABELS),)))
    terminal = rng.choice(terminal_pool)
    if terminal == "permit":
        acts.append(Permit())
    elif terminal == "block":
        acts.append(Block())
    return tuple(acts)


def _gen_events(rng: random.Random, allow_adopted: bool) -> tuple[EventKind, ...]:
    pool = [EventKind.SENT, EventKind.ARRIVED]
    if allow_adopted:
        pool.append(EventKind.ADOPTED)
    chosen = [e for e in pool if rng.random() < 0.55]
    if not chosen:
        chosen = [rng.choice(pool)]
    order = (EventKind.ADOPTED, EventKind.SENT, EventKind.ARRIVED)
    return tuple(e for e in order if e in chosen)


def _gen_law(rng: random.Random, name: str, parent: Optional[str],
             modules: list[str], ancestors: list[Law]) -> Law:
    rules: list[Rule] = []
    meta: list[MetaPermission] = []
    for r in range(rng.randint(1, 4)):
        events = _gen_events(rng, allow_adopted=True)
        # Adoption must always succeed: any rule that can fire at adoption
        # gets a body that cannot block.
        if EventKind.ADOPTED in events:
            terminals: tuple[str, ...] = ("none", "none", "permit")
        else:
            terminals = ("none", "permit", "block")
        rules.append(Rule(
            id=f"r{r}",
            mode=rng.choice((RuleMode.CATEGORICAL, RuleMode.DEFAULT)),
            events=events,
            predicate=_gen_predicate(rng, modules, depth=2),
            actions=_gen_actions(rng, terminals)))
    for rule in rules:
        if rule.mode is RuleMode.DEFAULT and rng.random() < 0.6:
            for direction in MetaDirection:
                if rng.random() < 0.5:
                    meta.append(MetaPermission(rule.id, direction))
    overrides: list[Override] = []
    granted = [(law, rule, mp)
               for law in ancestors
               for rule in law.rules
               for mp in law.meta
               if mp.rule_id == rule.id]
    # Only the nearest declaration of a rule id can be overridden; drop
    # grants shadowed by a deeper declaration of the same id.
    reachable = []
    for law, rule, mp in granted:
        deeper = False
        idx = ancestors.index(law)
        for other in ancestors[idx + 1:]:
            if any(r.id == rule.id for r in other.rules):
                deeper = True
                break
        if not deeper and not any(r.id == rule.id for r in rules):
            reachable.append((law, rule, mp))
    for _ in range(rng.randint(0, 3)):
        if not reachable:
            break
        law, rule, mp = rng.choice(reachable)
        if mp.direction is MetaDirection.MAY_PERMIT:
            kind = OverrideKind.PERMIT
            actions = _gen_actions(rng, ("permit",))
        elif mp.direction is MetaDirection.MAY_PROHIBIT:
            kind = OverrideKind.BLOCK
            actions = _gen_actions(rng, ("block",))
        else:
            kind = OverrideKind.REPLACE
            actions = _gen_actions(rng, ("permit", "block"))
        overrides.append(Override(
            target=rule.id, kind=kind,
            events=_gen_events(rng, allow_adopted=False),
            predicate=_gen_predicate(rng, modules, depth=2),
            actions=actions))
    profile = tuple(sorted({rng.choice(_LABELS)
                            for _ in range(rng.randint(0, 2))}))
    return Law(name=name, parent=parent, profile=profile,
               rules=tuple(rules), meta=tuple(meta),
               overrides=tuple(overrides))


def generate_system(seed: int, max_modules: int = 4, max_components: int = 8,
                    max_messages: int = 60) -> GeneratedSystem:
    rng = random.Random(seed)
    count = rng.randint(1, max_modules)
    names = ["R", "A", "B", "C"][:count]
    laws: dict[str, Law] = {}
    order: list[str] = []
    for i, name in enumerate(names):
        if i == 0:
            parent = None
            ancestors: list[Law] = []
        else:
            parent = rng.choice(order)
            ancestors = [laws[n] for n in _lineage_names(laws, parent)]
        law = _gen_law(rng, name, parent, names, ancestors)
        laws[name] = law
        order.append(name)

    components: list[GenComponent] = []
    for i in range(rng.randint(1, max_components)):
        adopted = tuple(rng.sample(names, rng.randint(1, min(2, count))))
        attrs = []
        for attr, values in _CERT_ATTRS:
            if rng.random() < 0.5:
                attrs.append((attr, rng.choice(values)))
        components.append(GenComponent(name=f"c{i}", modules=adopted,
                                       cert_attrs=tuple(attrs)))

    personas = [(c.name, m) for c in components for m in c.modules]
    script: list[GenMessage] = []
    for _ in range(rng.randint(1, max_messages)):
        op = rng.choice(_OPS)
        payload = rng.choice(_PAYLOADS)
        if rng.random() < 0.15:
            target, tmod = rng.choice(personas)
            script.append(GenMessage(sender=rng.choice(_OUTSIDERS),
                                     sender_module=None, target=target,
                                     target_module=tmod, operation=op,
                                     payload=payload))
        else:
            sender, smod = rng.choice(personas)
            if rng.random() < 0.15:
                script.append(GenMessage(sender=sender, sender_module=smod,
                                         target=rng.choice(_OUTSIDERS),
                                         target_module=None, operation=op,
                                         payload=payload))
            else:
                target, tmod = rng.choice(personas)
                script.append(GenMessage(sender=sender, sender_module=smod,
                                         target=target, target_module=tmod,
                                         operation=op, payload=payload))
    return GeneratedSystem(seed=seed, laws=laws, root=names[0],
                           components=components, script=script)


def _lineage_names(laws: dict[str, Law], leaf: str) -> list[str]:
    chain = []
    cursor: Optional[str] = leaf
    while cursor is not None:
        chain.append(cursor)
        cursor = laws[cursor].parent
    chain.reverse()
    return chain


# ---------------------------------------------------------------------------
# Differential harness
# ---------------------------------------------------------------------------


@dataclass
class DiffReport:
    trials: int
    events_compared: int
    disagreements: list[str]
    elapsed: float

    @property
    def agreement(self) -> float:
        if self.trials == 0:
            return 1.0
        return 1.0 - len(self.disagreements) / self.trials


def run_trial(system: GeneratedSystem) -> list[str]:
    """Drive one generated system through both evaluators; returns mismatches."""
    problems: list[str] = []
    h, violations = build_hierarchy(system.laws.values())
    if h is None:
        return [f"seed {system.seed}: generated hierarchy rejected: "
                + "; ".join(v.kind.value for v in violations)]
    issuer = DemoIssuer("demo-ca")

    prod_agents = {}
    oracle_state: dict[tuple[str, str], dict] = {}
    for comp in system.components:
        attrs = dict(comp.cert_attrs)
        attrs.setdefault("modules", ",".join(comp.modules))
        cert = issuer.issue(comp.name, attrs)
        for module in comp.modules:
            agent, _ = adopt(ComponentId(name=comp.name, address=comp.name),
                             h, module, cert=cert)
            prod_agents[(comp.name, module)] = agent
            verdict, token, st = oracle_evaluate(
                system.laws, module, {}, agent.cert_attrs,
                OracleEvent(event=EventKind.ADOPTED))
            oracle_state[(comp.name, module)] = st
            if verdict != "permit":
                problems.append(
                    f"seed {system.seed}: oracle refused adoption "
                    f"{comp.name}@{module} via {token}")
            elif agent.state != st:
                problems.append(
                    f"seed {system.seed}: adoption state split at "
                    f"{comp.name}@{module}: {agent.state!r} != {st!r}")

    for idx, msg in enumerate(system.script):
        if msg.sender_module is None:
            problems.extend(_compare_bare(system, h, prod_agents,
                                          oracle_state, idx, msg))
        else:
            problems.extend(_compare_send(system, h, prod_agents,
                                          oracle_state, idx, msg))
        if problems:
            return problems

    for key, agent in prod_agents.items():
        if agent.state != oracle_state[key]:
            problems.append(
                f"seed {system.seed}: final state split at {key}: "
                f"{agent.state!r} != {oracle_state[key]!r}")
    return problems


def _compare_send(system, h, prod_agents, oracle_state, idx, msg):
    problems = []
    key = (msg.sender, msg.sender_module)
    agent = prod_agents[key]
    outside = msg.target_module is None
    locus = OUTSIDE if outside else msg.target_module
    ruling, env = handle_send(agent, h, msg.operation, msg.payload,
                              msg.target, locus)
    prod = ("permit" if ruling.decision.permits else "block",
            matched_token(ruling.matched))

    st = oracle_state[key]
    flow = oracle_flow(msg.sender_module, msg.sender_module,
                       msg.target_module)
    overdict, otoken, new_st = oracle_evaluate(
        system.laws, msg.sender_module, st, agent.cert_attrs,
        OracleEvent(event=EventKind.SENT, operation=msg.operation, flow=flow,
                    peer_name=msg.target if outside else msg.target_module,
                    peer_profile=frozenset(), peer_outside=outside))
    oracle_state[key] = new_st
    if (overdict, otoken) != prod:
        problems.append(f"seed {system.seed} msg {idx} sent: prod {prod} "
                        f"oracle {(overdict, otoken)}")
        return problems
    if agent.state != new_st:
        problems.append(f"seed {system.seed} msg {idx} sent: state split "
                        f"{agent.state!r} != {new_st!r}")
        return problems
    if prod[0] == "block" or outside:
        return problems

    # Delivery side.
    tkey = (msg.target, msg.target_module)
    target_agent = prod_agents[tkey]
    ruling2, _ = handle_arrive(target_agent, h, env)
    prod2 = ("permit" if ruling2.decision.permits else "block",
             matched_token(ruling2.matched))
    sender_profile = frozenset(_profile_labels(new_st))
    flow2 = oracle_flow(msg.target_module, msg.sender_module,
                        msg.target_module)
    overdict2, otoken2, new_st2 = oracle_evaluate(
        system.laws, msg.target_module, oracle_state[tkey],
        target_agent.cert_attrs,
        OracleEvent(event=EventKind.ARRIVED, operation=msg.operation,
                    flow=flow2, peer_name=msg.sender_module,
                    peer_profile=sender_profile, peer_outside=False))
    oracle_state[tkey] = new_st2
    if (overdict2, otoken2) != prod2:
        problems.append(f"seed {system.seed} msg {idx} arrived: prod {prod2} "
                        f"oracle {(overdict2, otoken2)}")
    elif target_agent.state != new_st2:
        problems.append(f"seed {system.seed} msg {idx} arrived: state split "
                        f"{target_agent.state!r} != {new_st2!r}")
    return problems


def _compare_bare(system, h, prod_agents, oracle_state, idx, msg):
    problems = []
    key = (msg.target, msg.target_module)
    agent = prod_agents[key]
    inbound = BareInbound(sender_address=msg.sender, target=msg.target,
                          operation=msg.operation, payload=msg.payload)
    ruling, _ = handle_arrive(agent, h, inbound)
    prod = ("permit" if ruling.decision.permits else "block",
            matched_token(ruling.matched))
    overdict, otoken, new_st = oracle_evaluate(
        system.laws, msg.target_module, oracle_state[key], agent.cert_attrs,
        OracleEvent(event=EventKind.ARRIVED, operation=msg.operation,
                    flow=FlowKind.IMPORT, peer_name=msg.sender,
                    peer_profile=frozenset(), peer_outside=True))
    oracle_state[key] = new_st
    if (overdict, otoken) != prod:
        problems.append(f"seed {system.seed} msg {idx} import: prod {prod} "
                        f"oracle {(overdict, otoken)}")
    elif agent.state != new_st:
        problems.append(f"seed {system.seed} msg {idx} import: state split "
                        f"{agent.state!r} != {new_st!r}")
    return problems


def run_differential(trials: int, seed: int = 0, max_modules: int = 4,
                     max_components: int = 8,
                     max_messages: int = 60) -> DiffReport:
    rng = random.Random(seed)
    started = time.perf_counter()
    disagreements: list[str] = []
    events = 0
    for _ in range(trials):
        system_seed = rng.getrandbits(48)
        system = generate_system(system_seed, max_modules=max_modules,
                                 max_components=max_components,
                                 max_messages=max_messages)
        events += len(system.script)
        disagreements.extend(run_trial(system))
    return DiffReport(trials=trials, events_compared=events,
                      disagreements=disagreements,
                      elapsed=time.perf_counter() - started)
