"""Throughput measurement for the enforcement hot path.

Loads the shipped law directory, adopts two messaging members and one
operations member, then times send/arrive pairs in a tight loop with the
garbage collector parked.  The mix keeps both verdicts and the override
machinery of the MS law on the measured path: an inner retrieve between
members, a log handed in from outside the module (permitted by the MS
override), and a purge that the root default drops at the receiver.

Per-event samples use the thread CPU clock, not wall time.  The budgets
bound what evaluation costs; on a shared host any wall-clocked sample can
swallow a multi-millisecond scheduler preemption that says nothing about
the evaluator.  Total elapsed time stays wall-clock.
"""

from __future__ import annotations

import gc
import statistics
import time
from dataclasses import dataclass

from .controller import ComponentId, DemoIssuer, adopt, handle_arrive, handle_send
from .runner import check_law_dir

MEDIAN_BUDGET_US = 100.0
WORST_BUDGET_US = 1000.0


@dataclass
class BenchReport:
    events: int
    elapsed_s: float
    median_us: float
    p99_us: float
    max_us: float

    @property
    def within_budget(self) -> bool:
        return (self.median_us <= MEDIAN_BUDGET_US
                and self.max_us <= WORST_BUDGET_US)

    def lines(self) -> list[str]:
        return [
            f"events           {self.events}",
            f"elapsed          {self.elapsed_s:.2f} s",
            f"median per event {self.median_us:.1f} us"
            f" (budget {MEDIAN_BUDGET_US:.0f} us)",
            f"p99 per event    {self.p99_us:.1f} us",
            f"worst per event  {self.max_us:.1f} us"
            f" (budget {WORST_BUDGET_US:.0f} us)",
            f"verdict          {'within budget' if self.within_budget else 'OVER BUDGET'}",
        ]


def _build_agents(law_dir: str):
    h, problems = check_law_dir(law_dir)
    if h is None:
        raise RuntimeError("law directory rejected: " + "; ".join(problems))
    for needed in ("MS", "OPS"):
        if needed not in h.laws:
            raise RuntimeError(f"law directory has no law named {needed}")
    issuer = DemoIssuer("demo-ca")
    agents = {}
    for name, module in (("m1", "MS"), ("m2", "MS"), ("app", "OPS")):
        cert = issuer.issue(name, {"modules": module})
        agent, _ = adopt(ComponentId(name=name, address=name), h, module,
                         cert=cert)
        agents[name] = agent
    return h, agents


def run_bench(events: int = 100_000, warmup: int = 1_000,
              law_dir: str = "laws") -> BenchReport:
    h, agents = _build_agents(law_dir)
    m1, m2, app = agents["m1"], agents["m2"], agents["app"]
    payload = b"x" * 32
    # (sender, target agent, target module, operation)
    mix = (
        (m1, m2, "MS", "retrieve"),
        (app, m1, "MS", "log"),
        (app, m1, "MS", "purge"),
        (m2, m1, "MS", "retrieve"),
    )

    def one(i: int) -> None:
        sender, receiver, tmodule, op = mix[i % 4]
        ruling, env = handle_send(sender, h, op, payload,
                                  receiver.component.name, tmodule)
        if env is not None:
            handle_arrive(receiver, h, env)

    for i in range(warmup):
        one(i)

    samples = [0] * events
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        cpu = time.clock_gettime_ns
        cid = time.CLOCK_THREAD_CPUTIME_ID
        started = time.perf_counter_ns()
        for i in range(events):
            t0 = cpu(cid)
            one(i)
            samples[i] = cpu(cid) - t0
        elapsed = (time.perf_counter_ns() - started) / 1e9
    finally:
        if gc_was_enabled:
            gc.enable()

    samples.sort()
    return BenchReport(
        events=events,
        elapsed_s=elapsed,
        median_us=statistics.median(samples) / 1e3,
        p99_us=samples[int(events * 0.99) - 1] / 1e3,
        max_us=samples[-1] / 1e3,
    )
