"""Pointwise reference semantics for the Event Calculus engine.

A value holds at t when, scanning backwards from t, the first time point
carrying an initiation or a termination of that value carries an
initiation (initiating a sibling value counts as a termination).  Falling
off the start of the window yields the carried-in state.  This is the
textbook definition evaluated one time point at a time, with no interval
algebra and no vectorisation.

``mode="inertia"`` evaluates the same definition through the equivalent
one-step law (holds at t iff initiated at t, or held at t-1 and was not
terminated at t), which keeps long horizons affordable.
"""

from __future__ import annotations

import operator

import numpy as np

from roadwatch.ec import HappensAt, HoldsAt, RuleDef, ScalarAt, Threshold

OPS = {">=": operator.ge, ">": operator.gt, "<=": operator.le, "<": operator.lt, "==": operator.eq}

EVENTS = ("e0", "e1", "e2")
BOOL_FLUENTS = ("f0", "f1", "f2", "f3")
MULTI = "m"
MULTI_VALUES = ("a", "b", "c")
PARAMS = {"p_lo": 3.0, "p_hi": 7.0}


def random_problem(rng: np.random.Generator, horizon: int, max_rules: int | None = None):
    """Random stratified rule set plus a random narrative over [0, horizon).

    ``max_rules`` keeps a prefix of the rules, which is still stratified.
    """
    rules = []
    heads: list[tuple[str, object]] = []
    for i, f in enumerate(BOOL_FLUENTS):
        for kind in ("initiates", "terminates"):
            for _ in range(int(rng.integers(1, 3))):
                rules.append(RuleDef(kind, f, True, _random_body(rng, heads)))
        heads.append((f, True))
    for v in MULTI_VALUES:
        rules.append(RuleDef("initiates", MULTI, v, _random_body(rng, heads)))
    if rng.random() < 0.5:
        rules.append(RuleDef("terminates", MULTI, MULTI_VALUES[0], _random_body(rng, heads)))
    if max_rules is not None:
        rules = rules[:max_rules]

    density = rng.uniform(0.01, 0.15)
    events = {e: sorted(int(t) for t in np.flatnonzero(rng.random(horizon) < density)) for e in EVENTS}
    n_samples = int(rng.integers(1, max(2, horizon // 10)))
    s_times = sorted(set(int(t) for t in rng.integers(0, horizon, n_samples)))
    s_values = [float(x) for x in rng.integers(0, 11, len(s_times))]
    initially = {}
    if rng.random() < 0.5:
        initially[(str(rng.choice(BOOL_FLUENTS)), True)] = True
    if rng.random() < 0.5:
        initially[(MULTI, str(rng.choice(MULTI_VALUES)))] = True
    return rules, events, (s_times, s_values), initially


def _random_body(rng, heads) -> tuple:
    body = []
    k = int(rng.integers(1, 4))
    for _ in range(k):
        r = rng.random()
        if r < 0.45 or not heads and r < 0.7:
            body.append(HappensAt(str(rng.choice(EVENTS)), negated=bool(rng.random() < 0.2)))
        elif r < 0.7 and heads:
            f, v = heads[int(rng.integers(len(heads)))]
            body.append(HoldsAt(f, v, negated=bool(rng.random() < 0.4)))
        else:
            var = f"S{len(body)}"
            body.append(ScalarAt("speed", var))
            body.append(Threshold(var, str(rng.choice(list(OPS))), str(rng.choice(list(PARAMS)))))
    if not any(isinstance(lit, HappensAt) and not lit.negated for lit in body) and rng.random() < 0.7:
        # keep most rules event-triggered so fluents do not saturate
        body.insert(0, HappensAt(str(rng.choice(EVENTS))))
    return tuple(body)


def oracle(rules, events, scalar, initially, params, lo: int, hi: int, mode: str = "scan") -> dict:
    """Holding masks over [lo, hi) for every head value."""
    ev = {e: set(ts) for e, ts in events.items()}
    s_times, s_values = scalar
    heads = []
    # fluents read by bodies but defined by no rule come first
    for r in rules:
        for lit in r.body:
            if isinstance(lit, HoldsAt) and lit.fluent not in {q.fluent for q in rules}:
                if (lit.fluent, lit.value) not in heads:
                    heads.append((lit.fluent, lit.value))
    for r in rules:
        if r.head not in heads:
            heads.append(r.head)
    for key in initially:
        if key not in heads:
            heads.append(key)
    memo: dict[tuple, bool] = {}
    point: dict[tuple, bool] = {}
    latest = {}
    for st, sv in sorted(zip(s_times, s_values)):
        latest[st] = sv

    scalar_cache: dict[int, float | None] = {}

    def scalar_at(t):
        if t not in scalar_cache:
            best = None
            for st in sorted(latest):
                if st <= t:
                    best = latest[st]
            scalar_cache[t] = best
        return scalar_cache[t]

    def holds(f, v, t) -> bool:
        key = (f, v, t)
        if key not in memo:
            memo[key] = _scan(f, v, t)
        return memo[key]

    def body_true(body, t) -> bool:
        bound = {}
        for lit in body:
            if isinstance(lit, ScalarAt):
                val = scalar_at(t)
                if val is None:
                    return False
                bound[lit.var] = val
        for lit in body:
            if isinstance(lit, HappensAt):
                ok = t in ev.get(lit.event, ())
            elif isinstance(lit, HoldsAt):
                ok = holds(lit.fluent, lit.value, t)
            elif isinstance(lit, Threshold):
                ok = OPS[lit.op](bound[lit.var], params[lit.param])
            else:
                continue
            if getattr(lit, "negated", False):
                ok = not ok
            if not ok:
                return False
        return True

    def initiated(f, v, p) -> bool:
        key = ("i", f, v, p)
        if key not in point:
            point[key] = any(body_true(r.body, p) for r in rules
                             if r.kind == "initiates" and r.fluent == f and r.value == v)
        return point[key]

    def terminated(f, v, p) -> bool:
        key = ("t", f, v, p)
        if key not in point:
            point[key] = any(body_true(r.body, p) for r in rules
                             if r.fluent == f and (
                                 (r.kind == "terminates" and r.value == v)
                                 or (r.kind == "initiates" and r.value != v)))
        return point[key]

    def _scan(f, v, t) -> bool:
        if mode == "inertia":
            if t < lo:
                return bool(initially.get((f, v), False))
            return initiated(f, v, t) or (not terminated(f, v, t) and holds(f, v, t - 1))
        for p in range(t, lo - 1, -1):
            if initiated(f, v, p):
                return True
            if terminated(f, v, p):
                return False
        return bool(initially.get((f, v), False))

    out = {}
    for f, v in heads:
        # strata in order, time ascending: the inertia recursion stays one level deep
        out[(f, v)] = np.array([holds(f, v, t) for t in range(lo, hi)], dtype=bool)
    return {k: m for k, m in out.items() if any(r.head == k for r in rules) or k in initially}
