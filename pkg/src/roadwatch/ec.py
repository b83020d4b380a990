"""Run-time Event Calculus over integer time.

Events happen at time points; rules say which events and conditions
*initiate* or *terminate* a fluent value; the engine computes the maximal
intervals over which each fluent value holds.  Evaluation runs over a
sliding window, and fluent values holding at a window's start carry over
into the next one.

Semantics (per fluent value, inside the window ``[start, end)``)::

    holds(t)  iff  some initiation i <= t has no termination in (i, t]

A value already holding when the window opens behaves as if initiated
just before ``start``.  Initiating ``F=v2`` terminates ``F=v1``.
"""

from __future__ import annotations

import graphlib
import operator
import re
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Union

import numpy as np

from .intervals import IntervalSet


class ECError(Exception):
    pass


class StaleEventError(ECError):
    pass


class RuleError(ECError):
    pass


class UndeclaredFluentError(ECError, KeyError):
    pass


# ---------------------------------------------------------------- rule terms


@dataclass(frozen=True)
class HappensAt:
    event: str
    negated: bool = False

    def __str__(self):
        return f"{'not ' if self.negated else ''}hA({self.event}(v), T)"


@dataclass(frozen=True)
class HoldsAt:
    fluent: str
    value: Hashable = True
    negated: bool = False

    def __str__(self):
        return f"{'not ' if self.negated else ''}hoA({self.fluent}(v)={_fmt(self.value)}, T)"


@dataclass(frozen=True)
class ScalarAt:
    """Binds ``var`` to the momentary value of a scalar fluent (``hoA(speed(v,S),T)``)."""

    signal: str
    var: str

    def __str__(self):
        return f"hoA({self.signal}(v, {self.var}), T)"


_OPS = {
    ">=": operator.ge,
    ">": operator.gt,
    "<=": operator.le,
    "<": operator.lt,
    "=": operator.eq,
    "==": operator.eq,
    "!=": operator.ne,
}


@dataclass(frozen=True)
class Threshold:
    """``th(param, Var op param)``: compare a bound scalar with a named parameter."""

    var: str
    op: str
    param: str

    def __post_init__(self):
        if self.op not in _OPS:
            raise RuleError(f"unknown comparison {self.op!r}")

    def __str__(self):
        return f"th({self.param}, {self.var} {self.op} {self.param})"


Literal = Union[HappensAt, HoldsAt, ScalarAt, Threshold]


@dataclass(frozen=True)
class RuleDef:
    kind: str  # "initiates" | "terminates"
    fluent: str
    value: Hashable
    body: tuple[Literal, ...]
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("initiates", "terminates"):
            raise RuleError(f"bad rule kind {self.kind!r}")
        object.__setattr__(self, "body", tuple(self.body))
        bound = {lit.var for lit in self.body if isinstance(lit, ScalarAt)}
        for lit in self.body:
            if isinstance(lit, Threshold) and lit.var not in bound:
                raise RuleError(f"{self.label}: variable {lit.var} is not bound by a scalar literal")

    @property
    def head(self) -> tuple[str, Hashable]:
        return (self.fluent, self.value)

    @property
    def label(self) -> str:
        return self.name or f"{self.kind}:{self.fluent}={_fmt(self.value)}"

    def fluents_used(self) -> set[str]:
        return {lit.fluent for lit in self.body if isinstance(lit, HoldsAt)}

    def events_used(self) -> set[str]:
        return {lit.event for lit in self.body if isinstance(lit, HappensAt)}

    def signals_used(self) -> set[str]:
        return {lit.signal for lit in self.body if isinstance(lit, ScalarAt)}

    def params_used(self) -> set[str]:
        return {lit.param for lit in self.body if isinstance(lit, Threshold)}

    def __str__(self):
        pred = "inA" if self.kind == "initiates" else "tA"
        body = ", ".join(str(b) for b in self.body)
        return f"{pred}({self.fluent}(v)={_fmt(self.value)}, T) :- {body}."


def _fmt(v) -> str:
    if v is True:
        return "true"
    if v is False:
        return "false"
    return str(v)


@dataclass(frozen=True)
class EventInstance:
    name: str
    args: tuple = ()
    t: int = 0


@dataclass(frozen=True)
class Window:
    window_len: int = 900
    step: int = 450

    def __post_init__(self):
        if not 0 < self.step <= self.window_len:
            raise ValueError("need 0 < step <= window_len")


# ------------------------------------------------------------------- parser

_HEAD = re.compile(r"^(inA|tA)\(\s*(\w+)\s*\(([^)]*)\)\s*=\s*(\w+)\s*,\s*T\s*\)$")
_HA = re.compile(r"^hA\(\s*(\w+)\s*\(([^)]*)\)\s*,\s*T\s*\)$")
_HOA = re.compile(r"^hoA\(\s*(\w+)\s*\(([^)]*)\)\s*(?:=\s*(\w+))?\s*,\s*T\s*\)$")
_TH = re.compile(r"^th\(\s*(\w+)\s*,\s*(\w+)\s*(>=|<=|==|!=|>|<|=)\s*(\w+)\s*\)$")
_INIT = re.compile(r"^initially\(\s*(\w+)\s*\(([^)]*)\)\s*=\s*(\w+)\s*\)$")


def _value(tok: str):
    low = tok.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(tok)
    except ValueError:
        try:
            return float(tok)
        except ValueError:
            return tok


def _split_top(s: str, sep: str = ",") -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if "".join(cur).strip():
        parts.append("".join(cur).strip())
    return parts


def _parse_literal(text: str) -> Literal:
    neg = False
    t = text.strip()
    for prefix in ("not ", "\\+", "¬"):
        if t.startswith(prefix):
            neg, t = True, t[len(prefix):].strip()
    if m := _HA.match(t):
        return HappensAt(m.group(1), neg)
    if m := _HOA.match(t):
        name, args, val = m.group(1), [a.strip() for a in m.group(2).split(",")], m.group(3)
        scalar_vars = [a for a in args[1:] if a[:1].isupper()]
        if scalar_vars and val is None:
            if neg:
                raise RuleError(f"cannot negate a scalar binding: {text}")
            return ScalarAt(name, scalar_vars[0])
        return HoldsAt(name, True if val is None else _value(val), neg)
    if m := _TH.match(t):
        if neg:
            raise RuleError(f"negated threshold: {text}")
        param, var, op, rhs = m.groups()
        if rhs != param:
            raise RuleError(f"threshold must compare against its parameter: {text}")
        return Threshold(var, op, param)
    raise RuleError(f"cannot parse literal {text!r}")


def parse_rules(text: str) -> tuple[list[RuleDef], dict[tuple[str, Hashable], bool]]:
    """Parse rules written as ``inA(f(v)=true, T) :- body.`` / ``tA(...) :- body.``

    Lines starting with ``%`` are comments.  ``initially(f(v)=true).``
    declarations are returned separately.
    """
    clean = "\n".join(line.split("%", 1)[0] for line in text.splitlines())
    rules, initially = [], {}
    for n, stmt in enumerate(s.strip() for s in clean.split(".\n") if s.strip()):
        stmt = stmt.rstrip(".").strip()
        if m := _INIT.match(stmt):
            initially[(m.group(1), _value(m.group(3)))] = True
            continue
        if ":-" not in stmt:
            raise RuleError(f"statement {n}: expected ':-' in {stmt!r}")
        head, body = (p.strip() for p in stmt.split(":-", 1))
        hm = _HEAD.match(head)
        if not hm:
            raise RuleError(f"statement {n}: bad head {head!r}")
        kind = "initiates" if hm.group(1) == "inA" else "terminates"
        lits = tuple(_parse_literal(p) for p in _split_top(body))
        rules.append(RuleDef(kind, hm.group(2), _value(hm.group(4)), lits))
    return rules, initially


def format_rules(rules: Iterable[RuleDef]) -> str:
    return "\n".join(str(r) for r in rules) + "\n"


# ------------------------------------------------------------------- engine


def holds_mask(init: np.ndarray, term: np.ndarray, carry_in: bool = False) -> np.ndarray:
    """Pointwise holding mask from initiation and termination masks.

    A value holds at t when the latest initiation at or before t is no
    earlier than the latest termination at or before t.  ``carry_in``
    acts as an initiation just before index 0.
    """
    n = len(init)
    idx = np.arange(n)
    last_init = np.maximum.accumulate(np.where(init, idx, -2))
    if carry_in:
        last_init = np.maximum(last_init, -1)
    last_term = np.maximum.accumulate(np.where(term, idx, -3))
    return (last_init >= -1) & (last_init >= last_term)


def stratify(rules: Iterable[RuleDef], external: Iterable[str] = ()) -> list[list[str]]:
    """Order head fluents so every fluent comes after the fluents its rules read.

    Raises RuleError when the rule set is recursive through its heads.
    """
    rules = list(rules)
    heads = {r.fluent for r in rules}
    ext = set(external)
    deps: dict[str, set[str]] = {h: set() for h in heads}
    for r in rules:
        deps[r.fluent] |= {f for f in r.fluents_used() if f in heads and f not in ext}
    ts = graphlib.TopologicalSorter(deps)
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        raise RuleError(f"rule set is not stratifiable: cycle {exc.args[1]}") from None
    strata = []
    while ts.is_active():
        ready = sorted(ts.get_ready())
        strata.append(ready)
        ts.done(*ready)
    return strata


@dataclass
class _Scalar:
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)


class Engine:
    """Event Calculus engine for one entity (e.g. one vehicle) over a sliding window."""

    def __init__(
        self,
        rules: Iterable[RuleDef],
        params: dict[str, float] | None = None,
        window: Window = Window(),
        initially: dict[tuple[str, Hashable], bool] | None = None,
        declared_fluents: Iterable[str] = (),
        declared_events: Iterable[str] = (),
        start: int = 0,
    ):
        self.rules = list(rules)
        self.window = window
        self.start = start
        self._params = dict(params or {})
        self._pending_params: dict[str, float] | None = None
        self.strata = stratify(self.rules)
        self._heads = {r.fluent for r in self.rules}
        self._declared = set(declared_fluents) | self._heads
        self._events_declared = set(declared_events)
        self._initially = dict(initially or {})
        self._declared |= {f for f, _ in self._initially}
        self._check_declarations()
        self._events: dict[str, set[int]] = {}
        self._event_args: dict[tuple[str, int], set[tuple]] = {}
        self._inputs: dict[tuple[str, Hashable], IntervalSet] = {}
        self._scalars: dict[str, _Scalar] = {}
        # values holding just before the window start
        self._carry: set[tuple[str, Hashable]] = {k for k, v in self._initially.items() if v}
        self._result: dict[tuple[str, Hashable], IntervalSet] | None = None

    # -- declarations

    def _check_declarations(self):
        for r in self.rules:
            missing = r.params_used() - set(self._params)
            if missing:
                raise RuleError(f"{r.label}: unknown parameter(s) {sorted(missing)}")
            if self._events_declared:
                unk = r.events_used() - self._events_declared
                if unk:
                    raise RuleError(f"{r.label}: undeclared event(s) {sorted(unk)}")
            if len(self._declared) > len(self._heads):
                unk = r.fluents_used() - self._declared
                if unk:
                    raise RuleError(f"{r.label}: undeclared fluent(s) {sorted(unk)}")

    @property
    def end(self) -> int:
        return self.start + self.window.window_len

    @property
    def params(self) -> dict[str, float]:
        return dict(self._params)

    def set_params(self, params: dict[str, float]) -> None:
        """Queue a parameter-table swap; it takes effect at the next window boundary."""
        new = dict(self._params)
        new.update(params)
        self._pending_params = new

    # -- input

    def assert_happens_at(self, e: EventInstance) -> None:
        if e.t < self.start:
            raise StaleEventError(f"{e.name}@{e.t} is before window start {self.start}")
        self._events.setdefault(e.name, set()).add(int(e.t))
        self._event_args.setdefault((e.name, int(e.t)), set()).add(tuple(e.args))
        self._declared_event(e.name)
        self._result = None

    def _declared_event(self, name: str):
        if self._events_declared and name not in self._events_declared:
            raise RuleError(f"undeclared event {name}")

    def happens_at(self, name: str, t: int) -> bool:
        return t in self._events.get(name, ())

    def assert_happens_for(self, fluent: str, value: Hashable, intervals: Iterable[tuple[int, int]]) -> None:
        """Add input intervals for ``fluent=value`` (normalised and merged)."""
        key = (fluent, value)
        ivs = IntervalSet(intervals)
        self._declared.add(fluent)
        if not ivs and key in self._inputs:
            return
        self._inputs[key] = self._inputs.get(key, IntervalSet()).union(ivs)
        self._result = None

    def assert_scalar(self, signal: str, times: Iterable[int], values: Iterable[float]) -> None:
        """Samples of a scalar fluent; each sample persists until the next one."""
        s = self._scalars.setdefault(signal, _Scalar())
        s.times.extend(int(t) for t in times)
        s.values.extend(float(v) for v in values)
        self._result = None

    # -- evaluation

    def _scalar_values(self, signal: str, lo: int, hi: int) -> np.ndarray:
        s = self._scalars.get(signal)
        if s is None or not s.times:
            return np.full(hi - lo, np.nan)
        t = np.asarray(s.times)
        v = np.asarray(s.values)
        order = np.argsort(t, kind="stable")
        t, v = t[order], v[order]
        pos = np.searchsorted(t, np.arange(lo, hi), side="right") - 1
        out = np.where(pos >= 0, v[np.clip(pos, 0, None)], np.nan)
        return out

    def _event_mask(self, name: str, lo: int, hi: int) -> np.ndarray:
        m = np.zeros(hi - lo, dtype=bool)
        ts = [t - lo for t in self._events.get(name, ()) if lo <= t < hi]
        m[ts] = True
        return m

    def _body_mask(self, body, lo, hi, fluent_masks) -> np.ndarray:
        n = hi - lo
        mask = np.ones(n, dtype=bool)
        bound: dict[str, np.ndarray] = {}
        for lit in body:
            if isinstance(lit, ScalarAt):
                vals = self._scalar_values(lit.signal, lo, hi)
                bound[lit.var] = vals
                mask &= ~np.isnan(vals)
        for lit in body:
            if isinstance(lit, HappensAt):
                m = self._event_mask(lit.event, lo, hi)
            elif isinstance(lit, HoldsAt):
                m = self._fluent_mask(lit.fluent, lit.value, lo, hi, fluent_masks)
            elif isinstance(lit, Threshold):
                vals = bound[lit.var]
                with np.errstate(invalid="ignore"):
                    m = _OPS[lit.op](vals, self._params[lit.param])
                m = np.asarray(m, dtype=bool) & ~np.isnan(vals)
            else:
                continue
            mask &= ~m if getattr(lit, "negated", False) else m
        return mask

    def _fluent_mask(self, fluent, value, lo, hi, fluent_masks) -> np.ndarray:
        key = (fluent, value)
        if key in fluent_masks:
            return fluent_masks[key]
        m = np.zeros(hi - lo, dtype=bool)
        if key in self._inputs:
            m |= self._inputs[key].to_mask(lo, hi)
        if fluent not in self._heads and key in self._carry and key not in self._inputs:
            # an `initially` input fluent with no asserted intervals
            m[:] = True
        return m

    def evaluate(self) -> dict[tuple[str, Hashable], IntervalSet]:
        """Compute holding intervals of every fluent value inside the current window."""
        if self._result is not None:
            return self._result
        lo, hi = self.start, self.end
        masks = self._evaluate_masks(lo, hi)
        out = {k: IntervalSet.from_mask(m, lo) for k, m in masks.items()}
        for key, ivs in self._inputs.items():
            if key[0] not in self._heads:
                out[key] = ivs.clip(lo, hi)
        self._result = out
        return out

    def _evaluate_masks(self, lo: int, hi: int) -> dict[tuple[str, Hashable], np.ndarray]:
        masks: dict[tuple[str, Hashable], np.ndarray] = {}
        n = hi - lo
        for stratum in self.strata:
            for fluent in stratum:
                rules = [r for r in self.rules if r.fluent == fluent]
                values = {r.value for r in rules} | {v for (f, v) in self._carry if f == fluent}
                init = {v: np.zeros(n, dtype=bool) for v in values}
                term = {v: np.zeros(n, dtype=bool) for v in values}
                for r in rules:
                    m = self._body_mask(r.body, lo, hi, masks)
                    (init if r.kind == "initiates" else term)[r.value] |= m
                for v in values:
                    t = term[v].copy()
                    for other in values:
                        if other != v:
                            t |= init[other]
                    masks[(fluent, v)] = holds_mask(init[v], t, (fluent, v) in self._carry)
        return masks

    def holds_for(self, fluent: str, value: Hashable = True) -> IntervalSet:
        if fluent not in self._declared:
            raise UndeclaredFluentError(fluent)
        return self.evaluate().get((fluent, value), IntervalSet())

    def holds_at(self, fluent: str, t: int, value: Hashable = True) -> bool:
        if fluent not in self._declared:
            raise UndeclaredFluentError(fluent)
        if not self.start <= t < self.end:
            raise ECError(f"t={t} outside window [{self.start}, {self.end})")
        return self.holds_for(fluent, value).holds_at(t)

    # -- windowing

    def advance_window(self, new_events: Iterable[EventInstance] = ()) -> None:
        """Slide the window by one step.

        Fluent values holding at the last point before the new start carry
        over; events and samples older than the new start are dropped (the
        latest sample of each scalar is kept, since it is still in force).
        """
        new_start = self.start + self.window.step
        res = self.evaluate()
        boundary = new_start - 1
        self._carry = {k for k, ivs in res.items() if k[0] in self._heads and ivs.holds_at(boundary)}
        self.start = new_start
        for name in list(self._events):
            kept = {t for t in self._events[name] if t >= new_start}
            if kept:
                self._events[name] = kept
            else:
                del self._events[name]
        self._event_args = {k: v for k, v in self._event_args.items() if k[1] >= new_start}
        for key in list(self._inputs):
            ivs = IntervalSet((max(s, new_start), e) for s, e in self._inputs[key] if e > new_start)
            self._inputs[key] = ivs
        for s in self._scalars.values():
            if not s.times:
                continue
            t = np.asarray(s.times)
            keep = t >= new_start
            before = np.flatnonzero(~keep)
            idx = list(np.flatnonzero(keep))
            if len(before):
                idx = [before[np.argmax(t[before])]] + idx
            s.times = [s.times[i] for i in idx]
            s.values = [s.values[i] for i in idx]
        if self._pending_params is not None:
            self._params = self._pending_params
            self._pending_params = None
        self._result = None
        for e in new_events:
            self.assert_happens_at(e)

    def working_memory_size(self) -> int:
        return (
            sum(len(v) for v in self._events.values())
            + sum(len(v) for v in self._inputs.values())
            + sum(len(s.times) for s in self._scalars.values())
        )
