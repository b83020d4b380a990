"""Weighted hard/soft recognition of composite behaviors.

Rule dependencies are analysed with a boolean Floyd-Warshall closure; a
behavior is confirmed by solving a small Weighted Partial MaxSAT instance
(branch and bound) over the micro-behavior assertions of one snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ec import RuleDef


class EncodingError(ValueError):
    pass


# ---------------------------------------------------------- dependency graph


@dataclass
class DependencyGraph:
    rules: list[RuleDef]
    adjacency: np.ndarray  # adjacency[i, j]: rule j depends on rule i

    @property
    def n(self) -> int:
        return len(self.rules)

    def edges(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))}

    def successors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])


def build_dependency_graph(rules: Sequence[RuleDef]) -> DependencyGraph:
    """Edge i -> j iff the head fluent of rule i is read in the body of rule j."""
    rules = list(rules)
    heads = np.array([r.fluent for r in rules], dtype=object)
    adj = np.zeros((len(rules), len(rules)), dtype=bool)
    for j, r in enumerate(rules):
        used = r.fluents_used()
        if used:
            adj[:, j] = np.isin(heads, list(used))
    return DependencyGraph(rules, adj)


def transitive_closure(g: DependencyGraph | np.ndarray) -> DependencyGraph | np.ndarray:
    """Boolean Floyd-Warshall: i -> j iff j is reachable from i by a non-empty path."""
    adj = g.adjacency if isinstance(g, DependencyGraph) else np.asarray(g, dtype=bool)
    r = adj.copy()
    for k in range(len(r)):
        r |= np.outer(r[:, k], r[k, :])
    if isinstance(g, DependencyGraph):
        return DependencyGraph(g.rules, r)
    return r


def triggered_by(rule: RuleDef, active: set[str], heads: set[str]) -> bool:
    inputs = rule.events_used() | rule.signals_used() | (rule.fluents_used() - heads)
    return bool(inputs & active)


def select_relevant_rules(closure: DependencyGraph, active_events: Iterable[str]) -> list[RuleDef]:
    """Rules triggered by an active input, plus every rule that depends on them."""
    active = set(active_events)
    heads = {r.fluent for r in closure.rules}
    trig = np.array([triggered_by(r, active, heads) for r in closure.rules], dtype=bool)
    if not trig.any():
        return []
    keep = trig | closure.adjacency[trig].any(axis=0)
    return [r for r, k in zip(closure.rules, keep) if k]


# ------------------------------------------------------------------ specs


@dataclass(frozen=True)
class BehaviorSpec:
    name: str
    hard: tuple[str, ...]
    soft: Mapping[str, float]
    threshold: float

    def __post_init__(self):
        object.__setattr__(self, "hard", tuple(self.hard))
        object.__setattr__(self, "soft", dict(self.soft))
        overlap = set(self.hard) & set(self.soft)
        if overlap:
            raise ValueError(f"{self.name}: {sorted(overlap)} both hard and soft")
        if any(w <= 0 for w in self.soft.values()):
            raise ValueError(f"{self.name}: soft weights must be positive")
        if self.threshold > math.fsum(self.soft.values()):
            raise ValueError(f"{self.name}: threshold exceeds total soft weight")

    @property
    def assertions(self) -> tuple[str, ...]:
        return self.hard + tuple(self.soft)

    def scaled(self, c: float) -> BehaviorSpec:
        return BehaviorSpec(self.name, self.hard, {k: w * c for k, w in self.soft.items()}, self.threshold * c)

    def to_dict(self) -> dict:
        return {"hard": list(self.hard), "soft": dict(self.soft), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, name: str, d: Mapping) -> BehaviorSpec:
        return cls(name, tuple(d.get("hard", ())), dict(d.get("soft", {})), float(d["threshold"]))


AGGRESSIVE_SPEC = BehaviorSpec(
    "aggressive",
    hard=("hardBraking",),
    soft={"overSpeed": 2, "weaving": 2, "suddenSteer": 2, "laneChange": 1, "proximity": 1},
    threshold=3,
)
DISTRACTED_SPEC = BehaviorSpec(
    "distracted",
    hard=("laneDrifting",),
    soft={"straddling": 2, "slowSpeed": 2, "normalBraking": 1, "laneChange": 1},
    threshold=2,
)
DEFAULT_SPECS = (AGGRESSIVE_SPEC, DISTRACTED_SPEC)  # precedence order
BEHAVIOR_LABELS = ("safe", "aggressive", "distracted")


# -------------------------------------------------------------------- CNF


@dataclass(frozen=True)
class WeightedClause:
    literals: tuple[int, ...]  # DIMACS style: +v / -v, variables from 1
    weight: float | None = None  # None marks a hard clause

    def __post_init__(self):
        object.__setattr__(self, "literals", tuple(int(l) for l in self.literals))
        if any(l == 0 for l in self.literals):
            raise ValueError("literal 0 is reserved")
        if self.weight is not None and not self.weight > 0:
            raise ValueError("soft clause weight must be positive")

    @property
    def hard(self) -> bool:
        return self.weight is None

    def satisfied(self, assignment: Sequence[bool]) -> bool:
        """``assignment[v]`` is the value of variable v (index 0 unused)."""
        return any(assignment[abs(l)] == (l > 0) for l in self.literals)


@dataclass
class CnfFormula:
    n_vars: int
    clauses: list[WeightedClause] = field(default_factory=list)
    names: dict[int, str] = field(default_factory=dict)
    threshold: float | None = None
    behavior: str = ""

    @property
    def hard(self) -> list[WeightedClause]:
        return [c for c in self.clauses if c.hard]

    @property
    def soft(self) -> list[WeightedClause]:
        return [c for c in self.clauses if not c.hard]

    def var(self, name: str) -> int:
        for v, n in self.names.items():
            if n == name:
                return v
        raise KeyError(name)

    def violated_weight(self, assignment: Sequence[bool]) -> float:
        return math.fsum(c.weight for c in self.soft if not c.satisfied(assignment))

    def to_wcnf(self) -> str:
        """Weighted DIMACS text; hard clauses carry the top weight."""
        top = math.fsum(c.weight for c in self.soft) + 1
        top_s = _num(top)
        lines = [f"c behavior {self.behavior}" if self.behavior else "c"]
        for v, name in sorted(self.names.items()):
            lines.append(f"c var {v} {name}")
        lines.append(f"p wcnf {self.n_vars} {len(self.clauses)} {top_s}")
        for c in self.clauses:
            w = top_s if c.hard else _num(c.weight)
            lines.append(" ".join([w, *map(str, c.literals), "0"]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_wcnf(cls, text: str) -> CnfFormula:
        n, top, clauses, names = 0, None, [], {}
        for line in text.splitlines():
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "c":
                if len(tok) == 4 and tok[1] == "var":
                    names[int(tok[2])] = tok[3]
                continue
            if tok[0] == "p":
                n, top = int(tok[2]), float(tok[4])
                continue
            w = float(tok[0])
            lits = tuple(int(t) for t in tok[1:-1])
            clauses.append(WeightedClause(lits, None if w >= top else w))
        return cls(n, clauses, names)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def encode(spec: BehaviorSpec, snapshot: Mapping[str, bool],
           behaviors: Sequence[str] = BEHAVIOR_LABELS) -> CnfFormula:
    """Encode one behavior hypothesis against a snapshot.

    Observed assertion values are hard facts; the hypothesis variable of
    ``spec`` is asserted; behavior variables are pairwise exclusive; H_k
    members are hard units and S_k members weighted soft units.
    """
    missing = [a for a in spec.assertions if a not in snapshot]
    if missing:
        raise EncodingError(f"snapshot lacks {missing} for {spec.name}")
    names: dict[int, str] = {}
    index: dict[str, int] = {}

    def var(name: str) -> int:
        if name not in index:
            index[name] = len(index) + 1
            names[index[name]] = name
        return index[name]

    clauses = []
    for a in spec.assertions:
        v = var(a)
        clauses.append(WeightedClause((v if snapshot[a] else -v,)))
    bvars = [var(f"behavior:{b}") for b in behaviors]
    if spec.name in behaviors:
        clauses.append(WeightedClause((index[f"behavior:{spec.name}"],)))
    for i in range(len(bvars)):
        for j in range(i + 1, len(bvars)):
            clauses.append(WeightedClause((-bvars[i], -bvars[j])))
    for a in spec.hard:
        clauses.append(WeightedClause((index[a],)))
    for a, w in spec.soft.items():
        clauses.append(WeightedClause((index[a],), w))
    return CnfFormula(len(index), clauses, names, spec.threshold, spec.name)


# ------------------------------------------------------------------ solver


@dataclass
class SolveResult:
    status: str  # "sat" | "unsat-hard"
    assignment: tuple[bool, ...] = ()  # index 0 unused
    violated_soft_weight: float = math.inf
    core: tuple[int, ...] = ()  # indices of satisfied clauses (hard, then counted soft)
    nodes: int = 0

    @property
    def sat(self) -> bool:
        return self.status == "sat"


def solve(cnf: CnfFormula) -> SolveResult:
    """Exact Weighted Partial MaxSAT by depth-first branch and bound.

    Hard clauses are unit-propagated at every node; a branch is cut once
    the weight of soft clauses it has already falsified reaches the best
    complete assignment found so far.
    """
    n = cnf.n_vars
    hard = [c.literals for c in cnf.hard]
    soft = [(c.literals, c.weight) for c in cnf.soft]
    if any(len(c) == 0 for c in hard):
        return SolveResult("unsat-hard")
    occ = np.zeros(n + 1)
    for lits, w in soft:
        for l in lits:
            occ[abs(l)] += w
    for lits in hard:
        for l in lits:
            occ[abs(l)] += 1
    order = [int(v) for v in np.argsort(-occ[1:], kind="stable") + 1]

    val = [0] * (n + 1)  # 0 unassigned, +1 true, -1 false
    best = [math.inf, None]
    nodes = 0

    def lit(l: int) -> int:
        v = val[abs(l)]
        return v if l > 0 else -v

    def propagate(trail: list[int]) -> bool:
        changed = True
        while changed:
            changed = False
            for c in hard:
                free, sat = None, False
                nfree = 0
                for l in c:
                    s = lit(l)
                    if s > 0:
                        sat = True
                        break
                    if s == 0:
                        nfree += 1
                        free = l
                if sat:
                    continue
                if nfree == 0:
                    return False
                if nfree == 1:
                    val[abs(free)] = 1 if free > 0 else -1
                    trail.append(abs(free))
                    changed = True
        return True

    def falsified() -> float:
        return math.fsum(w for lits, w in soft if all(lit(l) < 0 for l in lits))

    def search(depth: int):
        nonlocal nodes
        nodes += 1
        trail: list[int] = []
        if not propagate(trail):
            for v in trail:
                val[v] = 0
            return
        cost = falsified()
        if cost >= best[0]:
            for v in trail:
                val[v] = 0
            return
        while depth < n and val[order[depth]] != 0:
            depth += 1
        if depth == n:
            best[0], best[1] = cost, val.copy()
        else:
            v = order[depth]
            for s in (1, -1):
                val[v] = s
                search(depth + 1)
                val[v] = 0
        for v in trail:
            val[v] = 0

    search(0)
    if best[1] is None:
        return SolveResult("unsat-hard", nodes=nodes)
    assignment = tuple([False] + [x > 0 for x in best[1][1:]])
    core = tuple(i for i, c in enumerate(cnf.clauses) if c.satisfied(assignment))
    return SolveResult("sat", assignment, cnf.violated_weight(assignment), core, nodes)


def brute_force_min(cnf: CnfFormula) -> float:
    """Minimum violated soft weight by enumerating all assignments (inf if hard-unsat)."""
    n = cnf.n_vars
    bits = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    assign = np.concatenate([np.zeros((len(bits), 1), dtype=bool), bits], axis=1)

    def sat(c: WeightedClause) -> np.ndarray:
        out = np.zeros(len(assign), dtype=bool)
        for l in c.literals:
            out |= assign[:, abs(l)] if l > 0 else ~assign[:, abs(l)]
        return out

    ok = np.ones(len(assign), dtype=bool)
    for c in cnf.hard:
        ok &= sat(c)
    if not ok.any():
        return math.inf
    cost = np.zeros(len(assign))
    for c in cnf.soft:
        cost += np.where(sat(c), 0.0, c.weight)
    return float(cost[ok].min())


# ---------------------------------------------------------- classification


@dataclass
class Recognition:
    behavior: str
    status: str
    satisfied_weight: float
    threshold: float
    recognized: bool
    core: tuple[str, ...] = ()


def _exceeds(total: float, threshold: float) -> bool:
    # strict, with slack for rounding so that uniform rescaling keeps the decision
    return total - threshold > 1e-9 * max(1.0, abs(threshold))


def recognize(spec: BehaviorSpec, snapshot: Mapping[str, bool]) -> Recognition:
    cnf = encode(spec, snapshot)
    res = solve(cnf)
    if not res.sat:
        return Recognition(spec.name, res.status, 0.0, spec.threshold, False)
    total = math.fsum(c.weight for c in cnf.soft) - res.violated_soft_weight
    core = tuple(
        str(cnf.clauses[i].literals) if len(cnf.clauses[i].literals) != 1
        else ("" if cnf.clauses[i].literals[0] > 0 else "not ") + cnf.names[abs(cnf.clauses[i].literals[0])]
        for i in res.core
    )
    return Recognition(spec.name, "sat", total, spec.threshold, _exceeds(total, spec.threshold), core)


def classify(snapshot: Mapping[str, bool], specs: Sequence[BehaviorSpec] = DEFAULT_SPECS) -> str:
    """Behavior label for one snapshot; ``specs`` order is the precedence order.

    Assertions absent from the snapshot count as false.
    """
    for spec in specs:
        full = {a: bool(snapshot.get(a, False)) for a in spec.assertions}
        if recognize(spec, full).recognized:
            return spec.name
    return "safe"
