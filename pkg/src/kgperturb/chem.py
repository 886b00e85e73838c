"""SMILES parsing, Bemis-Murcko scaffolds and group-disjoint splits.

Only a practical subset of SMILES is understood: organic-subset and
bracket atoms, branches, ring closures (digits and ``%nn``), explicit bond
symbols and lowercase aromatic atoms. Isotopes, chirality, directional
bonds and atom classes are read and thrown away.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import (
    AllOneScaffold,
    EmptyInput,
    SmilesError,
    SplitError,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownAtomSymbol,
)

EMPTY_SCAFFOLD = "∅"
AROMATIC = 1.5

ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_ORGANIC = {"b", "c", "n", "o", "p", "s"}
AROMATIC_BRACKET = {"b", "c", "n", "o", "p", "s", "se", "as"}
DEFAULT_VALENCE = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
ELEMENTS = set("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu
Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs
Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl
Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr
""".split())
BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3, ":": AROMATIC, "/": 1, "\\": 1}


@dataclass
class Atom:
    element: str  # capitalised element symbol
    aromatic: bool = False
    charge: int = 0
    hcount: int = 0


@dataclass
class Molecule:
    atoms: List[Atom]
    bonds: List[Tuple[int, int, float]]
    ring_atoms: List[bool] = field(default_factory=list)
    ring_bonds: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.ring_bonds:
            self.ring_bonds = _ring_bonds(len(self.atoms), self.bonds)
        if not self.ring_atoms:
            flags = [False] * len(self.atoms)
            for (i, j, _), ring in zip(self.bonds, self.ring_bonds):
                if ring:
                    flags[i] = flags[j] = True
            self.ring_atoms = flags

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def adjacency(self) -> List[List[Tuple[int, float]]]:
        adj: List[List[Tuple[int, float]]] = [[] for _ in self.atoms]
        for i, j, order in self.bonds:
            adj[i].append((j, order))
            adj[j].append((i, order))
        return adj


def _ring_bonds(n: int, bonds: Sequence[Tuple[int, int, float]]) -> List[bool]:
    """A bond lies on a cycle iff it is not a bridge."""
    adj: List[List[Tuple[int, int]]] = [[] for _ in range(n)]
    for e, (i, j, _) in enumerate(bonds):
        adj[i].append((j, e))
        adj[j].append((i, e))
    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * len(bonds)
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, parent_edge, it = stack[-1]
            advanced = False
            for u, e in it:
                if e == parent_edge:
                    continue
                if disc[u] == -1:
                    disc[u] = low[u] = timer
                    timer += 1
                    stack.append((u, e, iter(adj[u])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[u])
            if advanced:
                continue
            stack.pop()
            if stack:
                p = stack[-1][0]
                low[p] = min(low[p], low[v])
                if low[v] > disc[p]:
                    is_bridge[parent_edge] = True
    return [not b for b in is_bridge]


# -- parser -------------------------------------------------------------------

def _implicit_h(atom: Atom, bond_orders: List[float]) -> int:
    valences = DEFAULT_VALENCE.get(atom.element)
    if valences is None:
        return 0
    used = sum(1 if o == AROMATIC else o for o in bond_orders)
    if atom.aromatic:
        used += 1
    for v in valences:
        if v >= used:
            return int(v - used)
    return 0


def _parse_bracket(s: str, start: int) -> Tuple[Atom, int]:
    end = s.find("]", start)
    if end < 0:
        raise UnknownAtomSymbol("unterminated bracket atom", start)
    body = s[start + 1:end]
    k = 0
    while k < len(body) and body[k].isdigit():  # isotope, dropped
        k += 1
    sym = None
    for cand in (body[k:k + 2], body[k:k + 1]):
        if cand in AROMATIC_BRACKET:
            sym, aromatic = cand, True
            break
        if cand in ELEMENTS:
            sym, aromatic = cand, False
            break
    if sym is None:
        raise UnknownAtomSymbol(f"unknown atom symbol in [{body}]", start)
    k += len(sym)
    while k < len(body) and body[k] == "@":  # chirality, dropped
        k += 1
    for tag in ("TH", "AL", "SP", "TB", "OH"):
        if body.startswith(tag, k):
            k += 2
            while k < len(body) and body[k].isdigit():
                k += 1
    hcount = 0
    if k < len(body) and body[k] == "H":
        k += 1
        hcount = 1
        if k < len(body) and body[k].isdigit():
            hcount = int(body[k])
            k += 1
    charge = 0
    if k < len(body) and body[k] in "+-":
        sign = 1 if body[k] == "+" else -1
        k += 1
        if k < len(body) and body[k].isdigit():
            j = k
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * int(body[j:k])
        else:
            charge = sign
            while k < len(body) and body[k] == ("+" if sign > 0 else "-"):
                charge += sign
                k += 1
    if k < len(body) and body[k] == ":":  # atom class, dropped
        k += 1
        while k < len(body) and body[k].isdigit():
            k += 1
    if k != len(body):
        raise UnknownAtomSymbol(f"cannot parse bracket atom [{body}]", start)
    element = sym.capitalize() if aromatic else sym
    return Atom(element, aromatic, charge, hcount), end + 1


def parse_smiles(s: str) -> Molecule:
    """Parse ``s`` into a :class:`Molecule` with ring flags set."""
    if not s or not s.strip():
        raise EmptyInput("empty SMILES", 0)
    atoms: List[Atom] = []
    bonds: List[Tuple[int, int, float]] = []
    explicit_h: List[bool] = []
    prev: Optional[int] = None
    pending: Optional[str] = None
    branches: List[Tuple[Optional[int], int]] = []
    rings: Dict[int, Tuple[int, Optional[str], int]] = {}
    i = 0

    def bond_order(a: int, b: int, symbol: Optional[str]) -> float:
        if symbol is not None:
            return BOND_SYMBOLS[symbol]
        if atoms[a].aromatic and atoms[b].aromatic:
            return AROMATIC
        return 1

    def add_atom(atom: Atom, bracket: bool):
        nonlocal prev, pending
        atoms.append(atom)
        explicit_h.append(bracket)
        idx = len(atoms) - 1
        if prev is not None:
            bonds.append((prev, idx, bond_order(prev, idx, pending)))
        elif pending is not None:
            raise SmilesError("bond without preceding atom", i)
        pending = None
        prev = idx

    while i < len(s):
        ch = s[i]
        if ch == "[":
            atom, nxt = _parse_bracket(s, i)
            add_atom(atom, True)
            i = nxt
            continue
        two = s[i:i + 2]
        if two in ("Cl", "Br"):
            add_atom(Atom(two), False)
            i += 2
            continue
        if ch in ORGANIC:
            add_atom(Atom(ch), False)
        elif ch in AROMATIC_ORGANIC:
            add_atom(Atom(ch.upper(), aromatic=True), False)
        elif ch in BOND_SYMBOLS:
            pending = ch
        elif ch == "(":
            if prev is None:
                raise UnbalancedParenthesis("branch without preceding atom", i)
            branches.append((prev, i))
        elif ch == ")":
            if not branches:
                raise UnbalancedParenthesis("unmatched ')'", i)
            prev, _ = branches.pop()
            pending = None
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                digits = s[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError("malformed %nn ring closure", i)
                label, width = int(digits), 3
            else:
                label, width = int(ch), 1
            if prev is None:
                raise SmilesError("ring closure without preceding atom", i)
            if label in rings:
                other, sym, _ = rings.pop(label)
                if sym is not None and pending is not None and BOND_SYMBOLS[sym] != BOND_SYMBOLS[pending]:
                    raise SmilesError("conflicting ring-closure bond symbols", i)
                if other == prev:
                    raise SmilesError("ring closure to the same atom", i)
                bonds.append((other, prev, bond_order(other, prev, pending or sym)))
            else:
                rings[label] = (prev, pending, i)
            pending = None
            i += width
            continue
        elif ch == ".":
            prev = None
            pending = None
        else:
            raise UnknownAtomSymbol(f"unexpected character {ch!r}", i)
        i += 1

    if branches:
        raise UnbalancedParenthesis("unclosed '('", branches[-1][1])
    if rings:
        offset = min(off for _, _, off in rings.values())
        raise UnclosedRing("unclosed ring bond", offset)
    if pending is not None:
        raise SmilesError("dangling bond at end of input", len(s) - 1)
    if not atoms:
        raise EmptyInput("no atoms", 0)

    orders: List[List[float]] = [[] for _ in atoms]
    for a, b, o in bonds:
        orders[a].append(o)
        orders[b].append(o)
    for k, atom in enumerate(atoms):
        if not explicit_h[k]:
            atom.hcount = _implicit_h(atom, orders[k])
    return Molecule(atoms, bonds)


# -- scaffolds -----------------------------------------------------------------

def murcko_graph(m: Molecule) -> Tuple[List[int], List[Tuple[int, int, float]]]:
    """Atoms and bonds surviving terminal pruning (indices into ``m``)."""
    alive = [True] * m.n_atoms
    degree = [0] * m.n_atoms
    adj = m.adjacency()
    for i, j, _ in m.bonds:
        degree[i] += 1
        degree[j] += 1
    queue = [v for v in range(m.n_atoms) if not m.ring_atoms[v] and degree[v] <= 1]
    while queue:
        v = queue.pop()
        if not alive[v]:
            continue
        alive[v] = False
        for u, _ in adj[v]:
            if alive[u]:
                degree[u] -= 1
                if not m.ring_atoms[u] and degree[u] <= 1:
                    queue.append(u)
    kept = [v for v in range(m.n_atoms) if alive[v]]
    bonds = [(i, j, o) for i, j, o in m.bonds if alive[i] and alive[j]]
    return kept, bonds


def _atom_label(atom: Atom) -> str:
    return atom.element.lower() if atom.aromatic else atom.element


def _refine(colors: List[int], adj) -> List[int]:
    n_classes = len(set(colors))
    while True:
        sigs = [
            (colors[v], tuple(sorted((o, colors[u]) for u, o, _ in adj[v])))
            for v in range(len(colors))
        ]
        rank = {sig: r for r, sig in enumerate(sorted(set(sigs)))}
        new = [rank[sig] for sig in sigs]
        if len(rank) == n_classes:
            return new
        colors, n_classes = new, len(rank)


_BOND_TEXT = {1: "-", 2: "=", 3: "#", AROMATIC: ":"}


def _bond_text(aromatic: List[bool], a: int, b: int, o: float) -> str:
    both = aromatic[a] and aromatic[b]
    if o == AROMATIC:
        return "" if both else ":"
    if o == 1:
        return "-" if both else ""
    return _BOND_TEXT[o]


def _write_smiles(labels: List[str], aromatic: List[bool], adj, rank: List[int]) -> str:
    """DFS serialisation of one connected component, neighbours visited in rank order."""
    n = len(labels)
    start = min(range(n), key=lambda v: rank[v])
    visited = [False] * n
    children: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
    closures: List[List[Tuple[int, float, int]]] = [[] for _ in range(n)]
    used = set()

    def dfs(v: int):
        visited[v] = True
        for u, o, e in sorted(adj[v], key=lambda t: (rank[t[0]], t[1], t[2])):
            if e in used:
                continue
            used.add(e)
            if visited[u]:
                closures[u].append((v, o, e))
                closures[v].append((u, o, e))
            else:
                children[v].append((u, o))
                dfs(u)

    dfs(start)
    out: List[str] = []
    free: List[int] = []
    open_digits: Dict[int, int] = {}
    high = [0]

    def emit(v: int):
        sym = labels[v]
        out.append(sym if sym in ORGANIC or sym in AROMATIC_ORGANIC else f"[{sym}]")
        for u, o, e in sorted(closures[v], key=lambda t: (rank[t[0]], t[2])):
            if e in open_digits:
                d = open_digits.pop(e)
                free.append(d)
            else:
                if free:
                    free.sort()
                    d = free.pop(0)
                else:
                    high[0] += 1
                    d = high[0]
                open_digits[e] = d
            out.append(_bond_text(aromatic, v, u, o) + (str(d) if d < 10 else f"%{d:02d}"))
        for idx, (u, o) in enumerate(children[v]):
            last = idx == len(children[v]) - 1
            if not last:
                out.append("(")
            out.append(_bond_text(aromatic, v, u, o))
            emit(u)
            if not last:
                out.append(")")

    emit(start)
    return "".join(out)


def _component_key(labels: List[str], aromatic: List[bool], adj) -> str:
    n = len(labels)
    init = [(labels[v], len(adj[v]), tuple(sorted(o for _, o, _ in adj[v]))) for v in range(n)]
    table = {sig: r for r, sig in enumerate(sorted(set(init)))}
    best: List[Optional[str]] = [None]

    def search(colors: List[int]):
        # individualise-and-refine; the minimum over all leaves is isomorphism invariant
        colors = _refine(colors, adj)
        counts: Dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        tied = [c for c, k in counts.items() if k > 1]
        if not tied:
            s = _write_smiles(labels, aromatic, adj, colors)
            if best[0] is None or s < best[0]:
                best[0] = s
            return
        target = min(tied)
        for v in range(n):
            if colors[v] == target:
                branch = [2 * c + 1 for c in colors]
                branch[v] = 2 * target
                search(branch)

    search([table[sig] for sig in init])
    return best[0]


def canonical_key(labels: List[str], aromatic: List[bool], bonds: Sequence[Tuple[int, int, float]]) -> str:
    """Canonical string of a labelled graph: equal iff the labelled graphs are isomorphic."""
    n = len(labels)
    if n == 0:
        return EMPTY_SCAFFOLD
    adj: List[List[Tuple[int, float, int]]] = [[] for _ in range(n)]
    for e, (i, j, o) in enumerate(bonds):
        adj[i].append((j, o, e))
        adj[j].append((i, o, e))
    comp = [-1] * n
    parts = []
    for root in range(n):
        if comp[root] >= 0:
            continue
        members, stack = [], [root]
        comp[root] = root
        while stack:
            v = stack.pop()
            members.append(v)
            for u, _, _ in adj[v]:
                if comp[u] < 0:
                    comp[u] = root
                    stack.append(u)
        members.sort()
        local = {v: k for k, v in enumerate(members)}
        sub_adj = [[(local[u], o, e) for u, o, e in adj[v]] for v in members]
        parts.append(_component_key([labels[v] for v in members], [aromatic[v] for v in members], sub_adj))
    return ".".join(sorted(parts))


def murcko_scaffold(m: Molecule) -> str:
    """Scaffold key of ``m``; acyclic molecules map to ``"∅"``."""
    if isinstance(m, str):
        m = parse_smiles(m)
    kept, bonds = murcko_graph(m)
    if not kept:
        return EMPTY_SCAFFOLD
    local = {v: k for k, v in enumerate(kept)}
    return canonical_key(
        [_atom_label(m.atoms[v]) for v in kept],
        [m.atoms[v].aromatic for v in kept],
        [(local[i], local[j], o) for i, j, o in bonds],
    )


def scaffold_key(smiles: str) -> str:
    return murcko_scaffold(parse_smiles(smiles))


# -- splits ---------------------------------------------------------------------

@dataclass
class SplitAssignment:
    train: List[str]
    test: List[str]
    seed: int
    achieved_train_fraction: float
    mode: str = "scaffold"
    excluded: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "seed": int(self.seed),
            "achieved_train_fraction": self.achieved_train_fraction,
            "train": list(self.train),
            "test": list(self.test),
            "excluded": list(self.excluded),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SplitAssignment":
        return cls(
            train=list(d["train"]), test=list(d["test"]), seed=int(d["seed"]),
            achieved_train_fraction=float(d["achieved_train_fraction"]),
            mode=d.get("mode", "scaffold"), excluded=list(d.get("excluded", [])),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _check_fraction(train_fraction: float):
    if not 0 < train_fraction < 1:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")


def scaffold_split(drugs: Iterable[Tuple[str, str]], train_fraction: float = 0.8, seed: int = 0) -> SplitAssignment:
    """Assign whole scaffold groups to train until the target fraction is reached.

    Unparseable SMILES are excluded and listed in ``excluded``.
    """
    _check_fraction(train_fraction)
    groups: Dict[str, List[str]] = {}
    excluded = []
    for drug_id, smi in drugs:
        try:
            key = scaffold_key(smi)
        except SmilesError:
            excluded.append(drug_id)
            continue
        groups.setdefault(key, []).append(drug_id)
    if len(groups) < 2:
        raise AllOneScaffold(f"{len(groups)} scaffold group(s); cannot form a nonempty test set")
    keys = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(keys))
    total = sum(len(v) for v in groups.values())
    train, test = [], []
    for k in order:
        members = groups[keys[k]]
        (train if len(train) < train_fraction * total else test).extend(members)
    if not test:
        raise AllOneScaffold("greedy fill left the test side empty")
    return SplitAssignment(train, test, seed, len(train) / total, "scaffold", excluded)


def random_split(drug_ids: Sequence[str], train_fraction: float = 0.8, seed: int = 0) -> SplitAssignment:
    _check_fraction(train_fraction)
    ids = list(drug_ids)
    n_train = int(round(train_fraction * len(ids)))
    if n_train == 0 or n_train == len(ids):
        raise SplitError(f"fraction {train_fraction} of {len(ids)} drugs leaves one side empty")
    perm = np.random.default_rng(seed).permutation(len(ids))
    train = [ids[k] for k in perm[:n_train]]
    test = [ids[k] for k in perm[n_train:]]
    return SplitAssignment(train, test, seed, n_train / len(ids), "random")


def scaffold_audit(split: SplitAssignment, smiles: Dict[str, str]) -> Dict[str, Dict[str, int]]:
    """Recompute scaffold keys on both sides: ``{key: {train_count, test_count}}``."""
    audit: Dict[str, Dict[str, int]] = {}
    for side, ids in (("train_count", split.train), ("test_count", split.test)):
        for d in ids:
            entry = audit.setdefault(scaffold_key(smiles[d]), {"train_count": 0, "test_count": 0})
            entry[side] += 1
    return dict(sorted(audit.items()))


def overlapping_scaffolds(audit: Dict[str, Dict[str, int]]) -> List[str]:
    return [k for k, v in audit.items() if v["train_count"] and v["test_count"]]
