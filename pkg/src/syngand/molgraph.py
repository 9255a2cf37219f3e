"""Molecular graphs over a fixed heavy-atom vocabulary.

Covers a SMILES subset parser, a canonical writer built on iterative
neighbourhood refinement, a valence-table validity check and a hashed
circular fingerprint.
"""
from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass

import numpy as np

# Heavy-atom vocabulary; hydrogen is the implicit 13th element.
ATOMS = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Se", "Br", "I")
MAX_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "F": 1, "Si": 4, "P": 5,
               "S": 6, "Cl": 1, "Se": 6, "Br": 1, "I": 5}
ATOM_INDEX = {sym: i for i, sym in enumerate(ATOMS)}

NO_BOND, SINGLE, DOUBLE, TRIPLE, AROMATIC = range(5)
BONDS = ("NO_BOND", "SINGLE", "DOUBLE", "TRIPLE", "AROMATIC")
BOND_ORDERS = (0.0, 1.0, 2.0, 3.0, 1.5)
BOND_SYMBOLS = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}

N_ATOM_TYPES = len(ATOMS)
N_BOND_TYPES = len(BONDS)
DEFAULT_MAX_NODES = 60

_ORGANIC = {"B", "C", "N", "O", "S", "P", "F", "Cl", "Br", "I"}
_AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "s": "S", "p": "P"}
_AROMATIC_BRACKET = {"b": "B", "c": "C", "n": "N", "o": "O", "s": "S",
                     "p": "P", "se": "Se"}
_BRACKET_RE = re.compile(r"^([A-Z][a-z]?|se|[bcnops])(H\d*)?$")


class SmilesError(ValueError):
    """Base class for SMILES parse failures."""


class EmptyInput(SmilesError):
    pass


class UnsupportedToken(SmilesError):
    pass


class UnsupportedElement(UnsupportedToken):
    pass


class UnclosedRing(SmilesError):
    pass


class UnclosedBranch(SmilesError):
    pass


class SmilesSyntaxError(SmilesError):
    pass


class TooManyAtoms(SmilesError):
    pass


@dataclass(frozen=True)
class MolecularGraph:
    """Heavy-atom graph: ``nodes[i]`` indexes ATOMS, ``edges[i, j]`` indexes BONDS."""

    nodes: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=np.int64))
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.nodes.shape[0])

    def validate(self, max_nodes: int = DEFAULT_MAX_NODES) -> None:
        n = self.n
        if not 1 <= n <= max_nodes:
            raise ValueError(f"node count {n} outside [1, {max_nodes}]")
        if self.edges.shape != (n, n):
            raise ValueError(f"edge matrix shape {self.edges.shape} != ({n}, {n})")
        if self.nodes.min() < 0 or self.nodes.max() >= N_ATOM_TYPES:
            raise ValueError("node type outside the atom vocabulary")
        if self.edges.min() < 0 or self.edges.max() >= N_BOND_TYPES:
            raise ValueError("edge type outside the bond vocabulary")
        if not np.array_equal(self.edges, self.edges.T):
            raise ValueError("edge matrix is not symmetric")
        if np.any(np.diag(self.edges) != NO_BOND):
            raise ValueError("self-loops are not allowed")

    def permute(self, perm) -> "MolecularGraph":
        """Relabel so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return MolecularGraph(self.nodes[perm], self.edges[np.ix_(perm, perm)])

    def degree(self) -> np.ndarray:
        return (self.edges != NO_BOND).sum(axis=1)

    def __eq__(self, other):
        if not isinstance(other, MolecularGraph):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.edges, other.edges))

    def __hash__(self):
        return hash((self.nodes.tobytes(), self.edges.tobytes()))


# --------------------------------------------------------------------------
# parsing

def _tokenize(text):
    i = 0
    L = len(text)
    while i < L:
        ch = text[i]
        if ch == "[":
            j = text.find("]", i)
            if j < 0:
                raise SmilesSyntaxError(f"unterminated bracket atom at {i}")
            yield "bracket", text[i + 1:j], i
            i = j + 1
        elif ch in "-=#:":
            yield "bond", ch, i
            i += 1
        elif ch in "()":
            yield ch, ch, i
            i += 1
        elif ch == ".":
            yield "dot", ch, i
            i += 1
        elif ch.isdigit():
            yield "ring", int(ch), i
            i += 1
        elif ch == "%":
            label = text[i + 1:i + 3]
            if len(label) == 2 and label.isdigit():
                yield "ring", int(label), i
                i += 3
            else:
                raise SmilesSyntaxError(f"malformed %nn ring label at {i}")
        elif text.startswith(("Cl", "Br"), i):
            yield "atom", (text[i:i + 2], False), i
            i += 2
        elif ch in _ORGANIC:
            yield "atom", (ch, False), i
            i += 1
        elif ch in _AROMATIC_ORGANIC:
            yield "atom", (_AROMATIC_ORGANIC[ch], True), i
            i += 1
        else:
            raise UnsupportedToken(f"unsupported token {ch!r} at {i}")


def _parse_bracket(body, pos):
    if any(c in body for c in "+-@:"):
        raise UnsupportedToken(f"charge, stereo or atom-class marker in [{body}] at {pos}")
    if body[:1].isdigit():
        raise UnsupportedToken(f"isotope in [{body}] at {pos}")
    if body.startswith("*"):
        raise UnsupportedToken(f"wildcard atom at {pos}")
    m = _BRACKET_RE.match(body)
    if not m:
        raise UnsupportedToken(f"unsupported bracket atom [{body}] at {pos}")
    sym = m.group(1)
    if sym in _AROMATIC_BRACKET:
        return _AROMATIC_BRACKET[sym], True
    if sym not in ATOM_INDEX:
        raise UnsupportedElement(f"element {sym} outside the atom vocabulary at {pos}")
    return sym, False


def parse_smiles(text: str, max_nodes: int = DEFAULT_MAX_NODES) -> MolecularGraph:
    """Parse a SMILES string from the supported subset into a heavy-atom graph."""
    text = text.strip()
    if not text:
        raise EmptyInput("empty SMILES")
    atoms = []      # element symbols
    aromatic = []   # lowercase-written flags
    bonds = {}      # (i, j) -> bond index
    prev = None
    pending_bond = None
    stack = []
    rings = {}      # label -> (atom index, bond or None)

    def add_bond(a, b, bond):
        if a == b or (min(a, b), max(a, b)) in bonds:
            raise SmilesSyntaxError("duplicate bond or self-loop")
        if bond is None:
            bond = AROMATIC if aromatic[a] and aromatic[b] else SINGLE
        bonds[(min(a, b), max(a, b))] = bond

    for kind, val, pos in _tokenize(text):
        if kind in ("atom", "bracket"):
            sym, aro = val if kind == "atom" else _parse_bracket(val, pos)
            atoms.append(sym)
            aromatic.append(aro)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending_bond)
            pending_bond = None
            prev = idx
        elif kind == "bond":
            if prev is None or pending_bond is not None:
                raise SmilesSyntaxError(f"misplaced bond symbol at {pos}")
            pending_bond = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}[val]
        elif kind == "(":
            if prev is None:
                raise SmilesSyntaxError(f"branch without an anchor atom at {pos}")
            stack.append(prev)
        elif kind == ")":
            if not stack or pending_bond is not None:
                raise SmilesSyntaxError(f"unbalanced ')' at {pos}")
            prev = stack.pop()
        elif kind == "dot":
            if stack or pending_bond is not None:
                raise SmilesSyntaxError(f"misplaced '.' at {pos}")
            prev = None
        elif kind == "ring":
            if prev is None:
                raise SmilesSyntaxError(f"ring label without an atom at {pos}")
            if val in rings:
                other, obond = rings.pop(val)
                if obond is not None and pending_bond is not None and obond != pending_bond:
                    raise SmilesSyntaxError(f"conflicting ring-closure bonds at {pos}")
                add_bond(other, prev, pending_bond if pending_bond is not None else obond)
            else:
                rings[val] = (prev, pending_bond)
            pending_bond = None
    if pending_bond is not None:
        raise SmilesSyntaxError("dangling bond at end of input")
    if stack:
        raise UnclosedBranch("unclosed branch")
    if rings:
        raise UnclosedRing(f"unclosed ring label(s) {sorted(rings)}")
    n = len(atoms)
    if n == 0:
        raise EmptyInput("no atoms")
    if n > max_nodes:
        raise TooManyAtoms(f"{n} heavy atoms exceeds max_nodes={max_nodes}")
    nodes = np.array([ATOM_INDEX[s] for s in atoms], dtype=np.int64)
    edges = np.zeros((n, n), dtype=np.int64)
    for (a, b), bond in bonds.items():
        edges[a, b] = edges[b, a] = bond
    return MolecularGraph(nodes, edges)


# --------------------------------------------------------------------------
# canonical ordering and writing

def _refine(g: MolecularGraph, colors: list) -> list:
    """Refine colours until stable; colours are ranks of sorted signatures."""
    n = g.n
    nbrs = [[(j, int(g.edges[i, j])) for j in range(n) if g.edges[i, j]] for i in range(n)]
    n_classes = len(set(colors))
    while True:
        sigs = [(colors[i], tuple(sorted((colors[j], b) for j, b in nbrs[i])))
                for i in range(n)]
        ranking = {s: r for r, s in enumerate(sorted(set(sigs)))}
        new = [ranking[s] for s in sigs]
        if len(ranking) == n_classes:
            return new
        colors, n_classes = new, len(ranking)


def _initial_colors(g: MolecularGraph) -> list:
    deg = g.degree()
    keys = []
    for i in range(g.n):
        orders = tuple(sorted(int(b) for b in g.edges[i] if b))
        keys.append((int(g.nodes[i]), int(deg[i]), orders))
    ranking = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [ranking[k] for k in keys]


def _atom_token(sym: str, lower: bool) -> str:
    if lower:
        return "[se]" if sym == "Se" else sym.lower()
    if sym in _ORGANIC:
        return sym
    return f"[{sym}]"


def _write_ordered(g: MolecularGraph, rank: list) -> str:
    """Write SMILES by DFS visiting atoms and neighbours in increasing rank."""
    n = g.n
    edges = g.edges
    nbrs = [sorted((j for j in range(n) if edges[i, j]), key=lambda j: rank[j])
            for i in range(n)]
    lower = [any(edges[i, j] == AROMATIC for j in nbrs[i]) and ATOMS[g.nodes[i]] in
             ("B", "C", "N", "O", "S", "P", "Se") for i in range(n)]

    # first pass: spanning forest and ring-closure bonds
    visited = [False] * n
    children = [[] for _ in range(n)]
    closures = [[] for _ in range(n)]  # (partner, opens) in encounter order
    order = sorted(range(n), key=lambda i: rank[i])
    roots = []
    for start in order:
        if visited[start]:
            continue
        roots.append(start)
        visited[start] = True
        stack = [(start, -1, iter(nbrs[start]))]
        on_path = set()
        while stack:
            atom, parent, it = stack[-1]
            on_path.add(atom)
            advanced = False
            for j in it:
                if j == parent:
                    continue
                if visited[j]:
                    if j in on_path and not any(p == atom for p, _ in closures[j]):
                        closures[j].append((atom, True))
                        closures[atom].append((j, False))
                    continue
                visited[j] = True
                children[atom].append(j)
                stack.append((j, atom, iter(nbrs[j])))
                advanced = True
                break
            if not advanced:
                stack.pop()
                on_path.discard(atom)

    def bond_text(a, b):
        bond = int(edges[a, b])
        if bond == SINGLE:
            return "-" if lower[a] and lower[b] else ""
        if bond == AROMATIC:
            return "" if lower[a] and lower[b] else ":"
        return BOND_SYMBOLS[bond]

    out = []
    free = []
    open_labels = {}
    next_label = [1]

    def label_text(k):
        return str(k) if k < 10 else f"%{k:02d}"

    def emit(atom):
        out.append(_atom_token(ATOMS[g.nodes[atom]], lower[atom]))
        for partner, opens in closures[atom]:
            if opens:
                if free:
                    k = min(free)
                    free.remove(k)
                else:
                    k = next_label[0]
                    next_label[0] += 1
                open_labels[(atom, partner)] = k
                out.append(label_text(k))
            else:
                k = open_labels.pop((partner, atom))
                out.append(bond_text(atom, partner) + label_text(k))
                free.append(k)
        kids = children[atom]
        for c in kids[:-1]:
            out.append("(")
            out.append(bond_text(atom, c))
            emit(c)
            out.append(")")
        if kids:
            out.append(bond_text(atom, kids[-1]))
            emit(kids[-1])

    parts = []
    for r in roots:
        out = []
        emit(r)
        parts.append("".join(out))
    return ".".join(parts)


def canonical_ranks(g: MolecularGraph) -> list:
    """Canonical total order of the nodes (rank per node).

    Refinement partitions the atoms; remaining ties are broken by
    individualising each member of the first smallest tied cell and keeping
    the branch whose written string is lexicographically smallest.
    """
    best = [None, None]

    def search(colors):
        colors = _refine(g, colors)
        cells = {}
        for i, c in enumerate(colors):
            cells.setdefault(c, []).append(i)
        tied = [cell for cell in cells.values() if len(cell) > 1]
        if not tied:
            s = _write_ordered(g, colors)
            if best[0] is None or s < best[0]:
                best[0], best[1] = s, colors
            return
        cell = min(tied, key=lambda c: (len(c), colors[c[0]]))
        base = [2 * c for c in colors]
        for v in cell:
            trial = list(base)
            trial[v] -= 1
            search(trial)

    search(_initial_colors(g))
    return best[1]


def write_canonical_smiles(g: MolecularGraph) -> str:
    return _write_ordered(g, canonical_ranks(g))


def canonicalize(smiles: str, max_nodes: int = DEFAULT_MAX_NODES) -> str:
    return write_canonical_smiles(parse_smiles(smiles, max_nodes=max_nodes))


# --------------------------------------------------------------------------
# validity

def relaxed_validity(g: MolecularGraph) -> bool:
    """Valence-bound check without kekulisation.

    Non-aromatic bonds contribute their order. ``k`` aromatic bonds contribute
    ``min(1.5 k, k + 1)`` rounded up, since an aromatic atom hosts at most one
    formal double bond. Heteroatoms may instead contribute ``k`` (lone-pair
    donors such as furan O or pyrrole N). An atom with exactly one aromatic
    bond is invalid.
    """
    orders = np.asarray(BOND_ORDERS)
    for i in range(g.n):
        row = g.edges[i]
        k = int((row == AROMATIC).sum())
        if k == 1:
            return False
        plain = float(orders[row[row != AROMATIC]].sum())
        limit = MAX_VALENCE[ATOMS[g.nodes[i]]]
        valence = plain + math.ceil(min(1.5 * k, k + 1))
        if valence <= limit:
            continue
        if k and ATOMS[g.nodes[i]] != "C" and plain + k <= limit:
            continue
        return False
    return True


# --------------------------------------------------------------------------
# fingerprint

_FP_KEY = b"syngand-ecfp-v1"


def _hash64(*ints) -> int:
    data = struct.pack(f"<{len(ints)}q", *ints)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8, key=_FP_KEY).digest(), "little")


def fingerprint(g: MolecularGraph, bits: int = 1024, radius: int = 2) -> np.ndarray:
    """Hashed circular count fingerprint folded into ``bits`` buckets."""
    if bits <= 0 or bits & (bits - 1):
        raise ValueError("bits must be a power of two")
    if not 0 <= radius <= 3:
        raise ValueError("radius must be in [0, 3]")
    deg = g.degree()
    ids = []
    for i in range(g.n):
        valence = int(round(2 * np.asarray(BOND_ORDERS)[g.edges[i]].sum()))
        aromatic = int(np.any(g.edges[i] == AROMATIC))
        ids.append(_hash64(int(g.nodes[i]), int(deg[i]), valence, aromatic))
    counts = np.zeros(bits, dtype=np.int64)
    mask = bits - 1
    for r in range(radius + 1):
        for h in ids:
            counts[h & mask] += 1
        if r == radius:
            break
        new = []
        for i in range(g.n):
            env = sorted((int(g.edges[i, j]), ids[j]) for j in range(g.n) if g.edges[i, j])
            flat = [r + 1, ids[i] - (1 << 63)]
            for b, h in env:
                flat.extend((b, h - (1 << 63)))
            new.append(_hash64(*flat))
        ids = new
    return counts
