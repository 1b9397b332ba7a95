"""Level sets and slice-cardinality partitions of weighted index sets.

An index ``n = (k1, k2, k3)`` has three coordinate blocks, each in ``Z^d``.
The *fiber* of a set over a value ``v`` of one block is the set of members
whose block equals ``v``; its size equals the number of complementary pairs
occurring with ``v``.

The partition of one level set ``U_r`` (size ``C``) runs:

1. slice split at ``C**(8/9)``: members on heavy ``k3``, then ``k1``, then
   ``k2`` fibers are peeled off as slice leaves;
2. the remainder is bisected (lexicographic order) and each half slice split
   at ``|half|**(8/9)``, repeatedly, until the pieces have size at most
   ``C**(1/8)``;
3. each piece is slice split once more at ``|piece|**(8/9)`` and the
   remainder, whose fibers are at most ``C**(1/9)``, is colored into
   diagonal classes on which all three block projections are injective.

Every node records a certificate that can be re-checked from its contents.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from trimult.errors import RefusalError

SLICE_ORDER = (2, 0, 1)  # k3 fibers first, then k1, then k2


@dataclass(frozen=True, eq=False)
class WeightedIndexSet:
    keys: np.ndarray  # (count, 3 * d) integers
    weights: np.ndarray
    d: int = 1

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, 3 * self.d)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(keys) != len(weights):
            raise ValueError("keys and weights differ in length")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        if len(np.unique(keys, axis=0)) != len(keys):
            raise ValueError("duplicate keys")
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.weights)

    def subset(self, rows) -> WeightedIndexSet:
        rows = np.asarray(rows, dtype=np.int64)
        return WeightedIndexSet(self.keys[rows], self.weights[rows], self.d)

    def block_ids(self) -> np.ndarray:
        """(count, 3) array: each coordinate block replaced by an integer label."""
        if self.d == 1:
            return self.keys
        out = np.empty((len(self), 3), dtype=np.int64)
        for i in range(3):
            blk = self.keys[:, i * self.d:(i + 1) * self.d]
            out[:, i] = np.unique(blk, axis=0, return_inverse=True)[1].reshape(-1)
        return out

    def sup(self) -> float:
        return float(np.abs(self.weights).max()) if len(self) else 0.0

    @classmethod
    def from_dict(cls, entries: dict, d: int = 1) -> WeightedIndexSet:
        keys = np.array([list(np.ravel(k)) for k in entries], dtype=np.int64).reshape(-1, 3 * d)
        return cls(keys, np.array(list(entries.values()), dtype=float), d)


def _level_of(weights: np.ndarray, top: float) -> np.ndarray:
    """r with 2^(-r-1) top < |w| <= 2^(-r) top; exact at powers of two."""
    a = np.abs(weights)
    with np.errstate(divide="ignore"):
        r = np.floor(np.log2(top / a))
    r = np.where(np.isfinite(r), r, np.inf)
    fin = np.isfinite(r)
    ri = np.zeros(len(a), dtype=np.int64)
    ri[fin] = r[fin].astype(np.int64)
    for _ in range(2):
        too_big = fin & (a > np.ldexp(top, -ri))
        ri[too_big] -= 1
        too_small = fin & (a <= np.ldexp(top, -ri - 1))
        ri[too_small] += 1
    ri[~fin] = np.iinfo(np.int64).max
    return ri


def level_sets(b: WeightedIndexSet, r_max: int = 60) -> tuple[dict[int, WeightedIndexSet], WeightedIndexSet]:
    """Dyadic level sets U_r for 0 <= r <= r_max plus the residual bucket."""
    rows_by_r, residual = _level_rows(b, r_max)
    return {r: b.subset(rows) for r, rows in rows_by_r.items()}, b.subset(residual)


def _level_rows(b: WeightedIndexSet, r_max: int):
    top = b.sup()
    if top == 0:
        return {}, np.arange(len(b))
    r = _level_of(b.weights, top)
    out = {}
    for level in np.unique(r[r <= r_max]):
        out[int(level)] = np.nonzero(r == level)[0]
    return out, np.nonzero(r > r_max)[0]


def _dense_codes(ids: np.ndarray) -> np.ndarray:
    """Per-column ranks of the block ids; order preserving, so lexsorts agree."""
    if len(ids) == 0:
        return ids.astype(np.int64)
    return np.stack([np.unique(ids[:, c], return_inverse=True)[1].reshape(-1) for c in range(ids.shape[1])], axis=1)


def _heavy_mask(col: np.ndarray, threshold: float) -> np.ndarray:
    # col holds dense codes; bincount is far cheaper than unique on the many small sets
    c = col - col.min()
    return np.bincount(c)[c] > threshold


# below this many rows plain Python beats the per-call cost of numpy
SMALL = 48


def _fiber_counts(col: np.ndarray) -> np.ndarray:
    """Sizes of the nonempty fibers of a dense-coded column."""
    if len(col) <= SMALL:
        return np.fromiter(Counter(col.tolist()).values(), dtype=np.int64)
    bc = np.bincount(col - col.min())
    return bc[bc > 0]


def _slice_rows_small(ids: np.ndarray, rows: np.ndarray, threshold: float):
    sub = ids[rows].tolist()
    live = list(range(len(rows)))
    parts = []
    for coord in SLICE_ORDER:
        counts = Counter(sub[i][coord] for i in live)
        parts.append((coord, rows[[i for i in live if counts[sub[i][coord]] > threshold]]))
        live = [i for i in live if counts[sub[i][coord]] <= threshold]
    return parts, rows[live]


def _slice_rows(ids: np.ndarray, rows: np.ndarray, threshold: float):
    """Sequential peeling; returns [(coordinate, rows), x3] and the remainder rows."""
    if len(rows) <= SMALL:
        return _slice_rows_small(ids, rows, threshold)
    parts = []
    remaining = rows
    for coord in SLICE_ORDER:
        if len(remaining) == 0:
            parts.append((coord, remaining))
            continue
        heavy = _heavy_mask(ids[remaining, coord], threshold)
        parts.append((coord, remaining[heavy]))
        remaining = remaining[~heavy]
    return parts, remaining


def slice_split(S: WeightedIndexSet, threshold: float):
    """(S1, S2, S3, S4): heavy k3 fibers, then heavy k1, then heavy k2, then the rest."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    ids = _dense_codes(S.block_ids())
    parts, rest = _slice_rows(ids, np.arange(len(S)), threshold)
    return tuple(S.subset(r) for _, r in parts) + (S.subset(rest),)


def _diagonal_classes(ids: np.ndarray, rows: np.ndarray) -> list[np.ndarray]:
    """Greedy three-pass coloring: rank within k1 fibers, then k2, then k3."""
    if len(rows) == 0:
        return []
    if len(rows) <= SMALL:
        return _diagonal_classes_small(ids, rows)
    labels = np.zeros(len(rows), dtype=np.int64)
    for coord in (0, 1, 2):
        # rank of each member inside its (label, value) group, in row order
        key = np.stack([labels, ids[rows, coord]], axis=1)
        order = np.lexsort((np.arange(len(rows)), key[:, 1], key[:, 0]))
        sk = key[order]
        new_group = np.ones(len(rows), dtype=bool)
        new_group[1:] = np.any(sk[1:] != sk[:-1], axis=1)
        starts = np.maximum.accumulate(np.where(new_group, np.arange(len(rows)), 0))
        rank = np.empty(len(rows), dtype=np.int64)
        rank[order] = np.arange(len(rows)) - starts
        pair = labels * (int(rank.max()) + 1) + rank
        labels = np.unique(pair, return_inverse=True)[1].reshape(-1)
    return [rows[labels == c] for c in range(labels.max() + 1)]


def _diagonal_classes_small(ids: np.ndarray, rows: np.ndarray) -> list[np.ndarray]:
    sub = ids[rows].tolist()
    labels = [0] * len(rows)
    for coord in (0, 1, 2):
        seen: dict = {}
        pairs = []
        for lab, key in zip(labels, sub):
            rank = seen.get((lab, key[coord]), 0)
            seen[(lab, key[coord])] = rank + 1
            pairs.append((lab, rank))
        relabel = {p: k for k, p in enumerate(sorted(set(pairs)))}
        labels = [relabel[p] for p in pairs]
    groups: list[list[int]] = [[] for _ in range(max(labels) + 1)]
    for i, lab in enumerate(labels):
        groups[lab].append(i)
    return [rows[g] for g in groups]


def diagonal_decompose(S: WeightedIndexSet, fiber_bound: float) -> list[WeightedIndexSet]:
    """Split S into classes on which every block projection is injective."""
    ids = S.block_ids()
    _check_fibers(ids, np.arange(len(S)), fiber_bound)
    return [S.subset(r) for r in _diagonal_classes(ids, np.arange(len(S)))]


def _check_fibers(ids, rows, fiber_bound):
    for coord in range(3):
        if len(rows) == 0:
            return
        if len(rows) <= SMALL:
            vals, counts = zip(*Counter(ids[rows, coord].tolist()).most_common())
        else:
            vals, counts = np.unique(ids[rows, coord], return_counts=True)
        worst = int(np.argmax(counts))
        if counts[worst] > fiber_bound + 1e-9:
            raise RefusalError(
                f"fiber over k{coord + 1} = {vals[worst]} has {counts[worst]} members, "
                f"bound is {fiber_bound:.6g}"
            )


@dataclass(eq=False)
class Node:
    op: str
    rows: np.ndarray
    certificate: dict = field(default_factory=dict)
    children: list = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self, context=None):
        """Pre-order (node, context); iterative, so deep trees cost no generator chains."""
        stack = [(self, dict(context or {}))]
        while stack:
            node, ctx = stack.pop()
            if node.op == "level-set":
                ctx = dict(ctx, r=node.certificate["r"], C=node.certificate["C"])
            yield node, ctx
            stack.extend((ch, ctx) for ch in reversed(node.children))


@dataclass(eq=False)
class PartitionTree:
    root_set: WeightedIndexSet
    root: Node
    q: float | None = None

    def leaves(self):
        """(node, context) for every leaf; context carries r and C = |U_r|."""
        for node, ctx in self.root.walk():
            if node.is_leaf:
                yield node, ctx

    def pieces(self):
        for node, ctx in self.leaves():
            if node.op in ("slice", "diagonal") and len(node.rows):
                yield self.root_set.subset(node.rows), node, ctx

    def to_dict(self, with_members: bool = True) -> dict:
        keys = self.root_set.keys

        def enc(node: Node):
            rec = {"op": node.op, "size": int(len(node.rows)), "certificate": _jsonable(node.certificate)}
            if node.children:
                rec["children"] = [enc(c) for c in node.children]
            elif with_members:
                rec["members"] = keys[node.rows].tolist()
            return rec

        return {"q": self.q, "d": self.root_set.d, "size": len(self.root_set), "root": enc(self.root)}

    def to_json(self, with_members: bool = True) -> str:
        return json.dumps(self.to_dict(with_members), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _slice_node(ids, rows, threshold, op="slice-split") -> tuple[Node, Node]:
    """Node with the three slice leaves and the remainder child (returned separately)."""
    parts, rest = _slice_rows(ids, rows, threshold)
    node = Node(op, rows, {"threshold": threshold})
    for coord, r in parts:
        distinct = len(_fiber_counts(ids[r, coord])) if len(r) else 0
        node.children.append(Node("slice", r, {
            "coordinate": coord, "threshold": threshold, "distinct_values": distinct,
        }))
    remainder = Node("remainder", rest, {"threshold": threshold})
    node.children.append(remainder)
    return node, remainder


def _halve_into(node: Node, ids, target: float, piece_fn, depth: int = 0) -> None:
    """Populate ``node`` (whose rows need halving) down to pieces of size <= target."""
    rows = node.rows
    if len(rows) <= target:
        node.children.append(piece_fn(rows, depth))
        return
    order = np.lexsort(ids[rows].T[::-1])
    ordered = rows[order]
    half = (len(ordered) + 1) // 2
    hv = Node("halve", rows, {"target": target, "depth": depth + 1})
    node.children.append(hv)
    for part in (np.sort(ordered[:half]), np.sort(ordered[half:])):
        sn, rem = _slice_node(ids, part, len(part) ** (8 / 9))
        hv.children.append(sn)
        if len(rem.rows):
            _halve_into(rem, ids, target, piece_fn, depth + 1)


def halve_to_target(S: WeightedIndexSet, target: float) -> list[tuple[WeightedIndexSet, dict]]:
    """Alternate bisection and slice splitting until surviving pieces fit ``target``.

    Returns slice leaves and final pieces, each with its certificate.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    ids = _dense_codes(S.block_ids())
    top = Node("remainder", np.arange(len(S)), {})

    def piece(rows, depth):
        return Node("piece", rows, {"target": target, "depth": depth})

    _halve_into(top, ids, target, piece)
    _prune(top)
    out = []
    for node, _ in top.walk():
        if node.is_leaf and node is not top:
            out.append((S.subset(node.rows), dict(node.certificate, kind=node.op)))
    return out


def full_partition(b: WeightedIndexSet, q: float | None = None, r_max: int = 60) -> PartitionTree:
    """Certified decomposition of ``b`` into slice leaves and diagonal classes.

    ``q`` is recorded for downstream reports; the partition itself does not
    depend on it.
    """
    raw = b.block_ids()
    ids = _dense_codes(raw)
    rows_by_r, residual = _level_rows(b, r_max)
    top = b.sup()
    root = Node("root", np.arange(len(b)), {"sup": top, "r_max": r_max})
    for r, rows in sorted(rows_by_r.items()):
        C = len(rows)
        level = Node("level-set", rows, {"r": r, "C": C, "lower": np.ldexp(top, -r - 1), "upper": np.ldexp(top, -r)})
        root.children.append(level)
        fiber_bound = C ** (1 / 9)

        def piece(prow, depth, C=C, fiber_bound=fiber_bound):
            pn = Node("piece", prow, {"target": C ** (1 / 8), "depth": depth})
            sn, rem = _slice_node(ids, prow, len(prow) ** (8 / 9))
            pn.children.append(sn)
            classes = _diagonal_classes(ids, rem.rows)
            _check_fibers(raw, rem.rows, fiber_bound)
            rem.op = "diagonal-split"
            rem.certificate = {"fiber_bound": fiber_bound, "classes": len(classes),
                               "class_bound": C ** (1 / 3)}
            rem.children = [Node("diagonal", c, {}) for c in classes]
            return pn

        sn, rem = _slice_node(ids, rows, C ** (8 / 9))
        level.children.append(sn)
        if len(rem.rows):
            _halve_into(rem, ids, C ** (1 / 8), piece)
    if len(residual):
        root.children.append(Node("residual", residual, {"cutoff": np.ldexp(top, -r_max - 1) if top else 0.0}))
    _prune(root)
    return PartitionTree(b, root, q)


def _prune(node: Node) -> None:
    node.children = [c for c in node.children if len(c.rows)]
    for c in node.children:
        _prune(c)


def verify_tree(tree: PartitionTree, tol: float = 1e-12) -> list[str]:
    """Re-check cover, disjointness and every certificate; returns failure messages."""
    b = tree.root_set
    ids = _dense_codes(b.block_ids())
    w = np.abs(b.weights)
    bad = []
    for node, ctx in tree.root.walk():
        where = f"{node.op}[{len(node.rows)}]"
        if node.children:
            if len(node.rows) <= SMALL:
                merged = sorted(r for c in node.children for r in c.rows.tolist())
                overlap = len(set(merged)) != len(merged)
                cover = merged == sorted(node.rows.tolist())
            else:
                merged = np.sort(np.concatenate([c.rows for c in node.children]))
                overlap = bool(np.any(merged[1:] == merged[:-1]))
                cover = np.array_equal(merged, np.sort(node.rows))
            if overlap:
                bad.append(f"{where}: children overlap")
            if not cover:
                bad.append(f"{where}: children do not cover the node")
        cert = node.certificate
        rows = node.rows
        if node.op == "level-set":
            if np.any(w[rows] <= cert["lower"]) or np.any(w[rows] > cert["upper"]):
                bad.append(f"{where}: weight outside its dyadic band")
        elif node.op == "slice" and len(rows):
            counts = _fiber_counts(ids[rows, cert["coordinate"]])
            if counts.min() <= cert["threshold"]:
                bad.append(f"{where}: fiber of size {counts.min()} not above {cert['threshold']}")
            if len(counts) > len(rows) / cert["threshold"] + tol:
                bad.append(f"{where}: too many distinguished values")
        elif node.op == "remainder" and len(rows) and "threshold" in cert:
            for coord in range(3):
                if _fiber_counts(ids[rows, coord]).max() > cert["threshold"]:
                    bad.append(f"{where}: remainder fiber above threshold")
        elif node.op == "diagonal-split":
            for coord in range(3):
                if len(rows) and _fiber_counts(ids[rows, coord]).max() > cert["fiber_bound"] + 1e-9:
                    bad.append(f"{where}: fiber above the diagonal bound")
            if cert["classes"] > cert["class_bound"] + 1e-9:
                bad.append(f"{where}: {cert['classes']} classes exceed {cert['class_bound']:.4g}")
        elif node.op == "diagonal":
            for coord in range(3):
                if len(rows) and _fiber_counts(ids[rows, coord]).max() > 1:
                    bad.append(f"{where}: projection k{coord + 1} not injective")
        elif node.op == "piece":
            if len(rows) > cert["target"] + tol:
                bad.append(f"{where}: piece larger than target")
        elif node.op == "residual":
            if np.any(w[rows] > cert["cutoff"]):
                bad.append(f"{where}: residual weight above cutoff")
    return bad
