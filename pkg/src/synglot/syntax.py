"""Tree structure features: leaf distances, depths, subtoken linking, masks.

The model never sees internal tree nodes directly. What it consumes is:

- ``dist[i][j]``: shortest undirected path length between leaves i and j,
- ``depth[j]``: path length from leaf j to the root,
- a 0/1 linking matrix mapping BPE subtokens to leaves, which propagates
  those quantities to subtoken granularity (same-leaf subtokens are 1 apart),
- an attention mask that allows position pairs with distance strictly below
  a threshold sigma and blocks the rest with a large negative sentinel.

Trees come either from the toy-language parsers or from an AST-JSON
document, so externally parsed trees can be fed through the same pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

MASK_SENTINEL = -1e9
DEFAULT_SIGMA = 10


class SchemaError(Exception):
    """A document failed structural validation."""


@dataclass(frozen=True)
class SyntaxTree:
    """Concrete syntax tree in topological order.

    ``parents[i] < i`` for every non-root node and ``parents[root] == -1``;
    ``leaf_ids`` lists leaf node ids left to right, and each leaf's label is
    its token text.
    """

    labels: tuple[str, ...]
    parents: tuple[int, ...]
    leaf_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        n = len(self.labels)
        if n == 0 or len(self.parents) != n:
            raise ValueError("labels and parents must be same nonzero length")
        roots = [i for i, p in enumerate(self.parents) if p == -1]
        if roots != [0]:
            raise ValueError("node 0 must be the unique root")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ValueError(f"node {i} has parent {p}; parents must precede children")
        has_child = set(self.parents)
        for leaf in self.leaf_ids:
            if leaf in has_child:
                raise ValueError(f"leaf {leaf} has children")
        if set(range(n)) - has_child != set(self.leaf_ids):
            raise ValueError("leaf_ids must list exactly the childless nodes")

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    def leaf_labels(self) -> tuple[str, ...]:
        return tuple(self.labels[i] for i in self.leaf_ids)

    def to_json(self) -> dict:
        nodes = []
        leaf_index = {leaf: k for k, leaf in enumerate(self.leaf_ids)}
        for i, label in enumerate(self.labels):
            nodes.append(
                {
                    "node_id": i,
                    "label": label,
                    "parent_id": None if self.parents[i] == -1 else self.parents[i],
                    "is_leaf": i in leaf_index,
                    "leaf_index": leaf_index.get(i),
                }
            )
        return {"nodes": nodes}


@dataclass(frozen=True)
class LeafStructure:
    """Pairwise leaf distances and leaf depths (both in tree edges)."""

    dist: np.ndarray   # (n_leaves, n_leaves) int64
    depth: np.ndarray  # (n_leaves,) int64

    def to_json(self) -> dict:
        return {"dist": self.dist.tolist(), "depth": self.depth.tolist()}


@dataclass(frozen=True)
class SubtokenStructure:
    """Leaf structure propagated to BPE subtokens via the linking matrix."""

    linking: np.ndarray    # (n_subtokens, n_leaves) 0/1 int8
    dist_sub: np.ndarray   # (n_subtokens, n_subtokens) int64
    depth_sub: np.ndarray  # (n_subtokens,) int64

    def to_json(self) -> dict:
        return {
            "linking": self.linking.tolist(),
            "dist_sub": self.dist_sub.tolist(),
            "depth_sub": self.depth_sub.tolist(),
        }


@dataclass(frozen=True)
class DependencyMask:
    mask: np.ndarray  # (n, n) float32 over {0, MASK_SENTINEL}
    sigma: int


def _ast_schema() -> dict:
    text = resources.files("synglot").joinpath("schemas/ast_json_schema.json").read_text()
    return json.loads(text)


def tree_from_json(doc: dict) -> SyntaxTree:
    """Build a SyntaxTree from an AST-JSON document, re-indexing as needed."""
    import jsonschema

    try:
        jsonschema.validate(doc, _ast_schema())
    except jsonschema.ValidationError as e:
        raise SchemaError(f"AST-JSON document invalid: {e.message}") from None

    nodes = doc["nodes"]
    by_id: dict[int, dict] = {}
    for node in nodes:
        nid = node["node_id"]
        if nid in by_id:
            raise SchemaError(f"duplicate node_id {nid}")
        by_id[nid] = node

    roots = [n for n in nodes if n["parent_id"] is None]
    if len(roots) != 1:
        raise SchemaError(f"expected exactly one root, found {len(roots)}")
    children: dict[int, list[int]] = {n["node_id"]: [] for n in nodes}
    for n in nodes:
        pid = n["parent_id"]
        if pid is not None:
            if pid not in by_id:
                raise SchemaError(f"node {n['node_id']} references missing parent {pid}")
            children[pid].append(n["node_id"])

    leaf_indices = sorted(
        (n["leaf_index"], n["node_id"]) for n in nodes if n["is_leaf"]
    )
    if [ix for ix, _ in leaf_indices] != list(range(len(leaf_indices))):
        raise SchemaError("leaf_index values must be 0..n_leaves-1, each exactly once")
    for n in nodes:
        if n["is_leaf"] and children[n["node_id"]]:
            raise SchemaError(f"leaf node {n['node_id']} has children")
        if n["is_leaf"] != (n.get("leaf_index") is not None):
            raise SchemaError(f"node {n['node_id']}: leaf_index must be set iff is_leaf")
        if not n["is_leaf"] and not children[n["node_id"]]:
            raise SchemaError(f"internal node {n['node_id']} has no children")

    # Preorder walk assigns topological ids (children in ascending id order);
    # nodes a cycle makes unreachable from the root are detected by count.
    order: list[int] = []
    seen: set[int] = set()
    stack = [roots[0]["node_id"]]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise SchemaError(f"node {nid} reached twice; tree has a cycle")
        seen.add(nid)
        order.append(nid)
        stack.extend(sorted(children[nid], reverse=True))
    if len(order) != len(nodes):
        raise SchemaError("document contains nodes unreachable from the root")

    new_id = {old: new for new, old in enumerate(order)}
    labels = tuple(by_id[old]["label"] for old in order)
    parents = tuple(
        -1 if by_id[old]["parent_id"] is None else new_id[by_id[old]["parent_id"]]
        for old in order
    )
    leaf_ids = tuple(new_id[old] for _, old in leaf_indices)
    return SyntaxTree(labels=labels, parents=parents, leaf_ids=leaf_ids)


def build_tree(source, lang: str | None = None) -> SyntaxTree:
    """Tree from toy source text (give ``lang``) or an AST-JSON document."""
    if lang is not None:
        from synglot.toylang.lang import parse_with_tree

        _, tree = parse_with_tree(source, lang)
        return tree
    if isinstance(source, dict):
        return tree_from_json(source)
    raise TypeError("build_tree needs either (text, lang) or an AST-JSON dict")


def leaf_structure(tree: SyntaxTree) -> LeafStructure:
    """All leaf depths and pairwise shortest-path distances, exactly.

    Two leaves are dist(i,j) = depth(i) + depth(j) - 2*depth(lca) apart; the
    lca depth falls out of comparing root-to-leaf ancestor chains, padded
    with per-row unique negatives so padding never matches.
    """
    parents = np.asarray(tree.parents, dtype=np.int64)
    n = parents.shape[0]
    depth_node = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        depth_node[i] = depth_node[parents[i]] + 1

    leaves = np.asarray(tree.leaf_ids, dtype=np.int64)
    depth = depth_node[leaves]
    width = int(depth.max()) + 1 if leaves.size else 1
    chains = np.empty((leaves.size, width), dtype=np.int64)
    for k, leaf in enumerate(leaves):
        d = depth[k]
        chains[k, d + 1 :] = -(k + 2)
        node = leaf
        while node != -1:
            chains[k, d] = node
            node = parents[node]
            d -= 1

    eq = chains[:, None, :] == chains[None, :, :]
    prefix = np.logical_and.accumulate(eq, axis=2).sum(axis=2)
    dist = depth[:, None] + depth[None, :] - 2 * (prefix - 1)
    np.fill_diagonal(dist, 0)  # row-vs-itself also matches its padding
    return LeafStructure(dist=dist.astype(np.int64), depth=depth)


def subtoken_structure(ls: LeafStructure, linking: np.ndarray) -> SubtokenStructure:
    """Propagate leaf distances/depths to subtokens through the linking matrix."""
    linking = np.asarray(linking)
    if linking.ndim != 2 or linking.shape[1] != ls.dist.shape[0]:
        raise ValueError(
            f"linking shape {linking.shape} does not match {ls.dist.shape[0]} leaves"
        )
    rowsums = linking.sum(axis=1)
    if not np.all(rowsums == 1):
        raise ValueError("every linking row must have exactly one 1")
    leaf_of = np.argmax(linking, axis=1)
    dist_sub = ls.dist[np.ix_(leaf_of, leaf_of)]
    same_leaf = leaf_of[:, None] == leaf_of[None, :]
    off_diag = ~np.eye(leaf_of.size, dtype=bool)
    dist_sub = np.where(same_leaf & off_diag, 1, dist_sub)
    return SubtokenStructure(
        linking=linking.astype(np.int8),
        dist_sub=dist_sub.astype(np.int64),
        depth_sub=ls.depth[leaf_of],
    )


def dependency_mask(
    ss: SubtokenStructure | np.ndarray,
    sigma: int,
    sentinel: float = MASK_SENTINEL,
) -> DependencyMask:
    """0 where distance < sigma (strict), sentinel elsewhere."""
    if sigma < 1:
        raise ValueError(f"sigma must be >= 1, got {sigma}")
    dist = ss.dist_sub if isinstance(ss, SubtokenStructure) else np.asarray(ss)
    mask = np.where(dist < sigma, 0.0, sentinel).astype(np.float32)
    return DependencyMask(mask=mask, sigma=sigma)
