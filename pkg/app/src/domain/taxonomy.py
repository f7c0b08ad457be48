"""Class hierarchy, path similarity and semantic target sets.

The hierarchy is a rooted tree over named nodes; its leaves (the fine classes)
carry an index 0..F-1 and a coarse-class index 0..C-1. Similarity between two
fine classes is ``1 / (d + 1)`` where ``d`` is the undirected edge distance.
"""

import csv
import io
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any

import networkx as nx
import numpy as np

from app.src.core.exceptions.taxonomy_exceptions import (
    TargetSetError,
    TaxonomyFormatError,
    TaxonomyStructureError,
    UnknownClassError,
)
from app.src.domain.value_objects import ClassIndex, Float64Array, NodeName

logger = logging.getLogger(__name__)

DEFAULT_TARGET_COUNT = 5


@dataclass(frozen=True)
class FineClass:
    index: ClassIndex
    node_name: NodeName
    coarse_index: ClassIndex
    coarse_name: str


@dataclass(frozen=True)
class ClassTaxonomy:
    nodes: tuple[NodeName, ...]
    parent_edges: Mapping[NodeName, NodeName]
    fine_classes: tuple[FineClass, ...]
    root: NodeName
    _distances: Mapping[NodeName, Mapping[NodeName, int]] = field(
        repr=False, compare=False
    )

    @property
    def num_fine(self) -> int:
        return len(self.fine_classes)

    @property
    def num_coarse(self) -> int:
        return len({fc.coarse_index for fc in self.fine_classes})

    @property
    def fine_names(self) -> list[str]:
        return [fc.node_name for fc in self.fine_classes]

    @property
    def coarse_map(self) -> dict[ClassIndex, ClassIndex]:
        return {fc.index: fc.coarse_index for fc in self.fine_classes}

    @property
    def coarse_names(self) -> dict[ClassIndex, str]:
        return {fc.coarse_index: fc.coarse_name for fc in self.fine_classes}

    @property
    def depth(self) -> int:
        return max(self._distances[self.root].values())

    def fine_class(self, index: ClassIndex) -> FineClass:
        if not isinstance(index, (int, np.integer)) or not 0 <= index < self.num_fine:
            raise UnknownClassError(name=index)
        return self.fine_classes[int(index)]

    def distance(self, a: NodeName, b: NodeName) -> int:
        if a not in self._distances:
            raise UnknownClassError(name=a)
        row = self._distances[a]
        if b not in row:
            raise UnknownClassError(name=b)
        return row[b]

    def to_document(self) -> dict[str, Any]:
        return {
            "nodes": [{"name": name} for name in self.nodes],
            "edges": [
                {"child": child, "parent": parent}
                for child, parent in self.parent_edges.items()
            ],
            "classes": [
                {
                    "fine_index": fc.index,
                    "node_name": fc.node_name,
                    "coarse_index": fc.coarse_index,
                    "coarse_name": fc.coarse_name,
                }
                for fc in self.fine_classes
            ],
        }


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    values: Float64Array
    class_names: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def __getitem__(self, pair: tuple[int, int]) -> float:
        return float(self.values[pair])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        names = self.class_names or tuple(str(i) for i in range(self.size))
        writer.writerow(names)
        for row in self.values:
            writer.writerow([f"{value:.9g}" for value in row])
        return buffer.getvalue()


@dataclass(frozen=True)
class SemanticTargetSet:
    k: int
    targets: Mapping[ClassIndex, tuple[ClassIndex, ...]]

    def __getitem__(self, y: ClassIndex) -> tuple[ClassIndex, ...]:
        return self.targets[y]

    def to_document(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "targets": {str(y): list(ts) for y, ts in sorted(self.targets.items())},
        }


def taxonomy_from_document(document: Mapping[str, Any]) -> ClassTaxonomy:
    """Validate a parsed hierarchy document and build the taxonomy."""
    nodes = _read_nodes(document)
    parent_edges = _read_edges(document, set(nodes))
    fine_classes = _read_classes(document, set(nodes))

    graph = nx.DiGraph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from((parent, child) for child, parent in parent_edges.items())

    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        raise TaxonomyStructureError(problem="cycle detected", node_name=cycle[0][0])

    roots = [node for node in nodes if node not in parent_edges]
    if len(roots) != 1:
        raise TaxonomyStructureError(
            problem=f"expected exactly one root, found {len(roots)}",
            node_name=roots[1] if len(roots) > 1 else None,
        )
    root = roots[0]

    reachable = nx.descendants(graph, root) | {root}
    for node in nodes:
        if node not in reachable:
            raise TaxonomyStructureError(problem="unreachable node", node_name=node)

    for fc in fine_classes:
        if graph.out_degree(fc.node_name) != 0:
            raise TaxonomyStructureError(
                problem="fine class is not a leaf", node_name=fc.node_name
            )
    mapped = {fc.node_name for fc in fine_classes}
    for node in nodes:
        if graph.out_degree(node) == 0 and node not in mapped:
            raise TaxonomyStructureError(
                problem="fine class without coarse mapping", node_name=node
            )

    undirected = graph.to_undirected(as_view=True)
    distances = {
        source: MappingProxyType(dict(lengths))
        for source, lengths in nx.all_pairs_shortest_path_length(undirected)
    }

    taxonomy = ClassTaxonomy(
        nodes=tuple(nodes),
        parent_edges=MappingProxyType(dict(parent_edges)),
        fine_classes=tuple(fine_classes),
        root=root,
        _distances=MappingProxyType(distances),
    )
    logger.info(
        "Loaded taxonomy",
        extra={
            "fine_classes": taxonomy.num_fine,
            "coarse_classes": taxonomy.num_coarse,
            "depth": taxonomy.depth,
        },
    )
    return taxonomy


def _read_section(document: Mapping[str, Any], section: str) -> list:
    entries = document.get(section) if isinstance(document, Mapping) else None
    if not isinstance(entries, list):
        raise TaxonomyFormatError(section=section)
    return entries


def _read_nodes(document: Mapping[str, Any]) -> list[NodeName]:
    nodes: list[NodeName] = []
    seen: set[NodeName] = set()
    for entry in _read_section(document, "nodes"):
        name = entry.get("name") if isinstance(entry, Mapping) else None
        if not isinstance(name, str) or not name:
            raise TaxonomyFormatError(section="nodes", node_name=str(entry))
        if name in seen:
            raise TaxonomyStructureError(problem="duplicate name", node_name=name)
        seen.add(name)
        nodes.append(name)
    return nodes


def _read_edges(
    document: Mapping[str, Any], known: set[NodeName]
) -> dict[NodeName, NodeName]:
    parent_edges: dict[NodeName, NodeName] = {}
    for entry in _read_section(document, "edges"):
        if not isinstance(entry, Mapping):
            raise TaxonomyFormatError(section="edges", node_name=str(entry))
        child, parent = entry.get("child"), entry.get("parent")
        if not isinstance(child, str) or not isinstance(parent, str):
            raise TaxonomyFormatError(section="edges", node_name=str(child))
        for name in (child, parent):
            if name not in known:
                raise TaxonomyStructureError(
                    problem="edge references undeclared node", node_name=name
                )
        if child in parent_edges and parent_edges[child] != parent:
            raise TaxonomyStructureError(
                problem="node has more than one parent", node_name=child
            )
        parent_edges[child] = parent
    return parent_edges


def _read_classes(
    document: Mapping[str, Any], known: set[NodeName]
) -> list[FineClass]:
    entries = _read_section(document, "classes")
    fine_classes: list[FineClass] = []
    seen_nodes: set[NodeName] = set()
    coarse_names: dict[int, str] = {}
    for position, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise TaxonomyFormatError(section="classes", node_name=str(entry))
        try:
            fine = FineClass(
                index=int(entry["fine_index"]),
                node_name=str(entry["node_name"]),
                coarse_index=int(entry["coarse_index"]),
                coarse_name=str(entry["coarse_name"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise TaxonomyFormatError(
                section="classes",
                node_name=str(entry.get("node_name")),
                original_error=e,
            ) from e
        if fine.index != position:
            raise TaxonomyFormatError(
                message=f"Fine indices must be ordered 0..F-1; got {fine.index} "
                f"at position {position}",
                section="classes",
                node_name=fine.node_name,
            )
        if fine.node_name not in known:
            raise TaxonomyStructureError(
                problem="class references undeclared node", node_name=fine.node_name
            )
        if fine.node_name in seen_nodes:
            raise TaxonomyStructureError(
                problem="fine class listed twice", node_name=fine.node_name
            )
        if coarse_names.setdefault(fine.coarse_index, fine.coarse_name) != (
            fine.coarse_name
        ):
            raise TaxonomyStructureError(
                problem="coarse index mapped to two names", node_name=fine.node_name
            )
        seen_nodes.add(fine.node_name)
        fine_classes.append(fine)

    coarse_ids = sorted(coarse_names)
    if coarse_ids != list(range(len(coarse_ids))):
        raise TaxonomyFormatError(
            message=f"Coarse indices must be contiguous from 0; got {coarse_ids}",
            section="classes",
        )
    return fine_classes


def path_distance(tax: ClassTaxonomy, a: NodeName, b: NodeName) -> int:
    return tax.distance(a, b)


def path_similarity(tax: ClassTaxonomy, a: ClassIndex, b: ClassIndex) -> float:
    distance = tax.distance(tax.fine_class(a).node_name, tax.fine_class(b).node_name)
    return 1.0 / (distance + 1)


def build_similarity_matrix(tax: ClassTaxonomy) -> SimilarityMatrix:
    names = tax.fine_names
    size = len(names)
    values = np.empty((size, size), dtype=np.float64)
    for i, a in enumerate(names):
        row = tax._distances[a]
        for j, b in enumerate(names):
            values[i, j] = 1.0 / (row[b] + 1)
    values.setflags(write=False)
    return SimilarityMatrix(values=values, class_names=tuple(names))


def build_target_sets(
    sim: SimilarityMatrix, k: int = DEFAULT_TARGET_COUNT
) -> SemanticTargetSet:
    size = sim.size
    if k < 1 or k >= size:
        raise TargetSetError(k=k, num_classes=size)

    indices = np.arange(size)
    targets: dict[ClassIndex, tuple[ClassIndex, ...]] = {}
    for y in range(size):
        candidates = indices[indices != y]
        # lexsort: last key is primary; ties fall back to ascending index
        order = np.lexsort((candidates, -sim.values[y, candidates]))
        targets[y] = tuple(int(t) for t in candidates[order[:k]])
    return SemanticTargetSet(k=k, targets=MappingProxyType(targets))


def coarse_of(tax: ClassTaxonomy, fine: ClassIndex) -> ClassIndex:
    return tax.fine_class(fine).coarse_index


def subset_taxonomy(tax: ClassTaxonomy, fine_indices: Sequence[int]) -> ClassTaxonomy:
    """Prune to the given fine classes, reindexing fine and coarse classes."""
    if len(set(fine_indices)) != len(fine_indices) or len(fine_indices) < 2:
        raise TargetSetError(
            message="A taxonomy subset needs at least two distinct fine classes"
        )
    chosen = [tax.fine_class(i) for i in fine_indices]

    keep: set[NodeName] = set()
    for fc in chosen:
        node = fc.node_name
        keep.add(node)
        while node in tax.parent_edges:
            node = tax.parent_edges[node]
            keep.add(node)

    nodes = [name for name in tax.nodes if name in keep]
    coarse_reindex: dict[int, int] = {}
    classes = []
    for new_index, fc in enumerate(chosen):
        coarse = coarse_reindex.setdefault(fc.coarse_index, len(coarse_reindex))
        classes.append(
            {
                "fine_index": new_index,
                "node_name": fc.node_name,
                "coarse_index": coarse,
                "coarse_name": fc.coarse_name,
            }
        )
    document = {
        "nodes": [{"name": name} for name in nodes],
        "edges": [
            {"child": child, "parent": parent}
            for child, parent in tax.parent_edges.items()
            if child in keep
        ],
        "classes": classes,
    }
    return taxonomy_from_document(document)


def balanced_taxonomy_document(
    num_classes: int, branching: int = 2, coarse_size: int = 2
) -> dict[str, Any]:
    """Hierarchy with leaves grouped ``coarse_size`` at a time under a balanced tree."""
    if num_classes < 2:
        raise TargetSetError(message="A taxonomy needs at least two fine classes")

    leaves = [f"class_{i:03d}" for i in range(num_classes)]
    coarse_count = -(-num_classes // coarse_size)
    groups = [f"group_{g:03d}" for g in range(coarse_count)]

    edges = []
    classes = []
    for i, leaf in enumerate(leaves):
        group = i // coarse_size
        edges.append({"child": leaf, "parent": groups[group]})
        classes.append(
            {
                "fine_index": i,
                "node_name": leaf,
                "coarse_index": group,
                "coarse_name": groups[group],
            }
        )

    internal: list[str] = []
    level = list(groups)
    depth = 0
    while len(level) > 1:
        parents = []
        for start in range(0, len(level), branching):
            parent = f"node_{depth}_{start // branching:03d}"
            parents.append(parent)
            for child in level[start : start + branching]:
                edges.append({"child": child, "parent": parent})
        internal.extend(parents)
        level = parents
        depth += 1
    if len(groups) == 1:
        internal.append("root")
        edges.append({"child": groups[0], "parent": "root"})

    names = internal[::-1] + groups + leaves
    return {
        "nodes": [{"name": name} for name in names],
        "edges": edges,
        "classes": classes,
    }
