"""Report graph construction and export.

A report graph has one node per distinct concept mentioned (repeats across
sentences share a node), one node per sentence, and a single global node.
Four undirected edge families connect them: concept-concept for ontology
relations, sentence-concept for mentions, and global-sentence /
global-concept fan-out from the global node.  Ablation switches drop the
global node, the sentence nodes, or the concept-concept edges.

Node features: concept rows come from the embedding table; each sentence row
is the mean of its distinct concept rows; the global row is the mean over
all concept rows.  Empty means fall back to the zero vector.
"""

import json
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingTable
from .errors import DataError
from .ontology import Ontology

CONCEPT, SENTENCE, GLOBAL = "concept", "sentence", "global"
EDGE_CC, EDGE_SC, EDGE_GS, EDGE_GC = (
    "concept_concept", "sentence_concept", "global_sentence", "global_concept")


@dataclass(frozen=True)
class Node:
    kind: str
    key: object = None  # cui for concepts, sentence index for sentences


@dataclass(frozen=True)
class AblationConfig:
    use_global: bool = True
    use_sentence: bool = True
    use_concept_edges: bool = True


@dataclass
class ReportGraph:
    nodes: list  # Node, concepts first (cui-sorted), then sentences, then global
    edges: set  # (index_a, index_b, edge_kind) with index_a < index_b
    features: np.ndarray  # (n_nodes, dim)

    def __eq__(self, other):
        if not isinstance(other, ReportGraph):
            return NotImplemented
        return (self.nodes == other.nodes and self.edges == other.edges
                and np.array_equal(self.features, other.features))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for a, b, _ in self.edges:
            adj[a, b] = adj[b, a] = True
        return adj


def sentence_embedding_init(concept_rows, dim: int) -> np.ndarray:
    """Mean of the given concept feature rows; zero vector when there are none."""
    rows = list(concept_rows)
    if not rows:
        return np.zeros(dim, dtype=np.float64)
    return np.mean(np.stack(rows), axis=0)


def build_graph(ontology: Ontology, mentions, n_sentences: int,
                emb: EmbeddingTable,
                ablation: AblationConfig = AblationConfig()) -> ReportGraph:
    for m in mentions:
        if not 0 <= m.sentence_index < n_sentences:
            raise DataError(f"mention sentence index {m.sentence_index} out of "
                            f"range for {n_sentences} sentences")

    cuis = sorted({m.concept for m in mentions})
    concept_row = {cui: i for i, cui in enumerate(cuis)}
    nodes = [Node(CONCEPT, cui) for cui in cuis]

    sentence_row = {}
    if ablation.use_sentence:
        for s in range(n_sentences):
            sentence_row[s] = len(nodes)
            nodes.append(Node(SENTENCE, s))
    global_row = None
    if ablation.use_global:
        global_row = len(nodes)
        nodes.append(Node(GLOBAL))

    edges = set()
    if ablation.use_concept_edges:
        for a, b in ontology.related_pairs(cuis):
            edges.add((concept_row[a], concept_row[b], EDGE_CC))
    incidences = sorted({(m.sentence_index, m.concept) for m in mentions})
    if ablation.use_sentence:
        for s, cui in incidences:
            i, j = sorted((concept_row[cui], sentence_row[s]))
            edges.add((i, j, EDGE_SC))
        if ablation.use_global:
            for s in range(n_sentences):
                edges.add((sentence_row[s], global_row, EDGE_GS))
    if ablation.use_global:
        for cui in cuis:
            edges.add((concept_row[cui], global_row, EDGE_GC))

    features = np.zeros((len(nodes), emb.dim), dtype=np.float64)
    concept_vecs = {cui: emb.vector(cui) for cui in cuis}
    for cui, row in concept_row.items():
        features[row] = concept_vecs[cui]
    if ablation.use_sentence:
        per_sentence = {s: sorted({c for si, c in incidences if si == s})
                        for s in range(n_sentences)}
        for s, row in sentence_row.items():
            features[row] = sentence_embedding_init(
                [concept_vecs[c] for c in per_sentence[s]], emb.dim)
    if global_row is not None:
        features[global_row] = sentence_embedding_init(
            [concept_vecs[c] for c in cuis], emb.dim)

    return ReportGraph(nodes=nodes, edges=edges, features=features)


# -- export ---------------------------------------------------------------

_DOT_STYLE = {
    CONCEPT: 'shape=ellipse, style=filled, fillcolor="#aed6f1"',
    SENTENCE: 'shape=box, style=filled, fillcolor="#f9e79f"',
    GLOBAL: 'shape=doublecircle, style=filled, fillcolor="#abebc6"',
}


def _node_label(node: Node, ontology: Ontology | None, lang: str) -> str:
    if node.kind == CONCEPT:
        if ontology is not None and node.key in ontology.concepts:
            preferred = ontology.concepts[node.key].preferred_label
            return preferred.get(lang) or next(iter(sorted(preferred.values())))
        return str(node.key)
    if node.kind == SENTENCE:
        return f"sentence {node.key}"
    return "global"


def export_dot(g: ReportGraph, ontology: Ontology | None = None,
               omit_global_edges: bool = False, lang: str = "en") -> str:
    """Graphviz source; ``omit_global_edges`` hides the global-concept fan-out
    (the sentence backbone stays, keeping the drawing connected)."""
    lines = ["graph report {", "  node [fontname=\"Helvetica\"];"]
    for i, node in enumerate(g.nodes):
        label = _node_label(node, ontology, lang).replace('"', r"\"")
        lines.append(f'  n{i} [label="{label}", {_DOT_STYLE[node.kind]}];')
    for a, b, kind in sorted(g.edges):
        if omit_global_edges and kind == EDGE_GC:
            continue
        style = ", style=dashed" if kind in (EDGE_GS, EDGE_GC) else ""
        lines.append(f'  n{a} -- n{b} [class="{kind}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(g: ReportGraph) -> str:
    payload = {
        "dim": int(g.features.shape[1]),
        "nodes": [{"kind": n.kind, "key": n.key} for n in g.nodes],
        "edges": sorted([a, b, kind] for a, b, kind in g.edges),
        "features": [[float(v) for v in row] for row in g.features],
    }
    return json.dumps(payload, indent=1, sort_keys=True)


def graph_from_json(text: str) -> ReportGraph:
    payload = json.loads(text)
    nodes = [Node(n["kind"], n["key"]) for n in payload["nodes"]]
    edges = {(a, b, kind) for a, b, kind in payload["edges"]}
    features = np.array(payload["features"], dtype=np.float64)
    features = features.reshape(len(nodes), payload["dim"])
    return ReportGraph(nodes=nodes, edges=edges, features=features)
