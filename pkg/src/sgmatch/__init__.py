"""Language-based retrieval of 3D scenes represented as semantic scene graphs."""

from .errors import SGMatchError
from .graph import (
    BBox,
    GraphEdge,
    GraphKind,
    GraphNode,
    SemanticGraph,
    bbox_distance,
    filter_edges,
    parse_scene_graph,
    parse_text_graph,
    serialize_graph,
)
from .model import EmbeddingPair, JointModel, ModelConfig, embed_pair, load_model, save_model
from .vectors import FeaturizedGraph, WordVectorTable, featurize, load_word_vectors, token_vector

__version__ = "0.1.0"

__all__ = [
    "BBox", "EmbeddingPair", "FeaturizedGraph", "GraphEdge", "GraphKind", "GraphNode", "JointModel",
    "ModelConfig", "SGMatchError", "SemanticGraph", "WordVectorTable", "bbox_distance", "embed_pair",
    "featurize", "filter_edges", "load_model", "load_word_vectors", "parse_scene_graph", "parse_text_graph",
    "save_model", "serialize_graph", "token_vector",
]
