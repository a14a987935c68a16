"""Scene graphs: data model, relation extraction, transforms and dataset I/O."""

from .io import FORMATS, DatasetFormatError, dataset_hash, load_dataset, read_jsonl, vocab_path, write_jsonl
from .relations import (Thresholds, build_graph_stream, build_scene_graph, compute_dynamic_relations,
                        compute_static_relations)
from .transforms import (downsample, hand_category_swap, mirror_dataset, mirror_graph_sequence,
                         upsample_predictions)
from .types import (EXCLUSIVE_GROUPS, HAND_ROLES, LEFT_HAND, N_RELATIONS, NO_HAND, REL, RELATIONS,
                    RIGHT_HAND, Edge, EpisodeDataset, GraphError, GraphSequence, Node, ObjectTrack,
                    SceneGraph, Vocabulary, VocabularyError, exclusive_ok, relation_bits,
                    relation_names)

__all__ = [
    "DatasetFormatError", "EXCLUSIVE_GROUPS", "dataset_hash", "Edge", "EpisodeDataset", "FORMATS", "GraphError",
    "GraphSequence", "HAND_ROLES", "LEFT_HAND", "NO_HAND", "N_RELATIONS", "Node", "ObjectTrack",
    "REL", "RELATIONS", "RIGHT_HAND", "SceneGraph", "Thresholds", "Vocabulary", "VocabularyError",
    "build_graph_stream", "build_scene_graph", "compute_dynamic_relations",
    "compute_static_relations", "downsample", "exclusive_ok", "hand_category_swap",
    "load_dataset", "mirror_dataset", "mirror_graph_sequence", "read_jsonl", "relation_bits",
    "relation_names", "upsample_predictions", "vocab_path", "write_jsonl",
]
