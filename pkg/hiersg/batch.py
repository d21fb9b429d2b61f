"""
Batch processing over many scene graphs.

Runs inference or commonsense validation graph by graph on a thread pool,
keeping the input order in the output, and collects summary statistics.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from hiersg.commonsense import (
    AlignmentSets,
    TripletWhitelist,
    ValidationConfig,
    ValidationOutcome,
    VerdictCache,
    validate_graph,
)
from hiersg.core_model import RelationHierarchy, RelationVocabulary, SceneGraph
from hiersg.performance import ParallelMap, timed
from hiersg.relhead import HeadParameters, predict_graph
from hiersg.tensors import load_feature_map

logger = logging.getLogger(__name__)


@dataclass
class ValidationBatchResult:
    """Filtered graphs plus totals over all validated graphs."""
    graphs: List[SceneGraph]
    alignment_sets: AlignmentSets
    num_graphs: int = 0
    query_count: int = 0
    cache_hits: int = 0
    whitelist_hits: int = 0
    removals: int = 0
    backend_failures: int = 0
    failed_images: List[str] = field(default_factory=list)

    def stats(self) -> Dict[str, Any]:
        aligned, violated = self.alignment_sets.snapshot()
        return {
            'num_graphs': self.num_graphs,
            'query_count': self.query_count,
            'cache_hits': self.cache_hits,
            'whitelist_hits': self.whitelist_hits,
            'removals': self.removals,
            'backend_failures': self.backend_failures,
            'failed_images': list(self.failed_images),
            'aligned': len(aligned),
            'violated': len(violated),
        }


@timed('infer')
def infer_graphs(graphs: Sequence[SceneGraph], features_dir: Union[str, Path], params: HeadParameters,
                 hierarchy: RelationHierarchy, jobs: int = 1, k: Optional[int] = None) -> List[SceneGraph]:
    """Fill every graph's candidates from its feature map in features_dir."""
    def run(graph: SceneGraph) -> SceneGraph:
        return predict_graph(graph, load_feature_map(features_dir, graph.image_id), params, hierarchy, k)

    def progress(done: int, total: int) -> None:
        logger.debug("Inference: %d/%d graphs", done, total)

    return ParallelMap(jobs).map(run, graphs, progress)


@timed('validate')
def validate_graphs(graphs: Sequence[SceneGraph], cfg: ValidationConfig, client, whitelist: TripletWhitelist,
                    cache: VerdictCache, vocabulary: RelationVocabulary,
                    alignment_sets: Optional[AlignmentSets] = None, jobs: int = 1) -> ValidationBatchResult:
    """
    validate_graph over every graph with a shared cache and shared alignment
    sets. With jobs > 1 two graphs may query the same triplet before either
    verdict is cached, so query_count can exceed the sequential count; the
    filtered graphs and alignment sets are the same either way.
    """
    sets = alignment_sets if alignment_sets is not None else AlignmentSets()

    def run(graph: SceneGraph) -> ValidationOutcome:
        return validate_graph(graph, cfg, client, whitelist, cache, vocabulary, sets)

    outcomes = ParallelMap(jobs).map(run, graphs)
    result = ValidationBatchResult(graphs=[o.graph for o in outcomes], alignment_sets=sets,
                                   num_graphs=len(outcomes))
    for outcome in outcomes:
        result.query_count += outcome.query_count
        result.cache_hits += outcome.cache_hits
        result.whitelist_hits += outcome.whitelist_hits
        result.removals += outcome.removals
        if outcome.backend_failed:
            result.backend_failures += 1
            result.failed_images.append(outcome.graph.image_id)
    logger.info("Validated %d graphs: %d queries, %d cache hits, %d removals",
                result.num_graphs, result.query_count, result.cache_hits, result.removals)
    return result
