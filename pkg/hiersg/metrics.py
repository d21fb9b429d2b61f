"""
Metrics Module
Triplet matching, recall@k, mean recall, zero-shot recall, weighted mAP and
the composite score.

Ground truth is matched one-to-one: predictions are visited in ranked order
and each claims the lowest-index unmatched ground truth it matches.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from hiersg.constants import COMPOSITE_WEIGHTS, DEFAULT_K_LIST, IOU_THRESHOLD
from hiersg.core_model import BoundingBox, SceneGraph, Triplet, iou
from hiersg.error_handler import NoGroundTruth, NoZeroShotGroundTruth
from hiersg.performance import ParallelMap, timed
from hiersg.relhead import rank_graph

logger = logging.getLogger(__name__)


class EvalMode(Enum):
    """Evaluation protocol."""
    PREDCLS = "predcls"
    SGCLS = "sgcls"
    SGDET = "sgdet"


class WmapMode(Enum):
    """Box matching used by weighted mAP."""
    RELATIONSHIP = "relationship"
    PHRASE = "phrase"


class RecallAveraging(Enum):
    MICRO = "micro"
    PER_IMAGE = "per-image"


@dataclass(frozen=True)
class LabeledTriplet:
    """A predicted or ground-truth triplet with its node indices, labels and boxes."""
    subject_idx: int
    object_idx: int
    subject_label: int
    relation: int
    object_label: int
    subject_box: BoundingBox
    object_box: BoundingBox
    confidence: float = 1.0

    @property
    def triplet(self) -> Triplet:
        return Triplet(self.subject_label, self.relation, self.object_label)


def predicted_triplets(graph: SceneGraph, k: Optional[int] = None) -> List[LabeledTriplet]:
    """The top-k predictions of an image, in rank order."""
    result = []
    for cand in rank_graph(graph.pred_candidates, k):
        s, o = graph.objects[cand.subject_idx], graph.objects[cand.object_idx]
        result.append(LabeledTriplet(cand.subject_idx, cand.object_idx, s.label, cand.relation, o.label,
                                     s.box, o.box, cand.confidence))
    return result


def ground_truth_triplets(graph: SceneGraph) -> List[LabeledTriplet]:
    nodes = graph.ground_truth_objects
    return [LabeledTriplet(s, o, nodes[s].label, r, nodes[o].label, nodes[s].box, nodes[o].box)
            for s, o, r in graph.gt_predicates]


def match_predicate(pred: LabeledTriplet, gt: LabeledTriplet, mode: EvalMode,
                    iou_threshold: float = IOU_THRESHOLD) -> bool:
    """
    Labels and relation must agree. PREDCLS/SGCLS also require the same node
    indices; SGDET requires IoU >= threshold for both subject and object.
    """
    if pred.triplet != gt.triplet:
        return False
    if mode is EvalMode.SGDET:
        return (iou(pred.subject_box, gt.subject_box) >= iou_threshold
                and iou(pred.object_box, gt.object_box) >= iou_threshold)
    return pred.subject_idx == gt.subject_idx and pred.object_idx == gt.object_idx


def match_image(preds: Sequence[LabeledTriplet], gts: Sequence[LabeledTriplet], mode: EvalMode,
                iou_threshold: float = IOU_THRESHOLD) -> List[bool]:
    """Greedy one-to-one matching; returns a matched flag per gt."""
    matched = [False] * len(gts)
    for pred in preds:
        for g, gt in enumerate(gts):
            if not matched[g] and match_predicate(pred, gt, mode, iou_threshold):
                matched[g] = True
                break
    return matched


@dataclass
class ImageMatch:
    """Matched flags and gt triplets of one image at one k."""
    gt: List[LabeledTriplet]
    matched: List[bool]


def _match_graphs(graphs: Sequence[SceneGraph], k: int, mode: EvalMode, iou_threshold: float,
                  jobs: int = 1) -> List[ImageMatch]:
    def run(graph: SceneGraph) -> ImageMatch:
        gts = ground_truth_triplets(graph)
        return ImageMatch(gts, match_image(predicted_triplets(graph, k), gts, mode, iou_threshold))

    return ParallelMap(jobs).map(run, graphs)


def _recall_from_matches(matches: Sequence[ImageMatch], averaging: RecallAveraging,
                         keep=lambda gt: True) -> Optional[float]:
    """None when no gt survives the filter."""
    if averaging is RecallAveraging.PER_IMAGE:
        per_image = []
        for m in matches:
            flags = [f for gt, f in zip(m.gt, m.matched) if keep(gt)]
            if flags:
                per_image.append(sum(flags) / len(flags))
        return float(np.mean(per_image)) if per_image else None

    total = hits = 0
    for m in matches:
        for gt, flag in zip(m.gt, m.matched):
            if keep(gt):
                total += 1
                hits += flag
    return hits / total if total else None


def recall_at_k(graphs: Sequence[SceneGraph], k: int, mode: EvalMode,
                averaging: RecallAveraging = RecallAveraging.MICRO,
                iou_threshold: float = IOU_THRESHOLD, jobs: int = 1) -> float:
    """Fraction of gt triplets matched by the top-k predictions of their image."""
    recall = _recall_from_matches(_match_graphs(graphs, k, mode, iou_threshold, jobs), averaging)
    if recall is None:
        raise NoGroundTruth("no ground-truth triplets in the evaluation set")
    return recall


def per_class_recall(graphs: Sequence[SceneGraph], k: int, mode: EvalMode,
                     iou_threshold: float = IOU_THRESHOLD, jobs: int = 1) -> Dict[int, float]:
    """Dataset-wide recall of each relation class that has gt."""
    return _per_class_from_matches(_match_graphs(graphs, k, mode, iou_threshold, jobs))


def _per_class_from_matches(matches: Sequence[ImageMatch]) -> Dict[int, float]:
    totals: Dict[int, int] = defaultdict(int)
    hits: Dict[int, int] = defaultdict(int)
    for m in matches:
        for gt, flag in zip(m.gt, m.matched):
            totals[gt.relation] += 1
            hits[gt.relation] += flag
    return {rel: hits[rel] / totals[rel] for rel in sorted(totals)}


def mean_recall_at_k(graphs: Sequence[SceneGraph], k: int, mode: EvalMode,
                     iou_threshold: float = IOU_THRESHOLD, jobs: int = 1) -> float:
    """Mean of per-class recalls over classes with at least one gt."""
    per_class = per_class_recall(graphs, k, mode, iou_threshold, jobs)
    if not per_class:
        raise NoGroundTruth("no ground-truth triplets in the evaluation set")
    return float(np.mean(list(per_class.values())))


def zero_shot_recall(graphs: Sequence[SceneGraph], k: int, mode: EvalMode, train_triplets: Set[Triplet],
                     averaging: RecallAveraging = RecallAveraging.MICRO,
                     iou_threshold: float = IOU_THRESHOLD, jobs: int = 1) -> float:
    """Recall counting only gt whose label-level triplet never occurs in training."""
    matches = _match_graphs(graphs, k, mode, iou_threshold, jobs)
    recall = _recall_from_matches(matches, averaging, keep=lambda gt: gt.triplet not in train_triplets)
    if recall is None:
        raise NoZeroShotGroundTruth("every ground-truth triplet also occurs in training")
    return recall


def average_precision(tp: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP of a confidence-ranked list of hits."""
    if num_gt == 0:
        return 0.0
    tp_arr = np.asarray(tp, dtype=np.float64)
    if tp_arr.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp_arr)
    fp_cum = np.cumsum(1.0 - tp_arr)
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _overlap(pred: LabeledTriplet, gt: LabeledTriplet, mode: WmapMode) -> float:
    if mode is WmapMode.PHRASE:
        return iou(pred.subject_box.union(pred.object_box), gt.subject_box.union(gt.object_box))
    return min(iou(pred.subject_box, gt.subject_box), iou(pred.object_box, gt.object_box))


def weighted_map(graphs: Sequence[SceneGraph], mode: WmapMode, k: Optional[int] = None,
                 iou_threshold: float = IOU_THRESHOLD) -> float:
    """
    Sum over relation classes of (class share of gt) * AP.

    Predictions of a class are ranked by confidence across the dataset; each
    claims the unmatched same-label gt in its image with the highest overlap,
    if that overlap reaches the threshold.
    """
    gt_by_class: Dict[int, Dict[int, List[LabeledTriplet]]] = defaultdict(lambda: defaultdict(list))
    preds_by_class: Dict[int, List[Tuple[float, int, int, LabeledTriplet]]] = defaultdict(list)
    for image, graph in enumerate(graphs):
        for gt in ground_truth_triplets(graph):
            gt_by_class[gt.relation][image].append(gt)
        for rank, pred in enumerate(predicted_triplets(graph, k)):
            preds_by_class[pred.relation].append((pred.confidence, image, rank, pred))

    num_gt = {rel: sum(len(v) for v in images.values()) for rel, images in gt_by_class.items()}
    total_gt = sum(num_gt.values())
    if total_gt == 0:
        raise NoGroundTruth("no ground-truth triplets in the evaluation set")

    score = 0.0
    for rel in sorted(gt_by_class):
        ranked = sorted(preds_by_class.get(rel, []), key=lambda item: (-item[0], item[1], item[2]))
        used = {image: [False] * len(gts) for image, gts in gt_by_class[rel].items()}
        hits = []
        for _, image, _, pred in ranked:
            best, best_overlap = None, -1.0
            for g, gt in enumerate(gt_by_class[rel].get(image, [])):
                if used[image][g] or gt.triplet != pred.triplet:
                    continue
                overlap = _overlap(pred, gt, mode)
                if overlap >= iou_threshold and overlap > best_overlap:
                    best, best_overlap = g, overlap
            if best is not None:
                used[image][best] = True
            hits.append(best is not None)
        score += (num_gt[rel] / total_gt) * average_precision(hits, num_gt[rel])
    return score


def composite_score(r50: float, wmap_rel: float, wmap_phr: float) -> float:
    """0.2 R@50 + 0.4 wmAP_rel + 0.4 wmAP_phr, on the scale of the inputs."""
    w_r, w_rel, w_phr = COMPOSITE_WEIGHTS
    return w_r * r50 + w_rel * wmap_rel + w_phr * wmap_phr


@dataclass
class EvalReport:
    """All metrics for one evaluation run; values are fractions in [0, 1]."""
    mode: str
    k_list: Tuple[int, ...] = ()
    recall: Dict[int, float] = field(default_factory=dict)
    mean_recall: Dict[int, float] = field(default_factory=dict)
    per_class_recall: Dict[Tuple[int, int], float] = field(default_factory=dict)
    zero_shot_recall: Dict[int, float] = field(default_factory=dict)
    wmap_rel: float = 0.0
    wmap_phr: float = 0.0
    composite: float = 0.0
    num_images: int = 0
    num_gt: int = 0

    def to_dict(self, relation_names: Optional[Sequence[str]] = None) -> Dict:
        def rel_name(rel: int) -> str:
            return relation_names[rel] if relation_names else str(rel)

        per_class: Dict[str, Dict[str, float]] = defaultdict(dict)
        for (rel, k), value in sorted(self.per_class_recall.items()):
            per_class[str(k)][rel_name(rel)] = value
        return {
            'mode': self.mode,
            'k_list': list(self.k_list),
            'num_images': self.num_images,
            'num_gt': self.num_gt,
            'recall': {str(k): v for k, v in self.recall.items()},
            'mean_recall': {str(k): v for k, v in self.mean_recall.items()},
            'per_class_recall': dict(per_class),
            'zero_shot_recall': {str(k): v for k, v in self.zero_shot_recall.items()},
            'wmap_rel': self.wmap_rel,
            'wmap_phr': self.wmap_phr,
            'composite': self.composite,
        }


@timed('evaluate')
def evaluate(graphs: Sequence[SceneGraph], mode: EvalMode, k_list: Iterable[int] = DEFAULT_K_LIST,
             train_triplets: Optional[Set[Triplet]] = None,
             averaging: RecallAveraging = RecallAveraging.MICRO, wmap_top_k: Optional[int] = None,
             iou_threshold: float = IOU_THRESHOLD, jobs: int = 1) -> EvalReport:
    """Run the full metric suite. Composite uses R@50 regardless of k_list."""
    graphs = list(graphs)
    requested = tuple(sorted(set(k_list)))
    k_values = sorted(set(requested) | {50})
    report = EvalReport(mode=mode.value, k_list=requested, num_images=len(graphs),
                        num_gt=sum(len(g.gt_predicates) for g in graphs))
    if report.num_gt == 0:
        raise NoGroundTruth("no ground-truth triplets in the evaluation set")

    r50 = 0.0
    for k in k_values:
        matches = _match_graphs(graphs, k, mode, iou_threshold, jobs)
        recall = _recall_from_matches(matches, averaging)
        if k == 50:
            r50 = recall
        if k not in requested:
            continue
        report.recall[k] = recall
        per_class = _per_class_from_matches(matches)
        report.mean_recall[k] = float(np.mean(list(per_class.values())))
        for rel, value in per_class.items():
            report.per_class_recall[(rel, k)] = value
        if train_triplets is not None:
            zs = _recall_from_matches(matches, averaging, keep=lambda gt: gt.triplet not in train_triplets)
            if zs is None:
                logger.warning("All ground-truth triplets occur in training; zero-shot recall skipped")
            else:
                report.zero_shot_recall[k] = zs

    report.wmap_rel = weighted_map(graphs, WmapMode.RELATIONSHIP, wmap_top_k, iou_threshold)
    report.wmap_phr = weighted_map(graphs, WmapMode.PHRASE, wmap_top_k, iou_threshold)
    report.composite = composite_score(r50, report.wmap_rel, report.wmap_phr)
    return report


TABLE_METRICS = (('R', 'recall'), ('mR', 'mean_recall'), ('zsR', 'zero_shot_recall'))


def report_table(report: EvalReport) -> pd.DataFrame:
    """Metric table in percent, one row per metric and reported k; rows without a value are omitted."""
    rows = []
    for prefix, attr in TABLE_METRICS:
        for k in report.k_list:
            value = getattr(report, attr).get(k)
            if value is not None:
                rows.append({'metric': f'{prefix}@{k}', 'value': round(100 * value, 2)})
    for label, value in (('wmAP_rel', report.wmap_rel), ('wmAP_phr', report.wmap_phr), ('score', report.composite)):
        rows.append({'metric': label, 'value': round(100 * value, 2)})
    return pd.DataFrame(rows, columns=['metric', 'value'])
