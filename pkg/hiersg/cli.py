"""
Command-line entry point.

    hiersg train-toy    --out runs/toy
    hiersg infer        --checkpoint runs/toy/checkpoint --graphs in.jsonl --features-dir feats/
    hiersg validate     --graphs pred.jsonl --train-graphs train.jsonl --cache cache.json
    hiersg eval         --pred pred.jsonl --gt gt.jsonl
    hiersg cluster      --embeddings relation_vectors.json
    hiersg distill-sets --alignment-sets alignment_sets.json --graphs pred.jsonl

Every command writes its outputs and a metadata.json block (config hash,
seed, version) into --out.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from hiersg import __version__
from hiersg.audit import build_run_metadata, write_run_metadata
from hiersg.batch import infer_graphs, validate_graphs
from hiersg.clustering import hierarchy_from_clusters, kmeans
from hiersg.commonsense import (
    AlignmentSets,
    TripletWhitelist,
    VerdictCache,
    build_whitelist,
    filter_with_alignment_sets,
)
from hiersg.core_model import RelationVocabulary, SceneGraph
from hiersg.dataset import (
    load_alignment_sets,
    load_default_hierarchy,
    load_default_vocabulary,
    load_embeddings,
    load_hierarchy,
    load_triplet_set,
    load_vocabulary,
    load_whitelist,
    read_graphs,
    read_training_samples,
    save_alignment_sets,
    save_hierarchy,
    save_vocabulary,
    write_graphs,
)
from hiersg.error_handler import configure_logging, exit_code_for, format_error, handle_error
from hiersg.llm_client import create_client
from hiersg.metrics import EvalMode, RecallAveraging, evaluate, report_table
from hiersg.relhead import HeadParameters
from hiersg.settings import RunConfig, apply_overrides, load_run_config, with_flags, with_section
from hiersg.synthetic import make_toy_samples, toy_hierarchy, toy_vocabulary
from hiersg.tensors import load_checkpoint, save_checkpoint
from hiersg.training import LossWeights, candidate_penalties, joint_accuracy, train
from hiersg.utils import write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BACKEND = 3

CHECKPOINT_DIR = 'checkpoint'
VOCABULARY_FILE = 'vocabulary.json'
HIERARCHY_FILE = 'hierarchy.json'


def _finish(command: str, config: RunConfig, out: Path, inputs: Dict[str, Optional[str]]) -> None:
    metadata = build_run_metadata(command, config, {k: str(v) for k, v in inputs.items() if v is not None})
    write_run_metadata(out, metadata)


def _vocabulary(path: Optional[Union[str, Path]]) -> RelationVocabulary:
    return load_vocabulary(path) if path else load_default_vocabulary()


def _beside(checkpoint: Path, name: str) -> Optional[Path]:
    """A file saved next to the checkpoint tensors, if there is one."""
    path = checkpoint / name
    return path if path.exists() else None


# Commands

def cmd_train_toy(args, config: RunConfig) -> int:
    settings = config.training
    out = Path(args.out)
    hierarchy = toy_hierarchy(settings.relations_per_category)
    vocabulary = toy_vocabulary(settings.relations_per_category)
    if settings.samples_path:
        samples = read_training_samples(settings.samples_path, hierarchy)
    else:
        samples = make_toy_samples(hierarchy, settings.num_pairs, settings.in_dim, settings.noise, config.seed)
    in_dim = samples[0].u.shape[0] if samples else settings.in_dim

    params = HeadParameters.init(in_dim, settings.d, hierarchy, seed=config.seed,
                                 with_flat=settings.with_flat or settings.w_flat > 0,
                                 init_scale=settings.init_scale)
    weights = LossWeights(settings.w_sup, settings.w_sub, settings.w_con, settings.temperature,
                          settings.w_flat, settings.normalize_contrastive)
    result = train(samples, params, hierarchy, weights, settings.lr, settings.steps, settings.log_every)

    checkpoint_dir = out / CHECKPOINT_DIR
    save_checkpoint(checkpoint_dir, result.params)
    save_vocabulary(checkpoint_dir / VOCABULARY_FILE, vocabulary)
    save_hierarchy(checkpoint_dir / HIERARCHY_FILE, hierarchy, vocabulary)

    losses = result.losses + [result.final_loss]
    pd.DataFrame({'step': range(len(losses)), 'loss': losses}).to_csv(out / 'loss_curve.csv', index=False)

    accuracy = joint_accuracy(samples, result.params, hierarchy)
    _finish('train-toy', config, out, {'samples': settings.samples_path})
    print(f"Trained {settings.steps} steps on {len(samples)} pairs: "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}, accuracy {accuracy:.1%}")
    print(f"Checkpoint: {checkpoint_dir}")
    return EXIT_OK


def cmd_infer(args, config: RunConfig) -> int:
    out = Path(args.out)
    checkpoint = Path(args.checkpoint)
    params = load_checkpoint(checkpoint)

    vocabulary = _vocabulary(args.vocabulary or _beside(checkpoint, VOCABULARY_FILE))
    hierarchy_path = args.hierarchy or _beside(checkpoint, HIERARCHY_FILE)
    hierarchy = load_hierarchy(hierarchy_path, vocabulary) if hierarchy_path else load_default_hierarchy(vocabulary)
    params.check_hierarchy(hierarchy)

    graphs = read_graphs(args.graphs, vocabulary)
    predicted = infer_graphs(graphs, args.features_dir, params, hierarchy, jobs=config.jobs, k=args.top_k)
    written = write_graphs(out / 'graphs.jsonl', predicted)
    _finish('infer', config, out, {'checkpoint': args.checkpoint, 'graphs': args.graphs,
                                   'features_dir': args.features_dir})
    print(f"Wrote {written} graphs with "
          f"{sum(len(g.pred_candidates) for g in predicted)} candidates to {out / 'graphs.jsonl'}")
    return EXIT_OK


def _whitelist(args, vocabulary: RelationVocabulary) -> TripletWhitelist:
    if args.whitelist:
        return load_whitelist(args.whitelist, vocabulary)
    if args.train_graphs:
        return build_whitelist(read_graphs(args.train_graphs, vocabulary))
    return TripletWhitelist()


def cmd_validate(args, config: RunConfig) -> int:
    out = Path(args.out)
    vocabulary = _vocabulary(args.vocabulary)
    graphs = read_graphs(args.graphs, vocabulary)
    sets = load_alignment_sets(args.alignment_sets_in, vocabulary) if args.alignment_sets_in else AlignmentSets()
    inputs = {'graphs': args.graphs, 'whitelist': args.whitelist, 'train_graphs': args.train_graphs,
              'cache': args.cache, 'alignment_sets_in': args.alignment_sets_in}

    if args.offline:
        filtered = [filter_with_alignment_sets(g, sets, config.validation) for g in graphs]
        removals = sum(len(a.pred_candidates) - len(b.pred_candidates) for a, b in zip(graphs, filtered))
        write_graphs(out / 'graphs.jsonl', filtered)
        write_json(out / 'stats.json', {'num_graphs': len(graphs), 'query_count': 0, 'removals': removals})
        _finish('validate', config, out, inputs)
        print(f"Filtered {len(graphs)} graphs offline, removed {removals} candidates")
        return EXIT_OK

    whitelist = _whitelist(args, vocabulary)
    cache_path = Path(args.cache) if args.cache else None
    cache = VerdictCache.load(cache_path, vocabulary) if cache_path and cache_path.exists() else VerdictCache()
    client = create_client(config.client)

    result = validate_graphs(graphs, config.validation, client, whitelist, cache, vocabulary, sets, config.jobs)

    write_graphs(out / 'graphs.jsonl', result.graphs)
    save_alignment_sets(out / 'alignment_sets.json', result.alignment_sets, vocabulary)
    stats = result.stats()
    write_json(out / 'stats.json', stats)
    if cache_path:
        cache.save(cache_path, vocabulary)
    _finish('validate', config, out, inputs)
    print(f"Validated {stats['num_graphs']} graphs: {stats['query_count']} queries, "
          f"{stats['cache_hits']} cache hits, {stats['whitelist_hits']} whitelisted, "
          f"{stats['removals']} removed")
    if result.backend_failures:
        logger.warning("Backend failed for %d graphs; they were written unfiltered", result.backend_failures)
        return EXIT_BACKEND
    return EXIT_OK


def _join_ground_truth(predictions: Sequence[SceneGraph], ground_truth: Sequence[SceneGraph]) -> List[SceneGraph]:
    """Each gt graph with the candidates of the prediction sharing its image_id."""
    by_id = {g.image_id: g for g in predictions}
    joined = []
    for gt in ground_truth:
        pred = by_id.pop(gt.image_id, None)
        if pred is None:
            logger.warning("No prediction for image %s; counted with zero candidates", gt.image_id)
            joined.append(replace(gt, pred_candidates=()))
        else:
            joined.append(replace(pred, gt_predicates=gt.gt_predicates, gt_objects=gt.ground_truth_objects))
    if by_id:
        logger.warning("Ignoring %d predicted images without ground truth", len(by_id))
    return joined


def cmd_eval(args, config: RunConfig) -> int:
    out = Path(args.out)
    config = with_section(config, 'evaluation', mode=args.mode, k_list=args.k_list,
                          recall_averaging=args.recall_averaging)
    settings = config.evaluation
    vocabulary = load_vocabulary(args.vocabulary) if args.vocabulary else None
    graphs = _join_ground_truth(read_graphs(args.pred, vocabulary), read_graphs(args.gt, vocabulary))

    train_triplets = None
    if args.train_triplets:
        train_triplets = load_triplet_set(args.train_triplets, vocabulary or load_default_vocabulary())
    elif args.train_graphs:
        train_triplets = set(build_whitelist(read_graphs(args.train_graphs, vocabulary)))

    report = evaluate(graphs, settings.mode, settings.k_list, train_triplets, settings.recall_averaging,
                      settings.wmap_top_k, settings.iou_threshold, config.jobs)
    write_json(out / 'report.json', report.to_dict(vocabulary.relation_names if vocabulary else None))
    _finish('eval', config, out, {'pred': args.pred, 'gt': args.gt, 'train_triplets': args.train_triplets,
                                  'train_graphs': args.train_graphs})
    print(report_table(report).to_string(index=False))
    return EXIT_OK


def cmd_cluster(args, config: RunConfig) -> int:
    out = Path(args.out)
    config = with_section(config, 'clustering', k=args.k, l2_normalize=args.l2_normalize)
    settings = config.clustering
    if args.vocabulary:
        vocabulary = load_vocabulary(args.vocabulary)
        table = load_embeddings(args.embeddings, vocabulary)
    else:
        table = load_embeddings(args.embeddings)
        vocabulary = RelationVocabulary(tuple(table.names), ())

    k = settings.k
    result = kmeans(table, k, seed=config.seed, n_init=settings.n_init, max_iter=settings.max_iter,
                    l2_normalize=settings.l2_normalize)
    hierarchy = hierarchy_from_clusters(result, vocabulary)
    save_hierarchy(out / HIERARCHY_FILE, hierarchy, vocabulary)
    write_json(out / 'clusters.json', {'k': k, 'inertia': result.inertia, 'n_iter': result.n_iter,
                                       'inertia_history': result.inertia_history})
    _finish('cluster', config, out, {'embeddings': args.embeddings, 'vocabulary': args.vocabulary})
    for name, size in zip(hierarchy.super_categories, hierarchy.category_sizes):
        print(f"{name}: {size} relations")
    return EXIT_OK


def cmd_distill_sets(args, config: RunConfig) -> int:
    out = Path(args.out)
    settings = config.distillation
    vocabulary = _vocabulary(args.vocabulary)
    sets = load_alignment_sets(args.alignment_sets, vocabulary)
    graphs = read_graphs(args.graphs, vocabulary)

    rows = []
    for graph in graphs:
        penalties = candidate_penalties(graph, sets, settings.lambda_weak, settings.lambda_strong)
        for rank, (cand, penalty) in enumerate(zip(graph.pred_candidates, penalties)):
            rows.append({'image_id': graph.image_id, 'rank': rank,
                         'triplet': graph.candidate_triplet(cand).render(vocabulary), 'penalty': penalty})
    total = float(sum(r['penalty'] for r in rows))
    per_image = pd.DataFrame(rows, columns=['image_id', 'rank', 'triplet', 'penalty'])
    by_image = per_image.groupby('image_id', sort=False)['penalty'].sum().to_dict() if rows else {}

    write_json(out / 'penalties.json', {
        'lambda_weak': settings.lambda_weak,
        'lambda_strong': settings.lambda_strong,
        'total': total,
        'num_candidates': len(rows),
        'per_image': {k: float(v) for k, v in by_image.items()},
        'candidates': rows,
    })
    _finish('distill-sets', config, out, {'alignment_sets': args.alignment_sets, 'graphs': args.graphs})
    print(f"Total penalty {total:.4f} over {len(rows)} candidates")
    return EXIT_OK


# Argument parsing

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML or JSON run config')
    common.add_argument('--seed', type=int, help='override the config seed')
    common.add_argument('--jobs', type=int, help='worker threads for per-image work')
    common.add_argument('--out', default='out', help='output directory (default: out)')
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help='override a config value, e.g. training.lr=0.1 (repeatable)')
    common.add_argument('--log-level', default='WARNING', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--log-dir', help='also write a dated log file here')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog='hiersg', description='Hierarchical scene-graph relations '
                                                                'with commonsense validation.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train-toy', parents=[common], help='train a toy relation head with SGD')
    p.set_defaults(handler=cmd_train_toy)

    p = sub.add_parser('infer', parents=[common], help='predict relation candidates for scene graphs')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--graphs', required=True, help='scene-graph JSONL')
    p.add_argument('--features-dir', required=True, help='directory of <image_id>.sgt feature maps')
    p.add_argument('--vocabulary')
    p.add_argument('--hierarchy')
    p.add_argument('--top-k', type=int, help='keep only the k best candidates per image')
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser('validate', parents=[common], help='filter candidates with a language model')
    p.add_argument('--graphs', required=True, help='ranked scene-graph JSONL')
    p.add_argument('--vocabulary')
    group = p.add_mutually_exclusive_group()
    group.add_argument('--whitelist', help='JSON triplet list never sent to the model')
    group.add_argument('--train-graphs', help='training JSONL to build the whitelist from')
    p.add_argument('--cache', help='verdict cache JSON (read if present, then updated)')
    p.add_argument('--alignment-sets-in', help='alignment sets to extend')
    p.add_argument('--offline', action='store_true', help='filter with --alignment-sets-in only, no queries')
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser('eval', parents=[common], help='recall, mean recall, zero-shot recall and wmAP')
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--vocabulary')
    group = p.add_mutually_exclusive_group()
    group.add_argument('--train-triplets', help='JSON triplet list seen in training')
    group.add_argument('--train-graphs', help='training JSONL')
    p.add_argument('--mode', choices=[m.value for m in EvalMode], help='evaluation protocol')
    p.add_argument('--k-list', type=int, nargs='+', metavar='K', help='recall cutoffs, e.g. --k-list 20 50 100')
    p.add_argument('--recall-averaging', choices=[a.value for a in RecallAveraging],
                   help='pool gt over the dataset (micro) or average per image')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('cluster', parents=[common], help='build a hierarchy by k-means over embeddings')
    p.add_argument('--embeddings', required=True, help='JSON {relation: vector}')
    p.add_argument('--vocabulary')
    p.add_argument('--k', type=int)
    p.add_argument('--l2-normalize', action='store_true', default=None,
                   help='cluster unit-length embeddings')
    p.set_defaults(handler=cmd_cluster)

    p = sub.add_parser('distill-sets', parents=[common], help='distillation penalties of predicted candidates')
    p.add_argument('--alignment-sets', required=True)
    p.add_argument('--graphs', required=True)
    p.add_argument('--vocabulary')
    p.set_defaults(handler=cmd_distill_sets)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_dir)
    try:
        config = apply_overrides(load_run_config(args.config), args.overrides)
        config = with_flags(config, seed=args.seed, jobs=args.jobs)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.handler(args, config)
    except Exception as e:
        info = handle_error(e)
        print(format_error(info), file=sys.stderr)
        return exit_code_for(info)


if __name__ == '__main__':
    sys.exit(main())
