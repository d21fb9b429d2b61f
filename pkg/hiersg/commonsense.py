"""
Commonsense Validation Module
Filter predicted relations by asking a language model whether each
(subject, relation, object) combination is plausible.

Per image, the top `skip_top` candidates pass through untouched and the next
`window` candidates are validated. Triplets seen in training annotations are
accepted without a query, earlier verdicts are reused from a shared cache,
and every decision is accumulated into aligned/violated sets that can later
filter offline or drive a distillation penalty.
"""

import logging
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

from jinja2 import Environment, FileSystemLoader

from hiersg.constants import DEFAULT_SKIP_TOP, DEFAULT_VOTES, DEFAULT_WINDOW
from hiersg.core_model import PredicateCandidate, RelationVocabulary, SceneGraph, Triplet
from hiersg.error_handler import (
    AlignmentOverlapError,
    BackendUnavailable,
    CountMismatch,
    DatasetFormatError,
    MalformedResponse,
)
from hiersg.performance import ParallelMap
from hiersg.utils import read_json, write_json

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATES_DIR = Path(__file__).resolve().parent / 'templates' / 'prompts'
PER_TRIPLET_PATTERN = 'per_triplet_*.txt'
BATCHED_TEMPLATE = 'batched.txt'

_VERDICT_TOKEN = re.compile(r'(?<![A-Za-z])(yes|no)(?![A-Za-z])', re.IGNORECASE)


class Strategy(Enum):
    PER_TRIPLET_MAJORITY = "PER_TRIPLET_MAJORITY"
    BATCHED_LIST = "BATCHED_LIST"


class VerdictSource(Enum):
    CACHE = "CACHE"
    MODEL = "MODEL"
    WHITELIST = "WHITELIST"


class Ambiguity(Enum):
    AMBIGUOUS = "AMBIGUOUS"


# parse_verdict result when an answer holds neither "yes" nor "no"
AMBIGUOUS = Ambiguity.AMBIGUOUS


@dataclass(frozen=True)
class ValidationConfig:
    """Window and voting settings (the `validation` section of a run config)."""
    skip_top: int = DEFAULT_SKIP_TOP
    window: int = DEFAULT_WINDOW
    votes: int = DEFAULT_VOTES
    strategy: Strategy = Strategy.PER_TRIPLET_MAJORITY
    templates_dir: Optional[str] = None
    max_workers: int = 4

    def __post_init__(self):
        if isinstance(self.strategy, str):
            object.__setattr__(self, 'strategy', Strategy(self.strategy.upper()))
        if self.skip_top < 0:
            raise ValueError("skip_top must be non-negative")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.votes < 1 or self.votes % 2 == 0:
            raise ValueError(f"votes must be a positive odd number, got {self.votes}")
        if self.max_workers < 1:
            raise ValueError("max_workers must be at least 1")


@dataclass(frozen=True)
class Verdict:
    triplet: Triplet
    aligned: bool
    raw_votes: Tuple[bool, ...] = ()
    source: VerdictSource = VerdictSource.MODEL


@dataclass(frozen=True)
class TripletWhitelist:
    """Label-level triplets seen in training annotations."""
    triplets: FrozenSet[Triplet] = frozenset()

    def __contains__(self, triplet: object) -> bool:
        return triplet in self.triplets

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(sorted(self.triplets))


class VerdictCache:
    """
    Triplet -> Verdict, shared between graphs and threads.

    The first verdict stored for a triplet wins; later inserts return it.
    Persisted as a JSON object keyed by the rendered triplet string.
    """

    def __init__(self, verdicts: Optional[Iterable[Verdict]] = None):
        self._verdicts: Dict[Triplet, Verdict] = {}
        self._lock = threading.Lock()
        for verdict in verdicts or ():
            self.insert(verdict)

    def get(self, triplet: Triplet) -> Optional[Verdict]:
        with self._lock:
            return self._verdicts.get(triplet)

    def insert(self, verdict: Verdict) -> Verdict:
        with self._lock:
            return self._verdicts.setdefault(verdict.triplet, verdict)

    def __contains__(self, triplet: object) -> bool:
        with self._lock:
            return triplet in self._verdicts

    def __len__(self) -> int:
        with self._lock:
            return len(self._verdicts)

    def verdicts(self) -> List[Verdict]:
        with self._lock:
            return [self._verdicts[t] for t in sorted(self._verdicts)]

    def save(self, path: Union[str, Path], vocabulary: RelationVocabulary) -> Path:
        data = {
            v.triplet.render(vocabulary): {
                'triplet': v.triplet.to_names(vocabulary),
                'aligned': v.aligned,
                'raw_votes': list(v.raw_votes),
            }
            for v in self.verdicts()
        }
        return write_json(path, dict(sorted(data.items())))

    @classmethod
    def load(cls, path: Union[str, Path], vocabulary: RelationVocabulary) -> 'VerdictCache':
        data = read_json(path)
        if not isinstance(data, dict):
            raise DatasetFormatError("verdict cache must be a JSON object", str(path))
        verdicts = []
        for key, entry in data.items():
            try:
                triplet = Triplet.from_names(entry['triplet'], vocabulary)
                verdicts.append(Verdict(triplet, bool(entry['aligned']),
                                        tuple(bool(x) for x in entry.get('raw_votes', ())),
                                        VerdictSource.MODEL))
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"bad cache entry {key!r}: {e}", str(path))
        return cls(verdicts)


@dataclass
class AlignmentSets:
    """Accumulated verdicts; a triplet is in at most one of the two sets."""
    aligned: Set[Triplet] = field(default_factory=set)
    violated: Set[Triplet] = field(default_factory=set)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, triplet: Triplet, aligned: bool) -> None:
        with self._lock:
            target, other = (self.aligned, self.violated) if aligned else (self.violated, self.aligned)
            if triplet in other:
                logger.warning("Verdict for %s flipped to %s", triplet, 'aligned' if aligned else 'violated')
                other.discard(triplet)
            target.add(triplet)

    def merge(self, other: 'AlignmentSets') -> None:
        aligned, violated = other.snapshot()
        for t in sorted(aligned):
            self.record(t, True)
        for t in sorted(violated):
            self.record(t, False)

    def snapshot(self) -> Tuple[Set[Triplet], Set[Triplet]]:
        with self._lock:
            return set(self.aligned), set(self.violated)

    def check_disjoint(self) -> None:
        aligned, violated = self.snapshot()
        overlap = aligned & violated
        if overlap:
            raise AlignmentOverlapError(f"{len(overlap)} triplets are both aligned and violated: "
                                        f"{sorted(overlap)[:5]}")


@dataclass
class ValidationOutcome:
    graph: SceneGraph
    alignment_sets: AlignmentSets
    query_count: int = 0
    cache_hits: int = 0
    whitelist_hits: int = 0
    removals: int = 0
    backend_failed: bool = False


# Window selection

def validation_window(ranked: Sequence[PredicateCandidate], cfg: ValidationConfig) -> List[PredicateCandidate]:
    """Candidates at ranks [skip_top, skip_top + window)."""
    return list(ranked[cfg.skip_top:cfg.skip_top + cfg.window])


def _in_window(rank: int, cfg: ValidationConfig) -> bool:
    return cfg.skip_top <= rank < cfg.skip_top + cfg.window


# Prompts

class PromptRenderer:
    """
    Prompt templates from a directory: per_triplet_*.txt files (one per
    vote, `{}` marks the triplet) and batched.txt, a Jinja template over
    `triplets`.
    """

    def __init__(self, templates_dir: Optional[Union[str, Path]] = None):
        self.templates_dir = Path(templates_dir) if templates_dir else DEFAULT_TEMPLATES_DIR
        self.env = Environment(
            loader=FileSystemLoader(str(self.templates_dir)),
            autoescape=False,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=False,
        )
        names = sorted(p.name for p in self.templates_dir.glob(PER_TRIPLET_PATTERN))
        if not names:
            raise FileNotFoundError(f"no {PER_TRIPLET_PATTERN} templates in {self.templates_dir}")
        self._per_triplet = []
        for name in names:
            source, _, _ = self.env.loader.get_source(self.env, name)
            self._per_triplet.append(self.env.from_string(source.strip().replace('{}', '{{ triplet }}')))

    @property
    def num_templates(self) -> int:
        return len(self._per_triplet)

    def per_triplet(self, text: str, votes: int) -> List[str]:
        if votes > len(self._per_triplet):
            logger.warning("%d votes requested but only %d prompt templates; reusing templates",
                           votes, len(self._per_triplet))
        return [self._per_triplet[i % len(self._per_triplet)].render(triplet=text) for i in range(votes)]

    def batched(self, texts: Sequence[str]) -> str:
        return self.env.get_template(BATCHED_TEMPLATE).render(triplets=list(texts)).strip()


@lru_cache(maxsize=8)
def _renderer_for(templates_dir: Optional[str]) -> PromptRenderer:
    return PromptRenderer(templates_dir)


def render_prompts(triplets: Union[Triplet, Sequence[Triplet]], cfg: ValidationConfig,
                   vocabulary: RelationVocabulary, renderer: Optional[PromptRenderer] = None) -> List[str]:
    """
    PER_TRIPLET_MAJORITY: `votes` differently worded questions per triplet.
    BATCHED_LIST: a single numbered prompt covering every triplet.
    """
    renderer = renderer or _renderer_for(cfg.templates_dir)
    if isinstance(triplets, Triplet):
        triplets = [triplets]
    texts = [t.render(vocabulary) for t in triplets]
    if cfg.strategy == Strategy.BATCHED_LIST:
        return [renderer.batched(texts)] if texts else []
    return [prompt for text in texts for prompt in renderer.per_triplet(text, cfg.votes)]


# Answer parsing

def parse_verdict(text: str) -> Union[bool, Ambiguity]:
    """Polarity of the first standalone yes/no, or AMBIGUOUS."""
    match = _VERDICT_TOKEN.search(text or '')
    if match is None:
        return AMBIGUOUS
    return match.group(1).lower() == 'yes'


def parse_verdict_list(text: str, expected: int) -> List[bool]:
    if expected < 1:
        raise ValueError("expected must be at least 1")
    answers = [m.group(1).lower() == 'yes' for m in _VERDICT_TOKEN.finditer(text or '')]
    if len(answers) != expected:
        raise CountMismatch(expected, len(answers))
    return answers


def majority(votes: Sequence[Union[bool, Ambiguity]]) -> bool:
    """Strict majority of aligned votes; AMBIGUOUS counts as aligned."""
    aligned = sum(1 for v in votes if v is AMBIGUOUS or v is True)
    return 2 * aligned > len(votes)


# Pipeline

class _CountingClient:
    """Counts outbound prompts, including ones that fail."""

    def __init__(self, client):
        self.client = client
        self.count = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.count += 1
        return self.client.complete(prompt)


def _query_per_triplet(triplets: Sequence[Triplet], cfg: ValidationConfig, client: _CountingClient,
                       vocabulary: RelationVocabulary, renderer: PromptRenderer) -> List[Verdict]:
    prompts = [(t, p) for t in triplets for p in renderer.per_triplet(t.render(vocabulary), cfg.votes)]
    answers = ParallelMap(cfg.max_workers).map(lambda item: client.complete(item[1]), prompts)
    votes: Dict[Triplet, List[Union[bool, Ambiguity]]] = {t: [] for t in triplets}
    for (t, _), answer in zip(prompts, answers):
        votes[t].append(parse_verdict(answer))
    verdicts = []
    for t in triplets:
        raw = tuple(v is AMBIGUOUS or v is True for v in votes[t])
        verdicts.append(Verdict(t, majority(votes[t]), raw, VerdictSource.MODEL))
    return verdicts


def _query_batched(triplets: Sequence[Triplet], cfg: ValidationConfig, client: _CountingClient,
                   vocabulary: RelationVocabulary, renderer: PromptRenderer) -> List[Verdict]:
    answer = client.complete(renderer.batched([t.render(vocabulary) for t in triplets]))
    try:
        answers = parse_verdict_list(answer, len(triplets))
    except CountMismatch as e:
        logger.warning("Batched answer unusable (%s); asking per triplet", e)
        return _query_per_triplet(triplets, cfg, client, vocabulary, renderer)
    return [Verdict(t, a, (a,), VerdictSource.MODEL) for t, a in zip(triplets, answers)]


def validate_graph(g: SceneGraph, cfg: ValidationConfig, client, whitelist: TripletWhitelist,
                   cache: VerdictCache, vocabulary: RelationVocabulary,
                   alignment_sets: Optional[AlignmentSets] = None,
                   renderer: Optional[PromptRenderer] = None) -> ValidationOutcome:
    """
    Validate the window of one ranked graph and drop rejected candidates.

    If the backend is unavailable or answers malformed, the graph comes back
    unfiltered with backend_failed set and the alignment sets untouched.
    Authentication errors propagate.
    """
    sets = alignment_sets if alignment_sets is not None else AlignmentSets()
    ranked = list(g.pred_candidates)
    window = validation_window(ranked, cfg)
    triplets = list(dict.fromkeys(g.candidate_triplet(c) for c in window))

    verdicts: Dict[Triplet, Verdict] = {}
    pending: List[Triplet] = []
    whitelist_hits = cache_hits = 0
    for t in triplets:
        if t in whitelist:
            verdicts[t] = Verdict(t, True, (), VerdictSource.WHITELIST)
            whitelist_hits += 1
            continue
        cached = cache.get(t)
        if cached is not None:
            verdicts[t] = replace(cached, source=VerdictSource.CACHE)
            cache_hits += 1
        else:
            pending.append(t)

    counting = _CountingClient(client)
    if pending:
        renderer = renderer or _renderer_for(cfg.templates_dir)
        query = _query_batched if cfg.strategy == Strategy.BATCHED_LIST else _query_per_triplet
        try:
            answered = query(pending, cfg, counting, vocabulary, renderer)
        except (BackendUnavailable, MalformedResponse) as e:
            logger.warning("Validation of %s skipped, backend failed: %s", g.image_id, e)
            return ValidationOutcome(g, sets, counting.count, cache_hits, whitelist_hits, 0, True)
        for verdict in answered:
            verdicts[verdict.triplet] = cache.insert(verdict)

    for t in triplets:
        sets.record(t, verdicts[t].aligned)

    kept = [c for rank, c in enumerate(ranked)
            if not _in_window(rank, cfg) or verdicts[g.candidate_triplet(c)].aligned]
    removals = len(ranked) - len(kept)
    if removals:
        logger.debug("Removed %d of %d window candidates from %s", removals, len(window), g.image_id)
    return ValidationOutcome(g.with_candidates(kept), sets, counting.count, cache_hits, whitelist_hits, removals)


def filter_with_alignment_sets(g: SceneGraph, sets: AlignmentSets, cfg: ValidationConfig) -> SceneGraph:
    """Drop window candidates whose triplet is known to be violated, without querying a model."""
    _, violated = sets.snapshot()
    kept = [c for rank, c in enumerate(g.pred_candidates)
            if not _in_window(rank, cfg) or g.candidate_triplet(c) not in violated]
    return g.with_candidates(kept)


def build_whitelist(graphs: Iterable[SceneGraph]) -> TripletWhitelist:
    return TripletWhitelist(frozenset(t for g in graphs for t in g.gt_triplets()))
