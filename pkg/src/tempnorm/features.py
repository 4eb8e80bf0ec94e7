"""Aggregate features: segment-level summary statistics and speech graphs.

Summary statistics
------------------
``segment_stats`` reduces one dimension of per-segment scores to 31 values,
always in this order::

     0 mean            1 std             2 skewness        3 kurtosis
     4 min             5 max             6 range
     7 p1    8 p10    9 p25   10 p50   11 p75   12 p90   13 p99
    14 p50-p25        15 p75-p50        16 p75-p25
    17 p90-p10        18 p99-p1
    19 slope          20 intercept      21 r2
    22 mean_error     23 mse
    24..28 fraction of values > min + f*range, f = .10 .25 .50 .75 .90
    29 mae            30 max_abs_error

Conventions: population (1/n) moments, so std is the 1/n standard
deviation, skewness is g1 = m3 / m2**1.5 and kurtosis is the excess
g2 = m4 / m2**2 - 3; both are 0 for constant input.  Percentiles
interpolate linearly at position (n - 1) * p / 100.  The regression is
ordinary least squares of the values on their segment index; the last two
entries are the mean and maximum absolute residual.

Speech graphs
-------------
Each unique token label is a node and every consecutive pair of tokens
within one segment adds a directed edge, so the graph is a directed
multigraph with no edges across segment boundaries.  ``graph_measures``
returns the measures of Mota et al. (2012, 2014), in this order::

     0 nodes  1 edges  2 parallel_edges  3 L1  4 L2  5 L3
     6 LCC    7 LSC    8 ATD  9 density  10 diameter  11 ASP

parallel_edges counts edges beyond the first between the same ordered
pair; L1 counts self-loop edges; L2 counts node pairs joined in both
directions; L3 counts directed 3-cycles over distinct nodes.  LCC and LSC
are the node counts of the largest weakly and strongly connected
components.  ATD is 2 * edges / nodes.  Density is distinct non-loop
ordered pairs over nodes * (nodes - 1).  Diameter and ASP are taken on the
largest weakly connected component with edges undirected.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from tempnorm.core import InvalidInputError, InvalidParameterError

PERCENTILES = (1, 10, 25, 50, 75, 90, 99)
PERCENTILE_DIFFS = ((25, 50), (50, 75), (25, 75), (10, 90), (1, 99))
RANGE_FRACTIONS = (0.10, 0.25, 0.50, 0.75, 0.90)

STAT_NAMES = (
    ["mean", "std", "skew", "kurtosis", "min", "max", "range"]
    + [f"p{p}" for p in PERCENTILES]
    + [f"d{a}_{b}" for a, b in PERCENTILE_DIFFS]
    + ["slope", "intercept", "r2", "mean_error", "mse"]
    + [f"frac_gt_{int(f * 100)}" for f in RANGE_FRACTIONS]
    + ["mae", "max_abs_error"]
)
N_STATS = len(STAT_NAMES)
EMOTION_DIMS = 6

GRAPH_MEASURES = (
    "nodes", "edges", "parallel_edges", "L1", "L2", "L3",
    "LCC", "LSC", "ATD", "density", "diameter", "ASP",
)


class InsufficientDataError(ValueError):
    pass


def percentile(values: Sequence[float], p: float) -> float:
    """Linear-interpolation percentile, position ``(n - 1) * p / 100``."""
    x = np.sort(np.asarray(values, float))
    if x.size == 0:
        raise InsufficientDataError("percentile of empty input")
    if not 0 <= p <= 100:
        raise InvalidParameterError(f"p must be in [0, 100], got {p}")
    pos = (x.size - 1) * p / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, x.size - 1)
    frac = pos - lo
    return float(x[lo] + (x[hi] - x[lo]) * frac)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float
    mean_error: float
    mse: float
    mae: float
    max_abs_error: float


def linear_fit_stats(values: Sequence[float]) -> LinearFit:
    y = np.asarray(values, float)
    n = y.size
    if n < 2:
        raise InsufficientDataError("linear fit needs at least 2 values")
    t = np.arange(n, dtype=float)
    tc = t - t.mean()
    slope = float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))
    intercept = float(y.mean() - slope * t.mean())
    resid = y - (intercept + slope * t)
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        r2 = 1.0 if ss_res == 0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return LinearFit(
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        mean_error=float(resid.mean()),
        mse=ss_res / n,
        mae=float(np.abs(resid).mean()),
        max_abs_error=float(np.abs(resid).max()),
    )


def segment_stats(values: Sequence[float]) -> np.ndarray:
    x = np.asarray(values, float)
    if x.ndim != 1 or x.size < 2:
        raise InsufficientDataError("segment_stats needs at least 2 segments")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("segment scores must be finite")
    mean = x.mean()
    centered = x - mean
    m2 = np.mean(centered**2)
    sd = np.sqrt(m2)
    if sd > 0:
        z = centered / sd
        skew = np.mean(z**3)
        kurt = np.mean(z**4) - 3.0
    else:
        skew = kurt = 0.0
    lo, hi = x.min(), x.max()
    rng = hi - lo
    pct = {p: percentile(x, p) for p in PERCENTILES}
    fit = linear_fit_stats(x)
    out = [mean, sd, skew, kurt, lo, hi, rng]
    out += [pct[p] for p in PERCENTILES]
    out += [pct[b] - pct[a] for a, b in PERCENTILE_DIFFS]
    out += [fit.slope, fit.intercept, fit.r_squared, fit.mean_error, fit.mse]
    out += [float(np.mean(x > lo + f * rng)) for f in RANGE_FRACTIONS]
    out += [fit.mae, fit.max_abs_error]
    return np.asarray(out, dtype=float)


def emotion_feature_vector(series, n_dims: int = EMOTION_DIMS) -> np.ndarray:
    """Stats of every column of a ``(segments, n_dims)`` array, column-major.

    Columns follow the input order (for emotion scores: three activation
    bins, then three valence bins).
    """
    arr = np.asarray(series, float)
    if arr.ndim == 1 and n_dims == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != n_dims:
        raise InvalidInputError(f"expected shape (segments, {n_dims}), got {arr.shape}")
    return np.concatenate([segment_stats(arr[:, d]) for d in range(n_dims)])


class Variant(str, enum.Enum):
    WORD = "word"
    LEMMA = "lemma"
    POS = "pos"


@dataclass(frozen=True)
class Token:
    word: str
    lemma: str
    pos: str

    def label(self, variant: Variant) -> str:
        return {Variant.WORD: self.word, Variant.LEMMA: self.lemma, Variant.POS: self.pos}[Variant(variant)]


def _as_token(tok) -> Token:
    if isinstance(tok, Token):
        return tok
    if isinstance(tok, str):
        return Token(tok, tok, tok)
    if isinstance(tok, dict):
        return Token(tok["word"], tok.get("lemma", tok["word"]), tok.get("pos", tok["word"]))
    word, lemma, pos = tok
    return Token(word, lemma, pos)


@dataclass
class TranscriptRecord:
    """Segments of tokens; bare strings stand in for all three label forms."""

    segments: list[list[Token]] = field(default_factory=list)

    def __post_init__(self):
        self.segments = [[_as_token(t) for t in seg] for seg in self.segments]

    @property
    def word_count(self) -> int:
        return sum(len(seg) for seg in self.segments)


@dataclass
class SpeechGraph:
    nodes: set
    edges: list[tuple[str, str]]

    def to_networkx(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        g.add_nodes_from(sorted(self.nodes))
        g.add_edges_from(self.edges)
        return g


def build_speech_graph(record: TranscriptRecord, variant: Variant | str = Variant.WORD) -> SpeechGraph:
    if not isinstance(record, TranscriptRecord):
        record = TranscriptRecord(record)
    variant = Variant(variant)
    nodes: set = set()
    edges: list[tuple[str, str]] = []
    for seg in record.segments:
        labels = [t.label(variant) for t in seg]
        nodes.update(labels)
        edges.extend(zip(labels, labels[1:]))
    return SpeechGraph(nodes, edges)


def _largest(components) -> set:
    # ties broken by the sorted node labels so the choice is deterministic
    return max(components, key=lambda c: (len(c), sorted(c, reverse=True)), default=set())


def graph_measures(graph: SpeechGraph) -> np.ndarray:
    n = len(graph.nodes)
    if n == 0:
        return np.zeros(len(GRAPH_MEASURES))
    g = graph.to_networkx()
    e = len(graph.edges)
    pairs = set(graph.edges)
    parallel = e - len(pairs)
    l1 = sum(1 for u, v in graph.edges if u == v)
    l2 = sum(1 for u, v in combinations(sorted(graph.nodes), 2) if (u, v) in pairs and (v, u) in pairs)
    simple = nx.DiGraph(g)
    simple.remove_edges_from(nx.selfloop_edges(simple))
    l3 = sum(1 for c in nx.simple_cycles(simple, length_bound=3) if len(c) == 3)
    lcc = _largest(nx.weakly_connected_components(g))
    lsc = _largest(nx.strongly_connected_components(g))
    distinct = sum(1 for u, v in pairs if u != v)
    density = distinct / (n * (n - 1)) if n > 1 else 0.0
    core = nx.Graph(g.subgraph(lcc))
    if len(core) > 1:
        diameter = nx.diameter(core)
        asp = nx.average_shortest_path_length(core)
    else:
        diameter = asp = 0.0
    return np.array(
        [n, e, parallel, l1, l2, l3, len(lcc), len(lsc), 2.0 * e / n, density, diameter, asp],
        dtype=float,
    )


def transcript_graph_features(record: TranscriptRecord) -> np.ndarray:
    """Raw measures for word, lemma and POS graphs, then all 36 over word count."""
    if not isinstance(record, TranscriptRecord):
        record = TranscriptRecord(record)
    words = record.word_count
    if words == 0:
        raise InsufficientDataError("transcript has no words")
    raw = np.concatenate([graph_measures(build_speech_graph(record, v)) for v in Variant])
    return np.concatenate([raw, raw / words])


@dataclass
class FeatureRecord:
    subject_id: str
    week: int
    features: np.ndarray
    set: str
    meta: dict | None = None

    def to_json(self) -> str:
        obj = {
            "subject_id": self.subject_id,
            "week": int(self.week),
            "features": [float(v) for v in np.asarray(self.features, float)],
            "set": self.set,
        }
        if self.meta:
            obj["meta"] = self.meta
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "FeatureRecord":
        obj = json.loads(line)
        return cls(
            subject_id=str(obj["subject_id"]),
            week=int(obj["week"]),
            features=np.asarray(obj["features"], float),
            set=str(obj["set"]),
            meta=obj.get("meta"),
        )


def write_records(records: Iterable[FeatureRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def read_records(text: str) -> list[FeatureRecord]:
    return [FeatureRecord.from_json(line) for line in text.splitlines() if line.strip()]


def synthetic_feature_records(
    cohort,
    width: int = 8,
    seed: int = 0,
    offset_std: float = 2.0,
    noise_std: float = 0.1,
    offset: float = 6.0,
    scale: float = 4.0,
) -> list[FeatureRecord]:
    """Features that are a fixed linear image of the ratings plus a subject offset.

    ``x = M @ r + o_subject + noise`` with ``r`` the prenormalized
    (mania, depression) pair, so ratings are recoverable from features only
    after the per-subject offset is removed.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5EED])))
    mixing = rng.normal(0.0, 1.0, size=(width, 2))
    records = []
    for ordinal, tl in enumerate(sorted(cohort.subjects, key=lambda s: s.subject_id)):
        srng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, ordinal, 0x0FF5])))
        subj_offset = srng.normal(0.0, offset_std, size=width)
        for row in tl.rows:
            r = (np.array([row.ymrs, row.hdrs], float) - offset) / scale
            x = mixing @ r + subj_offset + srng.normal(0.0, noise_std, size=width)
            records.append(FeatureRecord(tl.subject_id, row.week, x, f"synthetic-linear-{width}"))
    return records
