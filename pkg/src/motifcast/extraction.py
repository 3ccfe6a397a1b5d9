"""Dominant contextual-motif mining.

The cascade per channel: detrend -> amplitude spectrum -> top periods as
scales -> per scale (downsample, random anchors, correlation-density
centroids, nearest-centroid clustering, DTW medoids) -> pooled candidates ->
similarity-graph redundancy filtering -> per-component prototypes ->
quality scoring -> benefit-driven greedy selection into a fixed-size library.

Everything is deterministic given the config seed; the library carries enough
provenance (per-round benefit scores, refined candidate summaries) to replay
the greedy selection.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .dtw import (
    SimilarityConfig,
    dtw_similarity,
    mean_pairwise_dtw,
    median_pairwise_distance,
    znormalize,
)
from .errors import ConfigError, DataError
from .series import MultivariateSeries, downsample, moving_average_detrend
from .spectral import PeriodSet, amplitude_spectrum, dominant_periods, kdfh_group

__all__ = [
    "ExtractionConfig",
    "Anchor",
    "CandidateMotif",
    "SimilarityGraph",
    "QualityScore",
    "Motif",
    "MotifLibrary",
    "sample_anchors",
    "density_scores",
    "cluster_and_medoid",
    "build_similarity_graph",
    "connected_components",
    "select_prototypes",
    "raw_quality",
    "score_candidates",
    "marginal_coverage",
    "marginal_diversity",
    "select_dominant",
    "extract_motifs",
    "extract_all",
]

GREEDY_STOP = 1e-9


@dataclass(frozen=True)
class ExtractionConfig:
    """Knobs for the full mining cascade; defaults follow the reference
    protocol (10 periods, 64 anchors, 10 clusters per scale, correlation
    threshold 0.7, graph threshold 0.8, quality weights 0.6/0.2/0.2,
    diversity power 2, library size 10)."""

    top_periods: int = 10
    anchors_per_scale: int = 64
    max_clusters: int = 10
    corr_threshold: float = 0.7
    redundancy_threshold: float = 0.8
    saliency_weight: float = 0.6
    prevalence_weight: float = 0.2
    atomicity_weight: float = 0.2
    diversity_power: float = 2.0
    library_size: int = 10
    detrend_window: int = 25
    downsample_target: int = 48
    enum_stride_frac: float = 0.25
    # Kernel scale for the redundancy graph, on the length-normalized
    # z-space distance (mean per-point deviation after warping). The fixed
    # default calibrates the 0.8 edge threshold to "same shape up to noise
    # and small warps" (d/len < ~0.33); the adaptive median heuristic is
    # kept as an option but pins the median pair at similarity exp(-1),
    # which lets transitive chaining collapse structured pools.
    sigma_mode: str = "fixed"  # "fixed" or "median"
    sigma_value: float = 0.4
    band_frac: float = 0.10
    znorm_dtw: bool = True
    normalize_quality: bool = True
    min_assign_corr: float = 0.7
    min_support: int = 2
    # Spectral sidebands of one true periodicity land as many near-equal
    # periods; mining them all floods the pool with near-duplicates that
    # chain the redundancy graph together. Scales within this relative
    # distance of an already-kept (higher-amplitude) scale are skipped.
    scale_dedup_frac: float = 0.2
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.top_periods < 1 or self.anchors_per_scale < 2:
            raise ConfigError("need top_periods >= 1 and anchors_per_scale >= 2")
        if self.max_clusters < 1 or self.library_size < 1:
            raise ConfigError("need max_clusters >= 1 and library_size >= 1")
        if self.sigma_mode not in ("median", "fixed"):
            raise ConfigError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.sigma_mode == "fixed" and not self.sigma_value > 0:
            raise ConfigError("fixed sigma must be positive")
        for name in ("saliency_weight", "prevalence_weight", "atomicity_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.diversity_power < 0:
            raise ConfigError("diversity_power must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Anchor:
    """A randomly sampled subsequence used as a cheap clustering seed."""

    start: int
    scale: int
    values: np.ndarray
    density: float = 0.0


@dataclass
class CandidateMotif:
    """A cluster medoid (or merged prototype) with full-resolution bookkeeping.

    occurrences holds (start, length) pairs in full-resolution indices; after
    redundancy filtering a prototype carries the merged occurrences and the
    summed support of its whole component.
    """

    values: np.ndarray
    scale: int
    occurrences: list[tuple[int, int]]
    cluster_support: int
    series_length: int
    source_scales: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.cluster_support < 1:
            raise DataError("cluster_support must be >= 1")
        if not self.occurrences:
            raise DataError("candidate must have at least one occurrence")
        for start, length in self.occurrences:
            if start < 0 or start + length > self.series_length:
                raise DataError(
                    f"occurrence [{start}, {start + length}) outside series "
                    f"of length {self.series_length}"
                )

    def footprint(self) -> np.ndarray:
        mask = np.zeros(self.series_length, dtype=bool)
        for start, length in self.occurrences:
            mask[start : start + length] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "scale": self.scale,
            "occurrences": [[int(s), int(l)] for s, l in self.occurrences],
            "cluster_support": self.cluster_support,
            "series_length": self.series_length,
            "source_scales": list(self.source_scales),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateMotif":
        return cls(
            values=np.asarray(d["values"], dtype=np.float64),
            scale=int(d["scale"]),
            occurrences=[(int(s), int(l)) for s, l in d["occurrences"]],
            cluster_support=int(d["cluster_support"]),
            series_length=int(d["series_length"]),
            source_scales=[int(s) for s in d.get("source_scales", [])],
        )


@dataclass
class SimilarityGraph:
    """Symmetric weighted graph over candidate indices; weight 0 means no
    edge, every positive weight exceeds the redundancy threshold."""

    weights: np.ndarray
    threshold: float

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DataError("similarity graph needs a square weight matrix")
        if not np.allclose(w, w.T):
            raise DataError("similarity graph must be symmetric")
        if np.any(np.diagonal(w) != 0.0):
            raise DataError("similarity graph must have no self-loops")
        positive = w[w > 0.0]
        if positive.size and not np.all(positive > self.threshold):
            raise DataError("edge weights must exceed the threshold")

    @property
    def n_vertices(self) -> int:
        return self.weights.shape[0]


@dataclass
class QualityScore:
    saliency: float
    prevalence: float
    atomicity: float
    combined: float
    raw_saliency: float
    raw_prevalence: float
    raw_atomicity: float

    def to_dict(self) -> dict:
        return {
            "saliency": self.saliency,
            "prevalence": self.prevalence,
            "atomicity": self.atomicity,
            "combined": self.combined,
            "raw_saliency": self.raw_saliency,
            "raw_prevalence": self.raw_prevalence,
            "raw_atomicity": self.raw_atomicity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QualityScore":
        return cls(**d)


@dataclass
class Motif:
    """One selected dominant motif with its selection-time benefit."""

    values: np.ndarray
    scale: int
    occurrences: list[tuple[int, int]]
    quality: QualityScore
    benefit_at_selection: float
    round_index: int

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "scale": self.scale,
            "occurrences": [[int(s), int(l)] for s, l in self.occurrences],
            "quality": self.quality.to_dict(),
            "benefit_at_selection": self.benefit_at_selection,
            "round_index": self.round_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Motif":
        return cls(
            values=np.asarray(d["values"], dtype=np.float64),
            scale=int(d["scale"]),
            occurrences=[(int(s), int(l)) for s, l in d["occurrences"]],
            quality=QualityScore.from_dict(d["quality"]),
            benefit_at_selection=float(d["benefit_at_selection"]),
            round_index=int(d["round_index"]),
        )


@dataclass
class MotifLibrary:
    """Ordered dominant motifs for one channel (or channel group) plus the
    provenance needed to replay extraction."""

    channel: int
    channel_name: str
    series_length: int
    motifs: list[Motif]
    config: dict
    provenance: dict

    def __post_init__(self):
        if not self.motifs:
            raise DataError("a motif library cannot be empty")

    @property
    def size(self) -> int:
        return len(self.motifs)

    def to_dict(self) -> dict:
        return {
            "library_format": 1,
            "channel": self.channel,
            "channel_name": self.channel_name,
            "series_length": self.series_length,
            "motifs": [m.to_dict() for m in self.motifs],
            "config": self.config,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotifLibrary":
        if d.get("library_format") != 1:
            raise DataError(
                f"unsupported library format {d.get('library_format')!r}"
            )
        return cls(
            channel=int(d["channel"]),
            channel_name=str(d["channel_name"]),
            series_length=int(d["series_length"]),
            motifs=[Motif.from_dict(m) for m in d["motifs"]],
            config=d["config"],
            provenance=d["provenance"],
        )


def _rng(seed: int, channel: int, scale_pos: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, channel, scale_pos)))
    )


def sample_anchors(
    channel_ds: np.ndarray,
    scale: int,
    n_anchors: int,
    rng: np.random.Generator,
    stride: int = 1,
) -> list[Anchor]:
    """Uniformly sample distinct subsequence starts of the given scale.

    Starts are drawn from the stride grid used for subsequence enumeration so
    the resulting centroids are phase-compatible with the cluster members.
    """
    t = channel_ds.shape[0]
    if t < scale:
        raise DataError(f"series of length {t} shorter than scale {scale}")
    grid = np.arange(0, t - scale + 1, stride)
    count = min(n_anchors, grid.shape[0])
    starts = np.sort(rng.choice(grid, size=count, replace=False))
    return [
        Anchor(start=int(s), scale=scale, values=channel_ds[s : s + scale].copy())
        for s in starts
    ]


def _safe_corr_matrix(rows: np.ndarray) -> np.ndarray:
    """Pearson matrix with zero-variance rows correlating 0 with everything
    (diagonal stays 1 so a constant anchor keeps its self-density)."""
    n, width = rows.shape
    std = rows.std(axis=1)
    means = rows.mean(axis=1, keepdims=True)
    safe_std = np.where(std > 0, std, 1.0)
    z = (rows - means) / safe_std[:, None]
    corr = (z @ z.T) / width
    dead = std <= 0
    corr[dead, :] = 0.0
    corr[:, dead] = 0.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def density_scores(anchors: list[Anchor], corr_threshold: float) -> list[Anchor]:
    """Fill each anchor's density: sum of its correlations above the
    threshold over all anchors, itself included."""
    if len(anchors) < 2:
        raise DataError("density scores need at least 2 anchors")
    rows = np.stack([a.values for a in anchors])
    corr = _safe_corr_matrix(rows)
    mask = corr > corr_threshold
    rho = (corr * mask).sum(axis=1)
    for anchor, d in zip(anchors, rho):
        anchor.density = float(d)
    return anchors


def cluster_and_medoid(
    channel_ds: np.ndarray,
    scale: int,
    centroids: list[Anchor],
    stride: int,
    full_res_factor: int,
    series_length: int,
    source_scale: int,
    min_assign_corr: float = 0.0,
    min_support: int = 1,
) -> list[CandidateMotif]:
    """Assign every enumerated subsequence to its highest-correlation
    centroid, then pick each cluster's medoid by minimum mean DTW distance.

    Subsequences whose best centroid correlation does not exceed
    min_assign_corr stay unassigned (they are transition or noise windows
    that would otherwise pollute medoids and support counts). Occurrence
    starts are mapped back to full resolution via the downsample factor;
    clusters below min_support are dropped, as are empty clusters.
    """
    if not centroids:
        raise DataError("need at least one centroid")
    t = channel_ds.shape[0]
    starts = np.arange(0, t - scale + 1, stride)
    subs = np.stack([channel_ds[s : s + scale] for s in starts])
    cent = np.stack([c.values for c in centroids])

    def znorm_rows(rows):
        std = rows.std(axis=1)
        safe = np.where(std > 0, std, 1.0)
        z = (rows - rows.mean(axis=1, keepdims=True)) / safe[:, None]
        z[std <= 0] = 0.0
        return z

    corr = znorm_rows(subs) @ znorm_rows(cent).T / scale
    assigned = np.argmax(corr, axis=1)
    best_corr = corr[np.arange(corr.shape[0]), assigned]
    assigned[best_corr <= min_assign_corr] = -1

    full_scale = scale * full_res_factor
    candidates = []
    for k in range(len(centroids)):
        member_idx = np.nonzero(assigned == k)[0]
        if member_idx.size < max(1, min_support):
            continue
        members = subs[member_idx]
        mean_d = mean_pairwise_dtw(members)
        medoid_local = int(np.argmin(mean_d))  # ties break to the earliest start
        occurrences = [
            (int(starts[i]) * full_res_factor, full_scale) for i in member_idx
        ]
        candidates.append(
            CandidateMotif(
                values=members[medoid_local].copy(),
                scale=full_scale,
                occurrences=occurrences,
                cluster_support=int(member_idx.size),
                series_length=series_length,
                source_scales=[source_scale],
            )
        )
    return candidates


def similarity_matrix(
    candidates: list[CandidateMotif], sim_config: SimilarityConfig
) -> np.ndarray:
    n = len(candidates)
    sims = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            s = dtw_similarity(candidates[i].values, candidates[j].values, sim_config)
            sims[i, j] = sims[j, i] = s
    return sims


def build_similarity_graph(
    candidates: list[CandidateMotif],
    redundancy_threshold: float,
    sim_config: SimilarityConfig,
    sims: np.ndarray | None = None,
) -> SimilarityGraph:
    """Edge (i, j) present iff similarity strictly exceeds the threshold."""
    if not candidates:
        raise DataError("cannot build a graph over zero candidates")
    if sims is None:
        sims = similarity_matrix(candidates, sim_config)
    weights = np.where(sims > redundancy_threshold, sims, 0.0)
    np.fill_diagonal(weights, 0.0)
    return SimilarityGraph(weights=weights, threshold=redundancy_threshold)


def connected_components(graph: SimilarityGraph) -> list[list[int]]:
    """Maximal connected vertex sets, ordered by smallest member; members
    sorted ascending."""
    n = graph.n_vertices
    seen = [False] * n
    components = []
    for v in range(n):
        if seen[v]:
            continue
        stack = [v]
        seen[v] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in np.nonzero(graph.weights[u] > 0.0)[0]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        components.append(sorted(comp))
    return components


def select_prototypes(
    components: list[list[int]],
    candidates: list[CandidateMotif],
    sim_config: SimilarityConfig,
    sims: np.ndarray | None = None,
) -> list[CandidateMotif]:
    """Per component keep the member with the highest mean similarity to the
    component (self included); it inherits summed support and merged
    occurrences so prevalence bookkeeping survives the filter."""
    if sims is None:
        sims = similarity_matrix(candidates, sim_config)
    refined = []
    for comp in components:
        block = sims[np.ix_(comp, comp)]
        means = block.mean(axis=1)
        best = comp[int(np.argmax(means))]  # ties break to the lowest index
        proto = candidates[best]
        merged_occ = sorted(
            {occ for idx in comp for occ in candidates[idx].occurrences}
        )
        refined.append(
            CandidateMotif(
                values=proto.values.copy(),
                scale=proto.scale,
                occurrences=merged_occ,
                cluster_support=sum(candidates[i].cluster_support for i in comp),
                series_length=proto.series_length,
                source_scales=sorted(
                    {s for i in comp for s in candidates[i].source_scales}
                ),
            )
        )
    return refined


def raw_quality(candidate: CandidateMotif) -> tuple[float, float, float]:
    """Unnormalized (saliency, prevalence, atomicity).

    Saliency: largest peak/trough deviation from the candidate's own mean in
    units of its own population std (0 for a flat candidate). Prevalence:
    merged cluster support. Atomicity: 1/ln(1 + full-resolution length).
    """
    v = candidate.values
    if v.size < 2:
        raise DataError("quality needs candidates of length >= 2")
    std = float(v.std())
    if std <= 0.0:
        saliency = 0.0
    else:
        mean = float(v.mean())
        saliency = max(abs(v.max() - mean), abs(v.min() - mean)) / std
    prevalence = float(candidate.cluster_support)
    atomicity = 1.0 / math.log(1.0 + candidate.scale)
    return saliency, prevalence, atomicity


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi - lo <= 0.0:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def score_candidates(
    candidates: list[CandidateMotif],
    weights: tuple[float, float, float],
    normalize: bool = True,
) -> list[QualityScore]:
    """Quality per candidate; components are min-max normalized across the
    candidate set before weighting (raw mode behind the flag)."""
    raw = np.array([raw_quality(c) for c in candidates])
    comps = np.column_stack([_minmax(raw[:, k]) for k in range(3)]) if normalize else raw
    w = np.asarray(weights, dtype=np.float64)
    combined = comps @ w
    return [
        QualityScore(
            saliency=float(comps[i, 0]),
            prevalence=float(comps[i, 1]),
            atomicity=float(comps[i, 2]),
            combined=float(combined[i]),
            raw_saliency=float(raw[i, 0]),
            raw_prevalence=float(raw[i, 1]),
            raw_atomicity=float(raw[i, 2]),
        )
        for i in range(len(candidates))
    ]


def marginal_coverage(candidate: CandidateMotif, selected: list[Motif]) -> float:
    """Fraction of the candidate's temporal footprint not yet covered by the
    selected motifs' footprints."""
    mask = candidate.footprint()
    total = int(mask.sum())
    covered = np.zeros_like(mask)
    for m in selected:
        for start, length in m.occurrences:
            covered[start : start + length] = True
    novel = int(np.sum(mask & ~covered))
    return novel / total


def marginal_diversity(
    candidate: CandidateMotif,
    selected: list[Motif],
    diversity_power: float,
    sim_config: SimilarityConfig,
) -> float:
    """(1 - max similarity to any selected motif) ** power; 1 when nothing is
    selected (the max over an empty set counts as 0)."""
    if not selected:
        return 1.0
    best = max(
        dtw_similarity(candidate.values, m.values, sim_config) for m in selected
    )
    return float((1.0 - best) ** diversity_power)


def select_dominant(
    refined: list[CandidateMotif],
    k: int,
    weights: tuple[float, float, float],
    diversity_power: float,
    sim_config: SimilarityConfig,
    normalize_quality: bool = True,
    sims: np.ndarray | None = None,
) -> tuple[list[Motif], list[dict]]:
    """Greedy benefit-driven selection: each round adds the candidate with
    the highest quality x marginal-coverage x marginal-diversity, stopping at
    k motifs or when the best benefit falls below the stop threshold.

    Returns the motifs in selection order plus a per-round benefit trace
    sufficient to replay every argmax.
    """
    if not refined:
        raise DataError("cannot select from an empty candidate set")
    if k < 1:
        raise ConfigError("library size must be >= 1")
    if sims is None:
        sims = similarity_matrix(refined, sim_config)
    scores = score_candidates(refined, weights, normalize_quality)
    masks = [c.footprint() for c in refined]
    totals = [int(m.sum()) for m in masks]
    covered = np.zeros(refined[0].series_length, dtype=bool)

    selected: list[Motif] = []
    selected_idx: list[int] = []
    trace: list[dict] = []
    remaining = list(range(len(refined)))
    for round_index in range(k):
        benefits = {}
        for i in remaining:
            cov = int(np.sum(masks[i] & ~covered)) / totals[i]
            if selected_idx:
                div = (1.0 - max(sims[i, j] for j in selected_idx)) ** diversity_power
            else:
                div = 1.0
            benefits[i] = scores[i].combined * cov * div
        best = min(benefits, key=lambda i: (-benefits[i], i))
        best_benefit = benefits[best]
        trace.append(
            {
                "round": round_index,
                "selected": best,
                "benefits": {str(i): float(b) for i, b in benefits.items()},
            }
        )
        if best_benefit < GREEDY_STOP:
            trace[-1]["stopped"] = True
            break
        cand = refined[best]
        selected.append(
            Motif(
                values=cand.values.copy(),
                scale=cand.scale,
                occurrences=list(cand.occurrences),
                quality=scores[best],
                benefit_at_selection=float(best_benefit),
                round_index=round_index,
            )
        )
        selected_idx.append(best)
        remaining.remove(best)
        covered |= masks[best]
        if not remaining:
            break
    if not selected:
        raise DataError("greedy selection produced no motifs")
    return selected, trace


def _scale_plan(period: int, downsample_target: int) -> tuple[int, int]:
    """(downsample factor, scale in downsampled steps) for one period."""
    factor = max(1, period // downsample_target)
    scale_ds = max(2, period // factor)
    return factor, scale_ds


def discover_candidates(
    channel: np.ndarray, config: ExtractionConfig, channel_index: int = 0
) -> tuple[list[CandidateMotif], PeriodSet, list[str]]:
    """Multi-scale candidate discovery: returns the pooled candidate set,
    the period set, and any warnings.

    Detrending feeds only the period detection; subsequences are mined from
    the series itself so motif shapes stay commensurable with the raw
    windows the forecaster sees (the moving-average residual would otherwise
    reshape patterns whose period is near the smoothing window).
    """
    t = channel.shape[0]
    warnings: list[str] = []
    series = MultivariateSeries(channel[:, None], ("x",))
    window = min(config.detrend_window, t)
    if window % 2 == 0:
        window -= 1
    detrended = moving_average_detrend(series, max(1, window))
    spectrum = amplitude_spectrum(detrended.channel(0))
    periods = dominant_periods(spectrum, config.top_periods)

    mined: list[int] = []
    candidates: list[CandidateMotif] = []
    for scale_pos, period in enumerate(periods.periods):
        if any(
            abs(period - kept) / kept < config.scale_dedup_frac for kept in mined
        ):
            continue
        mined.append(period)
        factor, scale_ds = _scale_plan(period, config.downsample_target)
        ds = downsample(series, factor).channel(0)
        if ds.shape[0] - scale_ds + 1 < 2:
            warnings.append(f"period {period}: too little room, skipped")
            continue
        rng = _rng(config.seed, channel_index, scale_pos)
        stride = max(1, int(round(scale_ds * config.enum_stride_frac)))
        anchors = sample_anchors(
            ds, scale_ds, config.anchors_per_scale, rng, stride=stride
        )
        if len(anchors) < 2:
            warnings.append(f"period {period}: fewer than 2 anchors, skipped")
            continue
        density_scores(anchors, config.corr_threshold)
        ranked = sorted(
            range(len(anchors)),
            key=lambda i: (-anchors[i].density, anchors[i].start),
        )
        centroids = [anchors[i] for i in ranked[: config.max_clusters]]
        candidates.extend(
            cluster_and_medoid(
                ds,
                scale_ds,
                centroids,
                stride,
                factor,
                series_length=t,
                source_scale=period,
                min_assign_corr=config.min_assign_corr,
                min_support=config.min_support,
            )
        )
    if not candidates:
        raise DataError("empty candidate pool: no usable scale produced candidates")
    return candidates, periods, warnings


def _pipeline_sim_config(
    candidates: list[CandidateMotif], config: ExtractionConfig
) -> SimilarityConfig:
    """Cross-scale similarity setup: banded, z-normalized, length-normalized
    so candidates of very different scales score comparably, with the kernel
    scale from the median heuristic unless fixed in the config."""
    max_len = max(c.values.size for c in candidates)
    radius = max(1, math.ceil(config.band_frac * max_len))
    if config.sigma_mode == "median":
        sigma = median_pairwise_distance(
            [c.values for c in candidates],
            band_radius=radius,
            znorm=config.znorm_dtw,
            length_normalize=True,
        )
    else:
        sigma = config.sigma_value
    return SimilarityConfig(
        sigma=sigma,
        band_radius=radius,
        znormalize=config.znorm_dtw,
        length_normalize=True,
    )


def extract_motifs(
    channel: np.ndarray,
    config: ExtractionConfig,
    channel_index: int = 0,
    channel_name: str = "",
) -> MotifLibrary:
    """Run the full cascade on one univariate channel."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 1:
        raise DataError("extract_motifs expects a 1-D channel")
    candidates, periods, warnings = discover_candidates(
        channel, config, channel_index
    )
    sim_config = _pipeline_sim_config(candidates, config)
    sims = similarity_matrix(candidates, sim_config)
    graph = build_similarity_graph(
        candidates, config.redundancy_threshold, sim_config, sims=sims
    )
    components = connected_components(graph)
    refined = select_prototypes(components, candidates, sim_config, sims=sims)
    for c in refined:
        if c.values.std() <= 0.0:
            warnings.append("zero-variance refined candidate: saliency set to 0")
    refined_sims = similarity_matrix(refined, sim_config)
    weights = (
        config.saliency_weight,
        config.prevalence_weight,
        config.atomicity_weight,
    )
    motifs, trace = select_dominant(
        refined,
        config.library_size,
        weights,
        config.diversity_power,
        sim_config,
        normalize_quality=config.normalize_quality,
        sims=refined_sims,
    )
    provenance = {
        "periods": periods.to_dict(),
        "sigma": sim_config.sigma,
        "band_radius": sim_config.band_radius,
        "n_candidates": len(candidates),
        "n_refined": len(refined),
        "refined_candidates": [c.to_dict() for c in refined],
        "benefit_trace": trace,
        "warnings": warnings,
    }
    return MotifLibrary(
        channel=channel_index,
        channel_name=channel_name or f"channel_{channel_index}",
        series_length=channel.shape[0],
        motifs=motifs,
        config=config.to_dict(),
        provenance=provenance,
    )


def extract_all(
    series: MultivariateSeries,
    config: ExtractionConfig,
    group_channels: int = 0,
) -> list[MotifLibrary]:
    """One library per channel, or per k-DFH group when grouping is enabled
    (the group representative is the mean of its standardized channels).
    Extractions are independent; thread count comes from the config."""
    jobs: list[tuple[int, str, np.ndarray]] = []
    if group_channels > 0:
        groups = kdfh_group(series, group_channels, config.detrend_window)
        for gi, members in enumerate(groups):
            rep = series.values[:, members].mean(axis=1)
            name = "group_" + "_".join(series.channel_names[m] for m in members)
            jobs.append((gi, name, rep))
    else:
        for c in range(series.n_channels):
            jobs.append((c, series.channel_names[c], series.channel(c).copy()))

    def run(job):
        idx, name, values = job
        return extract_motifs(values, config, channel_index=idx, channel_name=name)

    if config.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]
