"""Motif-guided mixture-of-experts forecaster.

A look-back window is embedded by a two-layer stack with terminal layer
normalization; a dual-head gate maps the embedding to expert probabilities
(softmax) and a positional score in [0, 1] (sigmoid); the score is lifted by
a position encoder, fused with the embedding into a shared representation,
and K expert heads each emit a horizon forecast. The prediction is the
probability-weighted sum of all expert outputs (dense routing).

Training follows three phases: (1) embedder pre-training through a linear
probe on the forecasting task, (2) gate specialization against motif
annotations with the embedder frozen, (3) joint fine-tuning with a
load-balancing term. All gradients are exact and hand-derived; the test
suite checks them against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dtw import SimilarityConfig, dtw_similarity
from .errors import ConfigError, DataError, NumericError
from .extraction import MotifLibrary
from .neural import (
    AdamW,
    Dense,
    DenseStack,
    clip_global_norm,
    cosine_lr,
    dense_backward,
    dense_forward,
    init_dense,
    init_stack,
    sigmoid,
    softmax,
    stack_backward,
    stack_forward,
)
from .series import WindowSample

__all__ = [
    "TrainConfig",
    "ForecasterModel",
    "GateOutput",
    "Annotation",
    "ChannelData",
    "init_forecaster",
    "embed_window",
    "gate",
    "expert_forward",
    "combine",
    "predict",
    "predict_batch",
    "annotate_windows",
    "annotate_matrix",
    "loss_pretrain",
    "loss_gate",
    "loss_final",
    "load_balance_term",
    "train_three_phase",
]

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults follow the reference protocol
    (embedding width 256, AdamW at 1e-3 with cosine decay, batch 256,
    early-stopping patience 7, balance weight 0.1, position weight 1.0)."""

    lookback: int = 96
    horizon: int = 96
    embed_dim: int = 256
    learning_rate: float = 1e-3
    batch_size: int = 256
    balance_weight: float = 0.1
    position_weight: float = 1.0
    patience: int = 7
    max_epochs: int = 100
    weight_decay: float = 1e-4
    clip_norm: float = 5.0
    separate_experts: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lookback < 1 or self.horizon < 1:
            raise ConfigError("lookback and horizon must be >= 1")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("bad optimizer settings")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")


@dataclass
class GateOutput:
    """Expert probability simplex plus the positional score in [0, 1]."""

    probabilities: np.ndarray
    position: np.ndarray


@dataclass(frozen=True)
class Annotation:
    """Motif class and life-cycle position assigned to one training window."""

    motif_index: int
    position: float
    match_similarity: float
    fallback: bool


@dataclass
class ForecasterModel:
    lookback: int
    horizon: int
    n_experts: int
    embed_dim: int
    separate_experts: bool
    embedder: DenseStack
    route: Dense
    pos_head: Dense
    pos_encoder: DenseStack
    fusions: list[DenseStack]
    heads: list[DenseStack]
    trained: bool = False

    def named_parameters(self) -> dict[str, np.ndarray]:
        params = dict(self.embedder.param_items("embedder"))
        params["route.weight"] = self.route.weight
        params["route.bias"] = self.route.bias
        params["pos.weight"] = self.pos_head.weight
        params["pos.bias"] = self.pos_head.bias
        params.update(self.pos_encoder.param_items("pos_encoder"))
        for i, fusion in enumerate(self.fusions):
            params.update(fusion.param_items(f"fusion.{i}"))
        for k, head in enumerate(self.heads):
            params.update(head.param_items(f"head.{k}"))
        return params

    def set_parameter(self, key: str, value: np.ndarray) -> None:
        head, _, rest = key.partition(".")
        if head == "embedder":
            self.embedder.set_param(rest, value)
        elif head == "route":
            setattr(self.route, rest, value)
        elif head == "pos":
            setattr(self.pos_head, rest, value)
        elif head == "pos_encoder":
            self.pos_encoder.set_param(rest, value)
        elif head == "fusion":
            idx, _, sub = rest.partition(".")
            self.fusions[int(idx)].set_param(sub, value)
        elif head == "head":
            idx, _, sub = rest.partition(".")
            self.heads[int(idx)].set_param(sub, value)
        else:
            raise ConfigError(f"unknown parameter key {key!r}")


def init_forecaster(
    rng: np.random.Generator,
    lookback: int,
    horizon: int,
    n_experts: int,
    embed_dim: int = 256,
    separate_experts: bool = False,
) -> ForecasterModel:
    """Architecture: embedder L->d->d (leaky relu, terminal layer norm);
    single affine routing and position heads; position encoder 1->d->d;
    fusion 2d->d->d (shared trunk unless separate_experts); K heads
    d->d->d->H."""
    if n_experts < 1:
        raise ConfigError("need at least one expert")
    d = embed_dim
    embedder = init_stack(
        rng, [lookback, d, d], ["leaky_relu", "leaky_relu"], layer_norm=True
    )
    route = init_dense(rng, d, n_experts, "identity")
    pos_head = init_dense(rng, d, 1, "identity")
    pos_encoder = init_stack(rng, [1, d, d], ["leaky_relu", "identity"])
    n_fusions = n_experts if separate_experts else 1
    fusions = [
        init_stack(rng, [2 * d, d, d], ["leaky_relu", "identity"])
        for _ in range(n_fusions)
    ]
    heads = [
        init_stack(rng, [d, d, d, horizon], ["leaky_relu", "leaky_relu", "identity"])
        for _ in range(n_experts)
    ]
    return ForecasterModel(
        lookback=lookback,
        horizon=horizon,
        n_experts=n_experts,
        embed_dim=d,
        separate_experts=separate_experts,
        embedder=embedder,
        route=route,
        pos_head=pos_head,
        pos_encoder=pos_encoder,
        fusions=fusions,
        heads=heads,
    )


# ---------------------------------------------------------------------------
# forward pieces


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != width:
        raise DataError(f"{what} width {x.shape[1]} does not match model {width}")
    return x, single


def embed_window(model: ForecasterModel, window: np.ndarray) -> np.ndarray:
    """Deterministic embedding of one window (or a batch of windows)."""
    x, single = _as_batch(window, model.lookback, "window")
    e, _ = stack_forward(model.embedder, x)
    return e[0] if single else e


def gate(model: ForecasterModel, embedding: np.ndarray) -> GateOutput:
    """Expert probabilities (stabilized softmax) and positional score."""
    e, single = _as_batch(embedding, model.embed_dim, "embedding")
    logits, _ = dense_forward(model.route, e)
    p = softmax(logits)
    u, _ = dense_forward(model.pos_head, e)
    s = sigmoid(u[:, 0])
    if single:
        return GateOutput(probabilities=p[0], position=s[0])
    return GateOutput(probabilities=p, position=s)


def expert_forward(
    model: ForecasterModel, embedding: np.ndarray, position: np.ndarray
) -> np.ndarray:
    """All K expert forecasts for the given embedding and positional score.

    Returns (K, H) for a single embedding or (K, B, H) for a batch. The
    positional score is lifted to a d-dimensional encoding, fused with the
    window embedding into the conditional representation, and each head maps
    that onto the horizon.
    """
    e, single = _as_batch(embedding, model.embed_dim, "embedding")
    s = np.atleast_1d(np.asarray(position, dtype=np.float64)).reshape(-1, 1)
    if s.shape[0] != e.shape[0]:
        raise DataError("position batch does not match embedding batch")
    e_pos, _ = stack_forward(model.pos_encoder, s)
    c = np.concatenate([e, e_pos], axis=1)
    outs = []
    for k, head in enumerate(model.heads):
        fusion = model.fusions[k if model.separate_experts else 0]
        z, _ = stack_forward(fusion, c)
        y, _ = stack_forward(head, z)
        outs.append(y)
    stacked = np.stack(outs)  # (K, B, H)
    return stacked[:, 0, :] if single else stacked


def combine(probabilities: np.ndarray, forecasts: np.ndarray) -> np.ndarray:
    """Probability-weighted sum of expert forecasts.

    probabilities: (K,) or (B, K); forecasts: (K, H) or (K, B, H).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    f = np.asarray(forecasts, dtype=np.float64)
    if p.ndim == 1:
        if f.ndim != 2 or f.shape[0] != p.shape[0]:
            raise DataError("probability/forecast expert counts differ")
        return p @ f
    if f.ndim != 3 or f.shape[0] != p.shape[1] or f.shape[1] != p.shape[0]:
        raise DataError("probability/forecast expert counts differ")
    return np.einsum("bk,kbh->bh", p, f)


@dataclass
class _ForwardState:
    x: np.ndarray
    e: np.ndarray
    cache_e: tuple
    logits: np.ndarray
    cache_route: tuple
    p: np.ndarray
    u: np.ndarray
    cache_pos: tuple
    s: np.ndarray
    e_pos: np.ndarray
    cache_enc: tuple
    c: np.ndarray
    zs: list[np.ndarray]
    cache_fusions: list
    expert_out: np.ndarray
    cache_heads: list
    yhat: np.ndarray


def _forward_full(model: ForecasterModel, x: np.ndarray) -> _ForwardState:
    e, cache_e = stack_forward(model.embedder, x)
    logits, cache_route = dense_forward(model.route, e)
    p = softmax(logits)
    u, cache_pos = dense_forward(model.pos_head, e)
    s = sigmoid(u)
    e_pos, cache_enc = stack_forward(model.pos_encoder, s)
    c = np.concatenate([e, e_pos], axis=1)
    zs, cache_fusions, outs, cache_heads = [], [], [], []
    if model.separate_experts:
        for k, head in enumerate(model.heads):
            z, cf = stack_forward(model.fusions[k], c)
            y, ch = stack_forward(head, z)
            zs.append(z)
            cache_fusions.append(cf)
            outs.append(y)
            cache_heads.append(ch)
    else:
        z, cf = stack_forward(model.fusions[0], c)
        zs.append(z)
        cache_fusions.append(cf)
        for head in model.heads:
            y, ch = stack_forward(head, z)
            outs.append(y)
            cache_heads.append(ch)
    expert_out = np.stack(outs)
    yhat = np.einsum("bk,kbh->bh", p, expert_out)
    return _ForwardState(
        x=x, e=e, cache_e=cache_e, logits=logits, cache_route=cache_route,
        p=p, u=u, cache_pos=cache_pos, s=s, e_pos=e_pos, cache_enc=cache_enc,
        c=c, zs=zs, cache_fusions=cache_fusions, expert_out=expert_out,
        cache_heads=cache_heads, yhat=yhat,
    )


def _backward_from_outputs(
    model: ForecasterModel,
    state: _ForwardState,
    d_yhat: np.ndarray,
    d_p_extra: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of a scalar loss given d(loss)/d(yhat) and an optional
    extra d(loss)/d(p) term (the balance penalty). Returns (grads, d_input)."""
    grads: dict[str, np.ndarray] = {}
    batch = state.x.shape[0]
    d_experts = state.p.T[:, :, None] * d_yhat[None, :, :]  # (K, B, H)
    d_p = np.einsum("bh,kbh->bk", d_yhat, state.expert_out)
    if d_p_extra is not None:
        d_p = d_p + d_p_extra
    # softmax backward
    dot = np.sum(d_p * state.p, axis=1, keepdims=True)
    d_logits = state.p * (d_p - dot)

    d_c = np.zeros_like(state.c)
    if model.separate_experts:
        for k in range(model.n_experts):
            g_head, d_z = stack_backward(
                model.heads[k], state.cache_heads[k], d_experts[k], f"head.{k}"
            )
            grads.update(g_head)
            g_fus, d_ck = stack_backward(
                model.fusions[k], state.cache_fusions[k], d_z, f"fusion.{k}"
            )
            grads.update(g_fus)
            d_c += d_ck
    else:
        d_z = np.zeros_like(state.zs[0])
        for k in range(model.n_experts):
            g_head, d_zk = stack_backward(
                model.heads[k], state.cache_heads[k], d_experts[k], f"head.{k}"
            )
            grads.update(g_head)
            d_z += d_zk
        g_fus, d_c = stack_backward(
            model.fusions[0], state.cache_fusions[0], d_z, "fusion.0"
        )
        grads.update(g_fus)

    d_e = d_c[:, : model.embed_dim].copy()
    d_epos = d_c[:, model.embed_dim :]
    g_enc, d_s = stack_backward(model.pos_encoder, state.cache_enc, d_epos, "pos_encoder")
    grads.update(g_enc)
    d_u = d_s * state.s * (1.0 - state.s)
    g_w, g_b, d_e_pos = dense_backward(model.pos_head, state.cache_pos, d_u)
    grads["pos.weight"], grads["pos.bias"] = g_w, g_b
    g_w, g_b, d_e_route = dense_backward(model.route, state.cache_route, d_logits)
    grads["route.weight"], grads["route.bias"] = g_w, g_b
    d_e += d_e_pos + d_e_route
    g_emb, d_x = stack_backward(model.embedder, state.cache_e, d_e, "embedder")
    grads.update(g_emb)
    return grads, d_x


# ---------------------------------------------------------------------------
# losses


def loss_pretrain(
    model: ForecasterModel, probe: Dense, windows: np.ndarray, targets: np.ndarray
) -> float:
    """Phase-1 objective: MSE of a linear probe on the embeddings."""
    x, _ = _as_batch(windows, model.lookback, "window")
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    e, _ = stack_forward(model.embedder, x)
    yp, _ = dense_forward(probe, e)
    return float(np.mean((yp - t) ** 2))


def _pretrain_step(model, probe, x, t):
    e, cache_e = stack_forward(model.embedder, x)
    yp, cache_p = dense_forward(probe, e)
    diff = yp - t
    loss = float(np.mean(diff**2))
    d_yp = 2.0 * diff / diff.size
    g_w, g_b, d_e = dense_backward(probe, cache_p, d_yp)
    grads = {"probe.weight": g_w, "probe.bias": g_b}
    g_emb, _ = stack_backward(model.embedder, cache_e, d_e, "embedder")
    grads.update(g_emb)
    return loss, grads


def loss_gate(
    gate_output: GateOutput,
    y_class: np.ndarray,
    y_pos: np.ndarray,
    position_weight: float = 1.0,
) -> float:
    """Cross-entropy on the routing simplex plus weighted squared positional
    error; probabilities are clamped at 1e-12 before the log."""
    p = np.atleast_2d(gate_output.probabilities)
    s = np.atleast_1d(gate_output.position)
    yc = np.atleast_1d(np.asarray(y_class, dtype=np.int64))
    yp = np.atleast_1d(np.asarray(y_pos, dtype=np.float64))
    picked = np.clip(p[np.arange(p.shape[0]), yc], PROB_FLOOR, None)
    ce = float(np.mean(-np.log(picked)))
    pos = float(np.mean((s - yp) ** 2))
    return ce + position_weight * pos


def _gate_step(model, e, y_class, y_pos, position_weight):
    logits, cache_route = dense_forward(model.route, e)
    p = softmax(logits)
    u, cache_pos = dense_forward(model.pos_head, e)
    s = sigmoid(u[:, 0])
    batch = e.shape[0]
    picked = np.clip(p[np.arange(batch), y_class], PROB_FLOOR, None)
    ce = float(np.mean(-np.log(picked)))
    pos_err = s - y_pos
    loss = ce + position_weight * float(np.mean(pos_err**2))

    d_logits = p.copy()
    d_logits[np.arange(batch), y_class] -= 1.0
    d_logits /= batch
    g_rw, g_rb, _ = dense_backward(model.route, cache_route, d_logits)
    d_u = (position_weight * 2.0 * pos_err * s * (1.0 - s) / batch)[:, None]
    g_pw, g_pb, _ = dense_backward(model.pos_head, cache_pos, d_u)
    grads = {
        "route.weight": g_rw,
        "route.bias": g_rb,
        "pos.weight": g_pw,
        "pos.bias": g_pb,
    }
    acc = float(np.mean(np.argmax(p, axis=1) == y_class))
    return loss, grads, acc


def load_balance_term(probabilities: np.ndarray) -> float:
    """K * sum_k f_k * mean_k(p): f_k is the fraction of samples whose argmax
    expert is k. Equals 1 under perfectly uniform routing and K when all mass
    sits on one expert."""
    p = np.atleast_2d(probabilities)
    k = p.shape[1]
    counts = np.bincount(np.argmax(p, axis=1), minlength=k)
    f = counts / p.shape[0]
    return float(k * np.sum(f * p.mean(axis=0)))


def loss_final(
    prediction: np.ndarray,
    target: np.ndarray,
    gate_probabilities: np.ndarray,
    balance_weight: float = 0.1,
) -> float:
    """Phase-3 objective: forecast MSE plus the weighted load-balance term."""
    pred = np.atleast_2d(np.asarray(prediction, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != t.shape:
        raise DataError("prediction/target shape mismatch")
    mse_part = float(np.mean((pred - t) ** 2))
    return mse_part + balance_weight * load_balance_term(gate_probabilities)


def _final_step(model, x, t, balance_weight):
    state = _forward_full(model, x)
    batch, k = state.p.shape
    diff = state.yhat - t
    mse_part = float(np.mean(diff**2))
    counts = np.bincount(np.argmax(state.p, axis=1), minlength=k)
    f = counts / batch
    balance = float(k * np.sum(f * state.p.mean(axis=0)))
    loss = mse_part + balance_weight * balance

    d_yhat = 2.0 * diff / diff.size
    # balance gradient flows through the mean probabilities only; the argmax
    # fractions are treated as constants
    d_p_extra = np.tile(balance_weight * k * f / batch, (batch, 1))
    grads, _ = _backward_from_outputs(model, state, d_yhat, d_p_extra)
    return loss, mse_part, balance, grads, state


# ---------------------------------------------------------------------------
# annotation


def default_annotation_config(lookback: int) -> SimilarityConfig:
    return SimilarityConfig(sigma=max(1.0, lookback / 8.0), band_radius=None)


def _resampled_template(motif) -> np.ndarray:
    """Motif values stretched to full resolution (values may live at a
    coarser sampling when the scale was downsampled during discovery)."""
    values = motif.values
    if values.size == motif.scale:
        return values
    grid = np.linspace(0.0, values.size - 1.0, motif.scale)
    return np.interp(grid, np.arange(values.size), values)


def _znorm_rows(rows: np.ndarray) -> np.ndarray:
    std = rows.std(axis=1, keepdims=True)
    out = (rows - rows.mean(axis=1, keepdims=True)) / np.where(std > 0, std, 1.0)
    out[std[:, 0] <= 0] = 0.0
    return out


def _occurrence_score(
    window: np.ndarray,
    template: np.ndarray,
    elapsed: int,
    sim_config: SimilarityConfig,
) -> float:
    """Overlap-weighted shape agreement for an occurrence whose first
    `elapsed` steps have passed at the window's end: the window's tail is
    compared against the motif's canonical values over the overlapped span,
    weighted by the overlap fraction."""
    lookback = window.size
    scale = template.size
    m = min(elapsed, lookback)
    win_seg = window[lookback - m :]
    tpl_seg = template[elapsed - m : elapsed]
    frac = m / min(lookback, scale)
    return frac * dtw_similarity(win_seg, tpl_seg, sim_config)


WEAK_MATCH_FLOOR = 0.5


def _resolve_near_ties(
    scored: list[tuple[float, int, int, float]], tie_tolerance: float
) -> tuple[float, int, float]:
    """Pick among candidates whose score is within the relative tolerance of
    the maximum: the lowest motif index, then the earliest occurrence. Near
    ties between equivalent motifs would otherwise be decided by noise-level
    score differences no gate could learn to reproduce. A window with no
    decisive match anywhere (best score under the weak floor) collapses to
    the lowest candidate outright for the same reason."""
    best_score = max(s for s, _, _, _ in scored)
    if best_score < WEAK_MATCH_FLOOR:
        eligible = list(scored)
    else:
        floor = best_score * (1.0 - tie_tolerance)
        eligible = [c for c in scored if c[0] >= floor]
    eligible.sort(key=lambda c: (c[1], c[2]))
    chosen = eligible[0]
    return chosen[0], chosen[1], chosen[3]


def _fallback_annotation(
    window: np.ndarray,
    templates: list[np.ndarray],
    sim_config: SimilarityConfig,
    tie_tolerance: float,
) -> Annotation:
    """Best virtual-occurrence placement when no real occurrence overlaps the
    window: a correlation sweep proposes the elapsed offset per motif and the
    shared occurrence score rates it."""
    lookback = window.size
    scored = []
    for idx, template in enumerate(templates):
        scale = template.size
        m = min(scale, lookback)
        tail = window[lookback - m :]
        # candidate elapsed offsets: tail aligned against every template
        # span of length m (elapsed = j + m)
        spans = np.stack([template[j : j + m] for j in range(scale - m + 1)])
        corr = (_znorm_rows(spans) * _znorm_rows(tail[None, :])).sum(axis=1) / m
        j = int(np.argmax(corr))
        elapsed = j + m
        score = _occurrence_score(window, template, elapsed, sim_config)
        scored.append((score, idx, 0, min(1.0, max(0.0, elapsed / scale))))
    score, idx, y_pos = _resolve_near_ties(scored, tie_tolerance)
    return Annotation(
        motif_index=idx,
        position=y_pos,
        match_similarity=float(score),
        fallback=True,
    )


def annotate_matrix(
    windows: np.ndarray,
    t_ends: np.ndarray,
    library: MotifLibrary,
    source_values: np.ndarray | None,
    sim_config: SimilarityConfig | None = None,
    tie_tolerance: float = 0.05,
) -> list[Annotation]:
    """Assign each window the motif occurrence that overlaps its end index
    with the highest overlap-weighted shape agreement between the window's
    tail and the motif's canonical values; windows overlapping no occurrence
    fall back to the best virtual placement of a template. Scores within the
    relative tie tolerance of the maximum resolve to the lower motif index,
    then the earlier occurrence."""
    if library.size < 1:
        raise DataError("annotation needs a non-empty library")
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    lookback = windows.shape[1]
    if sim_config is None:
        sim_config = default_annotation_config(lookback)
    templates = [_resampled_template(m) for m in library.motifs]

    occ = []
    if source_values is not None:
        for idx, motif in enumerate(library.motifs):
            for start, length in motif.occurrences:
                if start + length <= source_values.shape[0]:
                    occ.append((idx, start, length))
        occ.sort(key=lambda o: (o[0], o[1]))
    occ_motif = np.array([o[0] for o in occ], dtype=np.int64)
    occ_start = np.array([o[1] for o in occ], dtype=np.int64)
    occ_len = np.array([o[2] for o in occ], dtype=np.int64)

    out: list[Annotation] = []
    for row, t_end in zip(windows, np.atleast_1d(t_ends)):
        hit = np.nonzero((occ_start <= t_end) & (t_end < occ_start + occ_len))[0]
        if hit.size == 0:
            out.append(
                _fallback_annotation(row, templates, sim_config, tie_tolerance)
            )
            continue
        scored = []
        for h in hit:
            o, length = int(occ_start[h]), int(occ_len[h])
            elapsed = int(t_end) - o + 1
            template = templates[int(occ_motif[h])]
            score = _occurrence_score(row, template, elapsed, sim_config)
            y_pos = min(1.0, max(0.0, elapsed / length))
            scored.append((score, int(occ_motif[h]), o, y_pos))
        score, idx, y_pos = _resolve_near_ties(scored, tie_tolerance)
        out.append(
            Annotation(
                motif_index=idx,
                position=y_pos,
                match_similarity=float(score),
                fallback=False,
            )
        )
    return out


def annotate_windows(
    samples: list[WindowSample],
    library: MotifLibrary,
    source_values: np.ndarray | None = None,
    sim_config: SimilarityConfig | None = None,
    tie_tolerance: float = 0.05,
) -> list[Annotation]:
    """Annotate WindowSamples in place (fills sample.annotation) and return
    the annotations. Pass source_values when the samples were cut from the
    series the library occurrences index into; otherwise every window uses
    the template fallback."""
    if not samples:
        return []
    windows = np.stack([s.window for s in samples])
    t_ends = np.array([s.t_end for s in samples], dtype=np.int64)
    annotations = annotate_matrix(
        windows, t_ends, library, source_values, sim_config, tie_tolerance
    )
    for sample, ann in zip(samples, annotations):
        sample.annotation = (
            ann.motif_index,
            ann.position,
            ann.match_similarity,
            ann.fallback,
        )
    return annotations


# ---------------------------------------------------------------------------
# training


@dataclass
class ChannelData:
    """Matrices for one channel (or channel group): train and validation
    windows plus the raw train channel for occurrence-based annotation."""

    x_train: np.ndarray
    y_train: np.ndarray
    t_end_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    train_values: np.ndarray


def _phase_rng(seed: int, phase: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, phase))))


def _snapshot(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def _restore(params: dict[str, np.ndarray], snap: dict[str, np.ndarray]) -> None:
    for k in params:
        np.copyto(params[k], snap[k])


def _fit_phase(
    phase_name: str,
    params: dict[str, np.ndarray],
    step_fn,
    val_fn,
    n_samples: int,
    config: TrainConfig,
    rng: np.random.Generator,
):
    """Generic epoch loop: cosine-scheduled AdamW with gradient clipping and
    early stopping on the validation metric (best parameters restored)."""
    opt = AdamW(lr=config.learning_rate, weight_decay=config.weight_decay)
    batches = max(1, math.ceil(n_samples / config.batch_size))
    total_steps = max(1, config.max_epochs * batches)
    history = []
    best_val = math.inf
    best_snap = _snapshot(params)
    bad_epochs = 0
    step = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_samples)
        losses = []
        for b in range(batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            if idx.size == 0:
                continue
            lr = cosine_lr(step, total_steps, config.learning_rate)
            loss, grads = step_fn(idx)
            if not math.isfinite(loss):
                raise NumericError(
                    f"{phase_name}: non-finite loss at epoch {epoch}, step {step}"
                )
            clip_global_norm(grads, config.clip_norm)
            opt.step(params, grads, lr)
            step += 1
            losses.append(loss)
        val = val_fn()
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else math.nan,
                "val_loss": float(val),
            }
        )
        if val < best_val:
            best_val = val
            best_snap = _snapshot(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    _restore(params, best_snap)
    return {"epochs": len(history), "curve": history, "best_val": best_val}


def _chunked_embed(model: ForecasterModel, x: np.ndarray, chunk: int = 2048):
    outs = []
    for i in range(0, x.shape[0], chunk):
        e, _ = stack_forward(model.embedder, x[i : i + chunk])
        outs.append(e)
    return np.vstack(outs)


def predict_batch(model: ForecasterModel, windows: np.ndarray, chunk: int = 1024):
    """Forecasts for a batch of windows on a frozen model, (B, H)."""
    x, single = _as_batch(windows, model.lookback, "window")
    outs = []
    for i in range(0, x.shape[0], chunk):
        state = _forward_full(model, x[i : i + chunk])
        outs.append(state.yhat)
    result = np.vstack(outs)
    return result[0] if single else result


def predict(model: ForecasterModel, window: np.ndarray) -> np.ndarray:
    """Embed -> gate -> experts -> combine for one look-back window."""
    if not model.trained:
        raise ConfigError("model has not been trained")
    return predict_batch(model, window)


def _utilization(model: ForecasterModel, x: np.ndarray) -> dict:
    state = _forward_full(model, x)
    k = model.n_experts
    counts = np.bincount(np.argmax(state.p, axis=1), minlength=k)
    return {
        "mean_probability": state.p.mean(axis=0).tolist(),
        "argmax_fraction": (counts / max(1, x.shape[0])).tolist(),
    }


def train_three_phase(
    data: ChannelData, library: MotifLibrary, config: TrainConfig
) -> tuple[ForecasterModel, dict]:
    """Run the full protocol and return the trained model plus a report with
    per-phase curves, gating accuracy, and expert utilization.

    Phase 1 trains the embedder through a disposable linear probe on the
    forecasting objective. Phase 2 freezes the embedder, annotates the
    training windows against the library, and trains the two gate heads.
    Phase 3 unfreezes everything and fine-tunes on forecast MSE plus the
    load-balancing penalty.
    """
    n_experts = library.size
    init_rng = _phase_rng(config.seed, 0)
    model = init_forecaster(
        init_rng,
        config.lookback,
        config.horizon,
        n_experts,
        embed_dim=config.embed_dim,
        separate_experts=config.separate_experts,
    )
    report: dict = {"n_experts": n_experts, "config": config.__dict__.copy()}

    # Phase 1: embedder pre-training through a linear probe
    probe = init_dense(init_rng, config.embed_dim, config.horizon, "identity")
    phase1_params = dict(model.embedder.param_items("embedder"))
    phase1_params["probe.weight"] = probe.weight
    phase1_params["probe.bias"] = probe.bias
    rng1 = _phase_rng(config.seed, 1)

    def step1(idx):
        loss, grads = _pretrain_step(
            model, probe, data.x_train[idx], data.y_train[idx]
        )
        return loss, grads

    def val1():
        return loss_pretrain(model, probe, data.x_val, data.y_val)

    report["phase1"] = _fit_phase(
        "phase1", phase1_params, step1, val1, data.x_train.shape[0], config, rng1
    )

    # Phase 2: gate specialization against motif annotations, embedder frozen
    ann_train = annotate_matrix(
        data.x_train, data.t_end_train, library, data.train_values
    )
    ann_val = annotate_matrix(
        data.x_val,
        np.arange(data.x_val.shape[0]),
        library,
        None,
    )
    y_class_tr = np.array([a.motif_index for a in ann_train], dtype=np.int64)
    y_pos_tr = np.array([a.position for a in ann_train])
    y_class_va = np.array([a.motif_index for a in ann_val], dtype=np.int64)
    y_pos_va = np.array([a.position for a in ann_val])
    report["annotation"] = {
        "train_fallback_fraction": float(np.mean([a.fallback for a in ann_train])),
        "train_class_histogram": np.bincount(
            y_class_tr, minlength=n_experts
        ).tolist(),
        "mean_match_similarity": float(
            np.mean([a.match_similarity for a in ann_train])
        ),
    }

    e_train = _chunked_embed(model, data.x_train)
    e_val = _chunked_embed(model, data.x_val)
    embedder_before = {
        k: v.copy() for k, v in model.embedder.param_items("embedder")
    }
    phase2_params = {
        "route.weight": model.route.weight,
        "route.bias": model.route.bias,
        "pos.weight": model.pos_head.weight,
        "pos.bias": model.pos_head.bias,
    }
    rng2 = _phase_rng(config.seed, 2)

    def step2(idx):
        loss, grads, _ = _gate_step(
            model, e_train[idx], y_class_tr[idx], y_pos_tr[idx],
            config.position_weight,
        )
        return loss, grads

    def val2():
        logits, _ = dense_forward(model.route, e_val)
        u, _ = dense_forward(model.pos_head, e_val)
        out = GateOutput(probabilities=softmax(logits), position=sigmoid(u[:, 0]))
        return loss_gate(out, y_class_va, y_pos_va, config.position_weight)

    report["phase2"] = _fit_phase(
        "phase2", phase2_params, step2, val2, e_train.shape[0], config, rng2
    )

    for key, before in embedder_before.items():
        after = dict(model.embedder.param_items("embedder"))[key]
        if not np.array_equal(before, after):
            raise NumericError("embedder changed during phase 2")

    def gating_accuracy(e, y_class):
        logits, _ = dense_forward(model.route, e)
        return float(np.mean(np.argmax(logits, axis=1) == y_class))

    report["phase2"]["gating_accuracy_train"] = gating_accuracy(e_train, y_class_tr)
    report["phase2"]["gating_accuracy_val"] = gating_accuracy(e_val, y_class_va)

    # Phase 3: end-to-end fine-tuning with load balancing
    phase3_params = model.named_parameters()
    rng3 = _phase_rng(config.seed, 3)

    def step3(idx):
        loss, _, _, grads, _ = _final_step(
            model, data.x_train[idx], data.y_train[idx], config.balance_weight
        )
        return loss, grads

    def val3():
        pred = predict_batch(model, data.x_val)
        return float(np.mean((pred - data.y_val) ** 2))

    report["phase3"] = _fit_phase(
        "phase3", phase3_params, step3, val3, data.x_train.shape[0], config, rng3
    )
    report["phase3"]["expert_utilization_val"] = _utilization(model, data.x_val)

    model.trained = True
    return model, report
