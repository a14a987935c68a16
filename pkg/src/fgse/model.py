"""Factorized graph-sequence encoder.

Each frame's scene graph is encoded independently (attention message passing
with edge features, SELU, LayerNorm, repeated ``n_graph_layers`` times), the
hand nodes are pooled into one token per frame, and a transformer encoder
attends over the window of tokens before per-hand linear heads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .numcore import Tensor, load_checkpoint, ops, save_checkpoint
from .numcore.ops import Segments
from .scenegraph.types import N_RELATIONS, SceneGraph, Vocabulary

POOLING_MODES = ("hand", "global_mean")
OUTPUT_MODES = ("per_frame", "single", "center")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FgseConfig:
    n_categories: int
    n_classes: int
    n_heads_out: int = 2
    d_model: int = 64
    n_heads: int = 4
    n_graph_layers: int = 2
    n_seq_layers: int = 2
    window: int = 30
    ff_mult: int = 4
    pooling: str = "hand"
    output_mode: str = "per_frame"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.n_graph_layers < 1:
            raise ConfigError("n_graph_layers must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_heads_out not in (1, 2):
            raise ConfigError("n_heads_out must be 1 or 2")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigError(f"output_mode must be one of {OUTPUT_MODES}")
        if self.n_categories < 1 or self.n_classes < 1 or self.n_seq_layers < 0:
            raise ConfigError("n_categories, n_classes must be >= 1 and n_seq_layers >= 0")

    @property
    def token_width(self) -> int:
        """Width of the per-frame token fed to the sequence encoder."""
        return self.d_model * self.n_heads_out if self.pooling == "hand" else self.d_model

    def replace(self, **changes) -> "FgseConfig":
        return FgseConfig(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "FgseConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def count_params(cfg: FgseConfig) -> int:
    """Number of learned scalars, in closed form.

    graph encoder: input projection ``c*d + d``; per layer four biased d×d
    maps (query, key, value, skip), an unbiased 14×d edge map, LayerNorm 2d.
    sequence encoder (width p): positions ``W*p``; per layer four biased p×p
    attention maps, two LayerNorms, feed-forward ``p*f + f + f*p + p`` with
    f = ff_mult*p; a final LayerNorm 2p. heads: ``H * (p*C + C)``.
    """
    d, c, p = cfg.d_model, cfg.n_categories, cfg.token_width
    f = cfg.ff_mult * p
    graph = c * d + d + cfg.n_graph_layers * (4 * (d * d + d) + N_RELATIONS * d + 2 * d)
    seq = cfg.window * p + cfg.n_seq_layers * (4 * (p * p + p) + 4 * p + (p * f + f) + (f * p + p)) + 2 * p
    heads = cfg.n_heads_out * (p * cfg.n_classes + cfg.n_classes)
    return graph + seq + heads


def init_params(cfg: FgseConfig, seed: int = 0) -> dict[str, Tensor]:
    """Linear maps ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); norms at identity."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def linear(name, fan_in, fan_out, bias=True):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)))
        if bias:
            params[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, (fan_out,)))

    def norm(name, width):
        params[f"{name}.g"] = Tensor(np.ones(width))
        params[f"{name}.b"] = Tensor(np.zeros(width))

    d, p = cfg.d_model, cfg.token_width
    linear("ge.in", cfg.n_categories, d)
    for l in range(cfg.n_graph_layers):
        for part in ("q", "k", "v", "skip"):
            linear(f"ge.{l}.{part}", d, d)
        linear(f"ge.{l}.edge", N_RELATIONS, d, bias=False)
        norm(f"ge.{l}.ln", d)
    bound = 1.0 / math.sqrt(p)
    params["se.pos"] = Tensor(rng.uniform(-bound, bound, (cfg.window, p)))
    for l in range(cfg.n_seq_layers):
        norm(f"se.{l}.ln1", p)
        for part in ("q", "k", "v", "o"):
            linear(f"se.{l}.attn.{part}", p, p)
        norm(f"se.{l}.ln2", p)
        linear(f"se.{l}.ff1", p, cfg.ff_mult * p)
        linear(f"se.{l}.ff2", cfg.ff_mult * p, p)
    norm("se.ln_f", p)
    for h in range(cfg.n_heads_out):
        linear(f"head.{h}", p, cfg.n_classes)
    for name, t in params.items():
        t.name = name
        t.requires_grad = True
    return params


# ------------------------------------------------------------- graph encoder

class GraphBatch:
    """Several scene graphs packed into one disjoint graph."""

    def __init__(self, graphs: Sequence[SceneGraph]):
        arrays = [g.arrays for g in graphs]
        sizes = np.array([len(a.categories) for a in arrays], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.n_graphs = len(graphs)
        self.n_nodes = int(sizes.sum())
        self.sizes = sizes
        self.categories = np.concatenate([a.categories for a in arrays]) if arrays else np.zeros(0, np.int64)
        self.src = np.concatenate([a.src + o for a, o in zip(arrays, offsets)]) if arrays else np.zeros(0, np.int64)
        self.dst = np.concatenate([a.dst + o for a, o in zip(arrays, offsets)]) if arrays else np.zeros(0, np.int64)
        self.rel = np.concatenate([a.rel for a in arrays]) if arrays else np.zeros((0, N_RELATIONS), np.float32)
        self.graph_of_node = np.repeat(np.arange(self.n_graphs), sizes)
        self.left = np.array([a.left_row + o if a.left_row >= 0 else -1 for a, o in zip(arrays, offsets)], dtype=np.int64)
        self.right = np.array([a.right_row + o if a.right_row >= 0 else -1 for a, o in zip(arrays, offsets)], dtype=np.int64)
        self.src_segments = Segments(self.src, self.n_nodes)
        self.dst_segments = Segments(self.dst, self.n_nodes)
        self.node_segments = Segments(self.graph_of_node, self.n_graphs)


def graph_conv_layer(x: Tensor, src, dst, edge_feats: Tensor, params: dict[str, Tensor], prefix: str,
                     n_heads: int, src_segments: Segments | None = None,
                     dst_segments: Segments | None = None, out_rows=None) -> Tensor:
    """Attention message passing with edge features.

    For node i with in-edges j -> i::

        out_i = W_skip x_i + sum_j a_ij (W_v x_j + W_e e_ji)
        a_ij  = softmax_j( (W_q x_i) . (W_k x_j + W_e e_ji) / sqrt(d / heads) )

    computed per head on d/heads-wide slices and concatenated. With
    ``out_rows`` only those nodes are updated (in that order); the rest of the
    graph still sends messages.
    """
    n, d = x.shape
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.size and (max(src.max(), dst.max()) >= n or min(src.min(), dst.min()) < 0):
        raise IndexError(f"edge endpoint outside [0, {n})")
    x_out = x
    if out_rows is not None:
        out_rows = np.asarray(out_rows, dtype=np.int64)
        pos = np.full(n, -1, dtype=np.int64)
        pos[out_rows] = np.arange(out_rows.size)
        keep = pos[dst] >= 0
        src, dst = src[keep], pos[dst[keep]]
        edge_feats = Tensor(edge_feats.data[keep])
        x_out = ops.index_select(x, out_rows)
        src_segments = None
        dst_segments = Segments(dst, out_rows.size)
    elif dst_segments is None:
        dst_segments = Segments(dst, n)
    dh = d // n_heads
    m = len(src)

    q = ops.linear(x_out, params[f"{prefix}.q.w"], params[f"{prefix}.q.b"])
    k = ops.linear(x, params[f"{prefix}.k.w"], params[f"{prefix}.k.b"])
    v = ops.linear(x, params[f"{prefix}.v.w"], params[f"{prefix}.v.b"])
    e = ops.matmul(edge_feats, params[f"{prefix}.edge.w"])
    k_j = ops.add(ops.index_select(k, src, src_segments), e)
    v_j = ops.add(ops.index_select(v, src, src_segments), e)
    q_i = ops.index_select(q, dst, dst_segments)

    scores = ops.sum(ops.reshape(ops.mul(q_i, k_j), (m, n_heads, dh)), axis=-1)
    alpha = ops.segment_softmax(ops.mul(scores, 1.0 / math.sqrt(dh)), dst_segments)
    msg = ops.reshape(ops.mul(ops.reshape(v_j, (m, n_heads, dh)), ops.reshape(alpha, (m, n_heads, 1))), (m, d))
    agg = ops.segment_sum(msg, dst_segments)
    skip = ops.linear(x_out, params[f"{prefix}.skip.w"], params[f"{prefix}.skip.b"])
    return ops.add(agg, skip)


def hand_pool(node_embeds: Tensor, g: SceneGraph, n_hands: int = 2) -> Tensor:
    """Left-then-right hand rows concatenated (right hand only when ``n_hands == 1``).

    A missing hand contributes zeros.
    """
    arr = g.arrays
    rows = [arr.left_row, arr.right_row] if n_hands == 2 else [arr.right_row if arr.right_row >= 0 else arr.left_row]
    n, d = node_embeds.shape
    padded = ops.concat([node_embeds, Tensor(np.zeros((1, d)))], axis=0)
    picked = ops.index_select(padded, [r if r >= 0 else n for r in rows])
    return ops.reshape(picked, (len(rows) * d,))


def global_mean_pool(node_embeds: Tensor) -> Tensor:
    if node_embeds.shape[0] == 0:
        raise ValueError("global mean pooling of an empty graph")
    return ops.mean(node_embeds, axis=0)


# ------------------------------------------------------------------- model

class FgseModel:
    def __init__(self, config: FgseConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        expected = init_params(config, 0).keys() if params is not None else None
        if expected is not None and set(expected) != set(self.params):
            raise ConfigError("parameter names do not match the configuration")

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def output_mode(self) -> str:
        return self.config.output_mode

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def with_output_mode(self, mode: str) -> "FgseModel":
        """Same parameters read out differently (e.g. center of window)."""
        if (mode == "single") != (self.config.output_mode == "single"):
            raise ConfigError("single-prediction models are trained differently; switch between per_frame and center only")
        return FgseModel(self.config.replace(output_mode=mode), self.params)

    def n_params(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- graph side

    def encode_nodes(self, batch: GraphBatch, out_rows=None) -> Tensor:
        """Node embeddings after the graph layers.

        ``out_rows`` restricts the last layer's output to those node rows,
        which is all that hand pooling reads.
        """
        cfg, P = self.config, self.params
        if batch.categories.size and batch.categories.max() >= cfg.n_categories:
            raise IndexError(f"category index {batch.categories.max()} outside vocabulary of {cfg.n_categories}")
        # one-hot @ W_in is a row lookup
        x = ops.add(ops.index_select(P["ge.in.w"], batch.categories), P["ge.in.b"])
        rel = Tensor(batch.rel)
        for l in range(cfg.n_graph_layers):
            last = l == cfg.n_graph_layers - 1
            x = graph_conv_layer(x, batch.src, batch.dst, rel, P, f"ge.{l}", cfg.n_heads,
                                 batch.src_segments, batch.dst_segments, out_rows if last else None)
            x = ops.selu(x)
            x = ops.layer_norm(x, P[f"ge.{l}.ln.g"], P[f"ge.{l}.ln.b"], cfg.ln_eps)
        return x

    def pool(self, nodes: Tensor, batch: GraphBatch, rows_in=None) -> Tensor:
        """One token per graph: hand rows (left, right) or the node mean.

        ``rows_in`` names the batch rows of ``nodes`` when only some nodes
        were encoded.
        """
        cfg = self.config
        if cfg.pooling == "global_mean":
            if np.any(batch.sizes == 0):
                raise ValueError("global mean pooling of an empty graph")
            sums = ops.segment_sum(nodes, batch.node_segments)
            return ops.mul(sums, Tensor((1.0 / batch.sizes)[:, None]))
        padded = ops.concat([nodes, Tensor(np.zeros((1, cfg.d_model)))], axis=0)
        rows = self.hand_rows(batch)
        zero_row = nodes.shape[0]
        if rows_in is not None:
            rows = np.where(rows >= 0, np.searchsorted(rows_in, rows), -1)
        rows = np.where(rows >= 0, rows, zero_row)
        picked = ops.index_select(padded, rows.reshape(-1))
        return ops.reshape(picked, (batch.n_graphs, cfg.token_width))

    def hand_rows(self, batch: GraphBatch) -> np.ndarray:
        """(graphs, hands) batch rows read by hand pooling, -1 for a missing hand."""
        if self.config.n_heads_out == 2:
            return np.stack([batch.left, batch.right], axis=1)
        return np.where(batch.right >= 0, batch.right, batch.left)[:, None]

    def graph_encode(self, g: SceneGraph) -> Tensor:
        """Node embeddings (n, d) of one graph."""
        return self.encode_nodes(GraphBatch([g]))

    def embed_graphs(self, graphs: Sequence[SceneGraph], prune: bool = True) -> Tensor:
        batch = GraphBatch(graphs)
        if prune and self.config.pooling == "hand" and self.config.n_graph_layers > 0:
            rows = np.unique(self.hand_rows(batch))
            rows = rows[rows >= 0]
            return self.pool(self.encode_nodes(batch, rows), batch, rows)
        return self.pool(self.encode_nodes(batch), batch)

    def embed_frame(self, g: SceneGraph) -> np.ndarray:
        """Token of a single frame, computed on its own (inference path)."""
        return self.embed_graphs([g]).data[0]

    # -- sequence side

    def sequence_encode(self, z: Tensor) -> Tensor:
        """Pre-norm transformer over (batch, W, p) tokens with learned positions."""
        cfg, P = self.config, self.params
        squeeze = z.ndim == 2
        if squeeze:
            z = ops.reshape(z, (1,) + z.shape)
        b, w, p = z.shape
        if w != cfg.window:
            raise ValueError(f"sequence encoder expects {cfg.window} rows, got {w}")
        nh = cfg.n_heads
        dh = p // nh
        h = ops.add(z, P["se.pos"])
        for l in range(cfg.n_seq_layers):
            pre = f"se.{l}"
            a = ops.layer_norm(h, P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"], cfg.ln_eps)

            def heads(t):
                return ops.transpose(ops.reshape(t, (b, w, nh, dh)), (0, 2, 1, 3))

            q = heads(ops.linear(a, P[f"{pre}.attn.q.w"], P[f"{pre}.attn.q.b"]))
            k = heads(ops.linear(a, P[f"{pre}.attn.k.w"], P[f"{pre}.attn.k.b"]))
            v = heads(ops.linear(a, P[f"{pre}.attn.v.w"], P[f"{pre}.attn.v.b"]))
            att = ops.softmax(ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)))
            ctx = ops.reshape(ops.transpose(ops.matmul(att, v), (0, 2, 1, 3)), (b, w, p))
            h = ops.add(h, ops.linear(ctx, P[f"{pre}.attn.o.w"], P[f"{pre}.attn.o.b"]))
            f = ops.layer_norm(h, P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"], cfg.ln_eps)
            f = ops.selu(ops.linear(f, P[f"{pre}.ff1.w"], P[f"{pre}.ff1.b"]))
            h = ops.add(h, ops.linear(f, P[f"{pre}.ff2.w"], P[f"{pre}.ff2.b"]))
        h = ops.layer_norm(h, P["se.ln_f.g"], P["se.ln_f.b"], cfg.ln_eps)
        if squeeze:
            h = ops.reshape(h, (w, p))
        return h

    def head_logits(self, tokens: Tensor) -> Tensor:
        """(B, W, p) encoded tokens -> (B, R, H, C) logits, R = 1 for single mode."""
        cfg, P = self.config, self.params
        if cfg.output_mode == "single":
            tokens = ops.mean(tokens, axis=1, keepdims=True)
        outs = [ops.linear(tokens, P[f"head.{h}.w"], P[f"head.{h}.b"]) for h in range(cfg.n_heads_out)]
        return ops.stack(outs, axis=2)

    def window_logits(self, tokens: Tensor) -> Tensor:
        """Raw (B, W, p) frame tokens -> logits; training path, all rows kept."""
        return self.head_logits(self.sequence_encode(tokens))

    def batch_logits(self, graphs: Sequence[SceneGraph], windows: np.ndarray) -> Tensor:
        """Logits for windows given as (B, W) indices into ``graphs``.

        Every distinct graph is encoded once even when windows overlap.
        """
        emb = self.embed_graphs(graphs)
        b, w = windows.shape
        tokens = ops.reshape(ops.index_select(emb, windows.reshape(-1)), (b, w, self.config.token_width))
        return self.window_logits(tokens)

    def predict_tokens(self, tokens: np.ndarray) -> np.ndarray:
        """Softmax rows for one window of precomputed tokens (W, p).

        Returns (W, H, C) in per-frame mode, (1, H, C) in single and center
        modes (center keeps row W // 2).
        """
        logits = self.window_logits(Tensor(tokens[None]))
        probs = ops.softmax(logits).data[0]
        if self.config.output_mode == "center":
            c = self.config.window // 2
            probs = probs[c:c + 1]
        return probs

    def forward(self, window: Sequence[SceneGraph]) -> Tensor:
        """Softmax predictions for a window of exactly W graphs."""
        if len(window) != self.config.window:
            raise ValueError(f"window has {len(window)} graphs, model expects {self.config.window}")
        tokens = np.stack([self.embed_frame(g) for g in window])
        return Tensor(self.predict_tokens(tokens))

    # -- persistence

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def save(self, path, vocab: Vocabulary | None = None, extra: dict | None = None) -> None:
        hyper = {"config": asdict(self.config)}
        if vocab is not None:
            hyper["vocab"] = vocab.to_json()
        if extra:
            hyper.update(extra)
        save_checkpoint(path, self.state_dict(), hyper)

    @classmethod
    def load(cls, path) -> tuple["FgseModel", Vocabulary | None, dict]:
        arrays, hyper = load_checkpoint(path)
        cfg = FgseConfig.from_dict(hyper["config"])
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        for name, ref in init_params(cfg, 0).items():
            if name not in params or params[name].shape != ref.shape:
                raise ConfigError(f"checkpoint parameter {name} missing or mis-shaped")
        vocab = Vocabulary.from_json(hyper["vocab"]) if "vocab" in hyper else None
        return cls(cfg, params), vocab, hyper
