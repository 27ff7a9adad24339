"""Tiny image-conditioned autoregressive policies.

Two interchangeable architectures share an embedding/output layout: a
1-layer causal self-attention decoder and a gated recurrent cell.  The
image enters as k_img learned linear projections of the flattened pixel
grid, prepended to the token embeddings.

Every forward exists twice: a plain-numpy path used for sampling and
old-policy scoring (no gradients involved), and a tape-recorded path used
by the update step.  The test suite pins the two paths against each other
and the recorded sample log-probs against teacher-forced re-evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .rng import RngStream

ARCHITECTURES = ("causal-attention-1-layer", "recurrent-gate")


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int
    embed_dim: int = 32
    n_heads: int = 2
    context_len: int = 32
    image_hw: int = 15
    image_channels: int = 3
    k_img: int = 4
    mlp_hidden: int = 64
    architecture: str = "causal-attention-1-layer"
    prob_floor: float = 1e-8
    init_scale: float = 0.02
    temperature: float = 1.0

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ContractError(f"unknown architecture {self.architecture!r}, expected one of {ARCHITECTURES}")
        if self.vocab_size < 2:
            raise ContractError("vocab_size must be at least 2")
        if not (self.temperature > 0.0):
            raise ContractError("temperature must be positive")
        if self.embed_dim % self.n_heads != 0:
            raise ContractError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.k_img < 1 or self.context_len <= self.k_img:
            raise ContractError("context_len must exceed k_img >= 1")
        if not (0.0 < self.prob_floor < 1e-3):
            raise ContractError("prob_floor must be a small positive probability")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def image_dim(self) -> int:
        return self.image_hw * self.image_hw * self.image_channels


@dataclass
class TokenDist:
    """Floored next-token distribution; logps == log(probs) by construction."""

    probs: np.ndarray
    logps: np.ndarray


@dataclass
class Response:
    """One sampled continuation with its frozen sampling-time statistics."""

    tokens: list[int]
    logps: np.ndarray
    entropies: np.ndarray
    reward: object | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)


def floor_probs(p: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Clamp-then-renormalize so every prob is at least ~eps, then take logs."""
    q = np.maximum(p, eps)
    q = q / q.sum(axis=-1, keepdims=True)
    return q, np.log(q)


def token_entropy(dist: TokenDist) -> float:
    return float(-(dist.probs * dist.logps).sum())


# ------------------------------------------------------------------ params


def init_policy(cfg: PolicyConfig, stream: RngStream, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameters: zero-init output head (uniform initial policy),
    everything else scaled normal with std init_scale/sqrt(d)."""
    cfg.validate()
    d, k = cfg.embed_dim, cfg.k_img
    std = cfg.init_scale / math.sqrt(d)

    def w(shape):
        return ad.param((stream.normal(size=shape) * std).astype(dtype))

    def zeros(shape):
        return ad.param(np.zeros(shape, dtype=dtype))

    p: dict[str, Tensor] = {}
    p["img_w"] = w((cfg.image_dim, k * d))
    p["img_b"] = zeros((k * d,))
    p["tok_emb"] = w((cfg.vocab_size, d))
    if cfg.architecture == "causal-attention-1-layer":
        p["pos_emb"] = w((cfg.context_len, d))
        for h in range(cfg.n_heads):
            p[f"attn.q{h}"] = w((d, cfg.head_dim))
            p[f"attn.k{h}"] = w((d, cfg.head_dim))
            p[f"attn.v{h}"] = w((d, cfg.head_dim))
        p["attn.out"] = w((d, d))
        p["mlp.w1"] = w((d, cfg.mlp_hidden))
        p["mlp.b1"] = zeros((cfg.mlp_hidden,))
        p["mlp.w2"] = w((cfg.mlp_hidden, d))
        p["mlp.b2"] = zeros((d,))
    else:
        p["gate.wx"] = w((d, d))
        p["gate.wh"] = w((d, d))
        p["gate.b"] = zeros((d,))
        p["cand.wx"] = w((d, d))
        p["cand.wh"] = w((d, d))
        p["cand.b"] = zeros((d,))
    p["out_w"] = zeros((d, cfg.vocab_size))
    p["out_b"] = zeros((cfg.vocab_size,))
    return p


def param_count(params: dict[str, Tensor]) -> int:
    return sum(t.data.size for t in params.values())


def as_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Live views onto the parameter arrays (no copy)."""
    return {k: t.data for k, t in params.items()}


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Deep copy of the current weights, for old-policy anchoring."""
    return {k: t.data.copy() for k, t in params.items()}


def restore(snap: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: ad.param(a.copy()) for k, a in snap.items()}


# ------------------------------------------------------------ numpy path


def image_vector(cfg: PolicyConfig, image: np.ndarray, dtype) -> np.ndarray:
    img = np.asarray(image)
    want = (cfg.image_hw, cfg.image_hw, cfg.image_channels)
    if img.shape != want:
        raise ContractError(f"image shape {img.shape} does not match policy config {want}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ContractError("image values must lie in [0, 1]")
    return img.reshape(-1).astype(dtype)


def encode_image_np(arrs: dict[str, np.ndarray], cfg: PolicyConfig, image: np.ndarray) -> np.ndarray:
    """k_img prefix embeddings, shape (k_img, d)."""
    vec = image_vector(cfg, image, arrs["img_w"].dtype)
    return (vec @ arrs["img_w"] + arrs["img_b"]).reshape(cfg.k_img, cfg.embed_dim)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _causal_mask(n: int, dtype) -> np.ndarray:
    return np.triu(np.full((n, n), -1e9, dtype=dtype), k=1)


def _np_hidden(arrs: dict[str, np.ndarray], cfg: PolicyConfig, prefix: np.ndarray, tokens) -> np.ndarray:
    """Decoder states for [image prefix, tokens], shape (k_img+len(tokens), d)."""
    k, d = cfg.k_img, cfg.embed_dim
    n = k + len(tokens)
    if n > cfg.context_len:
        raise ContractError(f"sequence needs {n} positions, context_len is {cfg.context_len}")
    dtype = arrs["img_w"].dtype
    X = np.empty((n, d), dtype=dtype)
    X[:k] = prefix
    if tokens:
        X[k:] = arrs["tok_emb"][np.asarray(tokens)]
    if cfg.architecture == "causal-attention-1-layer":
        X = X + arrs["pos_emb"][:n]
        mask = _causal_mask(n, dtype)
        heads = []
        for h in range(cfg.n_heads):
            q = X @ arrs[f"attn.q{h}"]
            kk = X @ arrs[f"attn.k{h}"]
            v = X @ arrs[f"attn.v{h}"]
            s = (q @ kk.T) * np.asarray(1.0 / math.sqrt(cfg.head_dim), dtype=dtype) + mask
            heads.append(_softmax_rows(s) @ v)
        X = X + np.concatenate(heads, axis=-1) @ arrs["attn.out"]
        mid = np.maximum(X @ arrs["mlp.w1"] + arrs["mlp.b1"], 0.0)
        X = X + mid @ arrs["mlp.w2"] + arrs["mlp.b2"]
        return X
    # recurrent-gate: h_t = z*h_{t-1} + (1-z)*cand, gate and candidate both
    # see the current input and the carried state
    H = np.empty((n, d), dtype=dtype)
    h = np.zeros(d, dtype=dtype)
    for t in range(n):
        x = X[t]
        z = 1.0 / (1.0 + np.exp(-(x @ arrs["gate.wx"] + h @ arrs["gate.wh"] + arrs["gate.b"])))
        c = np.tanh(x @ arrs["cand.wx"] + h @ arrs["cand.wh"] + arrs["cand.b"])
        h = z * h + (1.0 - z) * c
        H[t] = h
    return H


def _np_next_logits(arrs, cfg, prefix, tokens) -> np.ndarray:
    """Rows j=0..len(tokens): logits for the token after tokens[:j].  Shape (len+1, V)."""
    H = _np_hidden(arrs, cfg, prefix, tokens)
    return H[cfg.k_img - 1 :] @ arrs["out_w"] + arrs["out_b"]


def next_token_dists(arrs: dict[str, np.ndarray], cfg: PolicyConfig, image: np.ndarray, tokens) -> list[TokenDist]:
    """Teacher-forced distributions: entry t conditions on image and tokens[:t]."""
    tokens = list(tokens)
    if not tokens:
        return []
    prefix = encode_image_np(arrs, cfg, image)
    rows = _np_next_logits(arrs, cfg, prefix, tokens[:-1])
    out = []
    for t in range(len(tokens)):
        probs, logps = floor_probs(_softmax_rows(rows[t]), cfg.prob_floor)
        out.append(TokenDist(probs, logps))
    return out


def response_dists_np(arrs, cfg, prefix: np.ndarray, question, response) -> tuple[np.ndarray, np.ndarray]:
    """Floored (probs, logps) arrays of shape (len(response), V) for the
    response positions only, conditioning on question + earlier response."""
    tokens = list(question) + list(response)
    rows = _np_next_logits(arrs, cfg, prefix, tokens[:-1])
    sel = rows[len(question) : len(tokens)]
    return floor_probs(_softmax_rows(sel), cfg.prob_floor)


def sample_response(
    arrs: dict[str, np.ndarray],
    cfg: PolicyConfig,
    image: np.ndarray,
    question,
    max_len: int,
    eos_id: int,
    stream: RngStream | None,
    temperature: float = 1.0,
    greedy: bool = False,
) -> Response:
    """Sample up to max_len tokens after the question, stopping after EOS.

    Recorded per-token logps and entropies come from the untempered floored
    distribution; temperature only reshapes the sampling draw.  Greedy mode
    takes argmax with ties to the lower index.
    """
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    if not greedy and not (temperature > 0.0):
        raise ContractError("temperature must be > 0 (use greedy=True for the limit)")
    if not greedy and stream is None:
        raise ContractError("sampling needs an rng stream")
    question = list(question)
    prefix = encode_image_np(arrs, cfg, image)
    toks: list[int] = []
    logps: list[float] = []
    ents: list[float] = []
    while len(toks) < max_len:
        logits = _np_next_logits(arrs, cfg, prefix, question + toks)[-1]
        probs, logp_vec = floor_probs(_softmax_rows(logits), cfg.prob_floor)
        if greedy:
            nxt = int(np.argmax(probs))
        elif temperature == 1.0:
            nxt = stream.categorical(probs)
        else:
            tempered, _ = floor_probs(_softmax_rows(logits / temperature), cfg.prob_floor)
            nxt = stream.categorical(tempered)
        toks.append(nxt)
        logps.append(float(logp_vec[nxt]))
        ents.append(float(-(probs * logp_vec).sum()))
        if nxt == eos_id:
            break
    return Response(toks, np.asarray(logps), np.asarray(ents))


# ------------------------------------------------------------ graph path


def encode_image_graph(params: dict[str, Tensor], cfg: PolicyConfig, image: np.ndarray) -> Tensor:
    vec = ad.constant(image_vector(cfg, image, params["img_w"].data.dtype)[None, :])
    flat = ad.add(ad.matmul(vec, params["img_w"]), params["img_b"])
    return ad.reshape(flat, (cfg.k_img, cfg.embed_dim))


def _graph_hidden(params: dict[str, Tensor], cfg: PolicyConfig, prefix_t: Tensor, tokens) -> Tensor:
    k, d = cfg.k_img, cfg.embed_dim
    n = k + len(tokens)
    if n > cfg.context_len:
        raise ContractError(f"sequence needs {n} positions, context_len is {cfg.context_len}")
    dtype = params["img_w"].data.dtype
    if tokens:
        emb = ad.embedding(params["tok_emb"], np.asarray(tokens))
        X = ad.concat([prefix_t, emb], axis=0)
    else:
        X = prefix_t
    if cfg.architecture == "causal-attention-1-layer":
        X = ad.add(X, ad.embedding(params["pos_emb"], np.arange(n)))
        mask = ad.constant(_causal_mask(n, dtype))
        heads = []
        for h in range(cfg.n_heads):
            q = ad.matmul(X, params[f"attn.q{h}"])
            kk = ad.matmul(X, params[f"attn.k{h}"])
            v = ad.matmul(X, params[f"attn.v{h}"])
            s = ad.add(ad.scale(ad.matmul(q, ad.transpose(kk)), 1.0 / math.sqrt(cfg.head_dim)), mask)
            heads.append(ad.matmul(ad.softmax(s), v))
        att = ad.matmul(ad.concat(heads, axis=-1), params["attn.out"])
        X = ad.add(X, att)
        mid = ad.relu(ad.add(ad.matmul(X, params["mlp.w1"]), params["mlp.b1"]))
        X = ad.add(X, ad.add(ad.matmul(mid, params["mlp.w2"]), params["mlp.b2"]))
        return X
    ones = ad.constant(np.ones((1, d), dtype=dtype))
    h = ad.constant(np.zeros((1, d), dtype=dtype))
    rows = []
    for t in range(n):
        sel = np.zeros((1, n), dtype=dtype)
        sel[0, t] = 1.0
        x = ad.matmul(ad.constant(sel), X)
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params["gate.wx"]), ad.matmul(h, params["gate.wh"])), params["gate.b"]))
        c = ad.tanh(ad.add(ad.add(ad.matmul(x, params["cand.wx"]), ad.matmul(h, params["cand.wh"])), params["cand.b"]))
        h = ad.add(ad.mul(z, h), ad.mul(ad.sub(ones, z), c))
        rows.append(h)
    return ad.concat(rows, axis=0)


def response_logp_graph(
    params: dict[str, Tensor], cfg: PolicyConfig, prefix_t: Tensor, question, response
) -> Tensor:
    """Per-token log-probs of `response` under the live params, shape (len(response),)."""
    question, response = list(question), list(response)
    if not response:
        raise ContractError("response must be nonempty")
    tokens_in = question + response[:-1]
    X = _graph_hidden(params, cfg, prefix_t, tokens_in)
    n = cfg.k_img + len(tokens_in)
    dtype = params["img_w"].data.dtype
    sel = np.zeros((len(response), n), dtype=dtype)
    for t in range(len(response)):
        sel[t, cfg.k_img + len(question) - 1 + t] = 1.0
    logits = ad.add(ad.matmul(ad.matmul(ad.constant(sel), X), params["out_w"]), params["out_b"])
    return ad.gather(ad.log_softmax(logits), np.asarray(response))
