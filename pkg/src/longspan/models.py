"""LSTM, attention-augmented LSTM, and Transformer language models.

All three architectures score token sequences statefully: a
:class:`ModelState` carries recurrent state, attention memory, and
key/value caches across calls, so a paragraph can be scored in chunks
(for example sentence by sentence) with results equal to scoring it
whole.  This resumability is what enables cross-sentence context
carry-over during rescoring.

The input embedding doubles as the output layer (tied weights): logits
are dot products of projected features against embedding rows, which
also makes self-normalized scoring a sparse lookup.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from longspan import autograd as ag
from longspan.autograd import Tensor
from longspan.serialization import CheckpointError, read_container, write_container

ARCHITECTURES = ("lstm", "lstma", "transformer")


class ModelError(ValueError):
    """Bad configuration, token ids, or state for a model call."""


@dataclass
class ModelConfig:
    arch: str
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 2
    transformer_ff_dim: int = 256
    attention_span: int | None = None
    tie_embeddings: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ModelError(f"unknown architecture {self.arch!r}")
        if min(self.embed_dim, self.hidden_dim, self.num_layers) < 1:
            raise ModelError("embed_dim, hidden_dim and num_layers must be >= 1")
        if self.vocab_size < 2:
            raise ModelError("vocab_size must cover the reserved tokens")
        if not self.tie_embeddings:
            raise ModelError("untied embeddings are not supported")
        if self.attention_span is not None and self.attention_span < 1:
            raise ModelError("attention_span must be >= 1 when set")
        attended = self.attended_dim()
        if attended is not None and attended % self.num_heads != 0:
            raise ModelError(
                f"num_heads={self.num_heads} must divide the attended dim {attended}"
            )

    def attended_dim(self) -> int | None:
        if self.arch == "lstma":
            return self.hidden_dim
        if self.arch == "transformer":
            return self.embed_dim
        return None


@dataclass
class ModelState:
    """Per-session scoring state; owns everything the past contributed.

    ``lstm`` holds per-layer (h, c) rows, ``attn_memory`` the stored
    final-layer hidden states, ``kv_cache`` per-layer key/value blocks.
    Lengths track ``position_offset`` and are truncated to the
    configured attention span.
    """

    lstm: list
    attn_memory: np.ndarray | None
    kv_cache: list
    position_offset: int = 0

    def memory_len(self) -> int:
        if self.attn_memory is not None:
            return self.attn_memory.shape[0]
        if self.kv_cache:
            return self.kv_cache[0][0].shape[0]
        return 0


def fresh_state(config: ModelConfig) -> ModelState:
    h = config.hidden_dim
    if config.arch in ("lstm", "lstma"):
        lstm = [
            (
                np.zeros((1, h), dtype=np.float32),
                np.zeros((1, h), dtype=np.float32),
            )
            for _ in range(config.num_layers)
        ]
    else:
        lstm = []
    attn_memory = (
        np.zeros((0, h), dtype=np.float32) if config.arch == "lstma" else None
    )
    kv_cache = (
        [
            (
                np.zeros((0, config.embed_dim), dtype=np.float32),
                np.zeros((0, config.embed_dim), dtype=np.float32),
            )
            for _ in range(config.num_layers)
        ]
        if config.arch == "transformer"
        else []
    )
    return ModelState(lstm=lstm, attn_memory=attn_memory, kv_cache=kv_cache)


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def init_params(config: ModelConfig, seed: int) -> dict:
    """Uniform(-a, a) initialization with a = 1/sqrt(fan_in).

    Layer-norm gains start at 1 and biases at 0.  The same seed always
    produces identical parameters.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def uniform(name, shape, fan_in):
        a = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-a, a, size=shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True)

    def constant(name, shape, value):
        params[name] = Tensor(
            np.full(shape, value, dtype=np.float32), requires_grad=True
        )

    e, h, d = config.embed_dim, config.hidden_dim, config.embed_dim
    uniform("embedding", (config.vocab_size, e), e)

    if config.arch in ("lstm", "lstma"):
        for layer in range(config.num_layers):
            in_dim = e if layer == 0 else h
            uniform(f"lstm{layer}.w_x", (in_dim, 4 * h), in_dim)
            uniform(f"lstm{layer}.w_h", (h, 4 * h), h)
            uniform(f"lstm{layer}.bias", (4 * h,), h)
        if config.arch == "lstma":
            for gate in ("w_q", "w_k", "w_v", "w_o"):
                uniform(f"attn.{gate}", (h, h), h)
            uniform("proj", (2 * h, e), 2 * h)
        else:
            uniform("proj", (h, e), h)
    else:
        ff = config.transformer_ff_dim
        uniform("tf.u", (1, d), d)
        uniform("tf.v", (1, d), d)
        for layer in range(config.num_layers):
            for gate in ("w_q", "w_k", "w_v", "w_o", "w_r"):
                uniform(f"tf{layer}.{gate}", (d, d), d)
            constant(f"tf{layer}.ln1.gain", (d,), 1.0)
            constant(f"tf{layer}.ln1.bias", (d,), 0.0)
            constant(f"tf{layer}.ln2.gain", (d,), 1.0)
            constant(f"tf{layer}.ln2.bias", (d,), 0.0)
            uniform(f"tf{layer}.ff.w1", (d, ff), d)
            uniform(f"tf{layer}.ff.b1", (ff,), d)
            uniform(f"tf{layer}.ff.w2", (ff, d), ff)
            uniform(f"tf{layer}.ff.b2", (d,), ff)
    return params


def param_count(params: dict) -> int:
    return sum(int(np.prod(t.shape)) for t in params.values())


def lstm_param_count_formula(vocab_size, embed_dim, hidden_dim, num_layers) -> int:
    """Closed-form parameter count of the plain LSTM model."""
    total = vocab_size * embed_dim  # tied embedding / output layer
    for layer in range(num_layers):
        in_dim = embed_dim if layer == 0 else hidden_dim
        total += 4 * hidden_dim * (in_dim + hidden_dim + 1)
    total += hidden_dim * embed_dim  # projection to the embedding dim
    return total


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _check_tokens(config: ModelConfig, tokens) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ModelError("tokens must be a non-empty 1-d id sequence")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ModelError(
            f"token id out of range for vocab size {config.vocab_size}"
        )
    return ids


def _effective_span(config: ModelConfig, attention_span) -> int | None:
    if attention_span is _UNSET:
        return config.attention_span
    if attention_span is not None and attention_span < 1:
        raise ModelError("attention_span must be >= 1 when set")
    return attention_span


_UNSET = object()


def _run_lstm_stack(config, params, x, state, train, rng):
    """Apply the LSTM layers to (T, dim) features; returns the final-layer
    sequence and the per-layer end states."""
    h_dim = config.hidden_dim
    new_states = []
    seq = x
    for layer in range(config.num_layers):
        w_x = params[f"lstm{layer}.w_x"]
        w_h = params[f"lstm{layer}.w_h"]
        gates_x = ag.add(ag.matmul(seq, w_x), params[f"lstm{layer}.bias"])
        h = Tensor(state.lstm[layer][0])
        c = Tensor(state.lstm[layer][1])
        steps = []
        for t in range(gates_x.shape[0]):
            g = ag.add(ag.slice_axis(gates_x, 0, t, t + 1), ag.matmul(h, w_h))
            i_gate = ag.sigmoid(ag.slice_axis(g, 1, 0, h_dim))
            f_gate = ag.sigmoid(ag.slice_axis(g, 1, h_dim, 2 * h_dim))
            g_gate = ag.tanh(ag.slice_axis(g, 1, 2 * h_dim, 3 * h_dim))
            o_gate = ag.sigmoid(ag.slice_axis(g, 1, 3 * h_dim, 4 * h_dim))
            c = ag.add(ag.mul(f_gate, c), ag.mul(i_gate, g_gate))
            h = ag.mul(o_gate, ag.tanh(c))
            steps.append(h)
        seq = steps[0] if len(steps) == 1 else ag.concat(steps, axis=0)
        new_states.append((h.data.copy(), c.data.copy()))
        if train and config.dropout > 0.0 and layer < config.num_layers - 1:
            seq = ag.dropout(seq, config.dropout, rng)
    return seq, new_states


def _heads(tensor, num_heads):
    dim = tensor.shape[-1]
    size = dim // num_heads
    return [
        ag.slice_axis(tensor, tensor.data.ndim - 1, i * size, (i + 1) * size)
        for i in range(num_heads)
    ]


def _truncate(memory: np.ndarray, span: int | None) -> np.ndarray:
    return memory if span is None else memory[-span:]


def _lstma_attention(config, params, seq, memory, span):
    """Multi-head attention of each hidden state over its predecessors."""
    t = seq.shape[0]
    m = memory.shape[0]
    if m > 0:
        all_states = ag.concat([Tensor(memory), seq], axis=0)
    else:
        all_states = seq
    q = ag.matmul(seq, params["attn.w_q"])
    k = ag.matmul(all_states, params["attn.w_k"])
    v = ag.matmul(all_states, params["attn.w_v"])
    mask = ag.causal_mask(t, m + t, query_offset=m, span=span, dtype=seq.dtype)
    heads = [
        ag.scaled_dot_product(qh, kh, vh, mask)
        for qh, kh, vh in zip(
            _heads(q, config.num_heads),
            _heads(k, config.num_heads),
            _heads(v, config.num_heads),
        )
    ]
    merged = heads[0] if len(heads) == 1 else ag.concat(heads, axis=-1)
    return ag.matmul(merged, params["attn.w_o"])


def _sinusoid_table(n_positions: int, dim: int, dtype) -> np.ndarray:
    """Sinusoidal encodings of backward distances 0..n_positions-1."""
    positions = np.arange(n_positions, dtype=np.float64)[:, None]
    freq_idx = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, freq_idx / dim)
    table = np.zeros((n_positions, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table.astype(dtype)


def _transformer_layer(config, params, layer, x, cache, span):
    d = config.embed_dim
    t = x.shape[0]
    cache_k, cache_v = cache
    m = cache_k.shape[0]
    q = ag.matmul(x, params[f"tf{layer}.w_q"])
    k_cur = ag.matmul(x, params[f"tf{layer}.w_k"])
    v_cur = ag.matmul(x, params[f"tf{layer}.w_v"])
    k_all = k_cur if m == 0 else ag.concat([Tensor(cache_k), k_cur], axis=0)
    v_all = v_cur if m == 0 else ag.concat([Tensor(cache_v), v_cur], axis=0)
    n_keys = m + t

    rel = Tensor(_sinusoid_table(n_keys, d, x.dtype))
    r_proj = ag.matmul(rel, params[f"tf{layer}.w_r"])
    mask = ag.causal_mask(t, n_keys, query_offset=m, span=span, dtype=x.dtype)

    size = d // config.num_heads
    scale = 1.0 / np.sqrt(size)
    head_outs = []
    for qh, kh, vh, rh, uh, vbh in zip(
        _heads(q, config.num_heads),
        _heads(k_all, config.num_heads),
        _heads(v_all, config.num_heads),
        _heads(r_proj, config.num_heads),
        _heads(params["tf.u"], config.num_heads),
        _heads(params["tf.v"], config.num_heads),
    ):
        content = ag.matmul(ag.add(qh, uh), ag.transpose(kh))
        by_distance = ag.matmul(ag.add(qh, vbh), ag.transpose(rh))
        position = ag.rel_shift(by_distance, n_keys, query_offset=m)
        scores = ag.add(ag.scale(ag.add(content, position), scale), mask)
        head_outs.append(ag.matmul(ag.softmax(scores), vh))
    merged = head_outs[0] if len(head_outs) == 1 else ag.concat(head_outs, axis=-1)
    attn_out = ag.matmul(merged, params[f"tf{layer}.w_o"])
    x = ag.layer_norm(
        ag.add(x, attn_out),
        params[f"tf{layer}.ln1.gain"],
        params[f"tf{layer}.ln1.bias"],
    )
    hidden = ag.relu(ag.add(ag.matmul(x, params[f"tf{layer}.ff.w1"]), params[f"tf{layer}.ff.b1"]))
    ff_out = ag.add(ag.matmul(hidden, params[f"tf{layer}.ff.w2"]), params[f"tf{layer}.ff.b2"])
    x = ag.layer_norm(
        ag.add(x, ff_out),
        params[f"tf{layer}.ln2.gain"],
        params[f"tf{layer}.ln2.bias"],
    )
    new_cache = (
        _truncate(np.concatenate([cache_k, k_cur.data], axis=0), span),
        _truncate(np.concatenate([cache_v, v_cur.data], axis=0), span),
    )
    return x, new_cache


def forward_features(config, params, tokens, state=None, train=False, rng=None,
                     attention_span=_UNSET):
    """Run the configured architecture over the tokens.

    Returns pre-output features (one row per position, already projected
    to the embedding dimension) and the advanced state.  Logits are the
    features times the transposed embedding table.
    """
    ids = _check_tokens(config, tokens)
    span = _effective_span(config, attention_span)
    if state is None:
        state = fresh_state(config)
    if config.arch in ("lstm", "lstma") and len(state.lstm) != config.num_layers:
        raise ModelError("state does not match the model's layer count")
    if config.arch == "lstma" and state.attn_memory is None:
        raise ModelError("state is missing the attention memory")
    if config.arch == "transformer" and len(state.kv_cache) != config.num_layers:
        raise ModelError("state does not match the model's layer count")
    x = ag.embedding_gather(params["embedding"], ids)
    if train and config.dropout > 0.0:
        x = ag.dropout(x, config.dropout, rng)

    if config.arch == "lstm":
        seq, lstm_states = _run_lstm_stack(config, params, x, state, train, rng)
        features = ag.matmul(seq, params["proj"])
        new_state = ModelState(
            lstm=lstm_states,
            attn_memory=None,
            kv_cache=[],
            position_offset=state.position_offset + ids.size,
        )
    elif config.arch == "lstma":
        seq, lstm_states = _run_lstm_stack(config, params, x, state, train, rng)
        attn = _lstma_attention(config, params, seq, state.attn_memory, span)
        features = ag.matmul(ag.concat([attn, seq], axis=-1), params["proj"])
        memory = np.concatenate([state.attn_memory, seq.data], axis=0)
        new_state = ModelState(
            lstm=lstm_states,
            attn_memory=_truncate(memory, span),
            kv_cache=[],
            position_offset=state.position_offset + ids.size,
        )
    else:
        seq = x
        new_cache = []
        for layer in range(config.num_layers):
            seq, cache = _transformer_layer(
                config, params, layer, seq, state.kv_cache[layer], span
            )
            new_cache.append(cache)
        features = seq
        new_state = ModelState(
            lstm=[],
            attn_memory=None,
            kv_cache=new_cache,
            position_offset=state.position_offset + ids.size,
        )
    return features, new_state


@dataclass
class StepOutput:
    """Per-position model outputs: unnormalized logits over the vocabulary
    (self-normalized by NCE training) and the pre-output projected features."""

    logits: np.ndarray
    features: np.ndarray


def _forward_arch(expected_arch, config, params, tokens, state):
    if config.arch != expected_arch:
        raise ModelError(f"config.arch is {config.arch!r}, expected {expected_arch!r}")
    features, new_state = forward_features(config, params, tokens, state)
    logits = ag.matmul(features, ag.transpose(params["embedding"]))
    return logits, new_state


def step_outputs(config, params, tokens, state=None):
    """Forward pass returning a :class:`StepOutput` plus the advanced state."""
    with ag.no_grad():
        features, new_state = forward_features(config, params, tokens, state)
        logits = ag.matmul(features, ag.transpose(params["embedding"]))
    return StepOutput(logits=logits.data, features=features.data), new_state


def lstm_forward(config, params, tokens, state=None):
    """Per-position logits over the vocabulary plus the advanced state."""
    return _forward_arch("lstm", config, params, tokens, state)


def lstma_forward(config, params, tokens, state=None):
    return _forward_arch("lstma", config, params, tokens, state)


def transformer_forward(config, params, tokens, state=None):
    return _forward_arch("transformer", config, params, tokens, state)


def score_sequence(config, params, tokens, state=None,
                   normalization: str = "full_softmax", attention_span=_UNSET):
    """Log scores for tokens[1:], each conditioned on everything before it.

    ``full_softmax`` returns proper log-probabilities;
    ``self_normalized`` returns the raw logit of each target, trusting
    NCE training to keep the partition function near one.
    """
    ids = _check_tokens(config, tokens)
    if ids.size < 2:
        raise ModelError("scoring needs at least two tokens (context plus target)")
    if normalization not in ("full_softmax", "self_normalized"):
        raise ModelError(f"unknown normalization {normalization!r}")
    with ag.no_grad():
        features, new_state = forward_features(
            config, params, ids, state, attention_span=attention_span
        )
        predictors = ag.slice_axis(features, 0, 0, ids.size - 1)
        targets = ids[1:]
        if normalization == "full_softmax":
            logits = ag.matmul(predictors, ag.transpose(params["embedding"]))
            log_probs = ag.pick(ag.log_softmax(logits), targets)
        else:
            rows = ag.embedding_gather(params["embedding"], targets)
            log_probs = ag.sum_last(ag.mul(predictors, rows))
    return log_probs.data.astype(np.float64), new_state


def advance_state(config, params, tokens, state=None, attention_span=_UNSET):
    """Consume tokens to move the state forward without scoring."""
    ids = _check_tokens(config, tokens)
    with ag.no_grad():
        _, new_state = forward_features(
            config, params, ids, state, attention_span=attention_span
        )
    return new_state


def score_chunks(config, params, chunks, normalization: str = "full_softmax",
                 attention_span=_UNSET):
    """Score a sequence presented in chunks, carrying state across them.

    Equivalent to :func:`score_sequence` on the concatenation: the
    prediction for each chunk's first token comes from the previous
    chunk's final position.  Returns scores for every token after the
    first overall plus the end state.
    """
    chunks = [_check_tokens(config, chunk) for chunk in chunks if len(chunk)]
    if sum(len(c) for c in chunks) < 2:
        raise ModelError("scoring needs at least two tokens (context plus target)")
    embedding = params["embedding"]
    scores = []
    state = None
    pending = None  # feature row predicting the next chunk's first token
    with ag.no_grad():
        for chunk in chunks:
            features, state = forward_features(
                config, params, chunk, state, attention_span=attention_span
            )
            rows = features.data
            if pending is not None:
                rows = np.concatenate([pending, rows], axis=0)
                targets = chunk
            else:
                targets = chunk[1:]
            predictors = Tensor(rows[: len(targets)])
            if len(targets):
                if normalization == "full_softmax":
                    logits = ag.matmul(predictors, ag.transpose(embedding))
                    picked = ag.pick(ag.log_softmax(logits), targets)
                elif normalization == "self_normalized":
                    gathered = ag.embedding_gather(embedding, targets)
                    picked = ag.sum_last(ag.mul(predictors, gathered))
                else:
                    raise ModelError(f"unknown normalization {normalization!r}")
                scores.append(picked.data.astype(np.float64))
            pending = features.data[-1:]
    return np.concatenate(scores), state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: dict, config: ModelConfig, path) -> None:
    fields = {f.name: getattr(config, f.name) for f in dataclass_fields(ModelConfig)}
    write_container(path, fields, {name: t.data for name, t in params.items()})


def load_checkpoint(path):
    """Read back (params, config); shape or field mismatches raise."""
    fields, arrays = read_container(path)
    known = {f.name for f in dataclass_fields(ModelConfig)}
    if set(fields) != known:
        raise CheckpointError("checkpoint config fields do not match the model schema")
    try:
        config = ModelConfig(**fields)
    except ModelError as exc:
        raise CheckpointError(f"invalid checkpoint config: {exc}") from exc
    expected = init_params(config, seed=0)
    if set(arrays) != set(expected):
        raise CheckpointError("checkpoint parameter names do not match the config")
    params = {}
    for name, ref in expected.items():
        if tuple(arrays[name].shape) != tuple(ref.shape):
            raise CheckpointError(
                f"parameter {name} has shape {arrays[name].shape}, expected {ref.shape}"
            )
        params[name] = Tensor(arrays[name], requires_grad=True)
    return params, config
