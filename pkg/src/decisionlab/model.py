"""Small attention-based sequence policy with a hand-written backward pass.

Prompts interleave feature elements (X_tau, o_{tau-1}) with label elements
a_tau; a prompt for history length t has 2t-1 elements and ends on a
feature element. The network is a stack of pre-norm causal self-attention
blocks with 4x MLPs; predictions of the optimal action are read at every
feature position. All arithmetic is float64 so the finite-difference
gradient check is meaningful.
"""

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 2
    embed_dim: int = 32
    feature_dim: int = 1  # context dim + observation dim
    label_dim: int = 1  # one-hot arm count or action dim
    out_dim: int = 1
    max_prompt_len: int = 199
    head_kind: str = "continuous"  # "softmax" or "continuous"
    dropout: float = 0.0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.head_kind not in ("softmax", "continuous"):
            raise ValueError("head_kind must be 'softmax' or 'continuous'")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


def _layout_shapes(cfg: ModelConfig) -> dict:
    e = cfg.embed_dim
    shapes = {
        "feat_w": (cfg.feature_dim, e),
        "feat_b": (e,),
        "lab_w": (cfg.label_dim, e),
        "lab_b": (e,),
        "pos": (cfg.max_prompt_len, e),
    }
    for i in range(cfg.layers):
        p = f"l{i}."
        shapes[p + "ln1_g"] = (e,)
        shapes[p + "ln1_b"] = (e,)
        for nm in ("wq", "wk", "wv", "wo"):
            shapes[p + nm] = (e, e)
        for nm in ("bq", "bk", "bv", "bo"):
            shapes[p + nm] = (e,)
        shapes[p + "ln2_g"] = (e,)
        shapes[p + "ln2_b"] = (e,)
        shapes[p + "mlp_w1"] = (e, 4 * e)
        shapes[p + "mlp_b1"] = (4 * e,)
        shapes[p + "mlp_w2"] = (4 * e, e)
        shapes[p + "mlp_b2"] = (e,)
    shapes["lnf_g"] = (e,)
    shapes["lnf_b"] = (e,)
    shapes["head_w"] = (e, cfg.out_dim)
    shapes["head_b"] = (cfg.out_dim,)
    return shapes


class PolicyParams:
    """Flat float64 parameter vector with named reshaped views."""

    def __init__(self, config: ModelConfig, vector: np.ndarray = None):
        self.config = config
        self.shapes = _layout_shapes(config)
        self.slices = {}
        offset = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape))
            self.slices[name] = (offset, offset + size)
            offset += size
        self.size = offset
        if vector is None:
            vector = np.zeros(offset)
        if vector.shape != (offset,):
            raise ValueError(f"expected parameter vector of length {offset}, got {vector.shape}")
        self.vector = vector

    def view(self, name: str) -> np.ndarray:
        lo, hi = self.slices[name]
        return self.vector[lo:hi].reshape(self.shapes[name])

    def slice_of(self, index: int) -> str:
        for name, (lo, hi) in self.slices.items():
            if lo <= index < hi:
                return name
        raise IndexError(index)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, self.vector.copy())

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(self.config, np.zeros(self.size))


def init_params(config: ModelConfig, seed: int) -> PolicyParams:
    from .rng import stream

    rng = stream(seed, "init")
    params = PolicyParams(config)
    for name, shape in params.shapes.items():
        v = params.view(name)
        if name.endswith(("_g",)):
            v[...] = 1.0
        elif name.endswith(("_b", "bq", "bk", "bv", "bo", "mlp_b1", "mlp_b2")) or "_b" in name:
            v[...] = 0.0
        elif name == "pos":
            v[...] = rng.normal(0.0, 1.0 / math.sqrt(config.embed_dim), size=shape)
        else:
            fan_in = shape[0]
            v[...] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
    return params


@dataclass
class Prompt:
    """One prompt: t feature elements and t-1 label elements, interleaved."""

    features: np.ndarray  # (t, feature_dim)
    labels_in: np.ndarray  # (t-1, label_dim)

    @property
    def t(self) -> int:
        return len(self.features)

    @property
    def length(self) -> int:
        return 2 * self.t - 1

    def element_types(self) -> list:
        return ["feature" if i % 2 == 0 else "label" for i in range(self.length)]


def encode_action(action, config: ModelConfig) -> np.ndarray:
    if config.head_kind == "softmax":
        onehot = np.zeros(config.label_dim)
        onehot[int(action)] = 1.0
        return onehot
    return np.atleast_1d(np.asarray(action, dtype=float))


def build_prompt(history, config: ModelConfig) -> Prompt:
    """Prompt for the pending decision: [(X_1,0), a_1, (X_2,o_1), ..., (X_t, o_{t-1})]."""
    t = history.t
    features = np.zeros((t, config.feature_dim))
    labels_in = np.zeros((max(t - 1, 0), config.label_dim))
    for tau in range(t):
        x = history.steps[tau].context if tau < t - 1 else history.pending_context
        d = len(x)
        features[tau, :d] = x
        if tau > 0:
            features[tau, d:] = history.steps[tau - 1].observation
    for tau in range(t - 1):
        labels_in[tau] = encode_action(history.steps[tau].action, config)
    return Prompt(features, labels_in)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def forward(params: PolicyParams, prompts, dropout_rng=None):
    """Batched forward pass over prompts of identical history length.

    Returns (predictions (B, t, out_dim), cache for backward). `prompts`
    may be a single Prompt or a list of Prompts sharing the same t.
    """
    single = isinstance(prompts, Prompt)
    if single:
        prompts = [prompts]
    cfg = params.config
    t = prompts[0].t
    length = 2 * t - 1
    if length > cfg.max_prompt_len:
        raise ValueError(f"prompt length {length} exceeds max_prompt_len {cfg.max_prompt_len}")
    if any(p.t != t for p in prompts):
        raise ValueError("all prompts in a batch must share the same history length")
    feats = np.stack([p.features for p in prompts])  # (B, t, df)
    labs = np.stack([p.labels_in for p in prompts])  # (B, t-1, dl)
    b = len(prompts)
    e = cfg.embed_dim

    cache = {"feats": feats, "labs": labs, "t": t, "length": length, "b": b, "single": single}

    x = np.zeros((b, length, e))
    x[:, 0::2] = feats @ params.view("feat_w") + params.view("feat_b")
    if t > 1:
        x[:, 1::2] = labs @ params.view("lab_w") + params.view("lab_b")
    x = x + params.view("pos")[:length]

    heads = cfg.heads
    hd = e // heads
    mask = np.tril(np.ones((length, length), dtype=bool))
    cache["blocks"] = []
    for i in range(cfg.layers):
        p = f"l{i}."
        blk = {"x_in": x}
        ln1, blk["ln1"] = _layer_norm(x, params.view(p + "ln1_g"), params.view(p + "ln1_b"))
        blk["ln1_out"] = ln1
        q = ln1 @ params.view(p + "wq") + params.view(p + "bq")
        k = ln1 @ params.view(p + "wk") + params.view(p + "bk")
        v = ln1 @ params.view(p + "wv") + params.view(p + "bv")
        # head-major (B, H, L, hd) layout keeps everything on BLAS matmuls
        q = q.reshape(b, length, heads, hd).transpose(0, 2, 1, 3)
        k = k.reshape(b, length, heads, hd).transpose(0, 2, 1, 3)
        v = v.reshape(b, length, heads, hd).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(hd)
        scores = np.where(mask[None, None], scores, -1e30)
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, length, e)
        attn_out = ctx @ params.view(p + "wo") + params.view(p + "bo")
        if cfg.dropout > 0.0 and dropout_rng is not None:
            keep = dropout_rng.random(attn_out.shape) >= cfg.dropout
            attn_out = attn_out * keep / (1.0 - cfg.dropout)
            blk["drop1"] = keep
        x = x + attn_out
        blk.update(q=q, k=k, v=v, attn=attn, ctx=ctx, x_mid=x)
        ln2, blk["ln2"] = _layer_norm(x, params.view(p + "ln2_g"), params.view(p + "ln2_b"))
        blk["ln2_out"] = ln2
        h_pre = ln2 @ params.view(p + "mlp_w1") + params.view(p + "mlp_b1")
        h_act, blk["gelu"] = _gelu(h_pre)
        blk["h_act"] = h_act
        mlp_out = h_act @ params.view(p + "mlp_w2") + params.view(p + "mlp_b2")
        if cfg.dropout > 0.0 and dropout_rng is not None:
            keep = dropout_rng.random(mlp_out.shape) >= cfg.dropout
            mlp_out = mlp_out * keep / (1.0 - cfg.dropout)
            blk["drop2"] = keep
        x = x + mlp_out
        cache["blocks"].append(blk)

    lnf, cache["lnf"] = _layer_norm(x, params.view("lnf_g"), params.view("lnf_b"))
    cache["lnf_out"] = lnf
    feat_states = lnf[:, 0::2]  # (B, t, E)
    cache["feat_states"] = feat_states
    preds = feat_states @ params.view("head_w") + params.view("head_b")
    return (preds[0] if single else preds), cache


def backward(params: PolicyParams, cache, dpreds: np.ndarray) -> PolicyParams:
    """Gradient of a scalar loss given d(loss)/d(predictions)."""
    cfg = params.config
    grads = params.zeros_like()
    b, t, length = cache["b"], cache["t"], cache["length"]
    e = cfg.embed_dim
    heads = cfg.heads
    hd = e // heads
    if dpreds.ndim == 2:
        dpreds = dpreds[None]

    g = grads.view  # shorthand

    feat_states = cache["feat_states"]
    g("head_w")[...] = feat_states.reshape(-1, e).T @ dpreds.reshape(-1, dpreds.shape[-1])
    g("head_b")[...] = dpreds.sum(axis=(0, 1))
    dlnf = np.zeros((b, length, e))
    dlnf[:, 0::2] = dpreds @ params.view("head_w").T

    dx, dg_, db_ = _layer_norm_backward(dlnf, params.view("lnf_g"), cache["lnf"])
    g("lnf_g")[...] = dg_
    g("lnf_b")[...] = db_

    for i in reversed(range(cfg.layers)):
        p = f"l{i}."
        blk = cache["blocks"][i]
        # MLP branch
        dmlp_out = dx.copy()
        if "drop2" in blk:
            dmlp_out = dmlp_out * blk["drop2"] / (1.0 - cfg.dropout)
        g(p + "mlp_w2")[...] = blk["h_act"].reshape(-1, blk["h_act"].shape[-1]).T @ dmlp_out.reshape(-1, e)
        g(p + "mlp_b2")[...] = dmlp_out.sum(axis=(0, 1))
        dh_act = dmlp_out @ params.view(p + "mlp_w2").T
        dh_pre = _gelu_backward(dh_act, blk["gelu"])
        g(p + "mlp_w1")[...] = blk["ln2_out"].reshape(-1, e).T @ dh_pre.reshape(-1, dh_pre.shape[-1])
        g(p + "mlp_b1")[...] = dh_pre.sum(axis=(0, 1))
        dln2 = dh_pre @ params.view(p + "mlp_w1").T
        dx_mid, dg_, db_ = _layer_norm_backward(dln2, params.view(p + "ln2_g"), blk["ln2"])
        g(p + "ln2_g")[...] = dg_
        g(p + "ln2_b")[...] = db_
        dx = dx + dx_mid
        # Attention branch
        dattn_out = dx.copy()
        if "drop1" in blk:
            dattn_out = dattn_out * blk["drop1"] / (1.0 - cfg.dropout)
        g(p + "wo")[...] = blk["ctx"].reshape(-1, e).T @ dattn_out.reshape(-1, e)
        g(p + "bo")[...] = dattn_out.sum(axis=(0, 1))
        dctx = (dattn_out @ params.view(p + "wo").T).reshape(b, length, heads, hd)
        dctx = dctx.transpose(0, 2, 1, 3)  # (B, H, L, hd)
        attn, q, k, v = blk["attn"], blk["q"], blk["k"], blk["v"]
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= math.sqrt(hd)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dq = dq.transpose(0, 2, 1, 3).reshape(b, length, e)
        dk = dk.transpose(0, 2, 1, 3).reshape(b, length, e)
        dv = dv.transpose(0, 2, 1, 3).reshape(b, length, e)
        ln1 = blk["ln1_out"]
        g(p + "wq")[...] = ln1.reshape(-1, e).T @ dq.reshape(-1, e)
        g(p + "wk")[...] = ln1.reshape(-1, e).T @ dk.reshape(-1, e)
        g(p + "wv")[...] = ln1.reshape(-1, e).T @ dv.reshape(-1, e)
        g(p + "bq")[...] = dq.sum(axis=(0, 1))
        g(p + "bk")[...] = dk.sum(axis=(0, 1))
        g(p + "bv")[...] = dv.sum(axis=(0, 1))
        dln1 = (
            dq @ params.view(p + "wq").T
            + dk @ params.view(p + "wk").T
            + dv @ params.view(p + "wv").T
        )
        dx_in, dg_, db_ = _layer_norm_backward(dln1, params.view(p + "ln1_g"), blk["ln1"])
        g(p + "ln1_g")[...] = dg_
        g(p + "ln1_b")[...] = db_
        dx = dx + dx_in

    g("pos")[:length] = dx.sum(axis=0)
    dfeat_emb = dx[:, 0::2]
    g("feat_w")[...] = cache["feats"].reshape(-1, cache["feats"].shape[-1]).T @ dfeat_emb.reshape(-1, e)
    g("feat_b")[...] = dfeat_emb.sum(axis=(0, 1))
    if t > 1:
        dlab_emb = dx[:, 1::2]
        g("lab_w")[...] = cache["labs"].reshape(-1, cache["labs"].shape[-1]).T @ dlab_emb.reshape(-1, e)
        g("lab_b")[...] = dlab_emb.sum(axis=(0, 1))
    return grads


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    out = np.exp(z)
    return out / out.sum(axis=-1, keepdims=True)


def loss_and_grad(preds: np.ndarray, targets, loss_kind: str):
    """Mean-per-position loss and its gradient w.r.t. predictions.

    preds is (B, t, out_dim); targets is (B, t) of arm indices for
    cross-entropy, else (B, t, out_dim). Returns (scalar, per-position
    (B, t) values, dpreds).
    """
    if preds.ndim == 2:
        preds = preds[None]
    b, t, _ = preds.shape
    denom = b * t
    if loss_kind == "cross_entropy":
        targets = np.asarray(targets, dtype=int).reshape(b, t)
        if targets.min() < 0 or targets.max() >= preds.shape[2]:
            raise ValueError("label arm index out of range")
        probs = _softmax(preds)
        picked = np.take_along_axis(probs, targets[..., None], axis=2)[..., 0]
        values = -np.log(np.maximum(picked, 1e-300))
        dpreds = probs.copy()
        np.put_along_axis(dpreds, targets[..., None], (picked - 1.0)[..., None], axis=2)
        dpreds /= denom
        return float(values.mean()), values, dpreds
    targets = np.asarray(targets, dtype=float).reshape(preds.shape)
    diff = preds - targets
    if loss_kind == "squared":
        values = (diff * diff).sum(axis=2)
        dpreds = 2.0 * diff / denom
    elif loss_kind == "absolute":
        values = np.abs(diff).sum(axis=2)
        dpreds = np.sign(diff) / denom
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return float(values.mean()), values, dpreds


def sequence_targets(sequence, config: ModelConfig, horizon: int = None):
    """Per-position optimal-action targets of a labeled sequence."""
    steps = sequence.trajectory.steps if horizon is None else sequence.trajectory.steps[:horizon]
    if config.head_kind == "softmax":
        return np.array([int(s.optimal_action) for s in steps])
    return np.stack([np.atleast_1d(np.asarray(s.optimal_action, dtype=float)) for s in steps])


def sequence_prompt(sequence, config: ModelConfig, horizon: int = None) -> Prompt:
    """Full-length prompt of a labeled sequence (one forward covers all t)."""
    steps = sequence.trajectory.steps if horizon is None else sequence.trajectory.steps[:horizon]
    t = len(steps)
    features = np.zeros((t, config.feature_dim))
    labels_in = np.zeros((max(t - 1, 0), config.label_dim))
    for tau, step in enumerate(steps):
        d = len(step.context)
        features[tau, :d] = step.context
        if tau > 0:
            features[tau, d:] = steps[tau - 1].observation
    for tau in range(t - 1):
        labels_in[tau] = encode_action(steps[tau].action, config)
    return Prompt(features, labels_in)


def act(params: PolicyParams, history, rng: np.random.Generator = None):
    """Sample an arm from the last-position softmax, or emit the raw
    continuous prediction (projection onto A is the caller's job)."""
    prompt = build_prompt(history, params.config)
    preds, _ = forward(params, prompt)
    last = preds[-1]
    if params.config.head_kind == "softmax":
        probs = _softmax(last)
        return int(rng.choice(len(probs), p=probs))
    return last if last.shape[0] > 1 else float(last[0])


class TransformerPolicy:
    """Policy adapter: prompt the model with the history, project the action."""

    randomized = True  # the softmax head samples

    def __init__(self, env, params: PolicyParams, rng: np.random.Generator = None):
        from . import envs

        self.env = env
        self.params = params
        self.rng = rng
        self.space = envs.action_space(env)

    def reset(self):
        pass

    def act(self, history):
        a = act(self.params, history, self.rng)
        if self.params.config.head_kind == "softmax":
            return a
        projected, _ = self.space.project(a)
        return projected


def config_for_prior(prior, horizon: int, layers: int = 2, heads: int = 2,
                     embed_dim: int = 32, dropout: float = 0.0) -> ModelConfig:
    """Desk-scale model configuration matched to a task family."""
    from . import envs

    if prior.family == envs.MAB:
        k = prior.pool[0].num_arms if prior.is_finite else prior.num_arms
        feature_dim, label_dim, out_dim, head = 1, k, k, "softmax"
    elif prior.family == envs.LINEAR_BANDIT:
        d = prior.pool[0].dim if prior.is_finite else prior.action_dim
        feature_dim, label_dim, out_dim, head = 1, d, d, "continuous"
    else:
        d = prior.pool[0].context_dim if prior.is_finite else prior.context_dim
        feature_dim, label_dim, out_dim, head = d + 1, 1, 1, "continuous"
    return ModelConfig(
        layers=layers,
        heads=heads,
        embed_dim=embed_dim,
        feature_dim=feature_dim,
        label_dim=label_dim,
        out_dim=out_dim,
        max_prompt_len=2 * horizon - 1,
        head_kind=head,
        dropout=dropout,
    )


def save_checkpoint(params: PolicyParams, path):
    header = json.dumps({"config": params.config.to_json(), "count": params.size})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(params.vector.astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    vector = np.frombuffer(raw, dtype="<f8").copy()
    if len(vector) != header["count"]:
        raise ValueError(
            f"checkpoint parameter count mismatch: header says {header['count']}, found {len(vector)}"
        )
    return PolicyParams(ModelConfig.from_json(header["config"]), vector)
