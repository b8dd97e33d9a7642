"""Mistral-style decoder at desk scale, in numpy, with a hand-written backward.

Architecture: token embedding, pre-norm blocks of grouped-query attention
with sliding-window causal masking and rotary position embeddings, SwiGLU
MLP, RMSNorm everywhere, untied LM head. Forward/backward are pure
functions of (checkpoint, input); compute precision follows the
checkpoint's storage dtype (build an f64 checkpoint for verification).
"""

from __future__ import annotations

import numpy as np

from .tensor_ckpt import ModelCheckpoint, TensorStore, TinyLMConfig  # noqa: F401  (re-export)


class ModelError(Exception):
    pass


def _rms_norm(x, weight, eps):
    # x: [B,T,H]; returns (y, r) with r = 1/sqrt(mean(x^2)+eps) cached for backward
    r = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    return x * r * weight, r


def _rope_tables(T, head_dim, theta, dtype):
    # angles in f64, cast once; half-split rotation convention
    half = head_dim // 2
    inv_freq = theta ** (-np.arange(0, half, dtype=np.float64) * 2.0 / head_dim)
    ang = np.arange(T, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.concatenate([np.cos(ang), np.cos(ang)], axis=-1).astype(dtype)
    sin = np.concatenate([np.sin(ang), np.sin(ang)], axis=-1).astype(dtype)
    return cos, sin


def _rotate_half(x):
    half = x.shape[-1] // 2
    return np.concatenate([-x[..., half:], x[..., :half]], axis=-1)


def _apply_rope(x, cos, sin):
    # x: [B,T,heads,hd]; cos/sin: [T,hd]
    return x * cos[None, :, None, :] + _rotate_half(x) * sin[None, :, None, :]


def _attention_mask(T, window, dtype):
    # position t may attend to max(0, t-window+1) .. t
    t = np.arange(T)
    allowed = (t[None, :] <= t[:, None]) & (t[None, :] >= t[:, None] - window + 1)
    mask = np.where(allowed, 0.0, -np.inf).astype(dtype)
    return mask


def _softmax_last(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def forward(ckpt: ModelCheckpoint, ids, return_cache: bool = True):
    """Run the decoder over token ids.

    ``ids`` may be [T] or [B,T]; logits come back with the matching rank.
    The cache holds every activation the backward pass needs.
    """
    cfg = ckpt.config
    ids = np.asarray(ids)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ModelError(f"ids must be 1-D or 2-D, got shape {ids.shape}")
    if ids.size == 0:
        raise ModelError("empty token sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ModelError(
            f"token id out of range [0, {cfg.vocab_size}): saw {int(ids.min())}..{int(ids.max())}"
        )
    W = ckpt.tensors
    dtype = W["embed.weight"].dtype
    B, T = ids.shape
    n_h, n_kv, hd = cfg.heads, cfg.kv_heads, cfg.head_dim
    if hd % 2:
        raise ModelError("head_dim must be even for rotary position embedding")
    group = n_h // n_kv
    scale = 1.0 / np.sqrt(hd)

    cos, sin = _rope_tables(T, hd, cfg.rope_theta, dtype)
    mask = _attention_mask(T, cfg.window, dtype)

    x = W["embed.weight"][ids]
    cache = {"ids": ids, "squeeze": squeeze, "cos": cos, "sin": sin, "layers": []}
    for i in range(cfg.layers):
        p = f"layers.{i}."
        lc = {"x_in": x}
        a, r1 = _rms_norm(x, W[p + "ln_attn.weight"], cfg.norm_eps)
        q = (a @ W[p + "attn.wq.weight"]).reshape(B, T, n_h, hd)
        k = (a @ W[p + "attn.wk.weight"]).reshape(B, T, n_kv, hd)
        v = (a @ W[p + "attn.wv.weight"]).reshape(B, T, n_kv, hd)
        q_r = _apply_rope(q, cos, sin)
        k_r = _apply_rope(k, cos, sin)
        k_rep = np.repeat(k_r, group, axis=2)
        v_rep = np.repeat(v, group, axis=2)
        scores = np.einsum("bthd,bshd->bhts", q_r, k_rep) * scale + mask[None, None]
        attn = _softmax_last(scores)
        ctx = np.einsum("bhts,bshd->bthd", attn, v_rep).reshape(B, T, n_h * hd)
        o = ctx @ W[p + "attn.wo.weight"]
        x = x + o
        lc.update(a=a, r1=r1, q_r=q_r, k_r=k_r, v=v, attn=attn, ctx=ctx, x_mid=x)
        b_in, r2 = _rms_norm(x, W[p + "ln_mlp.weight"], cfg.norm_eps)
        gate = b_in @ W[p + "mlp.w_gate.weight"]
        up = b_in @ W[p + "mlp.w_up.weight"]
        sig = 1.0 / (1.0 + np.exp(-gate))
        act = gate * sig * up
        mlp = act @ W[p + "mlp.w_down.weight"]
        x = x + mlp
        lc.update(b_in=b_in, r2=r2, gate=gate, up=up, sig=sig)
        cache["layers"].append(lc)

    xf, rf = _rms_norm(x, W["final_norm.weight"], cfg.norm_eps)
    logits = np.einsum("bth,vh->btv", xf, W["lm_head.weight"])
    cache.update(x_last=x, xf=xf, rf=rf)
    if not return_cache:
        return logits[0] if squeeze else logits
    return (logits[0] if squeeze else logits), cache


def next_token_stats(logits, ids):
    """Exact sums for next-token scoring: (nll_sum, n_correct, n_positions).

    Position t's logits score ids[t+1]; the last position is unscored.
    """
    logits = np.asarray(logits)
    ids = np.asarray(ids)
    if logits.ndim == 2:
        logits = logits[None]
        ids = ids[None, :]
    B, T, V = logits.shape
    if ids.shape != (B, T):
        raise ModelError(f"targets shape {ids.shape} does not match logits {logits.shape}")
    if T < 2:
        raise ModelError("need at least 2 tokens to form a next-token pair")
    pred = logits[:, :-1].astype(np.float64)
    tgt = ids[:, 1:]
    m = pred.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(pred - m).sum(axis=-1))
    tgt_logit = np.take_along_axis(pred, tgt[..., None], axis=-1)[..., 0]
    nll_sum = float((lse - tgt_logit).sum())
    correct = int((pred.argmax(axis=-1) == tgt).sum())
    return nll_sum, correct, B * (T - 1)


def loss_and_accuracy(logits, targets):
    """Mean next-token NLL, argmax accuracy, and scored token count."""
    nll_sum, correct, n = next_token_stats(logits, targets)
    return nll_sum / n, correct / n, n


def _rms_norm_backward(dy, x, weight, r):
    H = x.shape[-1]
    dw = (dy * x * r).sum(axis=tuple(range(x.ndim - 1)))
    g = dy * weight
    dx = g * r - x * (r**3 / H) * (g * x).sum(axis=-1, keepdims=True)
    return dx, dw


def backward(ckpt: ModelCheckpoint, cache: dict, targets) -> TensorStore:
    """Gradient of the mean next-token NLL w.r.t. every parameter tensor."""
    cfg = ckpt.config
    W = ckpt.tensors
    ids = cache["ids"]
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[None, :]
    if targets.shape != ids.shape:
        raise ModelError(
            f"targets shape {targets.shape} does not match cached ids {ids.shape}"
        )
    B, T = ids.shape
    if T < 2:
        raise ModelError("need at least 2 tokens to form a next-token pair")
    n_h, n_kv, hd = cfg.heads, cfg.kv_heads, cfg.head_dim
    group = n_h // n_kv
    scale = 1.0 / np.sqrt(hd)
    H = cfg.hidden
    xf = cache["xf"]
    dtype = xf.dtype

    logits = np.einsum("bth,vh->btv", xf, W["lm_head.weight"])
    probs = _softmax_last(logits)
    n_pos = B * (T - 1)
    dlogits = np.zeros_like(probs)
    dlogits[:, :-1] = probs[:, :-1]
    rows_b, rows_t = np.meshgrid(np.arange(B), np.arange(T - 1), indexing="ij")
    dlogits[rows_b, rows_t, targets[:, 1:]] -= 1.0
    dlogits[:, :-1] /= n_pos

    grads = TensorStore()
    grads["lm_head.weight"] = np.einsum("btv,bth->vh", dlogits, xf).astype(dtype)
    dxf = np.einsum("btv,vh->bth", dlogits, W["lm_head.weight"])
    dx, dwf = _rms_norm_backward(dxf, cache["x_last"], W["final_norm.weight"], cache["rf"])
    grads["final_norm.weight"] = dwf.astype(dtype)

    cos, sin = cache["cos"], cache["sin"]
    for i in reversed(range(cfg.layers)):
        p = f"layers.{i}."
        lc = cache["layers"][i]
        # MLP block
        dmlp = dx  # residual: dx flows to both branch and skip
        act = lc["gate"] * lc["sig"] * lc["up"]
        grads[p + "mlp.w_down.weight"] = np.einsum(
            "btm,bth->mh", act, dmlp
        ).astype(dtype)
        dact = dmlp @ W[p + "mlp.w_down.weight"].T
        silu = lc["gate"] * lc["sig"]
        dgate = dact * lc["up"] * (lc["sig"] + silu * (1.0 - lc["sig"]))
        dup = dact * silu
        grads[p + "mlp.w_gate.weight"] = np.einsum("bth,btm->hm", lc["b_in"], dgate).astype(dtype)
        grads[p + "mlp.w_up.weight"] = np.einsum("bth,btm->hm", lc["b_in"], dup).astype(dtype)
        db = dgate @ W[p + "mlp.w_gate.weight"].T + dup @ W[p + "mlp.w_up.weight"].T
        dx_mid, dw2 = _rms_norm_backward(db, lc["x_mid"], W[p + "ln_mlp.weight"], lc["r2"])
        grads[p + "ln_mlp.weight"] = dw2.astype(dtype)
        dx = dx + dx_mid

        # Attention block
        do = dx
        grads[p + "attn.wo.weight"] = np.einsum("btc,bth->ch", lc["ctx"], do).astype(dtype)
        dctx = (do @ W[p + "attn.wo.weight"].T).reshape(B, T, n_h, hd)
        attn, v = lc["attn"], lc["v"]
        v_rep = np.repeat(v, group, axis=2)
        dattn = np.einsum("bthd,bshd->bhts", dctx, v_rep)
        dv_rep = np.einsum("bhts,bthd->bshd", attn, dctx)
        dv = dv_rep.reshape(B, T, n_kv, group, hd).sum(axis=3)
        # softmax backward per row; masked entries have attn == 0 so stay 0
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        k_rep = np.repeat(lc["k_r"], group, axis=2)
        dq_r = np.einsum("bhts,bshd->bthd", dscores, k_rep) * scale
        dk_rep = np.einsum("bhts,bthd->bshd", dscores, lc["q_r"]) * scale
        dk_r = dk_rep.reshape(B, T, n_kv, group, hd).sum(axis=3)
        # rope is an orthogonal rotation; transpose = rotate by -angle
        dq = _apply_rope(dq_r, cos, -sin)
        dk = _apply_rope(dk_r, cos, -sin)
        a = lc["a"]
        grads[p + "attn.wq.weight"] = np.einsum(
            "bth,btd->hd", a, dq.reshape(B, T, n_h * hd)
        ).astype(dtype)
        grads[p + "attn.wk.weight"] = np.einsum(
            "bth,btd->hd", a, dk.reshape(B, T, n_kv * hd)
        ).astype(dtype)
        grads[p + "attn.wv.weight"] = np.einsum(
            "bth,btd->hd", a, dv.reshape(B, T, n_kv * hd)
        ).astype(dtype)
        da = (
            dq.reshape(B, T, n_h * hd) @ W[p + "attn.wq.weight"].T
            + dk.reshape(B, T, n_kv * hd) @ W[p + "attn.wk.weight"].T
            + dv.reshape(B, T, n_kv * hd) @ W[p + "attn.wv.weight"].T
        )
        dx_in, dw1 = _rms_norm_backward(da, lc["x_in"], W[p + "ln_attn.weight"], lc["r1"])
        grads[p + "ln_attn.weight"] = dw1.astype(dtype)
        dx = dx + dx_in

    d_embed = np.zeros_like(W["embed.weight"])
    np.add.at(d_embed, ids.reshape(-1), dx.reshape(-1, H))
    grads["embed.weight"] = d_embed
    return grads
