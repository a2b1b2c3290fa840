"""The one-for-all network: per-modality patch embedders, one shared
Transformer backbone, per-modality masked-autoencoder decoders.

All modalities meet the same backbone parameters; anything per-modality
lives strictly in its embedder or decoder. Forward helpers operate on a
single image (the trainer loops a mini-batch into one graph). Frozen
feature extraction runs off-tape.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as ndt
from .modalities import ModalitySpec
from .ndtensor import Tensor
from .seeds import generator

MASK_TOKEN_STD = 0.02


@dataclass
class ModelDims:
    """Architecture hyperparameters shared by build, checkpoint, and tests."""

    input_size: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    decoder_embed_dim: int = 32
    decoder_depth: int = 2

    def validate(self) -> None:
        if self.input_size % self.patch_size:
            raise ValueError(
                f"input_size {self.input_size} not divisible by patch_size {self.patch_size}"
            )
        for name in ("embed_dim", "decoder_embed_dim"):
            dim = getattr(self, name)
            if dim % self.heads:
                raise ValueError(f"{name} {dim} not divisible by heads {self.heads}")
            if dim % 4:
                raise ValueError(f"{name} {dim} must be divisible by 4 for 2-D sin-cos tables")
        if min(self.depth, self.decoder_depth) < 1:
            raise ValueError("depth and decoder_depth must be >= 1")

    @property
    def grid(self) -> tuple[int, int]:
        g = self.input_size // self.patch_size
        return (g, g)

    @property
    def tokens(self) -> int:
        g = self.input_size // self.patch_size
        return g * g


# ---------------------------------------------------------------------------
# fixed positional tables


def sincos_pos_table(rows: int, cols: int, dim: int) -> np.ndarray:
    """2-D sine-cosine positional table [rows*cols, dim]; not learnable."""
    if dim % 4:
        raise ValueError(f"sin-cos table dim must be divisible by 4, got {dim}")
    half = dim // 2
    omega = 1.0 / 10000.0 ** (np.arange(half // 2, dtype=np.float64) / (half / 2.0))
    ys, xs = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")

    def axis_embed(pos: np.ndarray) -> np.ndarray:
        angles = pos.reshape(-1, 1) * omega
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    table = np.concatenate([axis_embed(ys.ravel()), axis_embed(xs.ravel())], axis=1)
    return table.astype(ndt.default_dtype())


# ---------------------------------------------------------------------------
# patch geometry


def patchify(image, patch_size: int) -> np.ndarray:
    """[h, w, c] -> [n, p*p*c]; row i*cols+j is patch (i, j), channel fastest."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim != 3:
        raise ValueError(f"patchify expects [h, w, c], got shape {arr.shape}")
    h, w, c = arr.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image size {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    out = arr.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p * c)
    return np.ascontiguousarray(out)


def unpatchify(patches, grid: tuple[int, int], patch_size: int, channels: int) -> np.ndarray:
    """Inverse of patchify for a [n, p*p*c] array."""
    arr = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
    gh, gw = grid
    p = patch_size
    out = arr.reshape(gh, gw, p, p, channels).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(out.reshape(gh * p, gw * p, channels))


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class AttentionParams:
    # no key bias: a constant added to every key cancels inside softmax,
    # so its gradient is identically zero and the parameter is dead weight
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


@dataclass
class PatchEmbedder:
    modality: str
    patch_size: int
    channels: int
    weight: Tensor  # [p*p*c, d]
    bias: Tensor  # [d]


@dataclass
class TransformerBackbone:
    embed_dim: int
    heads: int
    blocks: list[BlockParams]
    norm_g: Tensor
    norm_b: Tensor
    pos: Tensor  # fixed [n, d], requires_grad False


@dataclass
class ModalityDecoder:
    modality: str
    proj_w: Tensor  # [d, d_dec]
    proj_b: Tensor
    mask_token: Tensor  # [d_dec]
    blocks: list[BlockParams]
    norm_g: Tensor
    norm_b: Tensor
    head_w: Tensor  # [d_dec, p*p*c]
    head_b: Tensor
    pos: Tensor  # fixed [n, d_dec]


@dataclass
class TokenSequence:
    tokens: Tensor  # [n, d]
    grid: tuple[int, int]
    visible_idx: np.ndarray
    masked_idx: np.ndarray

    def __post_init__(self):
        n = self.tokens.shape[0]
        if self.grid[0] * self.grid[1] != n:
            raise ValueError(f"grid {self.grid} does not cover {n} tokens")
        combined = np.concatenate([self.visible_idx, self.masked_idx])
        if len(combined) != n or len(np.unique(combined)) != n:
            raise ValueError("visible_idx and masked_idx must partition the token range")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


@dataclass
class OfaNet:
    dims: ModelDims
    embedders: dict[str, PatchEmbedder]
    backbone: TransformerBackbone
    decoders: dict[str, ModalityDecoder] = field(default_factory=dict)

    @property
    def modalities(self) -> list[str]:
        return sorted(self.embedders)


# ---------------------------------------------------------------------------
# construction


def _fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    # U(+-1/sqrt(fan_in)): keeps gradient scale healthy for very tall/wide
    # layers (a 224-band reconstruction head barely trains under glorot)
    limit = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, shape)


def _init_param(seed: int, name: str, shape, kind: str) -> Tensor:
    rng = generator("init", seed, name)
    if kind == "weight":
        data = _fan_in_uniform(rng, shape[0], shape)
    elif kind == "zeros":
        data = np.zeros(shape)
    elif kind == "ones":
        data = np.ones(shape)
    elif kind == "token":
        data = rng.normal(0.0, MASK_TOKEN_STD, shape)
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    return Tensor(np.asarray(data, dtype=ndt.default_dtype()), requires_grad=True)


def _init_block(seed: int, prefix: str, width: int) -> BlockParams:
    def w(name, shape):
        return _init_param(seed, f"{prefix}.{name}", shape, "weight")

    def z(name, shape):
        return _init_param(seed, f"{prefix}.{name}", shape, "zeros")

    attn = AttentionParams(
        wq=w("attn.wq", (width, width)),
        bq=z("attn.bq", (width,)),
        wk=w("attn.wk", (width, width)),
        wv=w("attn.wv", (width, width)),
        bv=z("attn.bv", (width,)),
        wo=w("attn.wo", (width, width)),
        bo=z("attn.bo", (width,)),
    )
    return BlockParams(
        ln1_g=_init_param(seed, f"{prefix}.ln1.gamma", (width,), "ones"),
        ln1_b=z("ln1.beta", (width,)),
        attn=attn,
        ln2_g=_init_param(seed, f"{prefix}.ln2.gamma", (width,), "ones"),
        ln2_b=z("ln2.beta", (width,)),
        mlp_w1=w("mlp.w1", (width, 4 * width)),
        mlp_b1=z("mlp.b1", (4 * width,)),
        mlp_w2=w("mlp.w2", (4 * width, width)),
        mlp_b2=z("mlp.b2", (width,)),
    )


def build_ofanet(dims: ModelDims, specs: list[ModalitySpec], seed: int) -> OfaNet:
    """Fresh net for the given modalities; init depends only on (seed, name),
    never on registration order or on which other modalities are present."""
    dims.validate()
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate modalities in build list: {ids}")
    gh, gw = dims.grid
    ppc = dims.patch_size * dims.patch_size

    embedders = {}
    decoders = {}
    for spec in specs:
        d_in = ppc * spec.channels
        embedders[spec.id] = PatchEmbedder(
            modality=spec.id,
            patch_size=dims.patch_size,
            channels=spec.channels,
            weight=_init_param(seed, f"embedder.{spec.id}.weight", (d_in, dims.embed_dim), "weight"),
            bias=_init_param(seed, f"embedder.{spec.id}.bias", (dims.embed_dim,), "zeros"),
        )
        dd = dims.decoder_embed_dim
        decoders[spec.id] = ModalityDecoder(
            modality=spec.id,
            proj_w=_init_param(seed, f"decoder.{spec.id}.proj.weight", (dims.embed_dim, dd), "weight"),
            proj_b=_init_param(seed, f"decoder.{spec.id}.proj.bias", (dd,), "zeros"),
            mask_token=_init_param(seed, f"decoder.{spec.id}.mask_token", (dd,), "token"),
            blocks=[
                _init_block(seed, f"decoder.{spec.id}.block{i}", dd)
                for i in range(dims.decoder_depth)
            ],
            norm_g=_init_param(seed, f"decoder.{spec.id}.norm.gamma", (dd,), "ones"),
            norm_b=_init_param(seed, f"decoder.{spec.id}.norm.beta", (dd,), "zeros"),
            head_w=_init_param(seed, f"decoder.{spec.id}.head.weight", (dd, d_in), "weight"),
            head_b=_init_param(seed, f"decoder.{spec.id}.head.bias", (d_in,), "zeros"),
            pos=Tensor(sincos_pos_table(gh, gw, dd)),
        )

    backbone = TransformerBackbone(
        embed_dim=dims.embed_dim,
        heads=dims.heads,
        blocks=[
            _init_block(seed, f"backbone.block{i}", dims.embed_dim) for i in range(dims.depth)
        ],
        norm_g=_init_param(seed, "backbone.norm.gamma", (dims.embed_dim,), "ones"),
        norm_b=_init_param(seed, "backbone.norm.beta", (dims.embed_dim,), "zeros"),
        pos=Tensor(sincos_pos_table(gh, gw, dims.embed_dim)),
    )
    return OfaNet(dims=dims, embedders=embedders, backbone=backbone, decoders=decoders)


# ---------------------------------------------------------------------------
# parameter traversal


def _block_slots(prefix: str, bp: BlockParams):
    a = bp.attn
    yield f"{prefix}.ln1.gamma", bp, "ln1_g"
    yield f"{prefix}.ln1.beta", bp, "ln1_b"
    for key in ("q", "k", "v", "o"):
        yield f"{prefix}.attn.w{key}", a, f"w{key}"
        if key != "k":
            yield f"{prefix}.attn.b{key}", a, f"b{key}"
    yield f"{prefix}.ln2.gamma", bp, "ln2_g"
    yield f"{prefix}.ln2.beta", bp, "ln2_b"
    yield f"{prefix}.mlp.w1", bp, "mlp_w1"
    yield f"{prefix}.mlp.b1", bp, "mlp_b1"
    yield f"{prefix}.mlp.w2", bp, "mlp_w2"
    yield f"{prefix}.mlp.b2", bp, "mlp_b2"


def _param_slots(net: OfaNet):
    """(name, holder, attr) for every learnable tensor, in canonical order."""
    for mid in sorted(net.embedders):
        emb = net.embedders[mid]
        yield f"embedder.{mid}.weight", emb, "weight"
        yield f"embedder.{mid}.bias", emb, "bias"
    for i, bp in enumerate(net.backbone.blocks):
        yield from _block_slots(f"backbone.block{i}", bp)
    yield "backbone.norm.gamma", net.backbone, "norm_g"
    yield "backbone.norm.beta", net.backbone, "norm_b"
    for mid in sorted(net.decoders):
        dec = net.decoders[mid]
        yield f"decoder.{mid}.proj.weight", dec, "proj_w"
        yield f"decoder.{mid}.proj.bias", dec, "proj_b"
        yield f"decoder.{mid}.mask_token", dec, "mask_token"
        for i, bp in enumerate(dec.blocks):
            yield from _block_slots(f"decoder.{mid}.block{i}", bp)
        yield f"decoder.{mid}.norm.gamma", dec, "norm_g"
        yield f"decoder.{mid}.norm.beta", dec, "norm_b"
        yield f"decoder.{mid}.head.weight", dec, "head_w"
        yield f"decoder.{mid}.head.bias", dec, "head_b"


def named_parameters(net: OfaNet) -> list[tuple[str, Tensor]]:
    return [(name, getattr(holder, attr)) for name, holder, attr in _param_slots(net)]


def set_parameter(net: OfaNet, name: str, tensor: Tensor) -> None:
    for slot_name, holder, attr in _param_slots(net):
        if slot_name == name:
            current = getattr(holder, attr)
            if current.shape != tensor.shape:
                raise ValueError(
                    f"parameter {name} has shape {current.shape}, got {tensor.shape}"
                )
            setattr(holder, attr, tensor)
            return
    raise KeyError(f"unknown parameter {name!r}")


def rebind_parameters(
    net: OfaNet, arrays: dict[str, np.ndarray], require_all: bool = True
) -> None:
    """Replace named parameters with fresh tensors (e.g. an optimizer step).

    With require_all, the array names must cover the net exactly (checkpoint
    load); otherwise any subset is accepted (round-robin training steps only
    touch the active modality's embedder/decoder plus the backbone).
    """
    slots = {name: (holder, attr) for name, holder, attr in _param_slots(net)}
    if require_all and set(slots) != set(arrays):
        missing = sorted(set(slots) ^ set(arrays))
        raise ValueError(f"parameter set mismatch, offending names: {missing[:5]}")
    for name, arr in arrays.items():
        if name not in slots:
            raise KeyError(f"unknown parameter {name!r}")
        holder, attr = slots[name]
        current = getattr(holder, attr)
        if current.shape != tuple(arr.shape):
            raise ValueError(f"parameter {name} has shape {current.shape}, got {arr.shape}")
        setattr(holder, attr, Tensor(arr, requires_grad=True))


def parameter_count(net: OfaNet) -> int:
    return sum(t.size for _, t in named_parameters(net))


def expected_parameter_count(dims: ModelDims, channel_counts: list[int]) -> int:
    """Closed form the implementation must reproduce exactly."""

    def block(width: int) -> int:
        # 2 layernorms (2w each) + attn (4 w^2 projections, q/v/o biases)
        # + mlp (w*4w + 4w + 4w*w + w)
        return 12 * width * width + 12 * width

    p2 = dims.patch_size * dims.patch_size
    d, dd = dims.embed_dim, dims.decoder_embed_dim
    total = 0
    for c in channel_counts:
        total += p2 * c * d + d  # embedder
        total += d * dd + dd  # decoder projection
        total += dd  # mask token
        total += dims.decoder_depth * block(dd) + 2 * dd  # decoder blocks + final norm
        total += dd * (p2 * c) + p2 * c  # reconstruction head
    total += dims.depth * block(d) + 2 * d  # shared backbone + final norm
    return total


def param_hash(net: OfaNet, prefix: str = "") -> str:
    """sha256 over (name, bytes) of parameters matching prefix, sorted order."""
    h = hashlib.sha256()
    for name, tensor in named_parameters(net):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(np.ascontiguousarray(tensor.data).tobytes())
    return h.hexdigest()


def backbone_hash(net: OfaNet) -> str:
    return param_hash(net, "backbone.")


# ---------------------------------------------------------------------------
# forward pieces


def _attention(x: Tensor, ap: AttentionParams, heads: int) -> Tensor:
    """Multi-head self-attention over (..., n, d); heads split the last axis."""
    *lead, n, d = x.shape
    dh = d // heads
    split = (*lead, n, heads, dh)
    # (..., n, H, dh) -> (..., H, n, dh)
    nd = len(split)
    to_heads = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)

    def heads_of(t: Tensor) -> Tensor:
        return ndt.permute(ndt.reshape(t, split), to_heads)

    q = heads_of(ndt.add(ndt.matmul(x, ap.wq), ap.bq))
    k = heads_of(ndt.matmul(x, ap.wk))
    v = heads_of(ndt.add(ndt.matmul(x, ap.wv), ap.bv))
    att = ndt.mul(ndt.matmul(q, ndt.transpose(k)), 1.0 / math.sqrt(dh))
    weights = ndt.softmax(att, axis=-1)
    merged = ndt.reshape(ndt.permute(ndt.matmul(weights, v), to_heads), (*lead, n, d))
    return ndt.add(ndt.matmul(merged, ap.wo), ap.bo)


def _block_forward(x: Tensor, bp: BlockParams, heads: int) -> Tensor:
    h = ndt.layernorm(x, bp.ln1_g, bp.ln1_b)
    x = ndt.add(x, _attention(h, bp.attn, heads))
    h = ndt.layernorm(x, bp.ln2_g, bp.ln2_b)
    h = ndt.add(ndt.matmul(ndt.gelu(ndt.add(ndt.matmul(h, bp.mlp_w1), bp.mlp_b1)), bp.mlp_w2), bp.mlp_b2)
    return ndt.add(x, h)


def _image_array(image) -> np.ndarray:
    return image.data if isinstance(image, Tensor) else np.asarray(image)


def embed(net: OfaNet, image, modality: str) -> TokenSequence:
    """Patchify, project with the modality's embedder, add positions."""
    if modality not in net.embedders:
        raise KeyError(f"no embedder for modality {modality!r}; have {net.modalities}")
    emb = net.embedders[modality]
    arr = _image_array(image)
    if arr.ndim != 3 or arr.shape[2] != emb.channels:
        raise ValueError(
            f"{modality} expects [h, w, {emb.channels}] input, got shape {arr.shape}"
        )
    if arr.shape[0] != net.dims.input_size or arr.shape[1] != net.dims.input_size:
        raise ValueError(
            f"input must be resized to {net.dims.input_size}px first, got {arr.shape[:2]}"
        )
    patches = Tensor(patchify(arr, emb.patch_size))
    tokens = ndt.add(ndt.add(ndt.matmul(patches, emb.weight), emb.bias), net.backbone.pos)
    n = tokens.shape[0]
    return TokenSequence(
        tokens=tokens,
        grid=net.dims.grid,
        visible_idx=np.arange(n, dtype=np.intp),
        masked_idx=np.array([], dtype=np.intp),
    )


def random_mask(seq: TokenSequence, ratio: float, rng_key: int) -> TokenSequence:
    """Uniform random split: round(ratio*n) masked, the rest visible."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    n = seq.n_tokens
    m = int(round(ratio * n))
    if m == 0 or m == n:
        raise ValueError(f"mask ratio {ratio} leaves {'no masked' if m == 0 else 'no visible'} tokens for n={n}")
    perm = np.random.Generator(np.random.PCG64(rng_key)).permutation(n).astype(np.intp)
    return TokenSequence(
        tokens=seq.tokens, grid=seq.grid, visible_idx=perm[m:], masked_idx=perm[:m]
    )


def encode(net: OfaNet, seq: TokenSequence) -> Tensor:
    """Shared backbone over the visible tokens only: [n_visible, d]."""
    x = ndt.gather_rows(seq.tokens, seq.visible_idx)
    for bp in net.backbone.blocks:
        x = _block_forward(x, bp, net.backbone.heads)
    return ndt.layernorm(x, net.backbone.norm_g, net.backbone.norm_b)


def decode(net: OfaNet, latent: Tensor, seq: TokenSequence, modality: str) -> Tensor:
    """Full-length reconstruction [n, p*p*c] from visible latents."""
    if modality not in net.decoders:
        raise KeyError(f"no decoder for modality {modality!r}; have {sorted(net.decoders)}")
    dec = net.decoders[modality]
    dd = dec.mask_token.shape[0]
    lat = ndt.add(ndt.matmul(latent, dec.proj_w), dec.proj_b)
    n_masked = len(seq.masked_idx)
    tile = ndt.add(Tensor(np.zeros((n_masked, dd))), ndt.reshape(dec.mask_token, (1, dd)))
    combined = ndt.concat([lat, tile], axis=0)
    order = np.concatenate([seq.visible_idx, seq.masked_idx])
    restore = np.argsort(order).astype(np.intp)
    x = ndt.add(ndt.gather_rows(combined, restore), dec.pos)
    for bp in dec.blocks:
        x = _block_forward(x, bp, net.backbone.heads)
    x = ndt.layernorm(x, dec.norm_g, dec.norm_b)
    return ndt.add(ndt.matmul(x, dec.head_w), dec.head_b)


def mim_loss(pred: Tensor, target_patches, masked_idx) -> Tensor:
    """MSE over masked patch rows only; visible rows contribute exactly zero."""
    masked_idx = np.asarray(masked_idx, dtype=np.intp)
    if masked_idx.size == 0:
        raise ValueError("mim_loss needs at least one masked row")
    target = target_patches if isinstance(target_patches, Tensor) else Tensor(target_patches)
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {pred.shape} != target shape {target.shape}")
    pred_rows = ndt.gather_rows(pred, masked_idx)
    target_rows = Tensor(target.data[masked_idx])
    return ndt.mse(pred_rows, target_rows)


def mim_forward(net: OfaNet, image, modality: str, ratio: float, rng_key: int) -> Tensor:
    """One masked-reconstruction pass; returns the scalar loss."""
    seq = random_mask(embed(net, image, modality), ratio, rng_key)
    latent = encode(net, seq)
    pred = decode(net, latent, seq, modality)
    target = patchify(_image_array(image), net.dims.patch_size)
    return mim_loss(pred, target, seq.masked_idx)


def mim_forward_batch(net: OfaNet, images: np.ndarray, modality: str, ratio: float, rng_keys) -> Tensor:
    """Stacked equivalent of averaging mim_forward over a mini-batch.

    images [b, h, w, c]; rng_keys gives one mask key per sample and draws the
    same splits the per-sample path would. One graph instead of b graphs.
    """
    if modality not in net.embedders:
        raise KeyError(f"no embedder for modality {modality!r}; have {net.modalities}")
    emb = net.embedders[modality]
    dec = net.decoders[modality]
    b = images.shape[0]
    if len(rng_keys) != b:
        raise ValueError(f"need one rng key per sample: {len(rng_keys)} keys, batch {b}")
    p = net.dims.patch_size
    n = net.dims.tokens
    m = int(round(ratio * n))
    if not 0.0 < ratio < 1.0 or m == 0 or m == n:
        raise ValueError(f"mask ratio {ratio} degenerate for n={n}")

    targets = np.stack([patchify(images[i], p) for i in range(b)])  # [b, n, ppc]
    perms = np.stack(
        [np.random.Generator(np.random.PCG64(key)).permutation(n) for key in rng_keys]
    ).astype(np.intp)
    masked, visible = perms[:, :m], perms[:, m:]
    restore = np.argsort(np.concatenate([visible, masked], axis=1), axis=1).astype(np.intp)

    tokens = ndt.add(ndt.add(ndt.matmul(Tensor(targets), emb.weight), emb.bias), net.backbone.pos)
    x = ndt.gather_rows_batch(tokens, visible)
    for bp in net.backbone.blocks:
        x = _block_forward(x, bp, net.backbone.heads)
    latent = ndt.layernorm(x, net.backbone.norm_g, net.backbone.norm_b)

    dd = dec.mask_token.shape[0]
    lat = ndt.add(ndt.matmul(latent, dec.proj_w), dec.proj_b)
    tile = ndt.add(Tensor(np.zeros((b, m, dd))), ndt.reshape(dec.mask_token, (1, 1, dd)))
    full = ndt.gather_rows_batch(ndt.concat([lat, tile], axis=1), restore)
    x = ndt.add(full, dec.pos)
    for bp in dec.blocks:
        x = _block_forward(x, bp, net.backbone.heads)
    x = ndt.layernorm(x, dec.norm_g, dec.norm_b)
    pred = ndt.add(ndt.matmul(x, dec.head_w), dec.head_b)  # [b, n, ppc]

    pred_rows = ndt.gather_rows_batch(pred, masked)
    target_rows = np.take_along_axis(targets, masked[:, :, None], axis=1)
    return ndt.mse(pred_rows, Tensor(target_rows))


def forward_tokens(net: OfaNet, image, modality: str) -> Tensor:
    """Frozen per-token features [n, d]; decoders unused, nothing on tape."""
    with ndt.no_grad():
        seq = embed(net, image, modality)
        return encode(net, seq)


def forward_features(net: OfaNet, image, modality: str) -> Tensor:
    """Frozen pooled features [d]: token features averaged over positions."""
    with ndt.no_grad():
        return ndt.tmean(forward_tokens(net, image, modality), axis=0)
