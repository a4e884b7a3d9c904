"""A miniature query-based 3D detector on the numpy tape.

Queries are laid out as [ray group 0 | ray group 1 | ... | object queries],
matching :func:`beamdn.masking.build_attention_mask`.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..beta import SeededRng
from ..masking import AttentionMask, build_attention_mask
from . import tape as T
from .encoding import PE_DIM, denormalize_points, normalize_points

DEFAULT_RANGE = (-30.0, 30.0, -30.0, 30.0, -3.0, 3.0)
BOX_DIM = 8  # (x, y, z) normalised, log (w, h, l), sin yaw, cos yaw
PRIOR_PROB = 0.01
REF_EPS = 1e-3


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    embed_dim: int = 32
    n_heads: int = 2
    n_layers: int = 2
    n_obj_queries: int = 24
    hidden_dim: int = 64
    perception_range: tuple = DEFAULT_RANGE
    n_classes: int = 3
    view_origin: tuple = (0.0, 0.0, 1.6)  # queries also embed their direction as seen from here

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")
        r = tuple(float(x) for x in self.perception_range)
        if len(r) != 6 or not all(r[2 * i] < r[2 * i + 1] for i in range(3)):
            raise ValueError(f"degenerate perception range {self.perception_range}")
        object.__setattr__(self, "perception_range", r)
        o = tuple(float(x) for x in self.view_origin)
        if len(o) != 3:
            raise ValueError("view_origin must be a 3-vector")
        object.__setattr__(self, "view_origin", o)

    @property
    def content_dim(self) -> int:
        return 1 + self.n_classes + 4

    def digest(self) -> bytes:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


@dataclass
class HeadOutput:
    class_logits: T.Var  # (n, C)
    box: T.Var  # (n, BOX_DIM)

    def __len__(self):
        return self.class_logits.value.shape[0]

    def rows(self, sl) -> "HeadOutput":
        return HeadOutput(self.class_logits[sl], self.box[sl])


def box_target(box, prange) -> np.ndarray:
    c = normalize_points(box.center, prange)[0]
    return np.r_[c, np.log(box.size), math.sin(box.yaw), math.cos(box.yaw)]


def decode_boxes(box: np.ndarray, prange) -> dict:
    """Head box rows -> world centers, positive sizes (w, h, l) and yaw."""
    box = np.asarray(box)
    return {
        "center": denormalize_points(box[:, :3], prange),
        "size": np.exp(box[:, 3:6]),
        "yaw": np.arctan2(box[:, 6], box[:, 7]),
    }


def anchor_layout(n: int, half_width: float = 20.0, z: float = 0.0) -> np.ndarray:
    """n ground-level points on a near-square grid over [-half_width, half_width]^2,
    skipping the cell at the rig when the grid has a spare slot."""
    side = math.ceil(math.sqrt(n))
    if side * side - n >= 1 and side % 2 == 1:
        centre = (side * side) // 2
    else:
        centre = -1
    ticks = (np.arange(side) + 0.5) / side * 2.0 * half_width - half_width
    pts = [(x, y, z) for i, y in enumerate(ticks) for j, x in enumerate(ticks) if i * side + j != centre]
    return np.array(pts[:n], dtype=np.float64)


def _glorot(rng: SeededRng, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return std * rng.normal(fan_in * fan_out).reshape(fan_in, fan_out)


def init_params(cfg: DecoderConfig, rng: SeededRng) -> dict[str, np.ndarray]:
    D, H, C = cfg.embed_dim, cfg.hidden_dim, cfg.n_classes
    p: dict[str, np.ndarray] = {}

    def linear(name, fan_in, fan_out, bias=0.0):
        p[f"{name}.w"] = _glorot(rng, fan_in, fan_out)
        p[f"{name}.b"] = np.full(fan_out, bias, dtype=np.float64)

    # anchors live in logit space so sigmoid keeps them inside the range
    p["anchors"] = ref_logits(normalize_points(anchor_layout(cfg.n_obj_queries), cfg.perception_range))
    linear("qenc.0", PE_DIM, H)
    linear("qenc.1", H, D)
    linear("tok_content", cfg.content_dim, D)
    linear("tok_pos.0", PE_DIM, H)
    linear("tok_pos.1", H, D)
    for li in range(cfg.n_layers):
        for blk in ("sa", "ca"):
            for proj in ("q", "k", "v", "o"):
                linear(f"l{li}.{blk}.{proj}", D, D)
        # per-head sharpness of the angular locality bias, log-spaced from 20 to 100
        p[f"l{li}.ca.sharp"] = np.log(np.geomspace(20.0, 100.0, cfg.n_heads)).reshape(-1, 1, 1)
        # cross-attention starts as a similarity between query and key embeddings
        p[f"l{li}.ca.k.w"] = p[f"l{li}.ca.q.w"].copy()
        linear(f"l{li}.ffn.0", D, H)
        linear(f"l{li}.ffn.1", H, D)
        for ln in ("ln1", "ln2", "ln3"):
            p[f"l{li}.{ln}.g"] = np.ones(D)
            p[f"l{li}.{ln}.b"] = np.zeros(D)
    linear("cls", D, C, bias=-math.log((1.0 - PRIOR_PROB) / PRIOR_PROB))
    linear("box", D, BOX_DIM)
    p["box.w"] *= 0.01  # start every query at its reference point
    p["box.b"][3:6] = 0.5 * math.log(6.0)  # geometric mid of the 1..6 m size prior
    p["box.b"][7] = 1.0
    return p


def _linear(P, name, x):
    return x @ P[f"{name}.w"] + P[f"{name}.b"]


def mlp2(P, name, x):
    return _linear(P, f"{name}.1", T.silu(_linear(P, f"{name}.0", x)))


def view_direction(points_norm: T.Var, cfg: DecoderConfig) -> T.Var:
    """Unit viewing direction of normalised points as seen from ``cfg.view_origin``."""
    lo = np.array(cfg.perception_range[0::2])
    hi = np.array(cfg.perception_range[1::2])
    rel = T.add(T.mul(points_norm, hi - lo), lo - np.array(cfg.view_origin))
    inv = T.power(T.sum_(T.mul(rel, rel), axis=1, keepdims=True), -0.5)
    return T.mul(rel, inv)


def encode_query(P, points_norm, cfg: DecoderConfig, direction: T.Var | None = None) -> T.Var:
    """Normalised 3D points -> query embeddings.

    The Fourier-lifted point goes through a 2-layer MLP; to that is added the
    token direction MLP applied to the point's viewing direction from
    ``cfg.view_origin``, so queries and feature tokens share one direction code.
    ``points_norm`` may be an array or a Var (trained anchors).
    """
    if not isinstance(points_norm, T.Var):
        points_norm = P["qenc.0.w"].tape.const(np.asarray(points_norm, dtype=np.float64).reshape(-1, 3))
    if direction is None:
        direction = view_direction(points_norm, cfg)
    return T.add(mlp2(P, "qenc", _fourier_var(points_norm)), mlp2(P, "tok_pos", _fourier_var(direction)))


def multi_head_attention(P, name, q_in, k_in, v_in, n_heads, blocked=None, bias=None, return_attn=False):
    n, D = q_in.shape
    m = k_in.shape[0]
    dh = D // n_heads
    q = T.permute(T.reshape(_linear(P, f"{name}.q", q_in), (n, n_heads, dh)), (1, 0, 2))
    k = T.permute(T.reshape(_linear(P, f"{name}.k", k_in), (m, n_heads, dh)), (1, 2, 0))
    v = T.permute(T.reshape(_linear(P, f"{name}.v", v_in), (m, n_heads, dh)), (1, 0, 2))
    logits = T.mul(q @ k, 1.0 / math.sqrt(dh))
    if bias is not None:
        logits = logits + bias
    attn = T.masked_softmax(logits, blocked)
    out = _linear(P, f"{name}.o", T.reshape(T.permute(attn @ v, (1, 0, 2)), (n, D)))
    return (out, attn) if return_attn else out


def token_streams(P, content: np.ndarray, position):
    """(keys, values) for cross-attention. Both are projected content plus the
    direction embedding, so attended values carry where the token looks.
    ``position`` is the raw direction PE or its already-embedded Var."""
    tape = P["tok_content.w"].tape
    feat = _linear(P, "tok_content", tape.const(content))
    pos = position if isinstance(position, T.Var) else mlp2(P, "tok_pos", tape.const(position))
    tok = feat + pos
    return tok, tok


def ref_logits(refs_norm: np.ndarray) -> np.ndarray:
    r = np.clip(np.asarray(refs_norm, dtype=np.float64), REF_EPS, 1.0 - REF_EPS)
    return np.log(r) - np.log1p(-r)


def decoder_forward(
    P, obj_embeds, ray_embeds, refs, tokens, mask: AttentionMask, cfg: DecoderConfig, directions=None, origins=None
) -> HeadOutput:
    """Masked self-attention -> cross-attention -> FFN, ``n_layers`` times, then shared heads.

    ``ray_embeds`` (may be None) come first in the query layout, then
    ``obj_embeds``. ``refs`` holds the logit-space reference point of every
    query in that same order (a Var when the references are trained); box
    centers are decoded as sigmoid(offset + refs). ``tokens`` is a
    (keys, values) pair. ``directions`` is an optional (query_dirs, token_dirs)
    pair of unit vectors; when given, cross-attention logits get the bias
    exp(sharp_h) * (cos angle - 1), a learned per-head angular locality prior.
    With both ``directions`` and per-token camera ``origins`` the box centers
    come from :func:`centroid_center` instead.
    """
    parts = [e for e in (ray_embeds, obj_embeds) if e is not None]
    pos = T.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    n = pos.shape[0]
    if mask.n_total != n:
        raise ShapeError(f"mask covers {mask.n_total} queries, got {n}")
    if tuple(refs.shape) != (n, 3):
        raise ShapeError(f"reference points shape {tuple(refs.shape)} != ({n}, 3)")
    keys, values = tokens
    if keys.shape[-1] != cfg.embed_dim:
        raise ShapeError("token width does not match embed_dim")
    blocked = mask.blocked if mask.blocked.any() else None
    cos_m1 = None
    if directions is not None:
        qdir, tdir = directions
        cos_m1 = T.sub(qdir @ np.ascontiguousarray(np.asarray(tdir).T), 1.0)
    x = pos
    attn = None
    for li in range(cfg.n_layers):
        qk = x + pos
        x = T.layer_norm(
            x + multi_head_attention(P, f"l{li}.sa", qk, qk, x, cfg.n_heads, blocked),
            P[f"l{li}.ln1.g"],
            P[f"l{li}.ln1.b"],
        )
        ca, attn = multi_head_attention(
            P,
            f"l{li}.ca",
            x + pos,
            keys,
            values,
            cfg.n_heads,
            bias=None if cos_m1 is None else T.mul(T.exp(P[f"l{li}.ca.sharp"]), cos_m1),
            return_attn=True,
        )
        x = T.layer_norm(x + ca, P[f"l{li}.ln2.g"], P[f"l{li}.ln2.b"])
        x = T.layer_norm(x + mlp2(P, f"l{li}.ffn", x), P[f"l{li}.ln3.g"], P[f"l{li}.ln3.b"])
    logits = _linear(P, "cls", x)
    raw = _linear(P, "box", x)
    if directions is None or origins is None:
        center = T.sigmoid(raw[:, 0:3] + refs)
    else:
        weights = T.mul(T.sum_(attn, axis=0), 1.0 / cfg.n_heads)
        center = centroid_center(raw, refs, weights @ directions[1], weights @ origins, cfg)
    box = T.concat([center, raw[:, 3:8]], axis=1)
    return HeadOutput(logits, box)


def centroid_center(raw: T.Var, refs, look: T.Var, origin: T.Var, cfg: DecoderConfig) -> T.Var:
    """Normalised box centers read out along the attended viewing direction.

    ``look`` and ``origin`` are the attention-weighted token direction and
    camera center of each query (last layer, heads averaged). The ground-plane
    center sits at range r0 * exp(raw0) from ``origin``, on the horizontal
    part of ``look`` rotated by raw1 radians; r0 is the reference point's
    range from ``origin``. Height stays sigmoid(raw2 + ref_z).
    """
    lo = np.array(cfg.perception_range[0::2])
    hi = np.array(cfg.perception_range[1::2])
    rel = T.add(T.mul(T.sigmoid(refs), hi - lo), lo) - origin
    rel_xy = rel[:, 0:2]
    r0 = T.power(T.sum_(T.mul(rel_xy, rel_xy), axis=1, keepdims=True), 0.5)
    look_xy = look[:, 0:2]
    u = T.mul(look_xy, T.power(T.sum_(T.mul(look_xy, look_xy), axis=1, keepdims=True), -0.5))
    ca, sa = T.cos(raw[:, 1:2]), T.sin(raw[:, 1:2])
    ux, uy = u[:, 0:1], u[:, 1:2]
    r = T.mul(r0, T.exp(raw[:, 0:1]))
    x = T.mul(r, ux * ca - uy * sa) + origin[:, 0:1]
    y = T.mul(r, ux * sa + uy * ca) + origin[:, 1:2]
    cx = T.mul(T.sub(x, lo[0]), 1.0 / (hi[0] - lo[0]))
    cy = T.mul(T.sub(y, lo[1]), 1.0 / (hi[1] - lo[1]))
    cz = T.sigmoid(raw[:, 2:3] + refs[:, 2:3])
    return T.concat([cx, cy, cz], axis=1)


@dataclass
class ForwardResult:
    tape: T.Tape
    params: dict[str, T.Var]
    output: HeadOutput
    n_ray: int
    mask: AttentionMask
    ray_embeds: T.Var | None = None
    obj_embeds: T.Var | None = None
    extra: dict = field(default_factory=dict)

    @property
    def obj(self) -> HeadOutput:
        return self.output.rows(slice(self.n_ray, None))

    @property
    def ray(self) -> HeadOutput:
        return self.output.rows(slice(0, self.n_ray))


class ToyDetector:
    def __init__(self, cfg: DecoderConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, SeededRng(seed, stream=0xD37))

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ToyDetector":
        return ToyDetector(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def anchors_norm(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.params["anchors"]))

    def bind(self, tape: T.Tape) -> dict[str, T.Var]:
        """Parameter leaves on ``tape``; share one binding across a batch."""
        return {k: tape.leaf(v, name=k) for k, v in self.params.items()}

    def token_positions(self, P, position: np.ndarray) -> T.Var:
        return mlp2(P, "tok_pos", P["tok_pos.0.w"].tape.const(position))

    def forward(
        self,
        tokens,
        ray_points=None,
        group_sizes=(),
        tape=None,
        ray_embed_override=None,
        bound=None,
        token_pos=None,
    ) -> ForwardResult:
        """Run the decoder on one scene.

        ``tokens`` is a :class:`~beamdn.scenes.TokenGrid`; ``ray_points`` are
        world-frame reference points of the ray queries (grouped in order),
        with ``group_sizes`` giving the group boundaries. ``bound`` and
        ``token_pos`` let several scenes of one batch share a tape, the
        parameter leaves and the (rig-only) token position branch.
        """
        if bound is None:
            tape = tape or T.Tape()
            P = self.bind(tape)
        else:
            P = bound
            tape = P["anchors"].tape
        cfg = self.cfg
        anchors = T.sigmoid(P["anchors"])
        obj_dirs = view_direction(anchors, cfg)
        obj_embeds = encode_query(P, anchors, cfg, obj_dirs)
        qdirs = obj_dirs
        ray_embeds = None
        refs = P["anchors"]
        n_ray = 0
        if ray_points is not None and len(ray_points):
            ray_norm = normalize_points(ray_points, cfg.perception_range)
            ray_dirs = view_direction(tape.const(ray_norm), cfg)
            qdirs = T.concat([ray_dirs, obj_dirs], axis=0)
            ray_embeds = encode_query(P, ray_norm, cfg, ray_dirs) if ray_embed_override is None else ray_embed_override(tape, ray_norm)
            refs = T.concat([tape.const(ref_logits(ray_norm)), refs], axis=0)
            n_ray = len(ray_norm)
        mask = build_attention_mask(cfg.n_obj_queries, group_sizes if n_ray else ())
        if mask.n_ray != n_ray:
            raise ShapeError(f"group sizes cover {mask.n_ray} ray queries, got {n_ray}")
        if token_pos is None:
            token_pos = self.token_positions(P, tokens.position)
        keys, values = token_streams(P, tokens.content, token_pos)
        # the first three position-code channels are the raw unit ray direction
        directions = (qdirs, tokens.position[:, :3])
        out = decoder_forward(P, obj_embeds, ray_embeds, refs, (keys, values), mask, cfg, directions, tokens.origin)
        return ForwardResult(tape, P, out, n_ray, mask, ray_embeds, obj_embeds)


def _fourier_var(x: T.Var) -> T.Var:
    """Differentiable version of :func:`fourier` (anchors are trained)."""
    freqs = np.pi * (2.0 ** np.arange(PE_DIM // 6))
    n = x.shape[0]
    ang = T.reshape(T.mul(T.reshape(x, (n, 3, 1)), freqs), (n, -1))
    return T.concat([x, T.sin(ang), T.cos(ang)], axis=1)



MODEL_MAGIC = b"BEAMDNM\x00"
MODEL_VERSION = 1
_HEADER = struct.Struct("<8sI32sQI")


class ModelFormatError(ValueError):
    """Unreadable model file, or one written for a different config or format version."""


def save_model(model: ToyDetector, path) -> None:
    """Flat little-endian binary: header (magic, version, config digest, parameter
    count, tensor count), then per tensor its name, shape and float64 data, in
    sorted name order."""
    names = sorted(model.params)
    chunks = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.cfg.digest(), model.n_params(), len(names))]
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_model(path, cfg: DecoderConfig) -> ToyDetector:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ModelFormatError(f"{path}: truncated header")
    magic, version, digest, count, n_tensors = _HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, expected {MODEL_VERSION}")
    if digest != cfg.digest():
        raise ModelFormatError(f"{path}: written for a different decoder config")
    expected = init_params(cfg, SeededRng(0, stream=0xD37))
    params = {}
    off = _HEADER.size
    try:
        for _ in range(n_tensors):
            (n,) = struct.unpack_from("<H", blob, off)
            name = blob[off + 2 : off + 2 + n].decode()
            off += 2 + n
            (ndim,) = struct.unpack_from("<B", blob, off)
            shape = struct.unpack_from(f"<{ndim}Q", blob, off + 1)
            off += 1 + 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(blob):
                raise ModelFormatError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt tensor table ({exc})") from exc
    if off != len(blob):
        raise ModelFormatError(f"{path}: trailing bytes")
    if set(params) != set(expected) or any(params[k].shape != expected[k].shape for k in expected):
        raise ModelFormatError(f"{path}: parameter layout does not match the config")
    if sum(v.size for v in params.values()) != count:
        raise ModelFormatError(f"{path}: parameter count {count} does not match the tensors")
    return ToyDetector(cfg, params)
