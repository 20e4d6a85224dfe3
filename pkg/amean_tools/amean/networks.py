#!/usr/bin/env python3

"""
Module: networks.py

  Fully-connected networks of the AMEAN model and their checkpoint format.

  ModelBundle holds:
    F        feature extractor, d -> h
    C        classifier, h -> m (softmax)
    trunk    discriminator trunk, h -> trunk_dim; shared by both heads
    head_st  source/target head: trunk_dim -> 2 (softmax, joint mode)
             or -> 1 (sigmoid, alternating mode)
    head_mt  meta-sub-target head: trunk_dim -> k (softmax)
    U1, U2   meta-learner encoder (d+h+m -> ... -> k) and decoder
    centroids  k cluster centroids in the k-dim embedding space

  Checkpoint file layout:
    AMEAN-CHECKPOINT 1
    key value           (bundle metadata: mode, d, m, k, h, ...)
    PARAMS
    <name> <rows> <cols>
    ...
    END
    <raw little-endian float64 values, in manifest order>
"""
from dataclasses import dataclass, field
import hashlib
import logging
from pathlib import Path
import sys
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)
try:
    import numpy as np
except ImportError as e:
    logger.critical("Oops! Forgot to activate an appropriate environment?\n", exc_info=e)
    sys.exit(1)

from amean import autodiff as ad
from amean.autodiff import Tensor
from amean.constants import JOINT, MODES
from amean.errors import CheckpointError, ConfigurationError, DimensionError
from amean.seeding import stream


ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "softmax", "linear")
LEAKY_SLOPE = 0.1
CHECKPOINT_MAGIC = "AMEAN-CHECKPOINT 1"


@dataclass(frozen=True, slots=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigurationError(f"Layer dims must be positive: {self.in_dim} -> {self.out_dim}.")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation {self.activation!r}; choose from {ACTIVATIONS}.")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"Dropout rate must be in [0, 1), got {self.dropout}.")


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return ad.relu(x)
    if activation == "leaky_relu":
        return ad.leaky_relu(x, LEAKY_SLOPE)
    if activation == "sigmoid":
        return ad.sigmoid(x)
    if activation == "softmax":
        return ad.softmax(x)
    return x


class Dense:
    """y = act(x @ W + b)."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator, name: str):
        self.spec = spec
        self.name = name
        self.W = ad.parameter(glorot_uniform(spec.in_dim, spec.out_dim, rng), name=f"{name}.W")
        self.b = ad.parameter(np.zeros(spec.out_dim), name=f"{name}.b")

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator = None) -> Tensor:
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise DimensionError(f"dense {self.name}", x.shape, self.W.shape)
        y = activate(x @ self.W + self.b, self.spec.activation)
        if training and self.spec.dropout > 0:
            y = ad.dropout(y, self.spec.dropout, rng, training=True)
        return y

    def parameters(self) -> List[Tensor]:
        return [self.W, self.b]


class MLP:
    """A chain of Dense layers."""

    def __init__(self, name: str, specs: Sequence[LayerSpec], rng: np.random.Generator):
        if not specs:
            raise ConfigurationError(f"{name}: an MLP needs at least one layer.")
        for prev, nxt in zip(specs, specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigurationError(f"{name}: layer dims do not chain ({prev.out_dim} -> {nxt.in_dim}).")
        self.name = name
        self.specs = tuple(specs)
        self.layers = [Dense(s, rng, f"{name}.{i}") for i, s in enumerate(specs)]

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def __call__(self, x, training: bool = False, rng: np.random.Generator = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, training=training, rng=rng)
        return x

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def stack_specs(dims: Sequence[int], hidden_act: str, out_act: str, dropout: float = 0.0) -> List[LayerSpec]:
    """LayerSpecs for dims[0] -> dims[1] -> ... -> dims[-1]."""
    n = len(dims) - 1
    return [
        LayerSpec(dims[i], dims[i + 1],
                  activation=out_act if i == n - 1 else hidden_act,
                  dropout=0.0 if i == n - 1 else dropout)
        for i in range(n)
    ]


def build_meta_learner(n_in: int, k: int, rng: np.random.Generator,
                       enc_hidden: Sequence[int] = (500, 1000),
                       dec_hidden: Sequence[int] = (1000, 1000),
                       enc_activation: str = "linear") -> Tuple[MLP, MLP]:
    """Encoder U1: n_in -> enc_hidden -> k; decoder U2: k -> dec_hidden -> n_in.
    Hidden layers use ReLU; the decoder output is linear since it reconstructs
    unbounded inputs.
    """
    U1 = MLP("U1", stack_specs([n_in, *enc_hidden, k], "relu", enc_activation), rng)
    U2 = MLP("U2", stack_specs([k, *dec_hidden, n_in], "relu", "linear"), rng)
    return U1, U2


@dataclass(eq=False)
class ModelBundle:
    d: int
    m: int
    k: int
    h: int
    mode: str
    F: MLP
    C: MLP
    trunk: MLP
    head_st: MLP
    head_mt: MLP
    U1: MLP
    U2: MLP
    centroids: Tensor
    meta: Dict[str, str] = field(default_factory=dict)
    # set while training: F then applies its dropout layers with this generator
    dropout_rng: Optional[np.random.Generator] = field(default=None, repr=False)

    @property
    def meta_in_dim(self) -> int:
        return self.d + self.h + self.m

    # forward passes .........................................................
    def features(self, x, training: bool = False, rng=None) -> Tensor:
        if self.dropout_rng is not None:
            return self.F(x, training=True, rng=self.dropout_rng)
        return self.F(x, training=training, rng=rng)

    def classify(self, feat: Tensor, training: bool = False, rng=None) -> Tensor:
        return self.C(feat, training=training, rng=rng)

    def discriminate_st(self, feat: Tensor) -> Tensor:
        return self.head_st(self.trunk(feat))

    def discriminate_mt(self, feat: Tensor) -> Tensor:
        return self.head_mt(self.trunk(feat))

    def source_prob(self, head_out: Tensor) -> Tensor:
        """(n, 1) probability that a sample comes from the source, from the D_st head output."""
        if self.mode == JOINT:
            return ad.columns(head_out, 0, 1)
        return head_out

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.classify(self.features(Tensor(x))).data

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)

    def embed_features(self, x: np.ndarray) -> np.ndarray:
        return self.features(Tensor(x)).data

    # parameter groups .......................................................
    def generator_parameters(self) -> List[Tensor]:
        return self.F.parameters() + self.C.parameters()

    def discriminator_parameters(self) -> List[Tensor]:
        return self.trunk.parameters() + self.head_st.parameters() + self.head_mt.parameters()

    def meta_parameters(self) -> List[Tensor]:
        return self.U1.parameters() + self.U2.parameters()

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        for net in (self.F, self.C, self.trunk, self.head_st, self.head_mt, self.U1, self.U2):
            for p in net.parameters():
                yield p.name, p
        yield "centroids", self.centroids

    def checksum(self, group: str = "all") -> str:
        """sha256 of a parameter group: 'generator', 'discriminator', 'meta' or 'all'."""
        if group == "all":
            params = [p for _, p in self.named_parameters()]
        else:
            params = getattr(self, f"{group}_parameters")()
        h = hashlib.sha256()
        for p in params:
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()


def build_bundle(d: int, m: int, k: int, h: int = 64, mode: str = JOINT, seed: int = 0,
                 f_hidden: Sequence[int] = (64,), trunk_dim: int = 100,
                 enc_hidden: Sequence[int] = (500, 1000), dec_hidden: Sequence[int] = (1000, 1000),
                 enc_activation: str = "linear", dropout: float = 0.0) -> ModelBundle:
    """Build all AMEAN networks with Glorot-uniform weights and zero biases.
    The same seed gives identical weights.
    """
    for lbl, v in (("d", d), ("m", m), ("h", h), ("trunk_dim", trunk_dim)):
        if v < 1:
            raise ConfigurationError(f"{lbl} must be >= 1, got {v}.")
    if k < 2:
        raise ConfigurationError(f"k must be >= 2 for the meta-sub-target discriminator, got {k}.")
    if mode not in MODES:
        raise ConfigurationError(f"Unknown mode {mode!r}; choose from {MODES}.")

    rng = stream(seed, "init")
    F = MLP("F", stack_specs([d, *f_hidden, h], "relu", "relu", dropout), rng)
    C = MLP("C", [LayerSpec(h, m, "softmax")], rng)
    trunk = MLP("trunk", [LayerSpec(h, trunk_dim, "relu")], rng)
    if mode == JOINT:
        head_st = MLP("head_st", [LayerSpec(trunk_dim, 2, "softmax")], rng)
    else:
        head_st = MLP("head_st", [LayerSpec(trunk_dim, 1, "sigmoid")], rng)
    head_mt = MLP("head_mt", [LayerSpec(trunk_dim, k, "softmax")], rng)
    U1, U2 = build_meta_learner(d + h + m, k, rng, enc_hidden, dec_hidden, enc_activation)
    centroids = ad.parameter(np.zeros((k, k)), name="centroids")

    meta = {
        "f_hidden": ",".join(map(str, f_hidden)),
        "trunk_dim": str(trunk_dim),
        "enc_hidden": ",".join(map(str, enc_hidden)),
        "dec_hidden": ",".join(map(str, dec_hidden)),
        "enc_activation": enc_activation,
        "dropout": repr(float(dropout)),
    }
    return ModelBundle(d, m, k, h, mode, F, C, trunk, head_st, head_mt, U1, U2, centroids, meta)


def forward_meta(U1: MLP, x, feat, probs) -> Tensor:
    """U1 applied to [x | feat | probs]."""
    x, feat, probs = ad.as_tensor(x), ad.as_tensor(feat), ad.as_tensor(probs)
    if not (x.shape[0] == feat.shape[0] == probs.shape[0]):
        raise DimensionError("forward_meta", x.shape, feat.shape, probs.shape)
    width = x.shape[1] + feat.shape[1] + probs.shape[1]
    if width != U1.in_dim:
        raise DimensionError("forward_meta", (x.shape[0], width), (U1.in_dim, U1.out_dim))
    return U1(ad.concat([x, feat, probs]))


class SGD:
    """Stochastic gradient descent with momentum over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v


# ..............................................................................
# checkpoint I/O

def save_bundle(bundle: ModelBundle, fp: Union[str, Path], extra: Dict[str, str] = None) -> Path:
    fp = Path(fp)
    fp.parent.mkdir(parents=True, exist_ok=True)
    meta = {"mode": bundle.mode, "d": bundle.d, "m": bundle.m, "k": bundle.k, "h": bundle.h,
            **bundle.meta, **(extra or {})}
    lines = [CHECKPOINT_MAGIC]
    lines += [f"{key} {val}" for key, val in meta.items()]
    lines.append("PARAMS")
    params = list(bundle.named_parameters())
    for name, p in params:
        rows, cols = _shape2(p)
        lines.append(f"{name} {rows} {cols}")
    lines.append("END")
    with open(fp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return fp


def _read_manifest(raw: bytes, fp: Path) -> Tuple[Dict[str, str], List[Tuple[str, int, int]], int]:
    marker = b"\nEND\n"
    idx = raw.find(marker)
    if not raw.startswith(CHECKPOINT_MAGIC.encode()) or idx < 0:
        raise CheckpointError(f"{fp!s}: not an amean checkpoint.")
    text = raw[:idx].decode("ascii").splitlines()
    meta, shapes = {}, []
    in_params = False
    for line in text[1:]:
        if line == "PARAMS":
            in_params = True
            continue
        parts = line.split()
        if in_params:
            shapes.append((parts[0], int(parts[1]), int(parts[2])))
        else:
            meta[parts[0]] = " ".join(parts[1:])
    return meta, shapes, idx + len(marker)


def _shape2(p: Tensor) -> Tuple[int, int]:
    """Manifest shape; 1D biases are stored as a single row."""
    return (1, p.shape[0]) if p.data.ndim == 1 else p.shape


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v)


def load_bundle(fp: Union[str, Path]) -> ModelBundle:
    """Rebuild a bundle from its checkpoint manifest and load its values bit-exactly."""
    fp = Path(fp)
    if not fp.exists():
        raise FileNotFoundError(f"Not found: {fp!s}")
    raw = fp.read_bytes()
    meta, shapes, offset = _read_manifest(raw, fp)
    try:
        bundle = build_bundle(
            int(meta["d"]), int(meta["m"]), int(meta["k"]), int(meta["h"]), meta["mode"], seed=0,
            f_hidden=_ints(meta.get("f_hidden", "64")),
            trunk_dim=int(meta.get("trunk_dim", 100)),
            enc_hidden=_ints(meta.get("enc_hidden", "500,1000")),
            dec_hidden=_ints(meta.get("dec_hidden", "1000,1000")),
            enc_activation=meta.get("enc_activation", "linear"),
            dropout=float(meta.get("dropout", 0.0)),
        )
    except KeyError as e:
        raise CheckpointError(f"{fp!s}: manifest lacks key {e.args[0]!r}.") from e
    bundle.meta.update({key: val for key, val in meta.items() if key not in ("mode", "d", "m", "k", "h")})
    load_values(bundle, raw[offset:], shapes, fp)
    return bundle


def load_values(bundle: ModelBundle, payload: bytes, shapes: List[Tuple[str, int, int]], fp: Path = None):
    params = list(bundle.named_parameters())
    if len(params) != len(shapes):
        raise CheckpointError(f"{fp!s}: manifest lists {len(shapes)} tensors, bundle has {len(params)}.")
    pos = 0
    for (name, p), (mname, rows, cols) in zip(params, shapes):
        if name != mname or _shape2(p) != (rows, cols):
            raise CheckpointError(
                f"{fp!s}: layer {mname!r} has shape ({rows}, {cols}) but bundle expects {name!r} {p.shape}.",
                layer=mname,
            )
        nbytes = rows * cols * 8
        chunk = payload[pos:pos + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{fp!s}: truncated values for layer {mname!r}.", layer=mname)
        p.data = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(p.shape)
        p.zero_grad()
        pos += nbytes

    return


def read_checkpoint_meta(fp: Union[str, Path]) -> Dict[str, str]:
    fp = Path(fp)
    meta, _, _ = _read_manifest(fp.read_bytes(), fp)
    return meta
