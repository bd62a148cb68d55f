"""Dense encoder / decoder / softmax classifier with hand-rolled backprop.

The default architecture is a plain MLP: encoder D -> hidden -> latent with
LeakyReLU(0.2) throughout, decoder mirroring it back to D with ReLU hidden
layers and a Sigmoid output (inputs are [0,1]-scaled), and a single softmax
layer from the latent code to class probabilities.  No batch norm, no
dropout: training must be bit-deterministic and every gradient is checked
against finite differences.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import BackwardWithoutForwardError, CheckpointError, ShapeError
from .linalg import as_matrix

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid", "softmax")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = "identity"
    slope: float = 0.2  # leaky_relu only

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "weight")
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0,1), got {self.slope}")


def _activate(layer, z):
    a = layer.activation
    if a == "identity":
        return z
    if a == "relu":
        return np.maximum(z, 0.0)
    if a == "leaky_relu":
        return z * (layer.slope + (1.0 - layer.slope) * (z > 0.0))
    if a == "sigmoid":
        return expit(z)
    # softmax, stabilized by max subtraction
    e = np.exp(z - np.max(z, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def _activate_backward(layer, z, out, d_out):
    a = layer.activation
    if a == "identity":
        return d_out
    if a == "relu":
        return d_out * (z > 0.0)
    if a == "leaky_relu":
        return d_out * (layer.slope + (1.0 - layer.slope) * (z > 0.0))
    if a == "sigmoid":
        return d_out * out * (1.0 - out)
    # softmax couples entries within a row
    return out * (d_out - np.sum(d_out * out, axis=1, keepdims=True))


@dataclass
class StackCache:
    x: np.ndarray                 # stack input
    pre: list = field(default_factory=list)   # per-layer pre-activations
    acts: list = field(default_factory=list)  # per-layer activations (acts[-1] is the output)


def stack_forward(layers, x):
    """Forward through a layer list; returns (output, cache). Empty list = identity."""
    x = as_matrix(x, "x")
    cache = StackCache(x=x)
    out = x
    for i, layer in enumerate(layers):
        if out.shape[1] != layer.weight.shape[1]:
            raise ShapeError(
                f"layer {i}: input width {out.shape[1]} does not match weight "
                f"{layer.weight.shape}"
            )
        z = out @ layer.weight.T + layer.bias
        out = _activate(layer, z)
        cache.pre.append(z)
        cache.acts.append(out)
    return out, cache


def stack_backward(layers, cache, d_out):
    """Backward through a stack; returns (d_input, [(dW, db) per layer])."""
    if len(cache.pre) != len(layers):
        raise BackwardWithoutForwardError("cache does not match the layer stack")
    grads = [None] * len(layers)
    d = d_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        x_in = cache.x if i == 0 else cache.acts[i - 1]
        d_z = _activate_backward(layer, cache.pre[i], cache.acts[i], d)
        grads[i] = (d_z.T @ x_in, np.sum(d_z, axis=0))
        d = d_z @ layer.weight
    return d, grads


@dataclass
class ModelParams:
    encoder: list   # D -> latent; empty list means identity encoding
    decoder: list   # latent -> D
    classifier: list  # latent -> C

    @property
    def input_dim(self):
        if self.encoder:
            return self.encoder[0].weight.shape[1]
        return self.classifier[0].weight.shape[1]

    @property
    def latent_dim(self):
        if self.encoder:
            return self.encoder[-1].weight.shape[0]
        return self.classifier[0].weight.shape[1]

    @property
    def n_classes(self):
        return self.classifier[-1].weight.shape[0]

    def sections(self):
        return {"encoder": self.encoder, "decoder": self.decoder, "classifier": self.classifier}

    def copy(self):
        return ModelParams(
            encoder=[Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.encoder],
            decoder=[Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.decoder],
            classifier=[Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.classifier],
        )


def _glorot(rng, out_dim, in_dim):
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def init_params(input_dim, hidden_dims, latent_dim, n_classes, rng) -> ModelParams:
    """Fresh model with Glorot-uniform weights and zero biases."""
    enc_dims = [input_dim, *hidden_dims, latent_dim]
    encoder = [
        Layer(_glorot(rng, o, i), np.zeros(o), "leaky_relu")
        for i, o in zip(enc_dims[:-1], enc_dims[1:])
    ]
    dec_dims = list(reversed(enc_dims))
    decoder = []
    for j, (i, o) in enumerate(zip(dec_dims[:-1], dec_dims[1:])):
        last = j == len(dec_dims) - 2
        decoder.append(Layer(_glorot(rng, o, i), np.zeros(o), "sigmoid" if last else "relu"))
    classifier = [Layer(_glorot(rng, n_classes, latent_dim), np.zeros(n_classes), "softmax")]
    return ModelParams(encoder=encoder, decoder=decoder, classifier=classifier)


def identity_params(input_dim, n_classes, rng) -> ModelParams:
    """Identity encoding: no encoder/decoder, softmax classifier on raw features."""
    classifier = [Layer(_glorot(rng, n_classes, input_dim), np.zeros(n_classes), "softmax")]
    return ModelParams(encoder=[], decoder=[], classifier=classifier)


def encode(params: ModelParams, x) -> np.ndarray:
    return stack_forward(params.encoder, x)[0]


def decode(params: ModelParams, z) -> np.ndarray:
    return stack_forward(params.decoder, z)[0]


def classify(params: ModelParams, z) -> np.ndarray:
    return stack_forward(params.classifier, z)[0]


def ae_loss(params: ModelParams, x) -> float:
    """Mean over the batch of the summed squared reconstruction error."""
    x = as_matrix(x, "x")
    x_hat = decode(params, encode(params, x))
    return float(np.sum((x - x_hat) ** 2) / x.shape[0])


def _check_probs(probs):
    probs = as_matrix(probs, "probs")
    if np.min(probs) < -1e-9:
        raise ValueError(f"probabilities contain negative entries (min {np.min(probs):.3e})")
    sums = np.sum(probs, axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ValueError("probability rows do not sum to 1")
    return probs


CONFIDENCE_LOG_FLOOR = 1e-12


def confidence_loss(probs, prior) -> float:
    """Mean prediction entropy plus cross-entropy from the class prior to the
    predicted marginal; pushes unlabeled predictions to be confident without
    collapsing onto one class."""
    probs = _check_probs(probs)
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (probs.shape[1],) or abs(float(np.sum(prior)) - 1.0) > 1e-6:
        raise ValueError("prior must be a probability vector over the classes")
    logs = np.log(np.maximum(probs, CONFIDENCE_LOG_FLOOR))
    entropy = -float(np.sum(probs * logs)) / probs.shape[0]
    marginal = np.mean(probs, axis=0)
    ce = -float(np.sum(prior * np.log(np.maximum(marginal, CONFIDENCE_LOG_FLOOR))))
    return entropy + ce


def confidence_backward(probs, prior) -> np.ndarray:
    """d(confidence_loss)/d(probs); matches the clamped logs exactly."""
    probs = _check_probs(probs)
    prior = np.asarray(prior, dtype=np.float64)
    n = probs.shape[0]
    clamped = np.maximum(probs, CONFIDENCE_LOG_FLOOR)
    active = (probs > CONFIDENCE_LOG_FLOOR).astype(np.float64)
    d = -(np.log(clamped) + active) / n
    marginal = np.mean(probs, axis=0)
    m_clamped = np.maximum(marginal, CONFIDENCE_LOG_FLOOR)
    m_active = (marginal > CONFIDENCE_LOG_FLOOR).astype(np.float64)
    d = d - (prior * m_active / m_clamped)[None, :] / n
    return d


@dataclass
class ForwardState:
    """Retained per-batch intermediates for one model forward."""

    x: np.ndarray
    z: np.ndarray
    enc_cache: StackCache
    x_hat: Optional[np.ndarray] = None
    dec_cache: Optional[StackCache] = None
    probs: Optional[np.ndarray] = None
    cls_cache: Optional[StackCache] = None


def model_forward(params: ModelParams, x, want_decoder=True, want_classifier=True) -> ForwardState:
    z, enc_cache = stack_forward(params.encoder, x)
    state = ForwardState(x=as_matrix(x, "x"), z=z, enc_cache=enc_cache)
    if want_decoder:
        state.x_hat, state.dec_cache = stack_forward(params.decoder, z)
    if want_classifier:
        state.probs, state.cls_cache = stack_forward(params.classifier, z)
    return state


@dataclass
class ModelGrads:
    encoder: list
    decoder: Optional[list]
    classifier: Optional[list]

    def add(self, other):
        def merge(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return [(ga[0] + gb[0], ga[1] + gb[1]) for ga, gb in zip(a, b)]

        return ModelGrads(
            encoder=merge(self.encoder, other.encoder),
            decoder=merge(self.decoder, other.decoder),
            classifier=merge(self.classifier, other.classifier),
        )


def model_backward(params, state, d_z=None, d_x_hat=None, d_probs=None) -> ModelGrads:
    """Backprop with fan-in: decoder and classifier gradients merge with any
    direct latent gradient at the encoder output before the encoder backward."""
    d_latent = np.zeros_like(state.z) if d_z is None else np.array(d_z, dtype=np.float64)
    dec_grads = None
    cls_grads = None
    if d_x_hat is not None:
        if state.dec_cache is None:
            raise BackwardWithoutForwardError("decoder backward without decoder forward")
        d_from_dec, dec_grads = stack_backward(params.decoder, state.dec_cache, d_x_hat)
        d_latent = d_latent + d_from_dec
    if d_probs is not None:
        if state.cls_cache is None:
            raise BackwardWithoutForwardError("classifier backward without classifier forward")
        d_from_cls, cls_grads = stack_backward(params.classifier, state.cls_cache, d_probs)
        d_latent = d_latent + d_from_cls
    _, enc_grads = stack_backward(params.encoder, state.enc_cache, d_latent)
    return ModelGrads(encoder=enc_grads, decoder=dec_grads, classifier=cls_grads)


# Checkpoint container: magic, little-endian u32 header length, JSON header
# (layer shapes/activations per section plus free-form meta), then raw
# float64 little-endian payloads ordered (encoder, decoder, classifier) x
# (weight row-major, bias).  Round-trips are lossless at 64-bit precision.
CHECKPOINT_MAGIC = b"KLN1"


def save_checkpoint(path, params: ModelParams, meta=None):
    sections = {}
    payload = []
    for name, layers in params.sections().items():
        sections[name] = [
            {
                "out": int(l.weight.shape[0]),
                "in": int(l.weight.shape[1]),
                "activation": l.activation,
                "slope": l.slope,
            }
            for l in layers
        ]
        for l in layers:
            payload.append(np.ascontiguousarray(l.weight, dtype="<f8").tobytes())
            payload.append(np.ascontiguousarray(l.bias, dtype="<f8").tobytes())
    header = json.dumps(
        {"format": 1, "sections": sections, "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for chunk in payload:
            f.write(chunk)


def load_checkpoint(path):
    """Returns (params, meta). Raises CheckpointError on any malformation."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 8:
        raise CheckpointError("checkpoint truncated before header length")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end:
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unparseable checkpoint header: {e}") from e
    if header.get("format") != 1 or "sections" not in header:
        raise CheckpointError("unsupported checkpoint format")
    offset = header_end
    built = {}
    for name in ("encoder", "decoder", "classifier"):
        layers = []
        for desc in header["sections"].get(name, []):
            try:
                out_d, in_d = int(desc["out"]), int(desc["in"])
                activation, slope = desc["activation"], float(desc["slope"])
            except (KeyError, TypeError, ValueError) as e:
                raise CheckpointError(f"bad layer descriptor in {name}: {e}") from e
            w_bytes = out_d * in_d * 8
            b_bytes = out_d * 8
            if offset + w_bytes + b_bytes > len(blob):
                raise CheckpointError(f"checkpoint payload truncated in section {name}")
            weight = np.frombuffer(blob, dtype="<f8", count=out_d * in_d, offset=offset)
            offset += w_bytes
            bias = np.frombuffer(blob, dtype="<f8", count=out_d, offset=offset)
            offset += b_bytes
            try:
                layers.append(
                    Layer(weight.reshape(out_d, in_d).copy(), bias.copy(), activation, slope)
                )
            except (ValueError, ShapeError) as e:
                raise CheckpointError(f"invalid layer in {name}: {e}") from e
        built[name] = layers
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after payload")
    if not built["classifier"]:
        raise CheckpointError("checkpoint has no classifier section")
    return ModelParams(**built), header.get("meta", {})
