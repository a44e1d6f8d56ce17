"""Direction oracles ``d = G(u, f, grad E(u); theta)``.

Every model's last stage is :func:`dissipnet.cone.enforce`, so predictions are
members of the model's cone by construction. Trainable models keep their
parameters in a single flat vector ``theta`` together with a layer manifest.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import tensor as T
from .cone import ConeSpec, cone_layer, enforce, violation
from .tensor import ShapeError, Tensor

__all__ = [
    "FORMAT_VERSION",
    "ModelFormatError",
    "DirectionModel",
    "RawGradient",
    "CallableDirection",
    "MLPDirection",
    "ConvDirection",
    "predict",
    "save_model",
    "model_to_dict",
    "model_from_dict",
    "load_model",
]

FORMAT_VERSION = 1
MAGIC = "dissipnet-direction-model"


class ModelFormatError(ValueError):
    """Model file is corrupt, has the wrong version, or mismatches its manifest."""


class DirectionModel:
    kind = "abstract"
    check_membership = True

    def __init__(self, cone: ConeSpec):
        self.cone = cone

    def _raw(self, u, f, g) -> np.ndarray:
        raise NotImplementedError

    def predict(self, u, f, g) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if u.shape != g.shape:
            raise ShapeError(f"{self.kind}.predict: u shape {u.shape} != g shape {g.shape}")
        z = self._raw(u, f, g)
        d = enforce(self.cone, z, g)
        if self.check_membership and violation(self.cone, d, g) > 1e-9:
            raise AssertionError(f"{self.kind}: prediction left its cone "
                                 f"(violation {violation(self.cone, d, g):.3e})")
        return d

    __call__ = predict

    @property
    def num_params(self) -> int:
        return 0


class RawGradient(DirectionModel):
    """``enforce(cone, g, g)``: plain gradient descent when g is feasible."""

    kind = "raw_gradient"

    def _raw(self, u, f, g):
        return g


class CallableDirection(DirectionModel):
    """Wrap ``fn(u, f, g) -> z``; the output still passes through the cone."""

    kind = "callable"

    def __init__(self, cone: ConeSpec, fn):
        super().__init__(cone)
        self.fn = fn

    def _raw(self, u, f, g):
        return np.asarray(self.fn(u, f, g), dtype=np.float64).reshape(np.shape(g))


class _Trainable(DirectionModel):
    """Models with a flat parameter vector and a layer manifest."""

    def __init__(self, cone: ConeSpec, manifest: list[tuple[str, tuple[int, ...]]], seed: int):
        super().__init__(cone)
        self.manifest = [(name, tuple(shape)) for name, shape in manifest]
        self.seed = int(seed)
        self.theta = np.zeros(sum(math.prod(s) for _, s in self.manifest))
        self._init_params(np.random.default_rng(self.seed))

    @property
    def num_params(self) -> int:
        return self.theta.size

    def param_views(self) -> dict[str, np.ndarray]:
        views, k = {}, 0
        for name, shape in self.manifest:
            n = math.prod(shape)
            views[name] = self.theta[k:k + n].reshape(shape)
            k += n
        return views

    def _init_params(self, rng):
        # Kaiming fan-in scaling for weights, zero biases
        for name, arr in self.param_views().items():
            if name.endswith(".W"):
                fan_in = math.prod(arr.shape[1:])
                arr[...] = rng.standard_normal(arr.shape) * math.sqrt(2.0 / fan_in)
            else:
                arr[...] = 0.0

    def leaves(self) -> dict[str, Tensor]:
        return {name: Tensor(v, requires_grad=True, name=name)
                for name, v in self.param_views().items()}

    def trunk(self, params: dict[str, Tensor], x) -> Tensor:
        raise NotImplementedError

    def encode(self, u, f, g) -> np.ndarray:
        raise NotImplementedError

    def forward(self, params: dict[str, Tensor], U, F, G) -> Tensor:
        """Batched, tape-recordable forward pass; ``U, F, G`` carry a batch axis."""
        X = np.stack([self.encode(u, f, g) for u, f, g in zip(U, F, G)])
        Z = self.trunk(params, Tensor(X))
        G = np.asarray(G, dtype=np.float64)
        return cone_layer(self.cone, _reshape_rows(Z, G.shape), G)

    def _raw(self, u, f, g):
        params = {n: Tensor(v) for n, v in self.param_views().items()}
        z = self.trunk(params, Tensor(self.encode(u, f, g)[None])).data[0]
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"{self.kind}: non-finite trunk output")
        return z.reshape(np.shape(g))

    def config(self) -> dict:
        raise NotImplementedError


def _reshape_rows(Z: Tensor, shape) -> Tensor:
    if Z.shape == tuple(shape):
        return Z
    if math.prod(Z.shape) != math.prod(shape):
        raise ShapeError(f"trunk output {Z.shape} cannot be reshaped to {tuple(shape)}")
    data = Z.data.reshape(shape)
    return T.record("reshape", (Z,), data, lambda s: (s.reshape(Z.shape),))


def _check_finite(t: Tensor, layer: int, kind: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"{kind}: non-finite activations at layer {layer}")
    return t


class MLPDirection(_Trainable):
    """Fully connected ReLU trunk on the flat encoding ``[u; f; g]``."""

    kind = "mlp"

    def __init__(self, cone: ConeSpec, dim: int, data_dim: int,
                 widths=(64, 64, 64), seed: int = 0):
        self.dim = int(dim)
        self.data_dim = int(data_dim)
        self.widths = tuple(int(w) for w in widths)
        sizes = [2 * self.dim + self.data_dim, *self.widths, self.dim]
        manifest = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            manifest += [(f"fc{i}.W", (b, a)), (f"fc{i}.b", (b,))]
        super().__init__(cone, manifest, seed)

    def encode(self, u, f, g):
        x = np.concatenate([np.ravel(u), np.ravel(f), np.ravel(g)])
        if x.size != 2 * self.dim + self.data_dim:
            raise ShapeError(f"mlp: encoded input has {x.size} features, expected "
                             f"{2 * self.dim + self.data_dim}")
        return x

    def trunk(self, params, x):
        n_layers = len(self.widths) + 1
        h = x
        for i in range(n_layers):
            h = T.affine(h, params[f"fc{i}.W"], params[f"fc{i}.b"])
            if i < n_layers - 1:
                h = T.relu(h)
            _check_finite(h, i, self.kind)
        return h

    def config(self):
        return {"dim": self.dim, "data_dim": self.data_dim, "widths": list(self.widths),
                "seed": self.seed}


class ConvDirection(_Trainable):
    """3x3 convolutional ReLU trunk on image channels ``(u, A^T f, g)``.

    If ``f`` does not have the image shape it is back-projected with
    ``back_project`` (typically the forward operator's adjoint), which must
    then be supplied.
    """

    kind = "convnet"

    def __init__(self, cone: ConeSpec, blocks: int = 6, channels: int = 16,
                 seed: int = 0, back_project=None):
        self.blocks = int(blocks)
        self.channels = int(channels)
        self.back_project = back_project
        chans = [3] + [self.channels] * self.blocks + [1]
        manifest = []
        for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])):
            manifest += [(f"conv{i}.W", (b, a, 3, 3)), (f"conv{i}.b", (b,))]
        super().__init__(cone, manifest, seed)

    def encode(self, u, f, g):
        u = np.asarray(u, dtype=np.float64)
        f = np.asarray(f, dtype=np.float64)
        if f.shape != u.shape:
            if self.back_project is None:
                raise ShapeError(f"convnet: data shape {f.shape} differs from image shape "
                                 f"{u.shape} and no back_project was given")
            f = np.asarray(self.back_project(f), dtype=np.float64)
        return np.stack([u, f, np.asarray(g, dtype=np.float64)])

    def trunk(self, params, x):
        h = x
        for i in range(self.blocks + 1):
            h = T.conv2d_3x3(h, params[f"conv{i}.W"], params[f"conv{i}.b"])
            if i < self.blocks:
                h = T.relu(h)
            _check_finite(h, i, self.kind)
        return h

    def config(self):
        return {"blocks": self.blocks, "channels": self.channels, "seed": self.seed}


def predict(model: DirectionModel, u, f, g) -> np.ndarray:
    return model.predict(u, f, g)


_KINDS = {"mlp": MLPDirection, "convnet": ConvDirection}


def model_to_dict(model: DirectionModel) -> dict:
    doc = {"magic": MAGIC, "format_version": FORMAT_VERSION, "kind": model.kind,
           "cone": model.cone.to_dict()}
    if isinstance(model, _Trainable):
        doc["config"] = model.config()
        doc["manifest"] = [{"name": n, "shape": list(s)} for n, s in model.manifest]
        doc["weights"] = {n: v.ravel().tolist() for n, v in model.param_views().items()}
    elif not isinstance(model, RawGradient):
        raise TypeError(f"cannot serialize model of kind {model.kind!r}")
    return doc


def model_from_dict(doc: dict, back_project=None, kind: str | None = None) -> DirectionModel:
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise ModelFormatError("not a dissipnet model file (bad magic header)")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc.get('format_version')!r}, "
                               f"expected {FORMAT_VERSION}")
    cone = ConeSpec.from_dict(doc["cone"])
    stored = doc.get("kind")
    kind = stored if kind is None else kind
    if kind == "raw_gradient" and stored == kind:
        return RawGradient(cone)
    if kind not in _KINDS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    cfg = dict(doc["config"])
    if kind == "convnet":
        cfg["back_project"] = back_project
    try:
        model = _KINDS[kind](cone, **cfg)
    except TypeError:
        raise ModelFormatError(f"layer manifest mismatch: stored {stored} config "
                               f"{doc['config']} does not describe a {kind} model") from None
    manifest = [(m["name"], tuple(m["shape"])) for m in doc["manifest"]]
    if manifest != model.manifest or stored != kind:
        raise ModelFormatError(f"layer manifest does not match a {kind} model with config "
                               f"{doc['config']}")
    views = model.param_views()
    for name, shape in manifest:
        w = np.asarray(doc["weights"][name], dtype=np.float64)
        if w.size != math.prod(shape):
            raise ModelFormatError(f"weights for {name} have {w.size} entries, expected "
                                   f"{math.prod(shape)}")
        views[name][...] = w.reshape(shape)
    return model


def save_model(model: DirectionModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path, back_project=None, kind: str | None = None) -> DirectionModel:
    """Read a model file; ``kind`` optionally demands a specific model kind."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc, back_project, kind)
