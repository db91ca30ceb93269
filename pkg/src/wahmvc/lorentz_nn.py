"""Trainable stack: Euclidean dense encoder -> exp-map lift -> Lorentz FC -> Lorentz MLR.

Forward passes cache their intermediates; backward passes implement the chain
rule by hand (no autodiff).  Parameters live in flat Euclidean space; only the
activations are constrained to the manifold, which each layer guarantees by
reconstructing the time coordinate from the spatial part.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import NumericalError
from .geometry import validate_curvature

CHECKPOINT_MAGIC = b"WAHM1"

ACTIVATIONS = ("relu", "identity")


def _apply_activation(kind, pre):
    if kind == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(kind, pre):
    if kind == "relu":
        return (pre > 0.0).astype(float)  # subgradient 0 at the kink
    return np.ones_like(pre)


class DenseLayer:
    """Affine map plus pointwise activation: psi(X W^T + b)."""

    def __init__(self, weight, bias, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.weight = np.asarray(weight, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        self.activation = activation
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[1] != self.weight.shape[1]:
            raise ValueError(
                f"input width {x.shape[1]} != layer fan-in {self.weight.shape[1]}"
            )
        pre = x @ self.weight.T + self.bias
        self._cache = (x, pre)
        return _apply_activation(self.activation, pre)

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, pre = self._cache
        dpre = dout * _activation_grad(self.activation, pre)
        self.grad_weight += dpre.T @ x
        self.grad_bias += dpre.sum(axis=0)
        return dpre @ self.weight


def lift_to_lorentz(x, curvature: float = -1.0) -> np.ndarray:
    """Treat each row as the spatial part of an origin tangent and exp-map it."""
    out, _ = _lift_forward(np.asarray(x, dtype=float), validate_curvature(curvature))
    return out


def _lift_forward(x, curvature):
    sk = np.sqrt(-curvature)
    u = np.linalg.norm(x, axis=1)  # tangent norm (time component is zero)
    a = sk * u
    small = a < 1e-8
    safe = np.where(small, 1.0, a)
    sinhc = np.where(small, 1.0 + a**2 / 6.0, np.sinh(safe) / safe)
    time = np.cosh(a) / sk
    out = np.concatenate([time[:, None], sinhc[:, None] * x], axis=1)
    return out, (x, u, a, sinhc, small, sk)


def _lift_backward(dout, cache):
    x, u, a, sinhc, small, sk = cache
    dtime = dout[:, 0]
    dspatial = dout[:, 1:]
    dx = sinhc[:, None] * dspatial
    # residual terms through the norm u; both vanish smoothly as u -> 0
    safe_u = np.where(small, 1.0, u)
    # d sinhc / du = sk * (a*cosh(a) - sinh(a)) / a^2
    dsinhc_du = np.where(
        small, sk * a / 3.0, sk * (a * np.cosh(a) - np.sinh(a)) / np.where(small, 1.0, a**2)
    )
    du = dtime * np.sinh(a) + np.sum(dspatial * x, axis=1) * dsinhc_du
    dx += np.where(small, 0.0, du / safe_u)[:, None] * x
    return dx


class ExpMapLift:
    """Exp-map lift from R^d to the Lorentz sheet, as a layer with a backward."""

    def __init__(self, curvature=-1.0):
        self.curvature = validate_curvature(curvature)
        self._cache = None

    def forward(self, x):
        out, self._cache = _lift_forward(np.asarray(x, dtype=float), self.curvature)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        return _lift_backward(dout, self._cache)


class LorentzFcLayer:
    """Fully connected layer whose outputs stay on the manifold by construction.

    Spatial part s = psi(W x + b) over the full (n+1)-coordinate input; time
    part sqrt(||s||^2 - 1/K), so <y,y>_L = 1/K identically.
    """

    def __init__(self, weight, bias, activation="identity", curvature=-1.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.weight = np.asarray(weight, dtype=float)  # (m, n+1)
        self.bias = np.asarray(bias, dtype=float)  # (m,)
        self.activation = activation
        self.curvature = validate_curvature(curvature)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        pre = x @ self.weight.T + self.bias
        s = _apply_activation(self.activation, pre)
        time = np.sqrt(np.sum(s**2, axis=1) - 1.0 / self.curvature)
        self._cache = (x, pre, s, time)
        return np.concatenate([time[:, None], s], axis=1)

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, pre, s, time = self._cache
        ds = dout[:, 1:] + dout[:, :1] * s / time[:, None]
        dpre = ds * _activation_grad(self.activation, pre)
        self.grad_weight += dpre.T @ x
        self.grad_bias += dpre.sum(axis=0)
        return dpre @ self.weight


class LorentzMlrHead:
    """Multinomial logistic regression with geodesic decision hyperplanes.

    Per class c the logit is (beta_c/sqrt(-K)) * asinh(sqrt(-K)*alpha_c/beta_c)
    with alpha_c = cosh(sqrt(-K)a_c)<z_c, x_s> - sinh(sqrt(-K)a_c)||z_c|| x_t.
    beta_c reduces to ||z_c|| because cosh^2 - sinh^2 = 1 collapses the printed
    square root; the sign/absolute-value decoration is the identity since asinh
    is odd, which also gives logit 0 on the hyperplane itself.
    """

    def __init__(self, intercepts, normals, curvature=-1.0):
        self.intercepts = np.asarray(intercepts, dtype=float)  # (C,)
        self.normals = np.asarray(normals, dtype=float)  # (C, r)
        if self.normals.shape[0] != self.intercepts.shape[0]:
            raise ValueError("one intercept per class required")
        if self.normals.shape[0] < 2:
            raise ValueError("need at least 2 classes")
        self.curvature = validate_curvature(curvature)
        self.grad_intercepts = np.zeros_like(self.intercepts)
        self.grad_normals = np.zeros_like(self.normals)
        self._cache = None

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[1] != self.normals.shape[1] + 1:
            raise ValueError(
                f"input width {x.shape[1]} != manifold dim {self.normals.shape[1]} + 1"
            )
        sk = np.sqrt(-self.curvature)
        zn = np.linalg.norm(self.normals, axis=1)  # beta per class
        if np.any(zn == 0.0):
            raise NumericalError("degenerate class: zero normal vector")
        ch = np.cosh(sk * self.intercepts)
        sh = np.sinh(sk * self.intercepts)
        xt, xs = x[:, 0], x[:, 1:]
        ip = xs @ self.normals.T  # (B, C)
        alpha = ip * ch[None, :] - xt[:, None] * (sh * zn)[None, :]
        arg = sk * alpha / zn[None, :]
        logits = (zn[None, :] / sk) * np.arcsinh(arg)
        self._cache = (x, zn, ch, sh, ip, alpha, arg, sk)
        return logits

    def backward(self, dlogits):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, zn, ch, sh, ip, alpha, arg, sk = self._cache
        xt, xs = x[:, 0], x[:, 1:]
        dens = 1.0 / np.sqrt(1.0 + arg**2)
        dalpha = dlogits * dens
        # beta = ||z|| enters the logit formula directly and alpha via sh*zn*xt
        dzn = np.sum(
            dlogits * (np.arcsinh(arg) / sk - dens * alpha / zn[None, :]), axis=0
        )
        dzn += np.sum(dalpha * (-sh[None, :] * xt[:, None]), axis=0)
        dip = dalpha * ch[None, :]
        self.grad_normals += dip.T @ xs + dzn[:, None] * self.normals / zn[:, None]
        da = sk * np.sum(dalpha * (sh[None, :] * ip - ch[None, :] * zn[None, :] * xt[:, None]), axis=0)
        self.grad_intercepts += da
        dxt = -dalpha @ (sh * zn)
        dxs = dip @ self.normals
        return np.concatenate([dxt[:, None], dxs], axis=1)


class ViewEncoder:
    """Per-view stack: dense layers, exp-map lift, Lorentz FC layers, MLR head."""

    def __init__(self, dense_layers, lorentz_layers, head, curvature=-1.0):
        self.dense_layers = list(dense_layers)
        self.lift = ExpMapLift(curvature)
        self.lorentz_layers = list(lorentz_layers)
        self.head = head
        self.curvature = validate_curvature(curvature)

    def forward(self, x):
        """Returns (embeddings on the manifold, per-class logits)."""
        h = np.asarray(x, dtype=float)
        for layer in self.dense_layers:
            h = layer.forward(h)
        z = self.lift.forward(h)
        for layer in self.lorentz_layers:
            z = layer.forward(z)
        logits = self.head.forward(z)
        return z, logits

    def backward(self, dlogits=None, dembed=None):
        """Accumulate parameter gradients from logits- and embedding-level signals."""
        if dlogits is None and dembed is None:
            raise ValueError("no upstream gradient supplied")
        dz = self.head.backward(dlogits) if dlogits is not None else 0.0
        if dembed is not None:
            dz = dz + dembed
        for layer in reversed(self.lorentz_layers):
            dz = layer.backward(dz)
        dh = self.lift.backward(dz)
        for layer in reversed(self.dense_layers):
            dh = layer.backward(dh)
        return dh

    def parameters(self):
        """Named (parameter, gradient) pairs, in a stable order."""
        out = []
        for i, layer in enumerate(self.dense_layers):
            out.append((f"dense{i}.weight", layer.weight, layer.grad_weight))
            out.append((f"dense{i}.bias", layer.bias, layer.grad_bias))
        for i, layer in enumerate(self.lorentz_layers):
            out.append((f"lfc{i}.weight", layer.weight, layer.grad_weight))
            out.append((f"lfc{i}.bias", layer.bias, layer.grad_bias))
        out.append(("head.intercepts", self.head.intercepts, self.head.grad_intercepts))
        out.append(("head.normals", self.head.normals, self.head.grad_normals))
        return out

    def zero_grads(self):
        for layer in self.dense_layers + self.lorentz_layers:
            layer.grad_weight[:] = 0.0
            layer.grad_bias[:] = 0.0
        self.head.grad_intercepts[:] = 0.0
        self.head.grad_normals[:] = 0.0


def init_view_encoder(
    rng, input_dim, hidden_dims, embed_dim, lorentz_dim, num_clusters, curvature=-1.0
) -> ViewEncoder:
    """Build a fresh encoder: scaled-uniform dense init, small-Gaussian MLR normals."""

    def dense(fan_in, fan_out, activation):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        return DenseLayer(w, b, activation)

    dims = [input_dim, *hidden_dims, embed_dim]
    dense_layers = [
        dense(dims[i], dims[i + 1], "relu" if i < len(dims) - 2 else "identity")
        for i in range(len(dims) - 1)
    ]
    bound = 1.0 / np.sqrt(embed_dim + 1)
    lfc = LorentzFcLayer(
        rng.uniform(-bound, bound, size=(lorentz_dim, embed_dim + 1)),
        rng.uniform(-bound, bound, size=lorentz_dim),
        "identity",
        curvature,
    )
    head = LorentzMlrHead(
        np.zeros(num_clusters),
        0.1 * rng.standard_normal((num_clusters, lorentz_dim)),
        curvature,
    )
    return ViewEncoder(dense_layers, [lfc], head, curvature)


# ---------------------------------------------------------------------------
# checkpoint container: magic "WAHM1", then per-tensor records of
# (u32 name length, name bytes, u32 rank, u64 dims..., float64 LE payload)
# ---------------------------------------------------------------------------


def save_checkpoint(path, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, arr in tensors.items():
            data = np.asarray(arr, dtype="<f8")  # tobytes() emits C-order bytes
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<Q", d))
            f.write(data.tobytes())


def load_checkpoint(path) -> dict:
    tensors = {}
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint (bad magic {magic!r})")
        while True:
            header = f.read(4)
            if not header:
                break
            (name_len,) = struct.unpack("<I", header)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            payload = f.read(8 * count)
            if len(payload) != 8 * count:
                raise ValueError("truncated checkpoint payload")
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            tensors[name] = arr if rank > 0 else arr.reshape(())
    return tensors


_ACT_CODE = {"relu": 1.0, "identity": 0.0}
_CODE_ACT = {v: k for k, v in _ACT_CODE.items()}


def encoders_state_dict(encoders, curvature) -> dict:
    """Flatten a list of per-view encoders into named checkpoint tensors."""
    tensors = {"meta.curvature": np.asarray(curvature), "meta.num_views": np.asarray(float(len(encoders)))}
    for v, enc in enumerate(encoders):
        prefix = f"view{v}."
        for i, layer in enumerate(enc.dense_layers):
            tensors[prefix + f"dense{i}.weight"] = layer.weight
            tensors[prefix + f"dense{i}.bias"] = layer.bias
            tensors[prefix + f"dense{i}.activation"] = np.asarray(_ACT_CODE[layer.activation])
        for i, layer in enumerate(enc.lorentz_layers):
            tensors[prefix + f"lfc{i}.weight"] = layer.weight
            tensors[prefix + f"lfc{i}.bias"] = layer.bias
            tensors[prefix + f"lfc{i}.activation"] = np.asarray(_ACT_CODE[layer.activation])
        tensors[prefix + "head.intercepts"] = enc.head.intercepts
        tensors[prefix + "head.normals"] = enc.head.normals
    return tensors


def encoders_from_state(tensors: dict):
    """Rebuild (encoders, curvature) from checkpoint tensors."""
    curvature = float(tensors["meta.curvature"])
    num_views = int(tensors["meta.num_views"])
    encoders = []
    for v in range(num_views):
        prefix = f"view{v}."
        dense_layers = []
        i = 0
        while prefix + f"dense{i}.weight" in tensors:
            dense_layers.append(
                DenseLayer(
                    tensors[prefix + f"dense{i}.weight"],
                    tensors[prefix + f"dense{i}.bias"],
                    _CODE_ACT[float(tensors[prefix + f"dense{i}.activation"])],
                )
            )
            i += 1
        lorentz_layers = []
        i = 0
        while prefix + f"lfc{i}.weight" in tensors:
            lorentz_layers.append(
                LorentzFcLayer(
                    tensors[prefix + f"lfc{i}.weight"],
                    tensors[prefix + f"lfc{i}.bias"],
                    _CODE_ACT[float(tensors[prefix + f"lfc{i}.activation"])],
                    curvature,
                )
            )
            i += 1
        head = LorentzMlrHead(
            tensors[prefix + "head.intercepts"],
            tensors[prefix + "head.normals"],
            curvature,
        )
        encoders.append(ViewEncoder(dense_layers, lorentz_layers, head, curvature))
    return encoders, curvature
