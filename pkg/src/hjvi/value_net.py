"""Locally quadratic negative-definite value function ensemble.

The value estimate is V(x) = -delta^T Lbar Lbar^T delta with
delta = h(x) - h(x_des), where h is a fixed feature map (sin/cos embedding of
revolute angles, identity elsewhere) and Lbar is the mean over an ensemble of
small MLPs, each emitting the entries of a lower-triangular matrix L(z) whose
diagonal passes through softplus(+eps). The construction guarantees

    V(x_des) = 0 exactly,  grad V(x_des) = 0,  V(x) < 0 for h(x) != h(x_des)

because Lbar always has a strictly positive diagonal and is therefore
nonsingular, and V inherits the 2 pi periodicity of the features in revolute
coordinates. The state gradient dV/dx carries two terms: the quadratic-form
path -2 (dh/dx)^T Lbar Lbar^T delta and the path through the state dependence
of L itself, backpropagated through each member network.

Everything is float64 numpy with hand-rolled backprop and Adam; training is
single-threaded and bit-reproducible, and checkpoints round-trip parameters
exactly (little-endian 64-bit floats plus a JSON layout manifest).
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .dynamics import JointKind

CHECKPOINT_MAGIC = "HJVI-CKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or version-incompatible checkpoint file."""


class FeatureMap:
    """sin/cos embedding of revolute coordinates, identity elsewhere.

    Layout: for each position dim, (sin q_i, cos q_i) if revolute else q_i;
    velocities appended unchanged.
    """

    def __init__(self, joint_kinds: tuple[JointKind, ...]):
        self.joint_kinds = tuple(JointKind(k) for k in joint_kinds)
        self.n_q = len(self.joint_kinds)
        self.n_in = 2 * self.n_q
        self.n_out = sum(2 if k is JointKind.REVOLUTE else 1
                         for k in self.joint_kinds) + self.n_q

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cols = []
        for i, kind in enumerate(self.joint_kinds):
            if kind is JointKind.REVOLUTE:
                cols.append(np.sin(x[..., i]))
                cols.append(np.cos(x[..., i]))
            else:
                cols.append(x[..., i])
        for i in range(self.n_q, 2 * self.n_q):
            cols.append(x[..., i])
        return np.stack(cols, axis=-1)

    def jac(self, x: np.ndarray) -> np.ndarray:
        """dz/dx, shape (..., n_out, n_in)."""
        x = np.asarray(x, dtype=float)
        batch = x.shape[:-1]
        J = np.zeros(batch + (self.n_out, self.n_in))
        row = 0
        for i, kind in enumerate(self.joint_kinds):
            if kind is JointKind.REVOLUTE:
                J[..., row, i] = np.cos(x[..., i])
                J[..., row + 1, i] = -np.sin(x[..., i])
                row += 2
            else:
                J[..., row, i] = 1.0
                row += 1
        for i in range(self.n_q, 2 * self.n_q):
            J[..., row, i] = 1.0
            row += 1
        return J

    def to_dict(self) -> dict:
        return {"joint_kinds": [k.value for k in self.joint_kinds]}

    @staticmethod
    def from_dict(d: dict) -> "FeatureMap":
        return FeatureMap(tuple(JointKind(k) for k in d["joint_kinds"]))


@dataclasses.dataclass(frozen=True)
class NetConfig:
    """Architecture of one ensemble member (all members share it)."""

    members: int = 2
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    eps_diag: float = 1e-3

    def __post_init__(self):
        if self.members < 1:
            raise ValueError("ensemble needs at least one member")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.eps_diag <= 0.0:
            raise ValueError("eps_diag must be > 0 to keep L nonsingular")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return {"members": self.members, "hidden": list(self.hidden),
                "activation": self.activation, "eps_diag": self.eps_diag}

    @staticmethod
    def from_dict(d: dict) -> "NetConfig":
        return NetConfig(members=int(d["members"]),
                         hidden=tuple(d["hidden"]),
                         activation=str(d["activation"]),
                         eps_diag=float(d["eps_diag"]))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _act(name, x):
    return np.tanh(x) if name == "tanh" else np.maximum(x, 0.0)


def _act_grad(name, post):
    # derivative expressed through the post-activation value
    return 1.0 - post ** 2 if name == "tanh" else (post > 0.0).astype(float)


class ValueEnsemble:
    """Mean-of-members Cholesky-factor value function with manual backprop."""

    def __init__(self, feature_map: FeatureMap, x_des: np.ndarray,
                 cfg: NetConfig, rng: np.random.Generator | None = None,
                 params: list[dict[str, np.ndarray]] | None = None):
        self.fm = feature_map
        self.x_des = np.asarray(x_des, dtype=float)
        self.z_des = feature_map(self.x_des)
        self.cfg = cfg
        n_f = feature_map.n_out
        self.n_f = n_f
        self.n_l = n_f * (n_f + 1) // 2
        self.tril_rows, self.tril_cols = np.tril_indices(n_f)
        self.diag_mask = self.tril_rows == self.tril_cols
        self.layer_sizes = (n_f,) + cfg.hidden + (self.n_l,)
        if params is not None:
            self.params = params
        else:
            if rng is None:
                raise ValueError("need an rng to initialize parameters")
            self.params = [self._init_member(rng) for _ in range(cfg.members)]

    def _init_member(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = {}
        sizes = self.layer_sizes
        for layer in range(len(sizes) - 1):
            fan_in, fan_out = sizes[layer], sizes[layer + 1]
            bound = 1.0 / np.sqrt(fan_in)
            p[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            p[f"b{layer}"] = np.zeros(fan_out)
        return p

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    # -- member forward / backward -------------------------------------------
    def _member_forward(self, p: dict, z: np.ndarray):
        """Raw lower-tri entries o (B, n_l) plus activation cache."""
        h = z
        cache = [h]
        for layer in range(self.n_layers - 1):
            h = _act(self.cfg.activation, h @ p[f"W{layer}"].T + p[f"b{layer}"])
            cache.append(h)
        o = h @ p[f"W{self.n_layers - 1}"].T + p[f"b{self.n_layers - 1}"]
        return o, cache

    def _member_input_grad(self, p: dict, cache: list, do: np.ndarray):
        """Backprop d(scalar)/do to d(scalar)/dz for one member."""
        d = do @ p[f"W{self.n_layers - 1}"]
        for layer in range(self.n_layers - 2, -1, -1):
            d = d * _act_grad(self.cfg.activation, cache[layer + 1])
            d = d @ p[f"W{layer}"]
        return d

    def _member_param_grad(self, p: dict, cache: list, do: np.ndarray):
        grads = {}
        d = do
        for layer in range(self.n_layers - 1, -1, -1):
            grads[f"W{layer}"] = d.T @ cache[layer]
            grads[f"b{layer}"] = d.sum(axis=0)
            if layer > 0:
                d = (d @ p[f"W{layer}"]) * _act_grad(self.cfg.activation,
                                                     cache[layer])
        return grads

    def _build_l(self, o: np.ndarray):
        """Map raw entries to L (B, F, F); returns L and the diag sigmoids."""
        flat = o.copy()
        diag_raw = o[..., self.diag_mask]
        flat[..., self.diag_mask] = _softplus(diag_raw) + self.cfg.eps_diag
        L = np.zeros(o.shape[:-1] + (self.n_f, self.n_f))
        L[..., self.tril_rows, self.tril_cols] = flat
        # softplus' = sigmoid, needed for backprop through the diagonal
        sig = np.empty_like(diag_raw)
        pos = diag_raw >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-diag_raw[pos]))
        e = np.exp(diag_raw[~pos])
        sig[~pos] = e / (1.0 + e)
        return L, sig

    def _dl_to_do(self, dL: np.ndarray, sig: np.ndarray) -> np.ndarray:
        """Chain d(scalar)/dL (B, F, F) back to the raw entries o."""
        do = dL[..., self.tril_rows, self.tril_cols].copy()
        do[..., self.diag_mask] *= sig
        return do

    # -- ensemble forward ------------------------------------------------------
    def _forward_parts(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = self.fm(x)
        delta = z - self.z_des
        Ls, caches, sigs, os_ = [], [], [], []
        for p in self.params:
            o, cache = self._member_forward(p, z)
            L, sig = self._build_l(o)
            Ls.append(L)
            caches.append(cache)
            sigs.append(sig)
            os_.append(o)
        L_bar = sum(Ls) / len(Ls)
        y = np.einsum("bij,bi->bj", L_bar, delta)
        v = -np.einsum("bj,bj->b", y, y) + 0.0
        return x, z, delta, L_bar, y, v, caches, sigs

    def value(self, x: np.ndarray) -> np.ndarray:
        squeeze = np.asarray(x).ndim == 1
        v = self._forward_parts(x)[5]
        return v[0] if squeeze else v

    def value_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """V(x) and dV/dx including the path through L(z(x))."""
        squeeze = np.asarray(x).ndim == 1
        xb, z, delta, L_bar, y, v, caches, sigs = self._forward_parts(x)
        dv_dz = -2.0 * np.einsum("bij,bj->bi", L_bar, y)
        dv_dL = -2.0 * np.einsum("bi,bj->bij", delta, y) / len(self.params)
        for p, cache, sig in zip(self.params, caches, sigs):
            do = self._dl_to_do(dv_dL, sig)
            dv_dz = dv_dz + self._member_input_grad(p, cache, do)
        grad = np.einsum("bfi,bf->bi", self.fm.jac(xb), dv_dz)
        if squeeze:
            return v[0], grad[0]
        return v, grad

    def l_bar(self, x: np.ndarray) -> np.ndarray:
        """Ensemble-mean factor Lbar(x), for diagnostics."""
        return self._forward_parts(x)[3]

    def member_value(self, index: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = self.fm(x)
        delta = z - self.z_des
        o, _ = self._member_forward(self.params[index], z)
        L, _ = self._build_l(o)
        y = np.einsum("bij,bi->bj", L, delta)
        return -np.einsum("bj,bj->b", y, y) + 0.0

    # -- training --------------------------------------------------------------
    def member_loss_and_grads(self, index: int, x: np.ndarray,
                              targets: np.ndarray, p_norm: float):
        """Mean |V_i(x) - target|^p and parameter gradients for one member."""
        p = self.params[index]
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = self.fm(x)
        delta = z - self.z_des
        o, cache = self._member_forward(p, z)
        L, sig = self._build_l(o)
        y = np.einsum("bij,bi->bj", L, delta)
        v = -np.einsum("bj,bj->b", y, y)
        err = v - np.asarray(targets, dtype=float)
        loss = float(np.mean(np.abs(err) ** p_norm))
        # dloss/dv, then through v = -||L^T delta||^2
        dv = p_norm * np.sign(err) * np.abs(err) ** (p_norm - 1.0) / err.shape[0]
        dL = -2.0 * np.einsum("b,bi,bj->bij", dv, delta, y)
        do = self._dl_to_do(dL, sig)
        grads = self._member_param_grad(p, cache, do)
        return loss, grads


class Adam:
    """Standard Adam over a list of per-member parameter dicts."""

    def __init__(self, ensemble: ValueEnsemble, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()}
                  for p in ensemble.params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()}
                  for p in ensemble.params]

    def step(self, ensemble: ValueEnsemble,
             grads: list[dict[str, np.ndarray]]):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(ensemble.params, grads, self.m, self.v):
            for k in p:
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k]
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] ** 2
                p[k] -= self.lr * (m[k] / b1c) / (np.sqrt(v[k] / b2c) + self.eps)


def fit(ensemble: ValueEnsemble, x: np.ndarray, targets: np.ndarray,
        opt: Adam, rng: np.random.Generator, epochs: int = 10,
        batch_size: int = 256, p_norm: float = 2.0) -> float:
    """Regress every member onto the shared targets; members differ only by
    their initialization. Returns the mean minibatch loss of the last epoch."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    targets = np.asarray(targets, dtype=float)
    n = x.shape[0]
    batch_size = min(batch_size, n)
    last_epoch_losses: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            grads = []
            batch_loss = 0.0
            for i in range(len(ensemble.params)):
                loss, g = ensemble.member_loss_and_grads(
                    i, x[idx], targets[idx], p_norm)
                grads.append(g)
                batch_loss += loss
            opt.step(ensemble, grads)
            losses.append(batch_loss / len(ensemble.params))
        last_epoch_losses = losses
    return float(np.mean(last_epoch_losses))


# -- checkpoint io -------------------------------------------------------------

def save_checkpoint(path, ensemble: ValueEnsemble, system: str | None = None,
                    config_echo: dict | None = None,
                    config_hash: str | None = None) -> None:
    """Single-file format: magic line, JSON header with a layout manifest,
    then all parameters concatenated as little-endian float64."""
    layout = []
    blobs = []
    offset = 0
    for i, p in enumerate(ensemble.params):
        for k in sorted(p):
            arr = np.ascontiguousarray(p[k], dtype="<f8")
            layout.append({"name": f"member{i}/{k}",
                           "shape": list(arr.shape), "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "system": system,
        "config_hash": config_hash,
        "config_echo": config_echo,
        "x_des": [float(v) for v in ensemble.x_des],
        "feature": ensemble.fm.to_dict(),
        "net": ensemble.cfg.to_dict(),
        "dtype": "<f8",
        "layout": layout,
        "blob_bytes": offset,
    }
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode())
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(b"".join(blobs))


def load_checkpoint(path) -> tuple[ValueEnsemble, dict]:
    """Rebuild the ensemble bit-for-bit; returns (ensemble, header)."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header.get('version')!r} is not "
            f"supported (expected {CHECKPOINT_VERSION})")
    if len(blob) != header["blob_bytes"]:
        raise CheckpointError(f"{path}: truncated parameter blob")
    fm = FeatureMap.from_dict(header["feature"])
    cfg = NetConfig.from_dict(header["net"])
    members: list[dict[str, np.ndarray]] = [{} for _ in range(cfg.members)]
    for entry in header["layout"]:
        member_tag, key = entry["name"].split("/")
        idx = int(member_tag.removeprefix("member"))
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=entry["offset"]).reshape(shape)
        members[idx][key] = arr.astype(np.float64, copy=True)
    ens = ValueEnsemble(fm, np.asarray(header["x_des"], dtype=float),
                        cfg, params=members)
    return ens, header
