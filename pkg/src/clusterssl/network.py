"""Small dense network with explicit gradients.

A leaky-ReLU MLP trunk feeds two heads: a K-way head whose rows are
L2-normalized onto the unit sphere, and a 4-way logit head used for the
rotation pretext task. Forward caches activations; backward replays the
chain by hand (no autodiff) and returns a flat gradient vector congruent
to the flat parameter view.
"""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError

NORM_EPS = 1e-12


def leaky_relu(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, z, slope * z)


def leaky_relu_grad(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0.0, 1.0, slope)


def l2_normalize_rows(v: np.ndarray, eps: float = NORM_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Normalize each row to unit L2 norm.

    Rows with norm below ``eps`` are replaced by the first canonical basis
    vector (a documented degenerate rule; their gradient is zero).
    Returns (normalized, row_norms).
    """
    with np.errstate(over="ignore"):
        norms = np.linalg.norm(v, axis=1)
    safe = np.maximum(norms, eps)
    out = v / safe[:, None]
    degenerate = norms < eps
    if np.any(degenerate):
        out = out.copy()
        out[degenerate] = 0.0
        out[degenerate, 0] = 1.0
    return out, norms


def l2_normalize_rows_backward(
    v: np.ndarray, out: np.ndarray, norms: np.ndarray, upstream: np.ndarray, eps: float = NORM_EPS
) -> np.ndarray:
    """Gradient of row normalization: (I - y y^T) g / ||v|| per row, 0 for degenerate rows."""
    safe = np.maximum(norms, eps)
    inner = np.sum(out * upstream, axis=1, keepdims=True)
    grad = (upstream - out * inner) / safe[:, None]
    degenerate = norms < eps
    if np.any(degenerate):
        grad = grad.copy()
        grad[degenerate] = 0.0
    return grad


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shift-stabilized."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient w.r.t. the logits.

    The returned gradient already carries the 1/batch factor.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.shape[0]
    if m == 0:
        raise ValueError("cross-entropy over an empty batch")
    if labels.shape != (m,):
        raise ValueError(f"labels shape {labels.shape} != ({m},)")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"labels out of range [0, {logits.shape[1]})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = float(-log_p[np.arange(m), labels].mean())
    d_logits = np.exp(log_p)
    d_logits[np.arange(m), labels] -= 1.0
    return loss, d_logits / m


class AffineLayer:
    """y = x @ W.T + b with cached input for the backward pass."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        scale = np.sqrt(2.0 / in_dim)
        self.weight = rng.normal(0.0, scale, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias

    def backward(self, x: np.ndarray, d_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        d_weight = d_out.T @ x
        d_bias = d_out.sum(axis=0)
        d_x = d_out @ self.weight
        return d_x, d_weight, d_bias


class Model:
    """MLP trunk + normalized K-way clustering head + 4-way rotation head.

    ``forward`` is pure given a parameter snapshot; ``backward``/parameter
    mutation require exclusive access. The parameter count is fixed at
    construction and never changes.
    """

    N_ROTATIONS = 4

    def __init__(
        self,
        in_dim: int,
        hidden_sizes: tuple[int, ...],
        k: int,
        leaky_slope: float = 0.01,
        rng: np.random.Generator | None = None,
    ):
        if in_dim < 1 or k < 1:
            raise ValueError(f"in_dim and k must be positive, got {in_dim}, {k}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = int(in_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.k = int(k)
        self.leaky_slope = float(leaky_slope)
        self.trunk: list[AffineLayer] = []
        prev = self.in_dim
        for h in self.hidden_sizes:
            self.trunk.append(AffineLayer(prev, h, rng))
            prev = h
        self.cluster_head = AffineLayer(prev, self.k, rng)
        self.rot_head = AffineLayer(prev, self.N_ROTATIONS, rng)
        self._cache = None

    # -- parameter plumbing ------------------------------------------------

    def _all_layers(self) -> list[AffineLayer]:
        return [*self.trunk, self.cluster_head, self.rot_head]

    @property
    def n_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self._all_layers())

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([layer.weight.ravel(), layer.bias]) for layer in self._all_layers()]
        )

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        pos = 0
        for layer in self._all_layers():
            w = layer.weight.size
            layer.weight = flat[pos : pos + w].reshape(layer.weight.shape).copy()
            pos += w
            b = layer.bias.size
            layer.bias = flat[pos : pos + b].copy()
            pos += b

    def arch(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "k": self.k,
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_arch(cls, arch: dict) -> "Model":
        return cls(
            in_dim=arch["in_dim"],
            hidden_sizes=tuple(arch["hidden_sizes"]),
            k=arch["k"],
            leaky_slope=arch["leaky_slope"],
        )

    def copy(self) -> "Model":
        clone = Model.from_arch(self.arch())
        clone.set_params(self.get_params())
        return clone

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Run a batch through trunk and both heads.

        x: (batch, in_dim). Returns (cluster_out, rot_logits) where each
        cluster_out row has unit L2 norm and rot_logits has 4 columns.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        acts = [x]
        pre = []
        h = x
        for layer in self.trunk:
            z = layer.forward(h)
            pre.append(z)
            h = leaky_relu(z, self.leaky_slope)
            acts.append(h)
        cluster_pre = self.cluster_head.forward(h)
        cluster_out, norms = l2_normalize_rows(cluster_pre)
        if not np.all(np.isfinite(norms)):
            # dividing by an overflowed norm would quietly zero the row and
            # keep every loss bounded, hiding a runaway parameter scale
            raise DivergenceError("cluster head activations overflowed")
        rot_logits = self.rot_head.forward(h)
        self._cache = (acts, pre, cluster_pre, cluster_out, norms)
        return cluster_out, rot_logits

    def backward(
        self, d_cluster: np.ndarray | None = None, d_rot: np.ndarray | None = None
    ) -> np.ndarray:
        """Backpropagate upstream gradients from either or both heads.

        Returns a flat gradient vector congruent to ``get_params()``.
        Raises RuntimeError if no forward pass has been cached.
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts, pre, cluster_pre, cluster_out, norms = self._cache
        batch = acts[0].shape[0]
        penult = acts[-1]
        d_penult = np.zeros_like(penult)
        grads_tail: list[tuple[np.ndarray, np.ndarray]] = []

        if d_cluster is not None:
            d_cluster = np.asarray(d_cluster, dtype=np.float64)
            if d_cluster.shape != (batch, self.k):
                raise ValueError(f"d_cluster shape {d_cluster.shape} != {(batch, self.k)}")
            d_pre_norm = l2_normalize_rows_backward(cluster_pre, cluster_out, norms, d_cluster)
            d_h, dw, db = self.cluster_head.backward(penult, d_pre_norm)
            d_penult += d_h
        else:
            dw = np.zeros_like(self.cluster_head.weight)
            db = np.zeros_like(self.cluster_head.bias)
        grads_tail.append((dw, db))

        if d_rot is not None:
            d_rot = np.asarray(d_rot, dtype=np.float64)
            if d_rot.shape != (batch, self.N_ROTATIONS):
                raise ValueError(f"d_rot shape {d_rot.shape} != {(batch, self.N_ROTATIONS)}")
            d_h, dw, db = self.rot_head.backward(penult, d_rot)
            d_penult += d_h
        else:
            dw = np.zeros_like(self.rot_head.weight)
            db = np.zeros_like(self.rot_head.bias)
        grads_tail.append((dw, db))

        trunk_grads: list[tuple[np.ndarray, np.ndarray]] = []
        d_h = d_penult
        for idx in range(len(self.trunk) - 1, -1, -1):
            d_z = d_h * leaky_relu_grad(pre[idx], self.leaky_slope)
            d_h, dw, db = self.trunk[idx].backward(acts[idx], d_z)
            trunk_grads.append((dw, db))
        trunk_grads.reverse()

        pieces = []
        for dw, db in [*trunk_grads, *grads_tail]:
            pieces.append(dw.ravel())
            pieces.append(db)
        return np.concatenate(pieces)
