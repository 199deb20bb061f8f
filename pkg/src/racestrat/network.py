"""Recurrent Q-network: one GRU cell, a tanh dense layer and a linear 4-way head.

Implemented directly on numpy arrays with hand-written backpropagation through
time; the analytic gradients are cross-checked against central finite
differences in the test suite. Weights live in a flat dict of float64 arrays,
which keeps checkpoints bit-exact and inspectable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_ACTIONS = 4

WEIGHT_KEYS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "W1", "b1", "W2", "b2")
MATRIX_KEYS = ("Wz", "Uz", "Wr", "Ur", "Wh", "Uh", "W1", "W2")  # weight decay applies here


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class QNetwork:
    """GRU + tanh dense + linear head.

    output_scale multiplies the head output. Reward magnitudes here run into
    the thousands, and asking the linear head to span that range directly
    drives the dense weights so large that the tanh saturates and feature
    learning stalls; a fixed scale keeps the internal activations near unit
    range while Q-values stay in reward units.
    """

    input_dim: int
    hidden_dim: int
    params: dict[str, np.ndarray]
    output_scale: float = 1.0

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int = 64, seed: int = 0,
             output_scale: float = 1.0) -> "QNetwork":
        rng = np.random.default_rng(seed)
        d, h = input_dim, hidden_dim

        def mat(rows, cols):
            return rng.uniform(-1.0, 1.0, size=(rows, cols)) / np.sqrt(cols)

        params = {
            "Wz": mat(h, d), "Uz": mat(h, h), "bz": np.zeros(h),
            "Wr": mat(h, d), "Ur": mat(h, h), "br": np.zeros(h),
            "Wh": mat(h, d), "Uh": mat(h, h), "bh": np.zeros(h),
            "W1": mat(h, h), "b1": np.zeros(h),
            "W2": mat(N_ACTIONS, h), "b2": np.zeros(N_ACTIONS),
        }
        return cls(input_dim=d, hidden_dim=h, params=params,
                   output_scale=float(output_scale))

    def zero_hidden(self) -> np.ndarray:
        return np.zeros(self.hidden_dim)

    def copy(self) -> "QNetwork":
        return QNetwork(self.input_dim, self.hidden_dim,
                        {k: v.copy() for k, v in self.params.items()},
                        self.output_scale)

    # ---- forward ----

    def step(self, x: np.ndarray, h: np.ndarray):
        """One recurrent step; returns (q, h_next, cache for backprop)."""
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        p = self.params
        z = _sigmoid(p["Wz"] @ x + p["Uz"] @ h + p["bz"])
        r = _sigmoid(p["Wr"] @ x + p["Ur"] @ h + p["br"])
        c = np.tanh(p["Wh"] @ x + p["Uh"] @ (r * h) + p["bh"])
        h_next = (1.0 - z) * h + z * c
        d = np.tanh(p["W1"] @ h_next + p["b1"])
        q = self.output_scale * (p["W2"] @ d + p["b2"])
        cache = (x, h, z, r, c, h_next, d)
        return q, h_next, cache

    def forward(self, x: np.ndarray, hidden: np.ndarray):
        """Inference entry point: (q values, next hidden)."""
        q, h_next, _ = self.step(x, hidden)
        return q, h_next

    def forward_sequence(self, xs: list[np.ndarray], h0: np.ndarray | None = None):
        h = self.zero_hidden() if h0 is None else h0
        qs, caches = [], []
        for x in xs:
            q, h, cache = self.step(x, h)
            qs.append(q)
            caches.append(cache)
        return qs, caches

    def step_batch(self, x: np.ndarray, h: np.ndarray):
        """Vectorised step over a batch: x is (B, D), h is (B, H)."""
        p = self.params
        z = _sigmoid(x @ p["Wz"].T + h @ p["Uz"].T + p["bz"])
        r = _sigmoid(x @ p["Wr"].T + h @ p["Ur"].T + p["br"])
        c = np.tanh(x @ p["Wh"].T + (r * h) @ p["Uh"].T + p["bh"])
        h_next = (1.0 - z) * h + z * c
        d = np.tanh(h_next @ p["W1"].T + p["b1"])
        q = self.output_scale * (d @ p["W2"].T + p["b2"])
        cache = (x, h, z, r, c, h_next, d)
        return q, h_next, cache

    def forward_sequence_batch(self, xs: np.ndarray):
        """xs is (T, B, D); returns ((T, B, actions) q values, caches)."""
        h = np.zeros((xs.shape[1], self.hidden_dim))
        qs, caches = [], []
        for x in xs:
            q, h, cache = self.step_batch(x, h)
            qs.append(q)
            caches.append(cache)
        return np.stack(qs), caches

    # ---- backward ----

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def backward_sequence(self, caches, dqs, grads: dict[str, np.ndarray]) -> None:
        """Accumulate gradients through time; dqs[t] is dLoss/dq_t (may be zeros)."""
        p = self.params
        dh_next = np.zeros(self.hidden_dim)
        for cache, dq in zip(reversed(caches), reversed(dqs)):
            x, h, z, r, c, h_new, d = cache
            dq = dq * self.output_scale
            grads["W2"] += np.outer(dq, d)
            grads["b2"] += dq
            dd = p["W2"].T @ dq
            dpre1 = dd * (1.0 - d * d)
            grads["W1"] += np.outer(dpre1, h_new)
            grads["b1"] += dpre1
            dh_new = p["W1"].T @ dpre1 + dh_next

            dz = dh_new * (c - h)
            dc = dh_new * z
            dh = dh_new * (1.0 - z)

            dpre_c = dc * (1.0 - c * c)
            grads["Wh"] += np.outer(dpre_c, x)
            grads["Uh"] += np.outer(dpre_c, r * h)
            grads["bh"] += dpre_c
            drh = p["Uh"].T @ dpre_c
            dr = drh * h
            dh += drh * r

            dpre_z = dz * z * (1.0 - z)
            grads["Wz"] += np.outer(dpre_z, x)
            grads["Uz"] += np.outer(dpre_z, h)
            grads["bz"] += dpre_z
            dh += p["Uz"].T @ dpre_z

            dpre_r = dr * r * (1.0 - r)
            grads["Wr"] += np.outer(dpre_r, x)
            grads["Ur"] += np.outer(dpre_r, h)
            grads["br"] += dpre_r
            dh += p["Ur"].T @ dpre_r

            dh_next = dh

    def backward_sequence_batch(self, caches, dqs: np.ndarray,
                                grads: dict[str, np.ndarray]) -> None:
        """Batched BPTT matching backward_sequence; dqs is (T, B, actions).

        Accumulated gradients equal the sum of the per-sequence gradients the
        serial path would produce, which the test suite asserts directly.
        """
        p = self.params
        dh_next = np.zeros((dqs.shape[1], self.hidden_dim))
        for cache, dq in zip(reversed(caches), reversed(dqs)):
            x, h, z, r, c, h_new, d = cache
            dq = dq * self.output_scale
            grads["W2"] += dq.T @ d
            grads["b2"] += dq.sum(axis=0)
            dd = dq @ p["W2"]
            dpre1 = dd * (1.0 - d * d)
            grads["W1"] += dpre1.T @ h_new
            grads["b1"] += dpre1.sum(axis=0)
            dh_new = dpre1 @ p["W1"] + dh_next

            dz = dh_new * (c - h)
            dc = dh_new * z
            dh = dh_new * (1.0 - z)

            dpre_c = dc * (1.0 - c * c)
            grads["Wh"] += dpre_c.T @ x
            grads["Uh"] += dpre_c.T @ (r * h)
            grads["bh"] += dpre_c.sum(axis=0)
            drh = dpre_c @ p["Uh"]
            dr = drh * h
            dh += drh * r

            dpre_z = dz * z * (1.0 - z)
            grads["Wz"] += dpre_z.T @ x
            grads["Uz"] += dpre_z.T @ h
            grads["bz"] += dpre_z.sum(axis=0)
            dh += dpre_z @ p["Uz"]

            dpre_r = dr * r * (1.0 - r)
            grads["Wr"] += dpre_r.T @ x
            grads["Ur"] += dpre_r.T @ h
            grads["br"] += dpre_r.sum(axis=0)
            dh += dpre_r @ p["Ur"]

            dh_next = dh

    # ---- optimisation ----

    def sgd_step(
        self,
        grads: dict[str, np.ndarray],
        learning_rate: float,
        weight_decay: float = 0.0,
        max_grad_norm: float | None = None,
    ) -> None:
        """Plain SGD with decoupled weight decay and optional global norm clip."""
        if max_grad_norm is not None:
            norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
            if norm > max_grad_norm and norm > 0:
                scale = max_grad_norm / norm
                grads = {k: g * scale for k, g in grads.items()}
        for key in WEIGHT_KEYS:
            self.params[key] -= learning_rate * grads[key]
            if weight_decay and key in MATRIX_KEYS:
                self.params[key] -= learning_rate * weight_decay * self.params[key]

    # ---- flat parameter view (finite-difference checks, serialization) ----

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in WEIGHT_KEYS])

    def set_flat_params(self, flat: np.ndarray) -> None:
        offset = 0
        for key in WEIGHT_KEYS:
            size = self.params[key].size
            self.params[key] = flat[offset:offset + size].reshape(self.params[key].shape).copy()
            offset += size
        if offset != flat.size:
            raise ValueError("flat parameter vector has wrong length")

    def flat_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in WEIGHT_KEYS])
