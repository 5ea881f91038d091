"""LSTM sequence classifier: gated cell unrolled over time, dense softmax head.

Gates act on the concatenation ``[h_prev, x_t]``::

    i = sigmoid(W_i z + b_i)    f = sigmoid(W_f z + b_f)    o = sigmoid(W_o z + b_o)
    s = f * s_prev + i * act(W_c z + b_c)
    h = o * tanh(s)

``act`` is the logistic sigmoid by default; ``candidate="tanh"`` selects the
more common hyperbolic-tangent candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hsiband.nn.layers import glorot_uniform, sigmoid, softmax, softmax_cross_entropy

GATES = ("i", "f", "o", "c")


def _candidate(a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return np.tanh(a)
    raise ValueError(f"unknown candidate activation {kind!r}")


def _check_cell_shapes(params: dict[str, np.ndarray], hidden: int, inputs: int) -> None:
    for g in GATES:
        w, b = params[f"W_{g}"], params[f"b_{g}"]
        if w.shape != (hidden, hidden + inputs):
            raise ValueError(f"W_{g} has shape {w.shape}, expected {(hidden, hidden + inputs)}")
        if b.shape != (hidden,):
            raise ValueError(f"b_{g} has shape {b.shape}, expected {(hidden,)}")


def lstm_cell_forward(
    x_t: np.ndarray,
    h_prev: np.ndarray,
    s_prev: np.ndarray,
    params: dict[str, np.ndarray],
    candidate: str = "sigmoid",
) -> tuple[np.ndarray, np.ndarray]:
    """One time step. Works on vectors or on ``(N, ·)`` batches; returns ``(h_t, s_t)``."""
    x_t, h_prev, s_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, s_prev))
    _check_cell_shapes(params, h_prev.shape[-1], x_t.shape[-1])
    if s_prev.shape != h_prev.shape:
        raise ValueError(f"cell state shape {s_prev.shape} != hidden shape {h_prev.shape}")
    z = np.concatenate([h_prev, x_t], axis=-1)
    i = sigmoid(z @ params["W_i"].T + params["b_i"])
    f = sigmoid(z @ params["W_f"].T + params["b_f"])
    o = sigmoid(z @ params["W_o"].T + params["b_o"])
    g = _candidate(z @ params["W_c"].T + params["b_c"], candidate)
    s_t = f * s_prev + i * g
    return o * np.tanh(s_t), s_t


def lstm_classify_forward(
    sequence: np.ndarray, params: dict[str, np.ndarray], candidate: str = "sigmoid"
) -> np.ndarray:
    """Class probabilities for one ``(T, D)`` sequence, starting from zero state."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2 or sequence.shape[0] < 1:
        raise ValueError(f"expected a (T, D) sequence with T >= 1, got shape {sequence.shape}")
    hidden = params["b_i"].shape[0]
    h = np.zeros(hidden)
    s = np.zeros(hidden)
    for x_t in sequence:
        h, s = lstm_cell_forward(x_t, h, s, params, candidate)
    return softmax(h @ params["head_W"].T + params["head_b"])


@dataclass(frozen=True)
class LstmClassifier:
    """Rows of an image are fed as time steps: ``T = rows``, ``input_size = cols``."""

    input_size: int
    hidden_size: int = 8
    n_classes: int = 2
    candidate: str = "sigmoid"
    forget_bias: float = 1.0

    kind = "lstm"

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        h, d = self.hidden_size, self.input_size
        params: dict[str, np.ndarray] = {}
        for g in GATES:
            params[f"W_{g}"] = glorot_uniform(rng, (h, h + d), h + d, h)
            params[f"b_{g}"] = np.zeros(h)
        params["b_f"] += self.forget_bias
        params["head_W"] = glorot_uniform(rng, (self.n_classes, h), h, self.n_classes)
        params["head_b"] = np.zeros(self.n_classes)
        return params

    def _stacked(self, params: dict[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        w = np.concatenate([params[f"W_{g}"] for g in GATES], axis=0)
        b = np.concatenate([params[f"b_{g}"] for g in GATES])
        return w, b

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[2] != self.input_size or x.shape[1] < 1:
            raise ValueError(
                f"expected (N, T, {self.input_size}) sequences with T >= 1, got shape {x.shape}"
            )

    def _unroll(self, params: dict[str, np.ndarray], x: np.ndarray, keep: bool):
        n, t_len, _ = x.shape
        hid = self.hidden_size
        w, b = self._stacked(params)
        w_h, w_x = w[:, :hid], w[:, hid:]
        # input contribution for all steps in one matmul
        ax = x @ w_x.T + b
        h = np.zeros((n, hid))
        s = np.zeros((n, hid))
        cache = []
        for t in range(t_len):
            a = ax[:, t, :] + h @ w_h.T
            i = sigmoid(a[:, :hid])
            f = sigmoid(a[:, hid : 2 * hid])
            o = sigmoid(a[:, 2 * hid : 3 * hid])
            g = _candidate(a[:, 3 * hid :], self.candidate)
            s_new = f * s + i * g
            tanh_s = np.tanh(s_new)
            if keep:
                cache.append((h, s, i, f, o, g, tanh_s))
            h, s = o * tanh_s, s_new
        return h, cache

    def logits(self, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        h, _ = self._unroll(params, x, keep=False)
        return h @ params["head_W"].T + params["head_b"]

    def predict_proba(self, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(params, x))

    def loss_and_grad(
        self,
        params: dict[str, np.ndarray],
        x: np.ndarray,
        y: np.ndarray,
        weight_decay: float = 0.0,
    ) -> tuple[float, dict[str, np.ndarray]]:
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        hid = self.hidden_size
        h_last, cache = self._unroll(params, x, keep=True)
        logits = h_last @ params["head_W"].T + params["head_b"]
        loss, dlogits = softmax_cross_entropy(logits, y)

        grads = {"head_W": dlogits.T @ h_last, "head_b": dlogits.sum(axis=0)}
        w, _ = self._stacked(params)
        w_h = w[:, :hid]
        dh = dlogits @ params["head_W"]
        ds = np.zeros_like(dh)
        da_all = np.empty((x.shape[0], x.shape[1], 4 * hid))
        dw_h = np.zeros((4 * hid, hid))
        for t in range(x.shape[1] - 1, -1, -1):
            h_prev, s_prev, i, f, o, g, tanh_s = cache[t]
            do = dh * tanh_s
            ds = ds + dh * o * (1.0 - tanh_s**2)
            if self.candidate == "sigmoid":
                dg_pre = ds * i * g * (1.0 - g)
            else:
                dg_pre = ds * i * (1.0 - g**2)
            da = np.concatenate(
                [ds * g * i * (1.0 - i), ds * s_prev * f * (1.0 - f), do * o * (1.0 - o), dg_pre],
                axis=1,
            )
            da_all[:, t, :] = da
            dw_h += da.T @ h_prev
            dh = da @ w_h
            ds = ds * f
        flat_da = da_all.reshape(-1, 4 * hid)
        dw_x = flat_da.T @ x.reshape(-1, self.input_size)
        dw = np.concatenate([dw_h, dw_x], axis=1)
        db = flat_da.sum(axis=0)
        for k, g in enumerate(GATES):
            grads[f"W_{g}"] = dw[k * hid : (k + 1) * hid]
            grads[f"b_{g}"] = db[k * hid : (k + 1) * hid]

        if weight_decay:
            loss += add_weight_decay(params, grads, weight_decay)
        return loss, grads


def add_weight_decay(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], weight_decay: float) -> float:
    """Add ``0.5 * weight_decay * ||W||^2`` over weight tensors (biases excluded).

    Updates ``grads`` in place and returns the penalty value.
    """
    penalty = 0.0
    for name, value in params.items():
        if name.startswith("b") or name.endswith("_b"):
            continue
        penalty += 0.5 * weight_decay * float(np.sum(value * value))
        grads[name] = grads[name] + weight_decay * value
    return penalty
