"""Two conv/ReLU/max-pool blocks followed by three dense layers and softmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hsiband.nn.layers import (
    conv2d_valid,
    conv2d_valid_backward,
    glorot_uniform,
    maxpool2,
    maxpool2_backward,
    relu,
    softmax,
    softmax_cross_entropy,
)
from hsiband.nn.lstm import add_weight_decay


@dataclass(frozen=True)
class CnnClassifier:
    image_size: int
    kernel1: int = 5
    channels1: int = 8
    kernel2: int = 5
    channels2: int = 16
    fc1: int = 128
    fc2: int = 64
    n_classes: int = 2

    kind = "cnn"

    def feature_shape(self) -> tuple[int, int, int]:
        size = self.image_size
        for k in (self.kernel1, self.kernel2):
            size = size - k + 1
            if size < 2:
                raise ValueError(f"image size {self.image_size} too small for this architecture")
            size //= 2
        return size, size, self.channels2

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        k1, c1, k2, c2 = self.kernel1, self.channels1, self.kernel2, self.channels2
        flat = int(np.prod(self.feature_shape()))
        params = {
            "conv1_W": glorot_uniform(rng, (k1, k1, 1, c1), k1 * k1, k1 * k1 * c1),
            "conv1_b": np.zeros(c1),
            "conv2_W": glorot_uniform(rng, (k2, k2, c1, c2), k2 * k2 * c1, k2 * k2 * c2),
            "conv2_b": np.zeros(c2),
        }
        sizes = [flat, self.fc1, self.fc2, self.n_classes]
        for idx in range(3):
            fan_in, fan_out = sizes[idx], sizes[idx + 1]
            params[f"fc{idx + 1}_W"] = glorot_uniform(rng, (fan_out, fan_in), fan_in, fan_out)
            params[f"fc{idx + 1}_b"] = np.zeros(fan_out)
        return params

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[..., None]
        if x.ndim != 4 or x.shape[1:] != (self.image_size, self.image_size, 1):
            raise ValueError(
                f"expected images of shape ({self.image_size}, {self.image_size}, 1), got {x.shape[1:]}"
            )
        return x

    def _forward(self, params: dict[str, np.ndarray], x: np.ndarray):
        z1, cols1 = conv2d_valid(x, params["conv1_W"], params["conv1_b"], return_cols=True)
        a1 = relu(z1)
        p1 = maxpool2(a1)
        z2, cols2 = conv2d_valid(p1, params["conv2_W"], params["conv2_b"], return_cols=True)
        a2 = relu(z2)
        p2 = maxpool2(a2)
        flat = p2.reshape(x.shape[0], -1)
        h1 = relu(flat @ params["fc1_W"].T + params["fc1_b"])
        h2 = relu(h1 @ params["fc2_W"].T + params["fc2_b"])
        logits = h2 @ params["fc3_W"].T + params["fc3_b"]
        return logits, (z1, a1, p1, z2, a2, p2, flat, h1, h2, cols1, cols2)

    def logits(self, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
        x = self._check_input(np.asarray(x, dtype=np.float64))
        return self._forward(params, x)[0]

    def predict_proba(self, params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(params, x))

    def loss_and_grad(
        self,
        params: dict[str, np.ndarray],
        x: np.ndarray,
        y: np.ndarray,
        weight_decay: float = 0.0,
    ) -> tuple[float, dict[str, np.ndarray]]:
        x = self._check_input(np.asarray(x, dtype=np.float64))
        logits, (z1, a1, p1, z2, a2, p2, flat, h1, h2, cols1, cols2) = self._forward(params, x)
        loss, dlogits = softmax_cross_entropy(logits, y)

        g: dict[str, np.ndarray] = {}
        g["fc3_W"] = dlogits.T @ h2
        g["fc3_b"] = dlogits.sum(axis=0)
        dh2 = (dlogits @ params["fc3_W"]) * (h2 > 0)
        g["fc2_W"] = dh2.T @ h1
        g["fc2_b"] = dh2.sum(axis=0)
        dh1 = (dh2 @ params["fc2_W"]) * (h1 > 0)
        g["fc1_W"] = dh1.T @ flat
        g["fc1_b"] = dh1.sum(axis=0)
        dp2 = (dh1 @ params["fc1_W"]).reshape(p2.shape)
        dz2 = maxpool2_backward(a2, dp2) * (z2 > 0)
        dp1, g["conv2_W"], g["conv2_b"] = conv2d_valid_backward(p1, params["conv2_W"], dz2, cols2)
        dz1 = maxpool2_backward(a1, dp1) * (z1 > 0)
        _, g["conv1_W"], g["conv1_b"] = conv2d_valid_backward(x, params["conv1_W"], dz1, cols1, need_dx=False)

        if weight_decay:
            loss += add_weight_decay(params, g, weight_decay)
        return loss, g


def cnn_forward(image: np.ndarray, params: dict[str, np.ndarray], model: CnnClassifier | None = None) -> np.ndarray:
    """Class probabilities for one ``(H, W)`` or ``(H, W, 1)`` image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if model is None:
        model = CnnClassifier(image_size=image.shape[0], **architecture_of(params))
    return model.predict_proba(params, image[None])[0]


def architecture_of(params: dict[str, np.ndarray]) -> dict[str, int]:
    """Recover layer sizes (everything but ``image_size``) from a parameter set."""
    k1, _, _, c1 = params["conv1_W"].shape
    k2, _, _, c2 = params["conv2_W"].shape
    return {
        "kernel1": int(k1),
        "channels1": int(c1),
        "kernel2": int(k2),
        "channels2": int(c2),
        "fc1": int(params["fc1_W"].shape[0]),
        "fc2": int(params["fc2_W"].shape[0]),
        "n_classes": int(params["fc3_W"].shape[0]),
    }
