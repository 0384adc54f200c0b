from __future__ import annotations

import numpy as np

from . import numerics as nx
from .encoder import glorot_uniform
from .exceptions import DimensionError
from .numerics import Tensor


class Discriminator:
    """Class-aware discriminator: a K-way classifier head and a real/fake head.

    Each head is one fully-connected layer over the same d-dimensional feature.
    """

    def __init__(self, d: int, classes: int, rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.d, self.classes = d, classes
        self.params = {
            "W_cls": Tensor(glorot_uniform(rng, classes, d), True, "W_cls"),
            "b_cls": Tensor(np.zeros(classes), True, "b_cls"),
            "w_adv": Tensor(glorot_uniform(rng, 1, d)[0], True, "w_adv"),
            "b_adv": Tensor(np.zeros(()), True, "b_adv"),
        }

    def _check(self, v) -> Tensor:
        v = nx.as_tensor(v)
        if v.ndim not in (1, 2) or v.shape[-1] != self.d:
            raise DimensionError(f"discriminator expects features of size {self.d}, got {v.shape}")
        return v

    def class_logits(self, v) -> Tensor:
        v = self._check(v)
        return nx.affine(self.params["W_cls"], self.params["b_cls"], v)

    def classify(self, v) -> tuple[Tensor, Tensor]:
        logits = self.class_logits(v)
        return logits, nx.softmax(logits, axis=-1)

    def adversarial_logit(self, v) -> Tensor:
        v = self._check(v)
        w = nx.reshape(self.params["w_adv"], (1, self.d))
        b = nx.reshape(self.params["b_adv"], (1,))
        out = nx.affine(w, b, v)
        return nx.reshape(out, out.shape[:-1])

    def adversarial_score(self, v) -> tuple[Tensor, Tensor]:
        """Realness logit and its sigmoid probability."""
        logit = self.adversarial_logit(v)
        return logit, nx.sigmoid(logit)
