from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import memory as mem
from .discriminator import Discriminator
from .encoder import QueryEncoder
from .exceptions import ConfigError
from .numerics import Tensor


@dataclass(frozen=True)
class Architecture:
    d: int = 1024
    hidden: int = 512
    h: int = 256
    slots: int = 512
    classes: int = 101
    similarity: str = "dot"

    def __post_init__(self):
        for name in ("d", "hidden", "h", "slots", "classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.similarity not in mem.SIMILARITIES:
            raise ConfigError(f"similarity must be one of {mem.SIMILARITIES}")

    def as_dict(self) -> dict:
        return asdict(self)

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        d, hid, h, n, k = self.d, self.hidden, self.h, self.slots, self.classes
        return {
            "encoder.W1": (hid, d), "encoder.b1": (hid,),
            "encoder.gamma": (hid,), "encoder.beta": (hid,),
            "encoder.running_mean": (hid,), "encoder.running_var": (hid,),
            "encoder.W2": (h, hid), "encoder.b2": (h,),
            "memory.keys": (n, h), "memory.values": (n, d),
            "memory.W_erase": (d, d), "memory.W_add": (d, d),
            "discriminator.W_cls": (k, d), "discriminator.b_cls": (k,),
            "discriminator.w_adv": (d,), "discriminator.b_adv": (),
        }


class AMemNet:
    """Query encoder + key-value memory generator + class-aware discriminator for one stream."""

    def __init__(self, arch: Architecture, seed: int | np.random.SeedSequence = 0):
        self.arch = arch
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        r_enc, r_mem, r_disc = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3))
        self.encoder = QueryEncoder(arch.d, arch.hidden, arch.h, r_enc)
        self.memory = mem.KeyValueMemory(arch.slots, arch.h, arch.d, r_mem, arch.similarity)
        self.discriminator = Discriminator(arch.d, arch.classes, r_disc)
        self.round_to_float32()

    # parameter groups
    def generator_parameters(self) -> dict[str, Tensor]:
        out = {f"encoder.{k}": t for k, t in self.encoder.params.items()}
        out.update({f"memory.{k}": t for k, t in self.memory.params.items()})
        return out

    def discriminator_parameters(self) -> dict[str, Tensor]:
        return {f"discriminator.{k}": t for k, t in self.discriminator.params.items()}

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.generator_parameters(), **self.discriminator_parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        """Every persisted array (parameters and batch-norm running statistics), by name."""
        out = {k: t.data for k, t in self.named_parameters().items()}
        out["encoder.running_mean"] = self.encoder.running_mean
        out["encoder.running_var"] = self.encoder.running_var
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        for name, arr in state.items():
            if name == "encoder.running_mean":
                self.encoder.running_mean = np.array(arr, dtype=np.float64)
            elif name == "encoder.running_var":
                self.encoder.running_var = np.array(arr, dtype=np.float64)
            else:
                params[name].data[...] = arr

    def round_to_float32(self) -> None:
        """Snap every persisted value to the nearest float32 so archives round-trip exactly."""
        for t in self.named_parameters().values():
            t.data[...] = t.data.astype(np.float32)
        self.encoder.running_mean = self.encoder.running_mean.astype(np.float32).astype(np.float64)
        self.encoder.running_var = self.encoder.running_var.astype(np.float32).astype(np.float64)

    # forward passes
    def generate(self, X, train: bool = False, V=None):
        return mem.generate(X, self.encoder, self.memory, train, V)

    def commit(self, pending: mem.PendingState) -> None:
        mem.commit(self.encoder, self.memory, pending)

    def predict_proba(self, X) -> np.ndarray:
        """Eval-mode class probabilities; never mutates state."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        v_hat, _ = self.generate(np.atleast_2d(X), train=False)
        _, probs = self.discriminator.classify(v_hat)
        return probs.data[0] if single else probs.data

    def transform(self, X) -> np.ndarray:
        v_hat, _ = self.generate(np.atleast_2d(np.asarray(X, dtype=np.float64)), train=False)
        return v_hat.data

    def copy(self) -> "AMemNet":
        other = AMemNet.__new__(AMemNet)
        other.arch = self.arch
        other.encoder = QueryEncoder.__new__(QueryEncoder)
        other.encoder.__dict__.update(self.encoder.__dict__)
        other.memory = mem.KeyValueMemory.__new__(mem.KeyValueMemory)
        other.memory.__dict__.update(self.memory.__dict__)
        other.discriminator = Discriminator.__new__(Discriminator)
        other.discriminator.__dict__.update(self.discriminator.__dict__)
        for part in (other.encoder, other.memory, other.discriminator):
            part.params = {k: Tensor(t.data.copy(), True, t.name) for k, t in part.params.items()}
        other.encoder.running_mean = self.encoder.running_mean.copy()
        other.encoder.running_var = self.encoder.running_var.copy()
        return other
