"""Affine projection heads into a shared, unit-normalized embedding space."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "reveal-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ProjectionHead:
    W: np.ndarray  # P x d_in
    b: np.ndarray  # P

    @classmethod
    def init(cls, d_in: int, P: int, rng: np.random.Generator) -> "ProjectionHead":
        return cls(rng.standard_normal((P, d_in)) / np.sqrt(d_in), np.zeros(P))

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def P(self) -> int:
        return self.W.shape[0]

    def forward(self, X: np.ndarray):
        """Return unit rows ``U`` plus what backward needs."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise ValueError(f"expected input width {self.d_in}, got {X.shape}")
        V = X @ self.W.T + self.b
        norms = np.linalg.norm(V, axis=1)
        if np.any(norms == 0):
            raise ValueError(f"row {int(np.flatnonzero(norms == 0)[0])} projects to the zero vector")
        U = V / norms[:, None]
        return U, (X, U, norms)

    @staticmethod
    def backward(cache, dU: np.ndarray):
        """Gradients of W and b given the gradient on the unit rows."""
        X, U, norms = cache
        # Jacobian of v / |v| is (I - u u^T) / |v|
        dV = (dU - U * np.sum(dU * U, axis=1, keepdims=True)) / norms[:, None]
        return dV.T @ X, dV.sum(axis=0)

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.W.copy(), self.b.copy())


@dataclass
class EmbeddingPair:
    I: np.ndarray
    T_emb: np.ndarray


@dataclass
class AlignmentModel:
    image_head: ProjectionHead
    text_head: ProjectionHead
    temperature: float = 0.07
    beta: float = -0.6319
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def init(cls, d_img, d_txt, P=64, seed=0, temperature=0.07, beta=-0.6319, config=None):
        rng = np.random.default_rng(seed)
        return cls(
            ProjectionHead.init(d_img, P, rng),
            ProjectionHead.init(d_txt, P, rng),
            temperature,
            beta,
            dict(config or {}),
        )

    def params(self) -> dict:
        return {
            "W_img": self.image_head.W,
            "b_img": self.image_head.b,
            "W_txt": self.text_head.W,
            "b_txt": self.text_head.b,
        }

    def copy(self) -> "AlignmentModel":
        return AlignmentModel(
            self.image_head.copy(), self.text_head.copy(), self.temperature, self.beta, dict(self.config)
        )

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "image_head": {"W": self.image_head.W.tolist(), "b": self.image_head.b.tolist()},
            "text_head": {"W": self.text_head.W.tolist(), "b": self.text_head.b.tolist()},
            "temperature": self.temperature,
            "beta": self.beta,
            "config": self.config,
            "config_hash": config_hash(self.config),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlignmentModel":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a reveal checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        heads = [
            ProjectionHead(np.array(data[k]["W"], dtype=float), np.array(data[k]["b"], dtype=float))
            for k in ("image_head", "text_head")
        ]
        return cls(*heads, float(data["temperature"]), float(data["beta"]), dict(data.get("config", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AlignmentModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def encode(model: AlignmentModel, image_inputs, text_features) -> EmbeddingPair:
    I, _ = model.image_head.forward(image_inputs)
    T, _ = model.text_head.forward(text_features)
    return EmbeddingPair(I, T)


def cosine_matrix(pair: EmbeddingPair) -> np.ndarray:
    return pair.I @ pair.T_emb.T
