"""Toy deep-potential models and their JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ModelError

EMBED_FIT, MESSAGE_PASSING = "embed_fit", "message_passing"
FAMILIES = (EMBED_FIT, MESSAGE_PASSING)
FORMAT_NAME = "hybridmd.nnmodel"
FORMAT_VERSION = 1


def _mlp_shapes(prefix, sizes):
    return {**{f"{prefix}.W{k}": (sizes[k], sizes[k + 1]) for k in range(len(sizes) - 1)},
            **{f"{prefix}.b{k}": (sizes[k + 1],) for k in range(len(sizes) - 1)}}


@dataclass
class NnModel:
    """Parameters of an embedding/fitting-net potential, optionally with message passing.

    ``depth`` counts hops of the receptive field: the descriptor embedding is
    the first hop and each of the ``depth - 1`` interaction blocks adds one
    more, so an atom's energy depends on atoms within ``depth * rc_model``.
    The embed_fit family always has depth 1.
    """

    family: str
    rc_model: float
    n_types: int
    n_basis: int = 8
    hidden: int = 32
    depth: int = 1
    feature_scale: float = 0.2
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown model family {self.family!r}")
        if self.depth < 1:
            raise ModelError("depth must be >= 1")
        if self.family == EMBED_FIT and self.depth != 1:
            raise ModelError("embed_fit models have depth 1")
        if self.rc_model <= 0:
            raise ModelError("rc_model must be positive")

    # -- architecture ---------------------------------------------------
    @property
    def n_interactions(self) -> int:
        return self.depth - 1

    @property
    def receptive_field(self) -> float:
        return self.depth * self.rc_model

    @property
    def feature_dim(self) -> int:
        return self.n_types * self.n_basis

    def layer_shapes(self) -> dict:
        k, h = self.n_basis, self.hidden
        shapes = {}
        shapes.update(_mlp_shapes("emb", [self.feature_dim, h, h]))
        for layer in range(1, self.depth):
            shapes.update(_mlp_shapes(f"msg{layer}", [h + k, h, h]))
            shapes.update(_mlp_shapes(f"upd{layer}", [2 * h, h, h]))
        shapes.update(_mlp_shapes("fit", [h, h, 1]))
        return shapes

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(0.0, self.rc_model, self.n_basis)

    @property
    def width(self) -> float:
        return self.rc_model / max(self.n_basis - 1, 1)

    @classmethod
    def create(cls, family: str, n_types: int, rc_model: float = 0.6, n_basis: int = 8,
               hidden: int = 32, depth: int | None = None, seed: int = 0,
               feature_scale: float = 0.2, gain: float = 1.0) -> "NnModel":
        """Randomly initialized model; weights are a pure function of ``seed``."""
        if depth is None:
            depth = 1 if family == EMBED_FIT else 3
        model = cls(family, rc_model, n_types, n_basis, hidden, depth, feature_scale, seed)
        rng = np.random.default_rng(seed)
        for name, shape in model.layer_shapes().items():
            if ".W" in name:
                model.params[name] = rng.normal(0.0, gain / np.sqrt(shape[0]), size=shape)
            else:
                model.params[name] = rng.normal(0.0, 0.1 * gain, size=shape)
        return model

    def check(self) -> None:
        shapes = self.layer_shapes()
        missing = set(shapes) - set(self.params)
        extra = set(self.params) - set(shapes)
        if missing or extra:
            raise ModelError(f"parameter set mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, shape in shapes.items():
            if tuple(self.params[name].shape) != tuple(shape):
                raise ModelError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "NnModel":
        return NnModel(self.family, self.rc_model, self.n_types, self.n_basis, self.hidden,
                       self.depth, self.feature_scale, self.seed,
                       {k: v.copy() for k, v in self.params.items()})

    def with_params(self, params: dict) -> "NnModel":
        out = self.copy()
        out.params = {k: np.array(v, dtype=float, copy=True) for k, v in params.items()}
        return out

    def ablated(self) -> "NnModel":
        """Copy with every interaction block zeroed (messages and updates vanish)."""
        out = self.copy()
        for name in out.params:
            if name.startswith(("msg", "upd")):
                out.params[name] = np.zeros_like(out.params[name])
        return out

    def zeroed(self, final_bias: float = 0.0) -> "NnModel":
        out = self.copy()
        for name in out.params:
            out.params[name] = np.zeros_like(out.params[name])
        out.params["fit.b1"][:] = final_bias
        return out

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "family": self.family,
            "rc_model": self.rc_model,
            "n_types": self.n_types,
            "n_basis": self.n_basis,
            "hidden": self.hidden,
            "depth": self.depth,
            "feature_scale": self.feature_scale,
            "seed": self.seed,
            "params": {name: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for name, v in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NnModel":
        if data.get("format") != FORMAT_NAME:
            raise ModelError(f"not a {FORMAT_NAME} file")
        if data.get("version") != FORMAT_VERSION:
            raise ModelError(f"unsupported model version {data.get('version')}")
        params = {name: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
                  for name, entry in data["params"].items()}
        model = cls(data["family"], float(data["rc_model"]), int(data["n_types"]),
                    int(data["n_basis"]), int(data["hidden"]), int(data["depth"]),
                    float(data["feature_scale"]), int(data["seed"]), params)
        model.check()
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NnModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "NnModel":
        return cls.from_json(Path(path).read_text())
