"""Self-contained model checkpoints stored as JSON.

Floats are written with Python's shortest round-trip representation, so a
save/load cycle reproduces every parameter bit for bit.
"""

import json
from dataclasses import dataclass, field

from .errors import ConfigError, ParseError, ShapeError
from .latentdiffusion import DiffusionHead
from .latentflow import FlowHead
from .manifold import MotionManifold
from .nncore import Mlp
from .textcond import TEXT_DIM, HashTextEncoder, encoder_from_dict

SCHEMA_VERSION = 1
HEADS = {"flow": FlowHead, "diffusion": DiffusionHead}


@dataclass
class Checkpoint:
    manifold: MotionManifold
    text_encoder: object = field(default_factory=HashTextEncoder)
    text_head: Mlp = None
    head: object = None
    dataset_fingerprint: str = ""
    configs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Check the dimension cross-constraints between components."""
        if self.head is None:
            return
        if self.text_head is None:
            raise ShapeError("a generative head requires a text head")
        if self.text_head.spec.n_in != TEXT_DIM:
            raise ShapeError(f"text head input is {self.text_head.spec.n_in}, expected {TEXT_DIM}")
        if self.head.m != self.manifold.m:
            raise ShapeError(f"generative head works in m={self.head.m}, manifold has m={self.manifold.m}")
        if self.head.p != self.text_head.spec.n_out:
            raise ShapeError(f"generative head expects p={self.head.p}, text head gives {self.text_head.spec.n_out}")

    @property
    def has_head(self):
        return self.head is not None

    def with_head(self, text_head, head, configs):
        return Checkpoint(self.manifold, self.text_encoder, text_head, head, self.dataset_fingerprint,
                          {**self.configs, **configs})

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset_fingerprint": self.dataset_fingerprint,
            "manifold": self.manifold.to_dict(),
            "text_encoder": self.text_encoder.to_dict(),
            "text_head": None if self.text_head is None else self.text_head.to_dict(),
            "head": None if self.head is None else self.head.to_dict(),
            "configs": self.configs,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"checkpoint schema_version {d.get('schema_version')!r} is not {SCHEMA_VERSION}")
        head = d.get("head")
        if head is not None:
            if head.get("kind") not in HEADS:
                raise ConfigError(f"unknown generative head kind {head.get('kind')!r}")
            head = HEADS[head["kind"]].from_dict(head)
        th = d.get("text_head")
        return cls(MotionManifold.from_dict(d["manifold"]), encoder_from_dict(d["text_encoder"]),
                   None if th is None else Mlp.from_dict(th), head, d.get("dataset_fingerprint", ""),
                   d.get("configs", {}))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"checkpoint {path}: {exc.msg}", exc.lineno) from None
        return cls.from_dict(d)
