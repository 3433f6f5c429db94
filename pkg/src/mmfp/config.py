"""One JSON document configuring a full run.

Unknown keys are rejected at every level and every default is materialized
on load, so a saved config fully describes the run that used it.
"""

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError, ParseError
from .latentdiffusion import DiffusionTrainConfig
from .latentflow import FlowTrainConfig, SamplerConfig
from .manifold import ManifoldConfig
from .metrics import ClassifierConfig, EvalConfig

SECTIONS = {
    "manifold": ManifoldConfig,
    "flow": FlowTrainConfig,
    "diffusion": DiffusionTrainConfig,
    "sampler": SamplerConfig,
    "eval": EvalConfig,
    "classifier": ClassifierConfig,
}


@dataclass
class RunConfig:
    seed: int = 0
    manifold: ManifoldConfig = None
    flow: FlowTrainConfig = None
    diffusion: DiffusionTrainConfig = None
    sampler: SamplerConfig = None
    eval: EvalConfig = None
    classifier: ClassifierConfig = None

    def __post_init__(self):
        for name, cls in SECTIONS.items():
            if getattr(self, name) is None:
                setattr(self, name, cls(seed=self.seed))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {"seed", *SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        kw = {"seed": seed}
        for name, sec in SECTIONS.items():
            body = d.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be a JSON object")
            allowed = {f.name for f in fields(sec)}
            bad = set(body) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(bad)}")
            try:
                kw[name] = sec(**{"seed": seed, **body})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {name!r}: {exc}") from None
        return cls(**kw)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        try:
            d = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ParseError(f"config {path}: {exc.msg}", exc.lineno) from None
        return cls.from_dict(d)

    def with_seed(self, seed):
        """Copy with every section reseeded."""
        d = self.to_dict()
        d["seed"] = seed
        for name in SECTIONS:
            d[name]["seed"] = seed
        return RunConfig.from_dict(d)

    def to_dict(self):
        out = {"seed": self.seed}
        for name in SECTIONS:
            sec = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
