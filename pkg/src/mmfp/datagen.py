"""Synthetic demonstration datasets, resampling, and the dataset file format.

Generators reproduce the experimental shapes at desk scale: a 2D navigation
set with four passages, SE(3) pouring, and 7-DoF waving.  Every trajectory
carries several text annotations at increasing levels of detail, and each
annotation carries ground-truth class tags used by the evaluation classifiers.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ParseError, ShapeError, ValidationError
from .liegeom import pose, so3_exp, so3_log
from .rng import make_rng
from .trajectory import Normalization, Space, Trajectory

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Annotation:
    level: int
    text: str
    tags: dict = field(default_factory=dict)


@dataclass
class MotionDataset:
    space: Space
    T: int
    trajectories: list
    annotations: list
    normalization: Normalization
    label_names: dict = field(default_factory=dict)
    # Off-distribution examples used only to train validity classifiers.
    negatives: list = field(default_factory=list)

    def __len__(self):
        return len(self.trajectories)

    @property
    def levels(self):
        return sorted({a.level for anns in self.annotations for a in anns})

    def texts(self, level=None):
        return sorted({a.text for anns in self.annotations for a in anns if level in (None, a.level)})

    def indices_for_text(self, text):
        return [i for i, anns in enumerate(self.annotations) if any(a.text == text for a in anns)]

    def annotation_for_text(self, text):
        for anns in self.annotations:
            for a in anns:
                if a.text == text:
                    return a
        raise KeyError(text)

    def tags_for_text(self, text):
        return dict(self.annotation_for_text(text).tags)

    def label_kinds(self):
        kinds = {k for anns in self.annotations for a in anns for k in a.tags}
        return sorted(kinds)

    def validate(self):
        if not self.trajectories:
            raise ValidationError("dataset has no trajectories")
        if len(self.annotations) != len(self.trajectories):
            raise ValidationError("annotations and trajectories differ in length")
        for i, x in enumerate(self.trajectories):
            if x.space != self.space or x.T != self.T:
                raise ValidationError(f"trajectory {i} has space/T {x.space}/{x.T}, expected {self.space}/{self.T}")
            if not self.annotations[i]:
                raise ValidationError(f"trajectory {i} has no annotations")
        levels = self.levels
        if levels != list(range(1, len(levels) + 1)):
            raise ValidationError(f"annotation levels must be contiguous from 1, got {levels}")
        seen = {}
        for anns in self.annotations:
            for a in anns:
                prev = seen.setdefault(a.text, (a.level, a.tags))
                if prev != (a.level, a.tags):
                    raise ValidationError(f"text {a.text!r} carries inconsistent level/tags")
        return self

    # -- serialization ----------------------------------------------------

    def to_json(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "space": self.space.to_json(),
            "T": self.T,
            "normalization": self.normalization.to_dict(),
            "label_names": self.label_names,
            "trajectories": [
                {
                    "points": x.local().tolist(),
                    "annotations": [
                        {"level": a.level, "text": a.text, "tags": dict(sorted(a.tags.items()))} for a in anns
                    ],
                }
                for x, anns in zip(self.trajectories, self.annotations)
            ],
        }
        if self.negatives:
            doc["negatives"] = [
                {"points": x.local().tolist(), "tags": dict(sorted(tags.items()))} for x, tags in self.negatives
            ]
        return json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    def fingerprint(self):
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno) from None
        try:
            if doc["schema_version"] != SCHEMA_VERSION:
                raise ParseError(f"unsupported dataset schema_version {doc['schema_version']}")
            space = Space.from_json(doc["space"])
            T = int(doc["T"])
            trajs, anns = [], []
            for rec in doc["trajectories"]:
                trajs.append(Trajectory.from_local(space, np.array(rec["points"], dtype=np.float64)))
                anns.append(
                    [Annotation(int(a["level"]), str(a["text"]), {k: int(v) for k, v in a["tags"].items()})
                     for a in rec["annotations"]]
                )
            negs = [
                (Trajectory.from_local(space, np.array(r["points"], dtype=np.float64)),
                 {k: int(v) for k, v in r["tags"].items()})
                for r in doc.get("negatives", [])
            ]
            ds = cls(space, T, trajs, anns, Normalization.from_dict(doc["normalization"]),
                     {k: list(v) for k, v in doc.get("label_names", {}).items()}, negs)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"malformed dataset: {exc!r}") from None
        return ds.validate()

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _finish(space, trajs, anns, label_names, negatives=()):
    ds = MotionDataset(space, trajs[0].T, trajs, anns, Normalization.fit(space, trajs), label_names, list(negatives))
    # Round through the file format so in-memory and on-disk datasets agree bitwise.
    return MotionDataset.from_json(ds.to_json())


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def resample_trajectory(x, T_new):
    """Linear resampling on a uniform time parameter; SE(3) rotations follow geodesics."""
    T = x.T
    if T < 2 or T_new < 2:
        raise ShapeError(f"resampling needs T >= 2 and T_new >= 2 (got {T}, {T_new})")
    if T_new == T:
        return Trajectory(x.space, x.points.copy())
    u = np.arange(T_new) * ((T - 1) / (T_new - 1))
    k = np.minimum(np.floor(u).astype(int), T - 2)
    frac = u - k
    P = x.points
    if x.space.kind == "se3":
        out = np.zeros((T_new, 4, 4))
        out[:, 3, 3] = 1.0
        out[:, :3, 3] = (1.0 - frac)[:, None] * P[k, :3, 3] + frac[:, None] * P[k + 1, :3, 3]
        R0 = P[k, :3, :3]
        step = so3_log(np.swapaxes(R0, 1, 2) @ P[k + 1, :3, :3])
        out[:, :3, :3] = R0 @ so3_exp(frac[:, None] * step)
    else:
        out = (1.0 - frac)[:, None] * P[k] + frac[:, None] * P[k + 1]
    out[0] = P[0]
    out[-1] = P[-1]
    return Trajectory(x.space, out)


def _min_jerk(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


# ---------------------------------------------------------------------------
# 2D navigation
# ---------------------------------------------------------------------------

TOY_START = (-4.0, 0.0)
TOY_PASSAGES = ("top", "upper", "lower", "bottom")
TOY_PEAKS = (3.0, 1.2, -1.2, -3.0)
TOY_LEVEL1 = "go to the origin"
TOY_WALL_MARGIN = 0.6


def toy_text(route):
    return f"go to the origin via the {TOY_PASSAGES[route]} passage"


def _toy_route(rng, route, T):
    h = TOY_PEAKS[route]
    ctrl = np.array([TOY_START, (-3.2, 0.75 * h), (-2.0, h), (-0.8, 0.75 * h), (0.0, 0.0)])
    # 3% of the 6-unit workspace height
    ctrl[1:-1] += rng.normal(scale=0.18, size=(3, 2))
    knots = np.linspace(0.0, 1.0, len(ctrl))
    u = np.linspace(0.0, 1.0, T)
    pts = CubicSpline(knots, ctrl, axis=0)(u)
    pts[0] = TOY_START
    pts[-1] = 0.0
    return pts


def gen_toy2d(seed, T=201, per_route=5, n_negatives=40):
    """Twenty 2D trajectories from a common start to the origin through four passages.

    Level 1: ``"go to the origin"`` for every trajectory; level 2 names the
    passage.  Tags: ``path`` (1 = valid demonstration, 0 = invalid) and
    ``task`` (passage id).  Negatives are cross-passage blends whose
    effective height is at least ``TOY_WALL_MARGIN`` from every passage, so
    they cut through the walls between passages.  Blends closer than that can
    coincide with a valid route of a third passage and are skipped.
    """
    rng = make_rng(seed, "toy2d")
    space = Space.euclidean(2)
    trajs, anns = [], []
    for r in range(len(TOY_PASSAGES)):
        for _ in range(per_route):
            trajs.append(Trajectory(space, _toy_route(rng, r, T)))
            anns.append([Annotation(1, TOY_LEVEL1, {"path": 1}), Annotation(2, toy_text(r), {"path": 1, "task": r})])
    routes = np.repeat(np.arange(len(TOY_PASSAGES)), per_route)
    negatives = []
    while len(negatives) < n_negatives:
        i, j = rng.integers(len(trajs), size=2)
        if routes[i] == routes[j]:
            continue
        a = rng.uniform(0.3, 0.7)
        h = a * TOY_PEAKS[routes[i]] + (1.0 - a) * TOY_PEAKS[routes[j]]
        if np.min(np.abs(np.asarray(TOY_PEAKS) - h)) < TOY_WALL_MARGIN:
            continue
        blend = a * trajs[i].points + (1.0 - a) * trajs[j].points
        negatives.append((Trajectory(space, blend), {"path": 0}))
    names = {"path": ["invalid", "valid"], "task": list(TOY_PASSAGES)}
    return _finish(space, trajs, anns, names, negatives)


# ---------------------------------------------------------------------------
# SE(3) pouring
# ---------------------------------------------------------------------------

POUR_DIRECTIONS = ("very left", "left", "center", "right", "very right")
POUR_STYLES = ("water", "wine")
POUR_LEVEL1 = "Give me a drink, anything please"
POUR_ROLL = np.pi / 2


def pour_texts(style, direction):
    drink = POUR_STYLES[style]
    return (POUR_LEVEL1, f"Give me some {drink}", f"Pour {drink} from the {POUR_DIRECTIONS[direction]} side")


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _pour_poses(rng, style, direction, n):
    phi = np.deg2rad((-60.0, -30.0, 0.0, 30.0, 60.0)[direction])
    cup = np.array([0.0, 0.0, 0.1])
    radial = np.array([np.cos(phi), np.sin(phi), 0.0])
    start = np.array([0.55, 0.0, 0.25])
    target = cup + (0.12 + rng.normal(scale=0.005)) * radial + np.array([0.0, 0.0, 0.12 + rng.normal(scale=0.005)])
    # Tilt the bottle mouth toward the cup: rotate about the horizontal axis
    # perpendicular to the approach direction.
    tilt_axis = np.cross(np.array([0.0, 0.0, 1.0]), -radial)
    tilt_max = np.deg2rad(100.0) + rng.normal(scale=0.02)
    t = np.linspace(0.0, 1.0, n)
    move = _min_jerk(t / 0.5)
    tilt = _min_jerk((t - 0.35) / 0.4)
    roll = _min_jerk((t - 0.8) / 0.15) if style == 1 else np.zeros(n)
    pos = start + move[:, None] * (target - start)
    R = so3_exp((tilt * tilt_max)[:, None] * tilt_axis) @ np.stack([_rot_z(a * POUR_ROLL) for a in roll])
    return np.stack([pose(Ri, pi) for Ri, pi in zip(R, pos)])


def gen_se3_pouring(seed, T=480):
    """Ten SE(3) bottle trajectories: five pouring directions x {water, wine}.

    Wine pours add a terminal roll of pi/2 about the bottle's own axis.
    Recordings of varying length are resampled to ``T``.
    """
    rng = make_rng(seed, "se3-pouring")
    space = Space.se3()
    trajs, anns = [], []
    for style in range(2):
        for d in range(len(POUR_DIRECTIONS)):
            raw = Trajectory(space, _pour_poses(rng, style, d, int(rng.integers(400, 561))))
            trajs.append(resample_trajectory(raw, T))
            tags = {"style": style, "direction": d}
            anns.append([Annotation(lv + 1, txt, tags if lv == 2 else ({"style": style} if lv == 1 else {}))
                         for lv, txt in enumerate(pour_texts(style, d))])
    names = {"style": list(POUR_STYLES), "direction": list(POUR_DIRECTIONS)}
    return _finish(space, trajs, anns, names)


# ---------------------------------------------------------------------------
# 7-DoF waving
# ---------------------------------------------------------------------------

WAVE_DIRECTIONS = ("very left", "left", "front", "right", "very right")
WAVE_STYLES = ("small", "big", "very big")
WAVE_AMPLITUDES = (0.15, 0.35, 0.6)
WAVE_LEVEL1 = "Wave your hand"
WAVE_HOME = np.array([0.0, -0.6, 0.0, -2.2, 0.0, 1.6, 0.8])
WAVE_PATTERN = np.array([0.0, 0.0, 0.5, 0.3, 1.0, 0.0, 0.4])


def wave_texts(direction, style):
    d = WAVE_DIRECTIONS[direction]
    return (
        WAVE_LEVEL1,
        f"Wave to the person on the {d}" if d != "front" else "Wave to the person in front",
        f"Wave {WAVE_STYLES[style]} to the person on the {d}" if d != "front"
        else f"Wave {WAVE_STYLES[style]} to the person in front",
    )


def _wave_joints(rng, direction, style, n):
    base = WAVE_HOME.copy()
    base[0] = (-0.8, -0.4, 0.0, 0.4, 0.8)[direction]
    base[1] = -0.1
    base[3] = -1.5
    t = np.linspace(0.0, 1.0, n)
    reach = _min_jerk(t / 0.2)[:, None]
    amp = WAVE_AMPLITUDES[style] * (1.0 + rng.normal(scale=0.03))
    freq = 3.0 + rng.normal(scale=0.05)
    env = np.sin(np.pi * np.clip((t - 0.2) / 0.8, 0.0, 1.0)) ** 2
    osc = (amp * env * np.sin(2.0 * np.pi * freq * t))[:, None] * WAVE_PATTERN
    return WAVE_HOME + reach * (base - WAVE_HOME) + osc


def gen_waving7dof(seed, T=720, repeats=2):
    """Thirty 7-DoF joint trajectories: five directions x three amplitudes x two repeats."""
    rng = make_rng(seed, "waving7")
    space = Space.euclidean(7)
    trajs, anns = [], []
    for d in range(len(WAVE_DIRECTIONS)):
        for s in range(len(WAVE_STYLES)):
            for _ in range(repeats):
                raw = Trajectory(space, _wave_joints(rng, d, s, int(rng.integers(620, 821))))
                trajs.append(resample_trajectory(raw, T))
                txt = wave_texts(d, s)
                anns.append([
                    Annotation(1, txt[0], {}),
                    Annotation(2, txt[1], {"direction": d}),
                    Annotation(3, txt[2], {"direction": d, "style": s}),
                ])
    names = {"direction": list(WAVE_DIRECTIONS), "style": list(WAVE_STYLES)}
    return _finish(space, trajs, anns, names)


GENERATORS = {"toy2d": gen_toy2d, "se3-pouring": gen_se3_pouring, "waving7": gen_waving7dof}


# ---------------------------------------------------------------------------
# paraphrases (training and held-out variants for each canonical text)
# ---------------------------------------------------------------------------

_TOY_TRAIN = ("move to the origin{via}", "reach the origin{via}", "head to the origin{via}", "travel to the origin{via}")
_TOY_TRAIN_VIA = (" through the {p} passage", " using the {p} passage", " by way of the {p} passage", " along the {p} passage")
_TOY_HELD = ("navigate to the origin{via}", "get to the origin{via}", "proceed to the origin{via}")
_TOY_HELD_VIA = (" passing the {p} passage", " by the {p} passage", " taking the {p} passage")


def toy2d_paraphrases():
    """``(train, held_out)`` maps from canonical toy texts to paraphrase lists."""
    train = {TOY_LEVEL1: [t.format(via="") for t in _TOY_TRAIN]}
    held = {TOY_LEVEL1: [t.format(via="") for t in _TOY_HELD]}
    for r, p in enumerate(TOY_PASSAGES):
        train[toy_text(r)] = [t.format(via=v.format(p=p)) for t, v in zip(_TOY_TRAIN, _TOY_TRAIN_VIA)]
        held[toy_text(r)] = [t.format(via=v.format(p=p)) for t, v in zip(_TOY_HELD, _TOY_HELD_VIA)]
    return train, held


def _swap_lead(text, leads):
    out = []
    for old, new in leads:
        if text.startswith(old):
            out.append(new + text[len(old):])
    return out


def pouring_paraphrases():
    train, held = {}, {}
    train[POUR_LEVEL1] = ["I would like a drink, anything is fine", "Get me something to drink please"]
    held[POUR_LEVEL1] = ["Any drink will do, please serve me"]
    for s, drink in enumerate(POUR_STYLES):
        _, l2, _ = pour_texts(s, 0)
        train[l2] = [f"I would like some {drink}", f"Please serve me {drink}"]
        held[l2] = [f"Can I have a glass of {drink}"]
        for d in range(len(POUR_DIRECTIONS)):
            l3 = pour_texts(s, d)[2]
            side = POUR_DIRECTIONS[d]
            train[l3] = [f"Serve {drink} from the {side} side", f"Pour the {drink} approaching from the {side} side"]
            held[l3] = [f"From the {side} side, pour some {drink}"]
    return train, held


def waving_paraphrases():
    train, held = {}, {}
    train[WAVE_LEVEL1] = ["Give a wave", "Wave hello"]
    held[WAVE_LEVEL1] = ["Please wave your arm"]
    for d in range(len(WAVE_DIRECTIONS)):
        for s in range(len(WAVE_STYLES)):
            _, l2, l3 = wave_texts(d, s)
            train[l2] = _swap_lead(l2, [("Wave to", "Give a wave to"), ("Wave to", "Say hello with a wave to")])
            held[l2] = _swap_lead(l2, [("Wave to", "Greet with a wave")])
            train[l3] = _swap_lead(l3, [("Wave", "Give a wave,"), ("Wave", "Make a wave,")])
            held[l3] = _swap_lead(l3, [("Wave", "Greet with a wave,")])
    return train, held


PARAPHRASES = {"toy2d": toy2d_paraphrases, "se3-pouring": pouring_paraphrases, "waving7": waving_paraphrases}
