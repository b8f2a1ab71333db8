"""Synthetic scene corpus: grammar-templated captions over labeled regions.

A scene is a small set of labeled, attributed objects on a grid; its region
features are fixed per-label prototypes plus attribute offsets plus seeded
Gaussian noise. Captions are filled templates mentioning a subset of the
objects, so the ordered content words of a caption are recoverable from the
scene's label set.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class ConfigError(ValueError):
    """A grammar or run configuration is unusable."""


class CorpusFormatError(ValueError):
    """A corpus or vocabulary file does not parse."""


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

class Vocabulary:
    """Token <-> id bijection with fixed reserved ids 0..3."""

    def __init__(self, tokens):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("vocabulary tokens are not unique")

    @property
    def size(self):
        return len(self.id_to_token)

    def encode_token(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens):
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.id_to_token[i] for i in ids]

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token
        )

    def save(self, path):
        lines = list(RESERVED_TOKENS) + self.id_to_token[4:]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != RESERVED_TOKENS:
            raise CorpusFormatError(
                f"vocabulary header must be {RESERVED_TOKENS}, got {lines[:4]}"
            )
        return cls(lines[4:])


def build_vocabulary(captions, min_count=1):
    """Vocabulary over whitespace tokens occurring at least min_count times.

    Ids 4..V-1 are assigned by descending frequency, ties broken
    lexicographically.
    """
    counts = Counter()
    n_captions = 0
    for caption in captions:
        n_captions += 1
        counts.update(caption.split())
    if n_captions == 0:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# grammar and scenes
# ---------------------------------------------------------------------------

_THINGS = [
    "ball", "dog", "cat", "tree", "car", "house", "bird", "fish", "boat",
    "chair", "table", "flower", "horse", "cow", "sheep", "duck", "frog",
    "bee", "ant", "star", "rock", "hill", "bridge", "tower", "lamp", "door",
    "window", "cup", "plate", "book", "pen", "hat", "shoe", "sock", "kite",
    "drum", "bell", "ring", "box", "bag", "fence", "gate", "pond", "bench",
    "crow", "goat", "mouse", "wagon",
]
_SURFACES = ["grass", "sand", "floor", "road", "field", "deck", "porch", "yard"]
_ATTRIBUTES = [
    "red", "blue", "green", "yellow", "black", "white", "small", "big",
    "old", "new", "shiny", "dull", "round", "square", "soft", "bright",
]
_RELATIONS = ["near", "beside", "behind", "above", "below", "under"]
# slots: l1/a1 first object, l2/a2 second, ls/as the ground object, rel relation
_TEMPLATES = [
    "a {a1} {l1} sits on the {ls}",
    "the {a1} {l1} rests on the {as} {ls}",
    "a {a1} {l1} stands by the {ls}",
    "a {a1} {l1} is near a {a2} {l2}",
    "the {l1} waits beside the {a2} {l2}",
    "a {a1} {l1} and a {a2} {l2} rest on the {ls}",
    "the {a1} {l1} is {rel} the {l2}",
    "a {l1} sleeps on the {as} {ls}",
    "the {a1} {l1} looks at the {a2} {l2}",
    "a {a1} {l1} {rel} a {l2} sits on the {ls}",
]


@dataclass
class Grammar:
    """Closed label/attribute/template sets driving scene generation."""

    things: list = field(default_factory=lambda: list(_THINGS))
    surfaces: list = field(default_factory=lambda: list(_SURFACES))
    attributes: list = field(default_factory=lambda: list(_ATTRIBUTES))
    relations: list = field(default_factory=lambda: list(_RELATIONS))
    templates: list = field(default_factory=lambda: list(_TEMPLATES))
    k_max: int = 6
    d_in: int = 32
    noise_sigma: float = 0.1
    max_captions: int = 5

    def __post_init__(self):
        if not self.things or not self.surfaces:
            raise ConfigError("grammar needs at least one object and surface label")
        if not self.attributes or not self.templates:
            raise ConfigError("grammar needs attributes and caption templates")
        if self.k_max < 2:
            raise ConfigError("k_max must allow a ground object plus one thing")
        self._prototypes = None

    @property
    def labels(self):
        return self.things + self.surfaces

    def label_tokens(self):
        """All single tokens of all labels (multi-word labels are split)."""
        out = set()
        for label in self.labels:
            out.update(label.lower().split())
        return out

    def prototypes(self):
        """Fixed per-label prototype and per-attribute offset vectors."""
        if self._prototypes is None:
            protos = {}
            for i, label in enumerate(self.labels):
                r = np.random.default_rng([211, i])
                protos[label] = r.normal(size=self.d_in)
            offsets = {}
            for i, attr in enumerate(self.attributes):
                r = np.random.default_rng([503, i])
                offsets[attr] = 0.5 * r.normal(size=self.d_in)
            self._prototypes = (protos, offsets)
        return self._prototypes

    @classmethod
    def from_json(cls, path):
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**raw)


@dataclass
class SceneObject:
    label: str
    attribute: str
    row: int
    col: int


@dataclass
class Scene:
    scene_id: str
    objects: list


@dataclass
class RegionFeatureSet:
    """Per-object feature rows, shape (k, d_in)."""

    features: np.ndarray

    @property
    def k(self):
        return self.features.shape[0]

    @property
    def d_in(self):
        return self.features.shape[1]


@dataclass
class SceneRecord:
    """One on-disk corpus record."""

    scene_id: str
    features: np.ndarray
    labels: list
    captions: list


@dataclass
class CaptionExample:
    """One training pair: regions, target token ids, ordered coarse ids."""

    scene_id: str
    regions: RegionFeatureSet
    target: list
    coarse: list


def extract_ordered_words(target_tokens, label_tokens):
    """Subsequence of target made of label tokens, in target order.

    Duplicates are kept (a label word occurring twice in the target appears
    twice). Reserved tokens never appear in the output.
    """
    reserved = set(RESERVED_TOKENS)
    return [t for t in target_tokens if t in label_tokens and t not in reserved]


def generate_scene(rng_seed, grammar, scene_id=None):
    """Deterministically generate one scene, its features, and captions."""
    rng = np.random.default_rng(rng_seed)
    if scene_id is None:
        scene_id = f"scene-{rng_seed}"

    ground = SceneObject(
        label=grammar.surfaces[int(rng.integers(len(grammar.surfaces)))],
        attribute=grammar.attributes[int(rng.integers(len(grammar.attributes)))],
        row=0,
        col=0,
    )
    n_things = int(rng.integers(1, grammar.k_max))
    things = []
    for _ in range(n_things):
        things.append(
            SceneObject(
                label=grammar.things[int(rng.integers(len(grammar.things)))],
                attribute=grammar.attributes[
                    int(rng.integers(len(grammar.attributes)))
                ],
                row=int(rng.integers(8)),
                col=int(rng.integers(8)),
            )
        )
    objects = things + [ground]
    scene = Scene(scene_id=scene_id, objects=objects)

    protos, offsets = grammar.prototypes()
    feats = np.empty((len(objects), grammar.d_in))
    for i, obj in enumerate(objects):
        feats[i] = (
            protos[obj.label]
            + offsets[obj.attribute]
            + grammar.noise_sigma * rng.normal(size=grammar.d_in)
        )
    regions = RegionFeatureSet(features=feats)

    n_captions = int(rng.integers(1, grammar.max_captions + 1))
    captions = [_fill_template(rng, grammar, things, ground) for _ in range(n_captions)]
    return scene, regions, captions


def _relation_for(grammar, label_a, label_b):
    # deterministic function of the label pair so relation words are learnable
    ia = grammar.labels.index(label_a)
    ib = grammar.labels.index(label_b)
    return grammar.relations[(ia + ib) % len(grammar.relations)]


def _fill_template(rng, grammar, things, ground):
    template = grammar.templates[int(rng.integers(len(grammar.templates)))]
    needs_two = "{l2}" in template
    if needs_two and len(things) < 2:
        one_object = [t for t in grammar.templates if "{l2}" not in t]
        template = one_object[int(rng.integers(len(one_object)))]
        needs_two = False
    if needs_two:
        i, j = rng.choice(len(things), size=2, replace=False)
        first, second = things[int(i)], things[int(j)]
    else:
        first = things[int(rng.integers(len(things)))]
        second = first
    return template.format(
        **{
            "l1": first.label,
            "a1": first.attribute,
            "l2": second.label,
            "a2": second.attribute,
            "ls": ground.label,
            "as": ground.attribute,
            "rel": _relation_for(grammar, first.label, second.label),
        }
    )


def generate_corpus(seed, n_scenes, grammar=None):
    """Generate n_scenes records, each deterministic in (seed, index)."""
    grammar = grammar or Grammar()
    records = []
    for i in range(n_scenes):
        scene, regions, captions = generate_scene(
            [seed, i], grammar, scene_id=f"s{i:06d}"
        )
        records.append(
            SceneRecord(
                scene_id=scene.scene_id,
                features=regions.features,
                labels=[o.label for o in scene.objects],
                captions=captions,
            )
        )
    return records


# ---------------------------------------------------------------------------
# corpus files (UTF-8 JSON lines, keyed records)
# ---------------------------------------------------------------------------

def write_corpus(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "scene_id": rec.scene_id,
                        "features": rec.features.tolist(),
                        "labels": rec.labels,
                        "captions": rec.captions,
                    }
                )
            )
            fh.write("\n")


def read_corpus(path):
    records = []
    data = Path(path).read_bytes()
    offset = 0
    for lineno, raw in enumerate(data.split(b"\n"), start=1):
        line = raw.strip()
        if line:
            try:
                obj = json.loads(line.decode("utf-8"))
                features = np.asarray(obj["features"], dtype=np.float64)
                if features.ndim != 2:
                    raise ValueError("features must be a k x d_in array")
                records.append(
                    SceneRecord(
                        scene_id=obj["scene_id"],
                        features=features,
                        labels=list(obj["labels"]),
                        captions=list(obj["captions"]),
                    )
                )
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                raise CorpusFormatError(
                    f"{path}: bad record at line {lineno} (byte offset {offset}): {exc}"
                ) from exc
        offset += len(raw) + 1
    return records


def build_examples(records, vocab):
    """Expand records into per-caption training examples.

    Captions sharing no token with the scene labels yield an empty coarse
    sequence and are dropped (count logged).
    """
    examples = []
    dropped = 0
    for rec in records:
        regions = RegionFeatureSet(features=rec.features)
        label_tokens = set()
        for label in rec.labels:
            label_tokens.update(label.lower().split())
        for caption in rec.captions:
            tokens = caption.lower().split()
            coarse_tokens = extract_ordered_words(tokens, label_tokens)
            if not coarse_tokens:
                dropped += 1
                continue
            examples.append(
                CaptionExample(
                    scene_id=rec.scene_id,
                    regions=regions,
                    target=vocab.encode(tokens) + [EOS_ID],
                    coarse=vocab.encode(coarse_tokens),
                )
            )
    if dropped:
        log.info("dropped %d captions with empty coarse sequences", dropped)
    return examples
