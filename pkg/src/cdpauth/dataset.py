"""Synthetic dataset generation, on-disk persistence and 40/10/50 splitting.

On disk a dataset is a directory of 8-bit grayscale PNGs plus ``manifest.json``:

* ``t_<i>.png``: template ``i`` stored as {0, 255}
* ``x_<d>_<i>.png``: original printed on ``d``
* ``f_<a>_<d>_<i>.png``: fake estimated from ``x^d`` and printed on ``a``

See ``MANIFEST_SCHEMA`` for the manifest fields.
"""

from __future__ import annotations

import configparser
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np
from PIL import Image

from cdpauth.attack import EstimatorSpec, fabricate_fakes
from cdpauth.channel import PrinterProfile, derive_seed, print_and_scan
from cdpauth.errors import ConfigError
from cdpauth.types import CdpTuple, DigitalTemplate, Kind, PrintedCode, random_template

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SPLIT_FRACTIONS = (0.4, 0.1, 0.5)

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema", "version", "image_format", "dimensions", "defenders",
                 "attackers", "seed", "tuples"],
    "properties": {
        "schema": {"const": "cdpauth-dataset"},
        "version": {"const": MANIFEST_VERSION},
        "image_format": {"const": "png-gray8"},
        "dimensions": {"type": "array", "items": {"type": "integer", "minimum": 8},
                       "minItems": 2, "maxItems": 2},
        "defenders": {"type": "array", "items": {"type": "string"}},
        "attackers": {"type": "array", "items": {"type": "string"}},
        "estimator": {"type": ["string", "null"]},
        "seed": {"type": "integer"},
        "attack_seed": {"type": ["integer", "null"]},
        "profiles": {"type": "object"},
        "tuples": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "template", "originals", "fakes"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "template": {"type": "string"},
                    "originals": {"type": "object", "additionalProperties": {"type": "string"}},
                    "fakes": {"type": "object", "additionalProperties": {"type": "string"}},
                },
            },
        },
    },
}


# -- synthesis ------------------------------------------------------------------

def synthesize(n: int, size: int, density: float, defender_profiles: Sequence[PrinterProfile],
               seed: int) -> list[CdpTuple]:
    """Templates ``1..n`` and their originals on every defender profile."""
    if n < 1:
        raise ConfigError(f"need at least one tuple, got n={n}")
    tuples = []
    for i in range(1, n + 1):
        rng = np.random.default_rng(derive_seed(seed, i, 0, "template"))
        tmpl = random_template(size, density, rng, id=i)
        originals = {p.id: print_and_scan(tmpl, p, derive_seed(seed, i, p.seed_salt, f"original:{p.id}"))
                     for p in defender_profiles}
        tuples.append(CdpTuple(tmpl, originals))
    return tuples


def attack(tuples: Sequence[CdpTuple], spec: EstimatorSpec,
           attacker_profiles: Sequence[PrinterProfile], seed: int,
           defender_profiles: Mapping[str, PrinterProfile] | None = None) -> list[CdpTuple]:
    return [fabricate_fakes(t, spec, attacker_profiles, seed, defender_profiles) for t in tuples]


# -- persistence ----------------------------------------------------------------

@dataclass
class DatasetManifest:
    dimensions: tuple[int, int]
    defenders: list[str]
    attackers: list[str]
    seed: int
    tuples: list[dict]
    estimator: str | None = None
    attack_seed: int | None = None
    profiles: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION
    image_format: str = "png-gray8"

    def to_json(self) -> dict:
        return {"schema": "cdpauth-dataset", "version": self.version,
                "image_format": self.image_format, "dimensions": list(self.dimensions),
                "defenders": self.defenders, "attackers": self.attackers,
                "estimator": self.estimator, "seed": self.seed, "attack_seed": self.attack_seed,
                "profiles": self.profiles, "tuples": self.tuples}

    @classmethod
    def from_json(cls, data: dict) -> DatasetManifest:
        validate_manifest(data)
        return cls(tuple(data["dimensions"]), list(data["defenders"]), list(data["attackers"]),
                   data["seed"], data["tuples"], data.get("estimator"), data.get("attack_seed"),
                   data.get("profiles", {}), data["version"], data["image_format"])


def validate_manifest(data: dict) -> None:
    try:
        jsonschema.validate(data, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid manifest: {exc.message}") from None
    ids = [t["id"] for t in data["tuples"]]
    if ids != list(range(1, len(ids) + 1)):
        raise ConfigError("manifest tuple ids must be dense 1..N in order")


def _to_u8(pixels: np.ndarray, binary: bool) -> np.ndarray:
    if binary:
        return (np.asarray(pixels) * 255).astype(np.uint8)
    return np.round(np.asarray(pixels, dtype=np.float64) * 255.0).astype(np.uint8)


def write_png(path: Path, pixels: np.ndarray, binary: bool = False) -> None:
    Image.fromarray(_to_u8(pixels, binary), mode="L").save(path, format="PNG")


def read_png(path: Path) -> np.ndarray:
    """8-bit grayscale image scaled to [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img if img.mode == "L" else img.convert("L"), dtype=np.float64)
    return arr / 255.0


def save_dataset(tuples: Sequence[CdpTuple], directory: str | Path, seed: int = 0,
                 estimator: EstimatorSpec | str | None = None, attack_seed: int | None = None,
                 profiles: Mapping[str, PrinterProfile] | None = None) -> Path:
    """Write images and then, atomically, the manifest; returns the manifest path."""
    if not tuples:
        raise ValueError("cannot save an empty dataset")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shape = tuples[0].template.shape
    defenders = tuples[0].defenders
    attackers = tuples[0].attackers
    entries = []
    for expected_id, t in enumerate(tuples, start=1):
        if t.id != expected_id:
            raise ValueError(f"tuple ids must be dense 1..N; got {t.id} at position {expected_id}")
        if t.template.shape != shape or t.defenders != defenders or t.attackers != attackers:
            raise ValueError(f"tuple {t.id} is inconsistent with the rest of the dataset")
        entry = {"id": t.id, "template": f"t_{t.id}.png", "originals": {}, "fakes": {}}
        write_png(directory / entry["template"], t.template.pixels, binary=True)
        for d, x in sorted(t.originals.items()):
            name = f"x_{d}_{t.id}.png"
            write_png(directory / name, x.pixels)
            entry["originals"][d] = name
        for (a, d), f in sorted(t.fakes.items()):
            name = f"f_{a}_{d}_{t.id}.png"
            write_png(directory / name, f.pixels)
            entry["fakes"][f"{a}/{d}"] = name
        entries.append(entry)
    if isinstance(estimator, EstimatorSpec):
        estimator = estimator.summary()
    manifest = DatasetManifest((shape[1], shape[0]), defenders, attackers, int(seed), entries,
                               estimator, attack_seed,
                               {k: asdict(p) for k, p in (profiles or {}).items()})
    data = manifest.to_json()
    validate_manifest(data)
    path = directory / MANIFEST_NAME
    tmp = directory / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True))
    os.replace(tmp, path)
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: manifest is not valid JSON ({exc})") from None
    return DatasetManifest.from_json(data)


def load_dataset(path: str | Path) -> tuple[list[CdpTuple], DatasetManifest]:
    """Load a dataset directory (or manifest path), validating every tuple invariant."""
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    manifest = read_manifest(path)
    w, h = manifest.dimensions
    tuples = []
    for entry in manifest.tuples:
        i = entry["id"]

        def img(name: str) -> np.ndarray:
            px = read_png(directory / name)
            if px.shape != (h, w):
                raise ConfigError(f"{name}: size {px.shape[::-1]} != declared {(w, h)}")
            return px

        tmpl = DigitalTemplate((img(entry["template"]) > 0.5).astype(np.uint8), i)
        originals = {d: PrintedCode(img(n), i, Kind.ORIGINAL, d)
                     for d, n in entry["originals"].items()}
        fakes = {}
        for key, n in entry["fakes"].items():
            a, d = key.split("/")
            fakes[a, d] = PrintedCode(img(n), i, Kind.FAKE, d, a)
        tuples.append(CdpTuple(tmpl, originals, fakes))
    return tuples, manifest


# -- real dataset layout --------------------------------------------------------

@dataclass
class Layout:
    """Directory of each role relative to the dataset root.

    In the INI file::

        [layout]
        template = templates
        original.55 = orig_55
        fake.55/76 = fake_55_76     ; fake printed on 55 from the estimate of x^76
        extension = png
    """

    template: str
    originals: dict[str, str]
    fakes: dict[tuple[str, str], str]
    extension: str = "png"

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> Layout:
        if not parser.has_section("layout"):
            raise ConfigError("layout configuration needs a [layout] section")
        sec = parser["layout"]
        if "template" not in sec:
            raise ConfigError("[layout] must name the template directory")
        originals, fakes = {}, {}
        for key, value in sec.items():
            if key.startswith("original."):
                originals[key.split(".", 1)[1]] = value
            elif key.startswith("fake."):
                a, _, d = key.split(".", 1)[1].partition("/")
                if not d:
                    raise ConfigError(f"[layout] {key}: expected fake.<a>/<d>")
                fakes[a, d] = value
            elif key not in ("template", "extension"):
                raise ConfigError(f"[layout] unknown key {key!r}")
        return cls(sec["template"], originals, fakes, sec.get("extension", "png"))

    @classmethod
    def read(cls, path: str | Path) -> Layout:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path):
            raise ConfigError(f"cannot read layout configuration {path}")
        return cls.from_parser(parser)

    @classmethod
    def default(cls, defenders: Sequence[str], attackers: Sequence[str]) -> Layout:
        return cls("template", {d: f"original_{d}" for d in defenders},
                   {(a, d): f"fake_{a}_{d}" for a in attackers for d in defenders})

    def write(self, path: str | Path) -> None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser["layout"] = {"template": self.template, "extension": self.extension,
                            **{f"original.{d}": v for d, v in self.originals.items()},
                            **{f"fake.{a}/{d}": v for (a, d), v in self.fakes.items()}}
        with open(path, "w") as fh:
            parser.write(fh)

    def role_dirs(self) -> dict[tuple, str]:
        dirs = {("t",): self.template}
        dirs.update({("x", d): v for d, v in self.originals.items()})
        dirs.update({("f", a, d): v for (a, d), v in self.fakes.items()})
        return dirs


@dataclass
class LoadReport:
    n_tuples: int
    dimensions: tuple[int, int] | None
    skipped_dimension: list[str] = field(default_factory=list)
    skipped_incomplete: list[str] = field(default_factory=list)


def _natural_key(stem: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", stem)]


def export_layout(tuples: Sequence[CdpTuple], root: str | Path, layout: Layout) -> None:
    """Write tuples into per-role directories as ``<id>.<ext>`` files."""
    root = Path(root)
    for role, sub in layout.role_dirs().items():
        (root / sub).mkdir(parents=True, exist_ok=True)
    for t in tuples:
        name = f"{t.id}.{layout.extension}"
        write_png(root / layout.template / name, t.template.pixels, binary=True)
        for d, sub in layout.originals.items():
            write_png(root / sub / name, t.originals[d].pixels)
        for (a, d), sub in layout.fakes.items():
            write_png(root / sub / name, t.fakes[a, d].pixels)


def load_real_dataset(root: str | Path, layout: Layout) -> tuple[list[CdpTuple], LoadReport]:
    """Read a dataset laid out as one directory per role, files matched by name.

    Tuples are numbered 1..N in natural order of the template file names.
    Tuples whose members disagree in size, or that lack a member, are skipped
    with a warning and listed in the report.
    """
    root = Path(root)
    dirs = layout.role_dirs()
    absent = [sub for sub in dirs.values() if not (root / sub).is_dir()]
    if absent:
        found = sorted(p.name for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
        raise ConfigError(f"missing role directories {absent}; found {found}")
    pattern = f"*.{layout.extension}"
    stems = sorted((p.stem for p in (root / layout.template).glob(pattern)), key=_natural_key)
    if not stems:
        raise ConfigError(f"no *.{layout.extension} templates under {root / layout.template}")
    report = LoadReport(0, None)
    tuples = []
    for stem in stems:
        paths = {role: root / sub / f"{stem}.{layout.extension}" for role, sub in dirs.items()}
        if not all(p.is_file() for p in paths.values()):
            log.warning("skipping %s: incomplete tuple", stem)
            report.skipped_incomplete.append(stem)
            continue
        images = {role: read_png(p) for role, p in paths.items()}
        shapes = {img.shape for img in images.values()}
        if len(shapes) != 1 or (report.dimensions and shapes != {report.dimensions[::-1]}):
            log.warning("skipping %s: member sizes %s disagree", stem, sorted(shapes))
            report.skipped_dimension.append(stem)
            continue
        i = len(tuples) + 1
        tmpl = DigitalTemplate((images["t",] > 0.5).astype(np.uint8), i)
        originals = {d: PrintedCode(images["x", d], i, Kind.ORIGINAL, d) for d in layout.originals}
        fakes = {(a, d): PrintedCode(images["f", a, d], i, Kind.FAKE, d, a) for a, d in layout.fakes}
        tuples.append(CdpTuple(tmpl, originals, fakes))
        if report.dimensions is None:
            h, w = tmpl.shape
            report.dimensions = (w, h)
    report.n_tuples = len(tuples)
    if not tuples:
        raise ConfigError(f"no usable tuples under {root}")
    log.info("loaded %d tuples of %s from %s", report.n_tuples, report.dimensions, root)
    return tuples, report


# -- splitting --------------------------------------------------------------------

def split_sizes(n: int, fractions: Sequence[float] = SPLIT_FRACTIONS) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(tuples_or_ids, fractions: Sequence[float] = SPLIT_FRACTIONS,
                  seed: int = 0) -> tuple[list[int], list[int], list[int]]:
    """Seeded shuffle of tuple ids, then contiguous train/validation/test blocks (each sorted)."""
    ids = [getattr(t, "id", t) for t in tuples_or_ids]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate tuple ids")
    if len(ids) < 10:
        raise ValueError(f"need at least 10 tuples to split, got {len(ids)}")
    n_train, n_val, _ = split_sizes(len(ids), fractions)
    order = np.random.default_rng(seed).permutation(sorted(ids)).tolist()
    return (sorted(order[:n_train]), sorted(order[n_train:n_train + n_val]),
            sorted(order[n_train + n_val:]))
