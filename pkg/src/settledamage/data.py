"""Dataset manifests, PNG/CSV/JSON I/O and the synthetic scene generator."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np
from PIL import Image, UnidentifiedImageError

from .damage import CurvePoint, DamageReport, SegmentationMask
from .errors import ConfigError, DataIOError, ManifestError, UsageError
from .networks import BUILT, DISASTER, NON_DISASTER, Dataset
from .severity import DisasterEvent

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
RESOLUTION_RANGE_M = (0.3, 3.0)
# validation share of each split in the source corpus: classifier 271/44, parser 661/59
DEFAULT_VAL_SHARE = {"classifier": 44 / (271 + 44), "parser": 59 / (661 + 59)}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "cases"],
    "properties": {
        "schema_version": {"const": MANIFEST_VERSION},
        "cases": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "pre_image", "post_image"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "name": {"type": "string"},
                    "date": {"type": "string"},
                    "location": {"type": "string"},
                    "econ_loss_bn": {"type": "number", "minimum": 0},
                    "deaths": {"type": "integer", "minimum": 0},
                    "category": {"type": ["string", "null"]},
                    "pre_image": {"type": "string"},
                    "post_image": {"type": "string"},
                    "pre_mask": {"type": ["string", "null"]},
                    "post_mask": {"type": ["string", "null"]},
                    "resolution_m": {"type": ["number", "null"], "exclusiveMinimum": 0},
                },
                "additionalProperties": False,
            },
        },
        "splits": {
            "type": "object",
            "properties": {s: {"type": "array", "items": {"type": "string"}} for s in SPLITS},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# images and masks


def _read_png(path) -> Image.Image:
    try:
        img = Image.open(path)
        if img.format != "PNG":
            raise DataIOError(f"{path}: unsupported format {img.format}; expected PNG")
        img.load()
        return img
    except FileNotFoundError as exc:
        raise DataIOError(f"{path}: no such file") from exc
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, DataIOError):
            raise
        raise DataIOError(f"{path}: unreadable or truncated image ({exc})") from exc


def load_image(path) -> np.ndarray:
    """8-bit PNG -> float32 array (1, 3, H, W) holding v/255 in RGB order."""
    img = _read_png(path)
    if img.mode not in ("RGB", "RGBA", "L"):
        raise DataIOError(f"{path}: unsupported PNG mode {img.mode}")
    arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return (arr.transpose(2, 0, 1)[None] / np.float32(255.0)).astype(np.float32)


def save_image(image, path) -> None:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise UsageError(f"expected a (3,H,W) image, got {arr.shape}")
    u8 = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    try:
        Image.fromarray(u8, "RGB").save(path, format="PNG")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def load_mask(path) -> SegmentationMask:
    """Grayscale PNG, 255 = built, 0 = non-built (values above 127 count as built)."""
    img = _read_png(path)
    arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return SegmentationMask((arr > 127).astype(np.uint8))


def save_mask(mask, path) -> None:
    labels = mask.labels if isinstance(mask, SegmentationMask) else SegmentationMask(mask).labels
    try:
        Image.fromarray((labels * 255).astype(np.uint8), "L").save(path, format="PNG")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifest


@dataclass
class CaseRecord:
    event: DisasterEvent
    pre_image: Path
    post_image: Path
    pre_mask: Path | None = None
    post_mask: Path | None = None
    resolution_m: float | None = None

    @property
    def has_masks(self) -> bool:
        return self.pre_mask is not None and self.post_mask is not None


@dataclass
class DatasetManifest:
    cases: list[CaseRecord] = field(default_factory=list)
    splits: dict[str, list[str]] = field(default_factory=dict)
    schema_version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[CaseRecord]:
        ids = set(self.splits.get(name, []))
        return [c for c in self.cases if c.event.id in ids]

    def by_id(self) -> dict[str, CaseRecord]:
        return {c.event.id: c for c in self.cases}


def load_manifest(path) -> DatasetManifest:
    """Read and fully validate a manifest; asset paths are resolved against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(ManifestError.MISSING_FILE, f"{path} does not exist")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(ManifestError.SCHEMA, f"{path}: not valid JSON ({exc})") from exc
    try:
        jsonschema.validate(raw, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise ManifestError(ManifestError.SCHEMA, f"{path}: {where}: {exc.message}") from exc

    base = path.parent
    cases: list[CaseRecord] = []
    seen: set[str] = set()
    for item in raw["cases"]:
        cid = item["id"]
        if cid in seen:
            raise ManifestError(ManifestError.DUPLICATE_ID, f"case id {cid!r} appears more than once")
        seen.add(cid)
        try:
            event = DisasterEvent(cid, item.get("name", ""), item.get("date", ""), item.get("location", ""),
                                  float(item.get("econ_loss_bn", 0.0)), int(item.get("deaths", 0)),
                                  item.get("category"))
        except ConfigError as exc:
            raise ManifestError(ManifestError.SCHEMA, str(exc)) from exc
        paths = {}
        for key in ("pre_image", "post_image", "pre_mask", "post_mask"):
            rel = item.get(key)
            if rel is None:
                paths[key] = None
                continue
            p = base / rel
            if not p.is_file():
                raise ManifestError(ManifestError.MISSING_ASSET, f"case {cid}: {key} {p} does not exist")
            paths[key] = p
        res = item.get("resolution_m")
        if res is not None and not RESOLUTION_RANGE_M[0] <= res <= RESOLUTION_RANGE_M[1]:
            log.warning("case %s: resolution %.3g m/pixel outside %s", cid, res, RESOLUTION_RANGE_M)
        cases.append(CaseRecord(event, resolution_m=res, **paths))

    splits = {k: list(v) for k, v in raw.get("splits", {}).items()}
    owner: dict[str, str] = {}
    for name, ids in splits.items():
        for cid in ids:
            if cid not in seen:
                raise ManifestError(ManifestError.SCHEMA, f"split {name} references unknown case {cid!r}")
            if cid in owner:
                raise ManifestError(ManifestError.SPLIT_OVERLAP,
                                    f"case {cid!r} is in both {owner[cid]} and {name}")
            owner[cid] = name
    return DatasetManifest(cases, splits, raw["schema_version"])


def manifest_to_dict(manifest: DatasetManifest, base: Path) -> dict:
    def rel(p):
        return None if p is None else os.path.relpath(p, base).replace(os.sep, "/")

    cases = []
    for c in manifest.cases:
        e = c.event
        cases.append({
            "id": e.id, "name": e.name, "date": e.date, "location": e.location,
            "econ_loss_bn": e.econ_loss_bn, "deaths": e.deaths, "category": e.category,
            "pre_image": rel(c.pre_image), "post_image": rel(c.post_image),
            "pre_mask": rel(c.pre_mask), "post_mask": rel(c.post_mask),
            "resolution_m": c.resolution_m,
        })
    return {"schema_version": manifest.schema_version, "cases": cases,
            "splits": {k: list(manifest.splits[k]) for k in SPLITS if k in manifest.splits}}


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    _write_text(path, json.dumps(manifest_to_dict(manifest, path.parent.resolve()), indent=2) + "\n")


def split_ids(ids: Sequence[str], val_share: float, test_share: float = 0.0) -> dict[str, list[str]]:
    """Deterministic contiguous split: the tail goes to test, the block before it to val."""
    n = len(ids)
    n_test = int(round(n * test_share))
    n_val = int(round(n * val_share)) if n > 1 else 0
    n_train = max(0, n - n_val - n_test)
    return {"train": list(ids[:n_train]), "val": list(ids[n_train:n_train + n_val]),
            "test": list(ids[n_train + n_val:])}


# ---------------------------------------------------------------------------
# CSV tables


EVENT_FIELDS = ("id", "name", "date", "location", "econ_loss_bn", "deaths", "category")
SAMPLE_FIELDS = ("econ_loss_bn", "deaths_k", "damage_fraction")


def _open_csv(path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


def load_events(path) -> list[DisasterEvent]:
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_FIELDS[:6]) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        events = []
        for row in reader:
            try:
                events.append(DisasterEvent(row["id"], row["name"], row["date"], row["location"],
                                            float(row["econ_loss_bn"]), int(float(row["deaths"])),
                                            row.get("category") or None))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad row {row}: {exc}") from exc
    return events


def save_events(events: Iterable[DisasterEvent], path) -> None:
    rows = [[e.id, e.name, e.date, e.location, repr(float(e.econ_loss_bn)), e.deaths, e.category or ""]
            for e in events]
    _write_csv(path, EVENT_FIELDS, rows)


def load_samples(path) -> np.ndarray:
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        if set(SAMPLE_FIELDS) - set(reader.fieldnames or ()):
            raise ConfigError(f"{path}: expected columns {SAMPLE_FIELDS}")
        try:
            rows = [[float(r[k]) for k in SAMPLE_FIELDS] for r in reader]
        except ValueError as exc:
            raise ConfigError(f"{path}: non-numeric value ({exc})") from exc
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def save_samples(samples, path) -> None:
    _write_csv(path, SAMPLE_FIELDS, [[repr(float(v)) for v in row] for row in np.asarray(samples)])


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# reports


def report_json(report: DamageReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def export_report(report: DamageReport, path) -> None:
    _write_text(path, report_json(report))


def export_curve(curve: Sequence[CurvePoint], path) -> None:
    _write_csv(path, ("level", "accuracy", "loss"),
               [[repr(p.level), repr(p.accuracy), repr(p.loss)] for p in curve])


def export_history(history, path) -> None:
    _write_csv(path, ("epoch", "loss", "accuracy"), [[s.epoch, repr(s.loss), repr(s.accuracy)] for s in history])


def load_curve(path) -> list[CurvePoint]:
    with _open_csv(path) as fh:
        return [CurvePoint(float(r["level"]), float(r["accuracy"]), float(r["loss"])) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# synthetic scenes

ROOF = np.array([0.82, 0.80, 0.78])
RUBBLE = np.array([0.56, 0.42, 0.30])
DEBRIS_SPREAD = 3
GROUND = np.array([0.24, 0.40, 0.20])


@dataclass
class SyntheticSceneSpec:
    image_size: int = 64
    building_count: tuple[int, int] = (4, 9)
    building_size: tuple[int, int] = (6, 14)
    destruction: float = 0.5
    texture_seed: int = 0

    def validate(self) -> None:
        lo_n, hi_n = self.building_count
        lo_s, hi_s = self.building_size
        if not 0.0 <= self.destruction <= 1.0:
            raise ConfigError(f"destruction must lie in [0, 1], got {self.destruction}")
        if self.image_size < 4:
            raise ConfigError("image_size must be at least 4")
        if not (1 <= lo_n <= hi_n) or not (1 <= lo_s <= hi_s):
            raise ConfigError("building count and size ranges must be positive and ordered")
        if hi_s > self.image_size:
            raise ConfigError(f"buildings up to {hi_s}px do not fit a {self.image_size}px image")
        if lo_n * (lo_s + 2) ** 2 > self.image_size ** 2 // 2:
            raise ConfigError("too many buildings for the image area")


@dataclass
class SyntheticPair:
    pre_image: np.ndarray   # (3,H,W) float32 in [0,1]
    post_image: np.ndarray
    pre_mask: SegmentationMask
    post_mask: SegmentationMask
    pre_rects: list[tuple[int, int, int, int]]    # (row, col, height, width)
    post_rects: list[tuple[int, int, int, int]]
    erased_fraction: float


def _place(rng, spec: SyntheticSceneSpec) -> list[tuple[int, int, int, int]]:
    size = spec.image_size
    occupied = np.zeros((size, size), dtype=bool)
    target = int(rng.integers(spec.building_count[0], spec.building_count[1] + 1))
    rects = []
    for _ in range(target * 50):
        if len(rects) == target:
            break
        h, w = (int(v) for v in rng.integers(spec.building_size[0], spec.building_size[1] + 1, size=2))
        r, c = int(rng.integers(0, size - h + 1)), int(rng.integers(0, size - w + 1))
        # one-pixel gap keeps buildings separable
        if occupied[max(r - 1, 0):r + h + 1, max(c - 1, 0):c + w + 1].any():
            continue
        occupied[r:r + h, c:c + w] = True
        rects.append((r, c, h, w))
    return rects


def _smooth_noise(rng, size: int, cell: int = 8) -> np.ndarray:
    coarse = rng.standard_normal((size // cell + 2, size // cell + 2))
    return np.kron(coarse, np.ones((cell, cell)))[:size, :size]


def _rect_mask(rects, size) -> np.ndarray:
    m = np.zeros((size, size), dtype=np.uint8)
    for r, c, h, w in rects:
        m[r:r + h, c:c + w] = BUILT
    return m


def generate_synthetic_pair(spec: SyntheticSceneSpec, seed: int = 42) -> SyntheticPair:
    """Bright rectangular roofs on textured ground; the post scene turns a subset into rubble.

    Whole buildings are erased in random order while they fit under the target
    area, then a band of rows is cut from one more building to land within one
    row of the requested destroyed fraction. Masks are exact.
    """
    spec.validate()
    rng = np.random.default_rng([seed, spec.texture_seed])
    size = spec.image_size
    rects = _place(rng, spec)

    tex = rng.standard_normal((3, size, size)) * 0.03
    ground = GROUND[:, None, None] + 0.06 * _smooth_noise(rng, size)[None] + tex
    pre = ground.copy()
    for r, c, h, w in rects:
        shade = ROOF + rng.uniform(-0.08, 0.1)
        pre[:, r:r + h, c:c + w] = shade[:, None, None] + 0.02 * rng.standard_normal((3, h, w))

    areas = [h * w for _, _, h, w in rects]
    total = sum(areas)
    target = spec.destruction * total
    erased_area = 0
    post_rects = []
    erased_regions = []
    partial_done = False
    for i in rng.permutation(len(rects)):
        r, c, h, w = rects[i]
        if erased_area + areas[i] <= target + 1e-9:
            erased_area += areas[i]
            erased_regions.append((r, c, h, w))
            continue
        rows = int(round((target - erased_area) / w)) if not partial_done else 0
        rows = min(max(rows, 0), h)
        partial_done = partial_done or rows > 0
        if rows:
            erased_area += rows * w
            erased_regions.append((r, c, rows, w))
        if rows < h:
            post_rects.append((r + rows, c, h - rows, w))
    post_rects.sort()

    post = pre.copy()
    built = _rect_mask(rects, size).astype(bool)
    for r, c, h, w in erased_regions:
        # debris spills onto bare ground around the footprint; the masks do not change
        r0, c0 = max(r - DEBRIS_SPREAD, 0), max(c - DEBRIS_SPREAD, 0)
        r1, c1 = min(r + h + DEBRIS_SPREAD, size), min(c + w + DEBRIS_SPREAD, size)
        hh, ww = r1 - r0, c1 - c0
        blotch = np.kron(rng.standard_normal((hh // 3 + 1, ww // 3 + 1)), np.ones((3, 3)))[:hh, :ww]
        debris = RUBBLE[:, None, None] + 0.08 * blotch[None] + 0.03 * rng.standard_normal((3, hh, ww))
        cover = np.zeros((hh, ww), bool)
        cover[r - r0:r - r0 + h, c - c0:c - c0 + w] = True
        cover |= ~built[r0:r1, c0:c1] & (blotch > -0.3)
        post[:, r0:r1, c0:c1] = np.where(cover[None], debris, post[:, r0:r1, c0:c1])

    pre = np.clip(pre, 0, 1).astype(np.float32)
    post = np.clip(post, 0, 1).astype(np.float32)
    if not erased_regions:
        post = pre.copy()
    return SyntheticPair(pre, post, SegmentationMask(_rect_mask(rects, size)),
                         SegmentationMask(_rect_mask(post_rects, size)), list(rects), post_rects,
                         erased_area / total if total else 0.0)


def synthetic_corpus(n: int, seed: int = 42, destruction: float | tuple[float, float] = 0.5,
                     spec: SyntheticSceneSpec | None = None) -> list[SyntheticPair]:
    """``n`` independent pairs; ``destruction`` may be a (low, high) range sampled per pair."""
    base = spec or SyntheticSceneSpec()
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        if isinstance(destruction, tuple):
            d = float(rng.uniform(*destruction))
        else:
            d = float(destruction)
        s = SyntheticSceneSpec(base.image_size, base.building_count, base.building_size, d, base.texture_seed)
        pairs.append(generate_synthetic_pair(s, seed=int(rng.integers(2**31))))
    return pairs


def classifier_dataset(pairs: Sequence[SyntheticPair]) -> Dataset:
    """Pre images labelled non-disaster, post images disaster (when anything was destroyed)."""
    images = [p.pre_image for p in pairs] + [p.post_image for p in pairs]
    labels = [NON_DISASTER] * len(pairs) + [DISASTER if p.erased_fraction > 0 else NON_DISASTER for p in pairs]
    return Dataset(np.stack(images) if images else np.zeros((0, 3, 1, 1)), np.array(labels, dtype=np.int64))


def parser_dataset(pairs: Sequence[SyntheticPair]) -> Dataset:
    images = [p.pre_image for p in pairs] + [p.post_image for p in pairs]
    masks = [p.pre_mask.labels for p in pairs] + [p.post_mask.labels for p in pairs]
    return Dataset(np.stack(images) if images else np.zeros((0, 3, 1, 1)),
                   np.stack(masks) if masks else np.zeros((0, 1, 1), dtype=np.int64))


def manifest_dataset(cases: Sequence[CaseRecord], arch: str) -> Dataset:
    """Training data for ``arch`` from manifest cases (pre and post images as separate samples)."""
    if not cases:
        raise UsageError("no cases selected")
    images, targets = [], []
    for c in cases:
        images += [load_image(c.pre_image)[0], load_image(c.post_image)[0]]
        if arch == "classifier":
            targets += [NON_DISASTER, DISASTER]
        elif arch == "parser":
            if not c.has_masks:
                raise UsageError(f"case {c.event.id} has no ground-truth masks; the parser needs masks")
            targets += [load_mask(c.pre_mask).labels, load_mask(c.post_mask).labels]
        else:
            raise UsageError(f"unknown architecture {arch!r}")
    return Dataset(np.stack(images), np.array(targets, dtype=np.int64))


def write_synthetic_dataset(out_dir, cases: int, spec: SyntheticSceneSpec, seed: int = 42,
                            val_share: float = DEFAULT_VAL_SHARE["parser"]) -> Path:
    """Write ``cases`` synthetic pairs as PNGs plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {out}: {exc}") from exc
    records = []
    for i, pair in enumerate(synthetic_corpus(cases, seed=seed, destruction=spec.destruction, spec=spec)):
        cid = f"synth-{i:04d}"
        paths = {
            "pre_image": out / "images" / f"{cid}_pre.png", "post_image": out / "images" / f"{cid}_post.png",
            "pre_mask": out / "masks" / f"{cid}_pre.png", "post_mask": out / "masks" / f"{cid}_post.png",
        }
        save_image(pair.pre_image, paths["pre_image"])
        save_image(pair.post_image, paths["post_image"])
        save_mask(pair.pre_mask, paths["pre_mask"])
        save_mask(pair.post_mask, paths["post_mask"])
        event = DisasterEvent(cid, f"synthetic scene {i}", "", "synthetic", 0.0, 0, None)
        records.append(CaseRecord(event, resolution_m=1.0, **paths))
    manifest = DatasetManifest(records, split_ids([r.event.id for r in records], val_share))
    path = out / "manifest.json"
    save_manifest(manifest, path)
    return path
