"""Procedural benchmark: textured rectangles on gradient backgrounds.

Each query is a noisy copy of one reference scene; with probability
``change_rate`` one of its objects is re-textured, and that object's box is the
change annotation. Destructor scenes are generated independently.

Every object texture in a set, destructors and re-textured objects included,
differs from every other one, and no two scenes render alike. Manifests carry
no proposal boxes unless ``detections`` is set; then each image lists a
detector-like box per object: the object's box with every side pulled in by
0..DETECTION_MARGIN pixels, drawn once per object so the same object yields
the same box in a reference and in its queries.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .bolf import BoundingBox, resize_patch
from .errors import UsageError
from .evaluation import Annotation, annotation_to_record
from .manifest import write_jsonl
from .pnm import to_uint8, write_pgm

DEFAULT_WIDTH = 120
DEFAULT_HEIGHT = 90
DEFAULT_N_REFS = 50
DEFAULT_N_DESTRUCTORS = 50
DEFAULT_N_QUERIES = 100
DEFAULT_CHANGE_RATE = 0.5
DEFAULT_NOISE_SIGMA = 0.02
MIN_OBJECTS, MAX_OBJECTS = 6, 10
DETECTION_MARGIN = 2

# textures are compared on a SIGNATURE_SIDE grid, scenes at SCENE_SIDE
SIGNATURE_SIDE = 16
SCENE_SIDE = 32
MIN_TEXTURE_RMS = 0.06
MIN_SCENE_RMS = 0.1
MAX_ATTEMPTS = 200

STRIPES, CHECKER, PLAID = range(3)


@dataclass(frozen=True)
class _Texture:
    kind: int
    base: float
    amp: float
    params: tuple[float, ...]

    def render(self, width: int, height: int) -> npt.NDArray[np.float64]:
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        if self.kind == STRIPES:
            freq, theta, phase = self.params
            pattern = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        elif self.kind == CHECKER:
            cx, cy, px, py = self.params
            pattern = np.sign(np.sin(np.pi * xx / cx + px) * np.sin(np.pi * yy / cy + py))
        else:
            f1, f2, theta, p1, p2 = self.params
            u = np.cos(theta) * xx + np.sin(theta) * yy
            v = np.cos(theta) * yy - np.sin(theta) * xx
            pattern = 0.75 * (np.sin(f1 * u + p1) + np.sin(f2 * v + p2))
        return np.clip(self.base + self.amp * pattern, 0.0, 1.0)

    def signature(self) -> npt.NDArray[np.float64]:
        return self.render(SIGNATURE_SIDE, SIGNATURE_SIDE).reshape(-1)


def _random_texture(rng: np.random.Generator, base: float) -> _Texture:
    kind = int(rng.integers(3))
    amp = rng.uniform(0.08, 0.2)
    if kind == STRIPES:
        params = (rng.uniform(0.3, 1.2), rng.uniform(0.0, np.pi), rng.uniform(0.0, 2 * np.pi))
    elif kind == CHECKER:
        params = (rng.uniform(2.0, 6.0), rng.uniform(2.0, 6.0), rng.uniform(0.0, np.pi), rng.uniform(0.0, np.pi))
    else:
        params = (
            rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2), rng.uniform(0.0, np.pi),
            rng.uniform(0.0, 2 * np.pi), rng.uniform(0.0, 2 * np.pi),
        )
    return _Texture(kind, float(base), float(amp), tuple(float(p) for p in params))


class _TextureBank:
    """Hands out textures, each at least MIN_TEXTURE_RMS away from all earlier ones."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._signatures = np.empty((0, SIGNATURE_SIDE * SIGNATURE_SIDE))

    def __len__(self) -> int:
        return len(self._signatures)

    def draw(self, base: float | None = None) -> _Texture:
        for _ in range(MAX_ATTEMPTS):
            texture = _random_texture(self.rng, self.rng.uniform(0.15, 0.85) if base is None else base)
            signature = texture.signature()
            if len(self._signatures):
                rms = np.sqrt(((self._signatures - signature) ** 2).mean(axis=1))
                if rms.min() < MIN_TEXTURE_RMS:
                    continue
            self._signatures = np.vstack([self._signatures, signature])
            return texture
        raise UsageError(f"could not draw a distinct object texture after {len(self)} textures")


@dataclass(frozen=True)
class _Object:
    box: BoundingBox
    texture: _Texture
    detection: BoundingBox


@dataclass(frozen=True)
class _Scene:
    background: npt.NDArray[np.float64]
    objects: tuple[_Object, ...]

    def render(self) -> npt.NDArray[np.float64]:
        image = self.background.copy()
        for obj in self.objects:
            b = obj.box
            image[b.y0:b.y1, b.x0:b.x1] = obj.texture.render(b.width, b.height)
        return image


@dataclass(frozen=True, eq=False)
class SyntheticImage:
    """One rendered image.

    Attributes:
        objects: Ground-truth object boxes.
        boxes: Proposal boxes written to the manifest (empty unless the set
            was generated with detections).
    """

    id: str
    pixels: npt.NDArray[np.uint8]
    objects: tuple[BoundingBox, ...]
    boxes: tuple[BoundingBox, ...] = ()


@dataclass(frozen=True, eq=False)
class SyntheticSet:
    references: list[SyntheticImage]
    queries: list[SyntheticImage]
    annotations: list[Annotation]


def _background(rng: np.random.Generator, width: int, height: int) -> npt.NDArray[np.float64]:
    """Bilinear gradient between four random corner intensities."""
    c00, c10, c01, c11 = rng.uniform(0.05, 0.95, size=4)
    v, u = np.mgrid[0:height, 0:width]
    u = u / max(width - 1, 1)
    v = v / max(height - 1, 1)
    return (1 - v) * ((1 - u) * c00 + u * c10) + v * ((1 - u) * c01 + u * c11)


def _disjoint(a: BoundingBox, b: BoundingBox) -> bool:
    return a.x1 <= b.x0 or b.x1 <= a.x0 or a.y1 <= b.y0 or b.y1 <= a.y0


def _place_boxes(rng: np.random.Generator, width: int, height: int, count: int) -> list[BoundingBox]:
    boxes: list[BoundingBox] = []
    for _ in range(50 * count):
        if len(boxes) == count:
            break
        bw = int(rng.integers(max(width // 9, 1), width // 5 + 1))
        bh = int(rng.integers(max(height // 9, 1), height // 5 + 1))
        x0 = int(rng.integers(0, width - bw + 1))
        y0 = int(rng.integers(0, height - bh + 1))
        box = BoundingBox(x0, y0, x0 + bw, y0 + bh)
        if all(_disjoint(box, other) for other in boxes):
            boxes.append(box)
    return boxes


def _detection(rng: np.random.Generator, box: BoundingBox) -> BoundingBox:
    """``box`` with each side moved inward by up to DETECTION_MARGIN pixels, never empty."""
    left, right, top, bottom = (int(m) for m in rng.integers(0, DETECTION_MARGIN + 1, size=4))
    while left + right >= box.width:
        left, right = max(left - 1, 0), max(right - 1, 0)
    while top + bottom >= box.height:
        top, bottom = max(top - 1, 0), max(bottom - 1, 0)
    return BoundingBox(box.x0 + left, box.y0 + top, box.x1 - right, box.y1 - bottom)


def _new_object(rng: np.random.Generator, bank: _TextureBank, box: BoundingBox, base: float | None = None) -> _Object:
    return _Object(box, bank.draw(base), _detection(rng, box))


def _scene(rng: np.random.Generator, bank: _TextureBank, width: int, height: int) -> _Scene:
    count = int(rng.integers(MIN_OBJECTS, MAX_OBJECTS + 1))
    boxes = _place_boxes(rng, width, height, count)
    objects = tuple(_new_object(rng, bank, b) for b in boxes)
    return _Scene(_background(rng, width, height), objects)


def _distinct_scenes(
    rng: np.random.Generator, bank: _TextureBank, width: int, height: int, count: int, taken: list[np.ndarray]
) -> list[_Scene]:
    """``count`` scenes whose SCENE_SIDE thumbnails differ from every thumbnail in ``taken``.

    Accepted thumbnails are appended to ``taken``.
    """
    scenes = []
    for _ in range(count):
        for _ in range(MAX_ATTEMPTS):
            scene = _scene(rng, bank, width, height)
            thumb = resize_patch(scene.render(), SCENE_SIDE).reshape(-1)
            if all(np.sqrt(((thumb - other) ** 2).mean()) >= MIN_SCENE_RMS for other in taken):
                break
        else:
            raise UsageError(f"could not generate a distinct scene after {len(taken)} scenes")
        taken.append(thumb)
        scenes.append(scene)
    return scenes


def _changed(rng: np.random.Generator, bank: _TextureBank, scene: _Scene, index: int) -> _Scene:
    old = scene.objects[index]
    # the new base stays in [0.1, 0.9]
    shift = rng.uniform(0.25, 0.4)
    up, down = old.texture.base + shift, old.texture.base - shift
    if up <= 0.9 and (down < 0.1 or rng.random() < 0.5):
        base = up
    else:
        base = down
    new = _new_object(rng, bank, old.box, base)
    objects = tuple(new if i == index else obj for i, obj in enumerate(scene.objects))
    return _Scene(scene.background, objects)


def _image(image_id: str, pixels: npt.NDArray[np.float64], scene: _Scene, detections: bool) -> SyntheticImage:
    boxes = tuple(o.detection for o in scene.objects) if detections else ()
    return SyntheticImage(image_id, to_uint8(pixels), tuple(o.box for o in scene.objects), boxes)


def generate_synthetic(
    n_refs: int = DEFAULT_N_REFS,
    n_destructors: int = DEFAULT_N_DESTRUCTORS,
    change_rate: float = DEFAULT_CHANGE_RATE,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    seed: int = 0,
    *,
    n_queries: int = DEFAULT_N_QUERIES,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    detections: bool = False,
) -> SyntheticSet:
    """Generate references, destructors, queries and change annotations.

    Query ``i`` revisits reference ``i % n_refs``. The reference list holds the
    n_refs scene references followed by the destructors. Pixels do not depend
    on ``detections``; it only decides whether proposal boxes are emitted.

    Raises:
        UsageError: Non-positive counts, change_rate outside [0, 1], negative
            noise, or a set too large to keep every object distinct.
    """
    if n_refs < 1 or n_destructors < 0 or n_queries < 1:
        raise UsageError("need n_refs >= 1, n_destructors >= 0, n_queries >= 1")
    if not 0.0 <= change_rate <= 1.0:
        raise UsageError(f"change_rate must be in [0, 1], got {change_rate}")
    if noise_sigma < 0:
        raise UsageError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if width < 12 or height < 12:
        raise UsageError(f"image size {width}x{height} too small")

    rng = np.random.default_rng(seed)
    bank = _TextureBank(rng)
    thumbs: list[np.ndarray] = []
    # one thumbnail pool, so destructors differ from references too
    scenes = _distinct_scenes(rng, bank, width, height, n_refs, thumbs)
    destructors = _distinct_scenes(rng, bank, width, height, n_destructors, thumbs)

    references = [_image(f"r{i:04d}", s.render(), s, detections) for i, s in enumerate(scenes)]
    references += [_image(f"d{i:04d}", s.render(), s, detections) for i, s in enumerate(destructors)]

    queries, annotations = [], []
    for q in range(n_queries):
        ref_index = q % n_refs
        scene = scenes[ref_index]
        change = rng.random() < change_rate
        target = int(rng.integers(len(scene.objects))) if scene.objects else -1
        changed_boxes: tuple[BoundingBox, ...] = ()
        if change and target >= 0:
            scene = _changed(rng, bank, scene, target)
            changed_boxes = (scene.objects[target].box,)
        # fresh noise per query
        noisy = scene.render() + rng.normal(0.0, noise_sigma, size=(height, width))
        query_id = f"q{q:04d}"
        queries.append(_image(query_id, noisy, scene, detections))
        annotations.append(Annotation(query_id, changed_boxes, references[ref_index].id))
    return SyntheticSet(references, queries, annotations)


def _manifest_records(images: list[SyntheticImage], subdir: str) -> list[dict]:
    records = []
    for image in images:
        record = {
            "id": image.id,
            "width": int(image.pixels.shape[1]),
            "height": int(image.pixels.shape[0]),
            "image_path": f"{subdir}/{image.id}.pgm",
        }
        if image.boxes:
            record["boxes"] = [box.as_list() for box in image.boxes]
        records.append(record)
    return records


def write_synthetic(dataset: SyntheticSet, out_dir: Path) -> tuple[Path, Path, Path]:
    """Write PGMs and manifests under ``out_dir``.

    Returns:
        Paths of refs.jsonl, queries.jsonl and annotations.jsonl.
    """
    out_dir = Path(out_dir)
    for subdir, images in (("refs", dataset.references), ("queries", dataset.queries)):
        for image in images:
            write_pgm(out_dir / subdir / f"{image.id}.pgm", image.pixels)
    refs = out_dir / "refs.jsonl"
    queries = out_dir / "queries.jsonl"
    annotations = out_dir / "annotations.jsonl"
    write_jsonl(refs, _manifest_records(dataset.references, "refs"))
    write_jsonl(queries, _manifest_records(dataset.queries, "queries"))
    write_jsonl(annotations, [annotation_to_record(a) for a in dataset.annotations])
    return refs, queries, annotations
