"""
Manifest-driven dataset assembly and synthetic face-like image domains.

A manifest is a UTF-8 CSV with header ``path,label,source,split``; paths are
relative to the manifest file. Optional ``# key=value`` comment lines before
the header carry metadata (``name``, ``version``).

Training compositions nest: D1 uses the ``baseline`` source, D2 adds ``wild``
and D3 adds ``auxdb``.
"""
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

from .model import CLIENT, IMPOSTER, LABELS

SPLITS = ("train", "val", "test")
HEADER = ["path", "label", "source", "split"]
MANIFEST_VERSION = "1"
FACE_SIZE = 64


class ManifestError(ValueError):
    """Malformed manifest; ``line`` is the 1-based line number when known."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


class DecodeError(ValueError):
    """Image could not be decoded or is too small to use."""


class AssemblyError(ValueError):
    """A composition selects nothing or names sources the manifest lacks."""


@dataclass(frozen=True)
class Sample:
    path: Path
    label: str
    source: str
    split: str


@dataclass
class Manifest:
    samples: list
    name: str = ""
    version: str = MANIFEST_VERSION

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def sources(self):
        return sorted({s.source for s in self.samples})

    def select(self, split=None, sources=None, label=None):
        return [
            s
            for s in self.samples
            if (split is None or s.split == split)
            and (sources is None or s.source in sources)
            and (label is None or s.label == label)
        ]


@dataclass(frozen=True)
class Composition:
    name: str
    sources: tuple

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(dict.fromkeys(self.sources)))


D1 = Composition("D1", ("baseline",))
D2 = Composition("D2", ("baseline", "wild"))
D3 = Composition("D3", ("baseline", "wild", "auxdb"))
COMPOSITIONS = {c.name: c for c in (D1, D2, D3)}


def get_composition(name_or_sources):
    """Look up D1/D2/D3 by name, or build a custom composition from a list of sources."""
    if isinstance(name_or_sources, Composition):
        return name_or_sources
    if isinstance(name_or_sources, str):
        if name_or_sources not in COMPOSITIONS:
            raise AssemblyError(f"unknown composition {name_or_sources!r}; use one of {sorted(COMPOSITIONS)}")
        return COMPOSITIONS[name_or_sources]
    sources = tuple(name_or_sources)
    return Composition("custom:" + "+".join(sources), sources)


# -- manifest I/O ---------------------------------------------------------------


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise ManifestError("manifest file not found", path)
    root = path.parent
    meta = {}
    samples = []
    seen = {}
    header_seen = False
    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if not header_seen and line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
            continue
        row = next(csv.reader([line]))
        if not header_seen:
            if [c.strip() for c in row] != HEADER:
                raise ManifestError(f"expected header {','.join(HEADER)!r}, got {line!r}", path, lineno)
            header_seen = True
            continue
        if len(row) != 4:
            raise ManifestError(f"expected 4 fields, got {len(row)}", path, lineno)
        rel, label, source, split = (c.strip() for c in row)
        if not rel or not source:
            raise ManifestError("empty path or source", path, lineno)
        if label not in LABELS:
            raise ManifestError(f"unknown label {label!r}", path, lineno)
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}", path, lineno)
        if split == "train" and label != CLIENT:
            raise ManifestError("train split may only contain client samples", path, lineno)
        if rel in seen:
            raise ManifestError(f"duplicate path {rel!r} (first on line {seen[rel]})", path, lineno)
        seen[rel] = lineno
        full = root / rel
        if not full.is_file():
            raise ManifestError(f"referenced file {rel!r} does not exist", path, lineno)
        samples.append(Sample(full, label, source, split))
    if not header_seen:
        raise ManifestError("missing header line", path, 1)
    return Manifest(samples, name=meta.get("name", path.stem), version=meta.get("version", MANIFEST_VERSION))


def write_manifest(manifest, path):
    """Write ``manifest`` as CSV with paths made relative to ``path``'s directory."""
    path = Path(path)
    root = path.parent.resolve()
    buf = io.StringIO()
    buf.write(f"# name={manifest.name}\n# version={manifest.version}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for s in manifest.samples:
        rel = Path(s.path).resolve().relative_to(root).as_posix()
        writer.writerow([rel, s.label, s.source, s.split])
    path.write_text(buf.getvalue(), encoding="utf-8")


def merge_manifests(manifests, name="merged"):
    samples = [s for m in manifests for s in m.samples]
    paths = [Path(s.path).resolve() for s in samples]
    if len(set(paths)) != len(paths):
        raise ManifestError("merged manifests contain duplicate paths")
    return Manifest(samples, name=name)


# -- images -----------------------------------------------------------------------


def read_image(path):
    """Decode a PNG/PPM (or anything Pillow reads) into an HxWx3 uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from None


def write_png(array, path):
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def normalize_face(image, size=FACE_SIZE):
    """Center-crop to a square, bilinear-resize to ``size`` and scale to [0, 1].

    Returns a float64 tensor of shape ``[3, size, size]``.
    """
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise DecodeError(f"expected an RGB raster, got shape {arr.shape}")
    arr = arr[:, :, :3]
    h, w = arr.shape[:2]
    if min(h, w) < 8:
        raise DecodeError(f"image {w}x{h} is smaller than 8x8")
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    arr = np.ascontiguousarray(arr[top : top + side, left : left + side]).astype(np.uint8)
    if side != size:
        arr = np.asarray(Image.fromarray(arr, mode="RGB").resize((size, size), Image.BILINEAR))
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float64) / 255.0


def load_face(path, size=FACE_SIZE):
    return normalize_face(read_image(path), size)


def assemble(manifest, composition, split):
    """Load and normalize the samples of ``split`` whose source is in ``composition``.

    Returns ``[(tensor, label, source), ...]`` in manifest order.
    """
    composition = get_composition(composition)
    missing = [s for s in composition.sources if s not in manifest.sources()]
    if missing:
        raise AssemblyError(f"composition {composition.name} names sources absent from the manifest: {missing}")
    chosen = manifest.select(split=split, sources=set(composition.sources))
    if not chosen:
        raise AssemblyError(f"composition {composition.name} selects no {split!r} samples")
    return [(load_face(s.path), s.label, s.source) for s in chosen]


def assemble_split(manifest, split, sources=None):
    """Like ``assemble`` but without composition checks; ``sources=None`` takes all."""
    chosen = manifest.select(split=split, sources=None if sources is None else set(sources))
    if not chosen:
        raise AssemblyError(f"manifest {manifest.name!r} has no {split!r} samples")
    return [(load_face(s.path), s.label, s.source) for s in chosen]


# -- synthetic domains --------------------------------------------------------------

ATTACKS = ("print-flatten", "screen-replay")


@dataclass(frozen=True)
class ClientStyle:
    """Appearance distribution of the genuine faces in one synthetic domain.

    Colors are RGB in [0, 1]; every ``(lo, hi)`` pair is sampled uniformly.
    """

    size: tuple = (80, 80)  # native (height, width) before normalization
    skin: tuple = ((0.85, 0.65, 0.5),)
    background: tuple = ((0.3, 0.3, 0.35), (0.6, 0.6, 0.55))
    color_jitter: float = 0.05
    blob_count: tuple = (1, 3)
    blur: tuple = (2.0, 3.0)
    gain: tuple = (0.85, 1.05)
    casts: tuple = ((1.0, 1.0, 1.0),)  # per-channel white-balance options


@dataclass(frozen=True)
class SynthDomainSpec:
    domain_id: str
    source: str
    style: ClientStyle = field(default_factory=ClientStyle)
    attacks: tuple = ATTACKS
    attack_strength: float = 1.0  # scales grain / moire amplitude
    seed: int = 0
    # split -> (n_client, n_imposter)
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        for split, (nc, ni) in self.counts.items():
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r} in counts")
            if split == "train" and ni:
                raise ValueError("synthetic train split cannot contain imposters")
            if nc < 0 or ni < 0:
                raise ValueError("counts must be non-negative")
        for a in self.attacks:
            if a not in ATTACKS:
                raise ValueError(f"unknown attack {a!r}; expected one of {ATTACKS}")

    @property
    def count(self):
        return sum(nc + ni for nc, ni in self.counts.values())


def _pick_color(rng, palette, jitter):
    base = np.asarray(palette[rng.integers(len(palette))], dtype=np.float64)
    return np.clip(base + rng.normal(0.0, jitter, 3), 0.0, 1.0)


def _blob(yy, xx, cy, cx, ry, rx, soft=1.0):
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return 1.0 / (1.0 + np.exp(np.clip((d - 1.0) * 6.0 / soft, -50, 50)))


def render_client(style, rng):
    """Render one smooth face-like RGB image (float, HxWx3 in [0, 1])."""
    h, w = style.size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy, xx = yy / h, xx / w

    top = _pick_color(rng, style.background, style.color_jitter)
    bottom = _pick_color(rng, style.background, style.color_jitter)
    img = top[None, None] * (1 - yy[..., None]) + bottom[None, None] * yy[..., None]

    for _ in range(rng.integers(style.blob_count[0], style.blob_count[1] + 1)):
        color = _pick_color(rng, style.background, 2 * style.color_jitter)
        m = _blob(yy, xx, rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.3), rng.uniform(0.08, 0.3))
        img = img * (1 - m[..., None]) + color * m[..., None]

    # head, hair cap, eyes, mouth
    skin = _pick_color(rng, style.skin, style.color_jitter)
    cy, cx = 0.52 + rng.normal(0, 0.03), 0.5 + rng.normal(0, 0.03)
    ry, rx = rng.uniform(0.3, 0.38), rng.uniform(0.22, 0.28)
    hair = skin * rng.uniform(0.15, 0.5)
    m = _blob(yy, xx, cy - 0.55 * ry, cx, 0.6 * ry, 1.05 * rx)
    img = img * (1 - m[..., None]) + hair * m[..., None]
    m = _blob(yy, xx, cy, cx, ry, rx)
    img = img * (1 - m[..., None]) + skin * m[..., None]
    eye = skin * 0.25
    for side in (-1, 1):
        m = _blob(yy, xx, cy - 0.12 * ry / 0.33, cx + side * 0.4 * rx, 0.035, 0.05)
        img = img * (1 - m[..., None]) + eye * m[..., None]
    m = _blob(yy, xx, cy + 0.45 * ry, cx, 0.03, rng.uniform(0.06, 0.1))
    img = img * (1 - m[..., None]) + skin * np.array([0.75, 0.4, 0.4]) * m[..., None]

    # directional shading and white balance
    angle = rng.uniform(0, 2 * np.pi)
    shade = 1.0 + 0.2 * ((xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle))
    cast = np.asarray(style.casts[rng.integers(len(style.casts))], dtype=np.float64)
    img = img * shade[..., None] * rng.uniform(*style.gain) * cast[None, None]

    sigma = rng.uniform(*style.blur) * h / FACE_SIZE
    img = gaussian_filter(img, sigma=(sigma, sigma, 0), mode="nearest")
    return np.clip(img, 0.0, 1.0)


def print_flatten(img, rng, strength=1.0):
    """Printed-photo attack: contrast compression, paper tint and grain."""
    h, w, _ = img.shape
    mean = img.mean(axis=(0, 1), keepdims=True)
    out = mean + rng.uniform(0.5, 0.7) * (img - mean)
    out = out * np.array([1.0, 0.98, 0.9]) + 0.03
    grain = gaussian_filter(rng.normal(0.0, 1.0, (h, w)), 0.6)
    grain /= grain.std() + 1e-12
    out = out + strength * rng.uniform(0.05, 0.08) * grain[..., None]
    return np.clip(out, 0.0, 1.0)


def screen_replay(img, rng, strength=1.0):
    """Screen-replay attack: additive moire from two interfering pixel grids."""
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pattern = np.zeros((h, w))
    for _ in range(2):
        period = rng.uniform(2.5, 4.5)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        pattern += np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    amp = strength * rng.uniform(0.06, 0.1)
    out = img * rng.uniform(1.02, 1.12) + amp * pattern[..., None] * np.array([1.0, 0.9, 1.1])
    return np.clip(out, 0.0, 1.0)


_ATTACK_FNS = {"print-flatten": print_flatten, "screen-replay": screen_replay}


def apply_attack(name, img, rng, strength=1.0):
    return _ATTACK_FNS[name](img, rng, strength)


def _quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_pair(spec, split, index):
    """Deterministically render the imposter ``index`` of ``split`` together
    with the client image it was made from. Returns ``(client, imposter, attack)``
    as uint8 arrays plus the attack name."""
    rng = np.random.default_rng([spec.seed, SPLITS.index(split), 1, index])
    client = render_client(spec.style, rng)
    attack = spec.attacks[index % len(spec.attacks)]
    return _quantize(client), _quantize(apply_attack(attack, client, rng, spec.attack_strength)), attack


def render_genuine(spec, split, index):
    rng = np.random.default_rng([spec.seed, SPLITS.index(split), 0, index])
    return _quantize(render_client(spec.style, rng))


def synth_generate(spec, out_dir):
    """Write the images of ``spec`` under ``out_dir/<domain_id>/`` plus a
    manifest ``out_dir/<domain_id>.csv``; returns the manifest."""
    out_dir = Path(out_dir)
    samples = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            n_client, n_imposter = spec.counts.get(split, (0, 0))
            if n_client + n_imposter == 0:
                continue
            folder = out_dir / spec.domain_id / split
            folder.mkdir(parents=True, exist_ok=True)
            for i in range(n_client):
                p = folder / f"client_{i:04d}.png"
                write_png(render_genuine(spec, split, i), p)
                samples.append(Sample(p, CLIENT, spec.source, split))
            for i in range(n_imposter):
                _, fake, attack = render_pair(spec, split, i)
                p = folder / f"imposter_{i:04d}_{attack}.png"
                write_png(fake, p)
                samples.append(Sample(p, IMPOSTER, spec.source, split))
        manifest = Manifest(samples, name=spec.domain_id)
        write_manifest(manifest, out_dir / f"{spec.domain_id}.csv")
    except PermissionError as exc:
        raise OSError(f"cannot write synthetic domain {spec.domain_id!r} to {out_dir}: {exc}") from exc
    return manifest
