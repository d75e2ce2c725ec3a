from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from caepad import data as D
from caepad.model import CLIENT, IMPOSTER


def make_png(path, array):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8), "RGB").save(path)


@pytest.fixture
def tree(tmp_path):
    """Three sources with train/val/test rows and real image files."""
    rng = np.random.default_rng(0)
    rows = []
    for src in ("baseline", "wild", "auxdb"):
        for i in range(2):
            rows.append((f"{src}/tr{i}.png", CLIENT, src, "train"))
        rows.append((f"{src}/vc.png", CLIENT, src, "val"))
        rows.append((f"{src}/vi.png", IMPOSTER, src, "val"))
    for rel, *_ in rows:
        make_png(tmp_path / rel, rng.integers(0, 256, (64, 64, 3)))
    text = "path,label,source,split\n" + "".join(",".join(r) + "\n" for r in rows)
    (tmp_path / "m.csv").write_text(text)
    return tmp_path


def write_rows(tmp_path, rows, files=True):
    for rel, *_ in rows:
        if files:
            make_png(tmp_path / rel, np.zeros((8, 8, 3)))
    text = "path,label,source,split\n" + "".join(",".join(r) + "\n" for r in rows)
    (tmp_path / "m.csv").write_text(text)
    return tmp_path / "m.csv"


# -- manifests --------------------------------------------------------------------------


def test_load_manifest_three_rows(tmp_path):
    rows = [("a.png", CLIENT, "baseline", "train"), ("b.png", IMPOSTER, "baseline", "test"), ("c.png", CLIENT, "wild", "val")]
    m = D.load_manifest(write_rows(tmp_path, rows))
    assert len(m) == 3
    assert [s.path.name for s in m] == ["a.png", "b.png", "c.png"]
    assert m.samples[1].label == IMPOSTER and m.samples[2].split == "val"
    assert m.name == "m"


@pytest.mark.parametrize(
    "bad_row,match",
    [
        (("x.png", "attack", "baseline", "test"), "unknown label"),
        (("x.png", CLIENT, "baseline", "holdout"), "unknown split"),
        (("x.png", IMPOSTER, "baseline", "train"), "train split"),
        (("a.png", CLIENT, "baseline", "test"), "duplicate path"),
    ],
)
def test_load_manifest_rejects_bad_rows(tmp_path, bad_row, match):
    rows = [("a.png", CLIENT, "baseline", "train"), ("b.png", CLIENT, "baseline", "val"), bad_row]
    with pytest.raises(D.ManifestError, match=match) as info:
        D.load_manifest(write_rows(tmp_path, rows))
    assert info.value.line == 4


def test_load_manifest_missing_image(tmp_path):
    path = write_rows(tmp_path, [("gone.png", CLIENT, "baseline", "train")], files=False)
    with pytest.raises(D.ManifestError, match="does not exist") as info:
        D.load_manifest(path)
    assert info.value.line == 2


def test_load_manifest_malformed(tmp_path):
    (tmp_path / "m.csv").write_text("path,label,source,split\na.png,client\n")
    with pytest.raises(D.ManifestError, match="4 fields"):
        D.load_manifest(tmp_path / "m.csv")
    (tmp_path / "m.csv").write_text("file,label\n")
    with pytest.raises(D.ManifestError, match="header"):
        D.load_manifest(tmp_path / "m.csv")
    with pytest.raises(D.ManifestError, match="not found"):
        D.load_manifest(tmp_path / "nope.csv")


def test_manifest_metadata_and_round_trip(tree):
    m = D.load_manifest(tree / "m.csv")
    m.name = "exp"
    D.write_manifest(m, tree / "copy.csv")
    text = (tree / "copy.csv").read_text()
    assert text.splitlines()[2] == "path,label,source,split"
    back = D.load_manifest(tree / "copy.csv")
    assert back.name == "exp" and back.version == "1"
    assert [(s.path, s.label, s.source, s.split) for s in back] == [(s.path, s.label, s.source, s.split) for s in m]


# -- normalization ----------------------------------------------------------------------------


def test_normalize_identity_size():
    img = np.random.default_rng(0).integers(0, 256, (64, 64, 3)).astype(np.uint8)
    out = D.normalize_face(img)
    assert out.shape == (3, 64, 64)
    np.testing.assert_array_equal(out, img.transpose(2, 0, 1) / 255.0)


def test_normalize_center_crop_geometry():
    img = np.zeros((64, 128, 3), dtype=np.uint8)
    img[:, 32:96] = np.random.default_rng(1).integers(1, 256, (64, 64, 3))
    out = D.normalize_face(img)
    np.testing.assert_array_equal(out, img[:, 32:96].transpose(2, 0, 1) / 255.0)
    tall = np.ascontiguousarray(img.transpose(1, 0, 2))
    np.testing.assert_array_equal(D.normalize_face(tall), img[:, 32:96].transpose(2, 0, 1).transpose(0, 2, 1) / 255.0)


def test_normalize_constant_gray():
    out = D.normalize_face(np.full((200, 200, 3), 128, dtype=np.uint8))
    np.testing.assert_allclose(out, 128 / 255, atol=1e-12)
    assert out[0, 0, 0] == pytest.approx(0.50196, abs=1e-5)


def test_normalize_idempotent_on_64():
    img = np.random.default_rng(2).integers(0, 256, (64, 64, 3)).astype(np.uint8)
    once = D.normalize_face(img)
    twice = D.normalize_face(np.round(once.transpose(1, 2, 0) * 255).astype(np.uint8))
    np.testing.assert_array_equal(once, twice)


def test_normalize_rejects_tiny_and_degenerate():
    with pytest.raises(D.DecodeError):
        D.normalize_face(np.zeros((7, 30, 3), dtype=np.uint8))
    with pytest.raises(D.DecodeError):
        D.normalize_face(np.zeros((10, 10, 2), dtype=np.uint8))


def test_read_png_and_ppm(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (20, 30, 3)).astype(np.uint8)
    make_png(tmp_path / "a.png", img)
    with open(tmp_path / "a.ppm", "wb") as fh:
        fh.write(b"P6\n30 20\n255\n" + img.tobytes())
    np.testing.assert_array_equal(D.read_image(tmp_path / "a.png"), img)
    np.testing.assert_array_equal(D.read_image(tmp_path / "a.ppm"), img)


def test_undecodable_image(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image")
    with pytest.raises(D.DecodeError):
        D.read_image(tmp_path / "x.png")


# -- assembly ------------------------------------------------------------------------------------


def test_assemble_d1_selects_baseline(tree):
    m = D.load_manifest(tree / "m.csv")
    items = D.assemble(m, "D1", "train")
    assert len(items) == 2
    assert {src for _, _, src in items} == {"baseline"}
    assert all(x.shape == (3, 64, 64) and lab == CLIENT for x, lab, _ in items)


def test_compositions_nest(tree):
    m = D.load_manifest(tree / "m.csv")
    names = {}
    for comp in ("D1", "D2", "D3"):
        names[comp] = {s.path for s in m.select(split="train", sources=set(D.get_composition(comp).sources))}
        assert len(D.assemble(m, comp, "train")) == len(names[comp])
    assert names["D1"] < names["D2"] < names["D3"]
    assert set(D.D1.sources) < set(D.D2.sources) < set(D.D3.sources)


def test_assemble_keeps_manifest_order(tree):
    m = D.load_manifest(tree / "m.csv")
    items = D.assemble(m, "D3", "val")
    expected = [D.load_face(s.path) for s in m if s.split == "val"]
    assert len(items) == len(expected)
    for (x, _, _), y in zip(items, expected):
        np.testing.assert_array_equal(x, y)


def test_assemble_errors(tree):
    m = D.load_manifest(tree / "m.csv")
    with pytest.raises(D.AssemblyError, match="nuaa2"):
        D.assemble(m, ["baseline", "nuaa2"], "train")
    with pytest.raises(D.AssemblyError, match="no 'test'"):
        D.assemble(m, "D1", "test")
    with pytest.raises(D.AssemblyError):
        D.get_composition("D9")


def test_training_items_are_clients(tree):
    m = D.load_manifest(tree / "m.csv")
    assert all(lab == CLIENT for _, lab, _ in D.assemble(m, "D3", "train"))


# -- synthetic domains ----------------------------------------------------------------------------


SPEC = D.SynthDomainSpec(
    "T", "baseline", D.ClientStyle(size=(48, 40)), seed=5,
    counts={"train": (3, 0), "val": (1, 2), "test": (2, 2)},
)


def test_synth_is_deterministic(tmp_path):
    m1 = D.synth_generate(SPEC, tmp_path / "a")
    m2 = D.synth_generate(SPEC, tmp_path / "b")
    assert len(m1) == len(m2) == SPEC.count == 10
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_manifest_loads(tmp_path):
    D.synth_generate(SPEC, tmp_path)
    m = D.load_manifest(tmp_path / "T.csv")
    assert len(m.select(split="train")) == 3
    assert all(s.label == CLIENT for s in m.select(split="train"))
    assert len(m.select(split="test", label=IMPOSTER)) == 2
    img = D.read_image(m.samples[0].path)
    assert img.shape == (48, 40, 3)


@pytest.mark.parametrize("attack", D.ATTACKS)
def test_attacks_change_enough_pixels(attack):
    spec = D.SynthDomainSpec("T", "baseline", attacks=(attack,), seed=1, counts={"test": (0, 5)})
    for i in range(5):
        client, fake, name = D.render_pair(spec, "test", i)
        assert name == attack
        changed = np.any(client != fake, axis=2).mean()
        assert changed > 0.01


def test_synth_zero_count(tmp_path):
    spec = D.SynthDomainSpec("E", "wild", seed=0, counts={})
    m = D.synth_generate(spec, tmp_path)
    assert len(m) == 0
    assert (tmp_path / "E.csv").read_text().strip().endswith("path,label,source,split")


def test_synth_rejects_bad_specs():
    with pytest.raises(ValueError):
        D.SynthDomainSpec("T", "x", counts={"train": (2, 1)})
    with pytest.raises(ValueError):
        D.SynthDomainSpec("T", "x", attacks=("mask",))


def test_synth_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        D.synth_generate(SPEC, blocker / "sub")


def test_rendered_clients_are_smooth():
    spec = D.SynthDomainSpec("T", "baseline", seed=2, counts={"train": (1, 0)})
    img = D.render_genuine(spec, "train", 0).astype(float)
    # neighbouring pixels of a blurred field differ little on average
    assert np.abs(np.diff(img, axis=0)).mean() < 3.0
