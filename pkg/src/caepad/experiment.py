"""
Training-set composition experiment on synthetic domains.

Four domains stand in for four kinds of face database:

======  ==========  ==========================================================
domain  source      role
======  ==========  ==========================================================
A       baseline    specialized anti-spoofing database (train/val/test)
B       unseen      cross-database test set, never trained on
W       wild        high-variety in-the-wild faces (train/val)
X       auxdb       non-specialized face databases (train/val)
======  ==========  ==========================================================

Default training counts are 1027, 163 and 269 images scaled down by 8.
"""
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import data as D
from . import metrics as MT
from .model import CaeConfig, build_model
from .training import TrainConfig, train

SCALE = 8
TABLE1_SIZES = {"baseline": 1027, "wild": 163, "auxdb": 269}

WARM_SKIN = ((0.86, 0.66, 0.52), (0.78, 0.58, 0.45), (0.9, 0.72, 0.6))
DARK_SKIN = ((0.55, 0.38, 0.28), (0.42, 0.3, 0.22))
NEUTRAL_BG = ((0.35, 0.35, 0.38), (0.55, 0.55, 0.5), (0.45, 0.42, 0.4))


def scaled(n, scale=SCALE):
    return int(round(n / scale))


def default_domains(seed=0, scale=SCALE):
    """The four synthetic domains, keyed by domain id."""
    style_a = D.ClientStyle(
        size=(80, 80),
        skin=WARM_SKIN,
        background=NEUTRAL_BG,
        color_jitter=0.03,
        blob_count=(0, 1),
        blur=(2.5, 3.5),
        gain=(0.9, 1.0),
    )
    style_b = D.ClientStyle(
        size=(72, 96),
        skin=WARM_SKIN + DARK_SKIN,
        background=((0.2, 0.3, 0.45), (0.15, 0.4, 0.3), (0.5, 0.55, 0.65)),
        blob_count=(3, 6),
        blur=(0.6, 1.0),
        gain=(0.6, 0.8),
        casts=((0.85, 0.95, 1.15),),
    )
    style_w = D.ClientStyle(
        size=(88, 88),
        skin=WARM_SKIN + DARK_SKIN,
        background=NEUTRAL_BG + ((0.2, 0.3, 0.45), (0.15, 0.4, 0.3), (0.6, 0.3, 0.3), (0.5, 0.55, 0.65)),
        color_jitter=0.08,
        blob_count=(1, 6),
        blur=(0.5, 3.0),
        gain=(0.55, 1.1),
        casts=((1.0, 1.0, 1.0), (0.85, 0.95, 1.15), (1.1, 1.0, 0.85)),
    )
    style_x = D.ClientStyle(
        size=(64, 64),
        skin=WARM_SKIN + DARK_SKIN,
        background=((0.75, 0.75, 0.75), (0.6, 0.65, 0.7)),
        blob_count=(0, 2),
        blur=(1.0, 2.0),
        gain=(0.8, 1.0),
    )
    return {
        "A": D.SynthDomainSpec(
            "A", "baseline", style_a, attack_strength=1.6, seed=seed * 1000 + 1,
            counts={"train": (scaled(TABLE1_SIZES["baseline"], scale), 0), "val": (12, 12), "test": (40, 40)},
        ),
        "B": D.SynthDomainSpec(
            "B", "unseen", style_b, seed=seed * 1000 + 2,
            counts={"test": (40, 40)},
        ),
        "W": D.SynthDomainSpec(
            "W", "wild", style_w, seed=seed * 1000 + 3,
            counts={"train": (scaled(TABLE1_SIZES["wild"], scale), 0), "val": (6, 6)},
        ),
        "X": D.SynthDomainSpec(
            "X", "auxdb", style_x, seed=seed * 1000 + 4,
            counts={"train": (scaled(TABLE1_SIZES["auxdb"], scale), 0), "val": (8, 8)},
        ),
    }


def generate(out_dir, domains=None, seed=0):
    """Generate every domain, write one manifest per domain plus ``all.csv``.

    Returns the merged manifest.
    """
    out_dir = Path(out_dir)
    domains = domains or default_domains(seed)
    manifests = [D.synth_generate(spec, out_dir) for spec in domains.values()]
    merged = D.merge_manifests(manifests, name="all")
    D.write_manifest(merged, out_dir / "all.csv")
    return merged


def train_composition(manifest, composition, train_config=None, cae_config=None, seed=0):
    """Build a model from ``seed`` and train it on the composition's clients."""
    train_config = train_config or TrainConfig(seed=seed)
    items = D.assemble(manifest, composition, "train")
    model = build_model(cae_config or CaeConfig(), seed=seed)
    return train(model, [x for x, _, _ in items], config=train_config)


@dataclass
class Evaluation:
    threshold: object
    val_eer: float
    val_scores: MT.ScoreSet
    tests: dict = field(default_factory=dict)  # name -> dict of results

    def summary(self):
        return {
            "threshold": self.threshold.value,
            "val_eer": self.val_eer,
            "tests": {
                name: {k: v for k, v in r.items() if k in ("auc", "hter", "fpr", "fnr", "eer")}
                for name, r in self.tests.items()
            },
        }


def evaluate(model, val_set, test_sets, name=""):
    """Calibrate at the validation EER, then score every test set.

    ``test_sets`` maps a name to a list of ``(image, label, ...)`` items. Each
    result carries the AUC, the operating point at the transferred threshold
    and the test set's own EER for comparison.
    """
    val_scores = MT.score_dataset(model, val_set, provenance=f"{name}/val")
    threshold, val_eer = MT.eer_threshold(val_scores)
    result = Evaluation(threshold, val_eer, val_scores)
    for test_name, items in test_sets.items():
        scores = MT.score_dataset(model, items, provenance=f"{name}/{test_name}")
        roc = MT.roc_curve(scores)
        op = MT.hter_at(scores, threshold)
        _, own_eer = MT.eer_threshold(scores)
        result.tests[test_name] = {
            "scores": scores,
            "roc": roc,
            "auc": roc.auc,
            "hter": op.hter,
            "fpr": op.fpr,
            "fnr": op.fnr,
            "eer": own_eer,
        }
    return result


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def run_sweep(manifest, compositions=("D1", "D2", "D3"), train_config=None, cae_config=None, seed=0,
              val_sources=None, test_sources=None):
    """Train one model per composition and evaluate each on every test source.

    Returns ``{composition: (model, history, Evaluation)}``.
    """
    val_set = D.assemble_split(manifest, "val", val_sources)
    test_sources = test_sources or sorted({s.source for s in manifest.select(split="test")})
    tests = {src: D.assemble_split(manifest, "test", [src]) for src in test_sources}
    out = {}
    for comp in compositions:
        t0 = time.perf_counter()
        model, history = train_composition(manifest, comp, train_config, cae_config, seed)
        ev = evaluate(model, val_set, tests, name=str(comp))
        history.total_seconds = time.perf_counter() - t0
        out[comp] = (model, history, ev)
    return out


def table(results, key):
    """Composition x test-source table of one metric (``auc`` or ``hter``)."""
    comps = list(results)
    sources = list(next(iter(results.values()))[2].tests)
    return {src: {c: results[c][2].tests[src][key] for c in comps} for src in sources}


def format_table(tab, title):
    comps = list(next(iter(tab.values())))
    lines = [title, "source".ljust(10) + "".join(c.rjust(8) for c in comps)]
    for src, row in tab.items():
        lines.append(src.ljust(10) + "".join(f"{row[c]:8.3f}" for c in comps))
    return "\n".join(lines)

