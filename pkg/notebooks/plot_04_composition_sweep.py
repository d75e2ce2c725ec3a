"""
Does a more varied training set help on an unseen domain?
=========================================================

Three training sets are nested:

* D1 holds domain-A clients only.
* D2 adds the high-variety "wild" domain.
* D3 adds the mugshot-like auxiliary domain as well.

Each model is calibrated at the EER of a mixed validation set and tested on
held-out domain A and on domain B, which no model trains on. The full run
takes several minutes on one core. Set ``CAEPAD_QUICK=1`` for a rough version
with a narrow network and few epochs.
"""
import os
from pathlib import Path

from caepad import experiment as E
from caepad import metrics as MT
from caepad.model import CaeConfig
from caepad.training import TrainConfig

quick = os.environ.get("CAEPAD_QUICK") == "1"
out = Path(os.environ.get("CAEPAD_OUT", "_out"))
manifest = E.generate(out / "domains", seed=0)
print(len(manifest), "images written to", out / "domains")

train_config = TrainConfig(epochs=5, seed=0) if quick else None
cae_config = CaeConfig(encoder_channels=(4, 8, 16)) if quick else None
results = E.run_sweep(manifest, train_config=train_config, cae_config=cae_config, seed=0,
                      test_sources=["baseline", "unseen"])

###############################################################################
# AUC is threshold free. HTER uses the threshold carried over from validation,
# so it shows whether that operating point still makes sense on a new domain.
print(E.format_table(E.table(results, "auc"), "AUC"))
print(E.format_table(E.table(results, "hter"), "HTER at the validation-EER threshold"))
for comp, (_, _, ev) in results.items():
    r = ev.tests["unseen"]
    print(f"{comp}: on B the transferred threshold gives HTER {r['hter']:.3f}; B's own EER is {r['eer']:.3f}")

###############################################################################
# ROC curves as standalone SVG files.
for src in ("baseline", "unseen"):
    curves = {comp: ev.tests[src]["roc"] for comp, (_, _, ev) in results.items()}
    MT.roc_svg(curves, out / f"roc_{src}.svg", title=f"ROC on {src}")
    print("wrote", out / f"roc_{src}.svg")
