"""
Synthetic face domains
======================

Four synthetic domains replace the licensed face databases. Each domain
renders smooth face-like images in its own style, and imposters are made by
applying a printed-photo or screen-replay effect to a rendered face.

This script renders a few pairs from every domain and writes a contact sheet.
"""
import os
from pathlib import Path

import numpy as np
from PIL import Image

from caepad import data as D
from caepad.experiment import default_domains

out = Path(os.environ.get("CAEPAD_OUT", "_out"))
out.mkdir(exist_ok=True)

domains = default_domains(seed=0)
for dom_id, spec in domains.items():
    print(dom_id, spec.source, {split: n for split, n in spec.counts.items()})

###############################################################################
# Rendering is keyed by (seed, split, index), so any image can be regenerated
# on its own without producing the whole set.
rows = []
for dom_id, spec in domains.items():
    split = "test" if "test" in spec.counts else "val"
    tiles = []
    for i in range(4):
        client, imposter, attack = D.render_pair(spec, split, i)
        tiles += [D.normalize_face(client), D.normalize_face(imposter)]
    rows.append(np.concatenate([t.transpose(1, 2, 0) for t in tiles], axis=1))
sheet = (np.concatenate(rows, axis=0) * 255).round().astype(np.uint8)
Image.fromarray(sheet).save(out / "domains.png")
print("contact sheet:", out / "domains.png", sheet.shape)

###############################################################################
# The two attacks leave different traces. Print-flatten compresses contrast
# and adds grain; screen-replay adds a moire pattern.
spec = domains["A"]
client, imposter, attack = D.render_pair(spec, "test", 0)
diff = np.abs(imposter.astype(float) - client.astype(float)).mean()
print(f"attack {attack}: mean absolute pixel change {diff:.1f} / 255")
