"""
Training on clients and scoring by reconstruction error
=======================================================

The autoencoder only ever sees genuine (client) faces. Attacks are detected
because they reconstruct worse: the score is the Euclidean distance between
an image and its reconstruction.

To keep this script quick it trains a narrow network for a few epochs.
Set ``CAEPAD_FULL=1`` to use the default architecture and 50 epochs.
"""
import os
from pathlib import Path

import numpy as np

from caepad import data as D
from caepad import metrics as MT
from caepad import model as M
from caepad.experiment import default_domains
from caepad.training import TrainConfig, load_checkpoint, save_checkpoint, train

full = os.environ.get("CAEPAD_FULL") == "1"
out = Path(os.environ.get("CAEPAD_OUT", "_out"))
out.mkdir(exist_ok=True)

spec = default_domains(seed=0)["A"]
n_train = 128 if full else 24
clients = [D.normalize_face(D.render_genuine(spec, "train", i)) for i in range(n_train)]

config = M.CaeConfig() if full else M.CaeConfig(encoder_channels=(4, 8, 16))
model = M.build_model(config, seed=0)
model, history = train(model, clients, config=TrainConfig(epochs=50 if full else 8, seed=0))
print("loss per epoch:", np.round(history.epoch_loss, 5))

###############################################################################
# Checkpoints are a small binary format with a CRC32 trailer.
save_checkpoint(model, out / "model.cae")
model = load_checkpoint(out / "model.cae")

###############################################################################
# Score held-out clients and attacks, then pick the threshold at the equal
# error rate of a validation set.
def scored(split, count):
    items = []
    for i in range(count):
        client, imposter, _ = D.render_pair(spec, split, i)
        items += [(D.normalize_face(client), M.CLIENT), (D.normalize_face(imposter), M.IMPOSTER)]
    return MT.score_dataset(model, items, provenance=split)

val, test = scored("val", 12), scored("test", 20)
threshold, eer = MT.eer_threshold(val)
op = MT.hter_at(test, threshold)
print(f"validation EER {eer:.3f} at threshold {threshold.value:.3f}")
print(f"test AUC {MT.roc_curve(test).auc:.3f}, HTER {op.hter:.3f} (FPR {op.fpr:.3f}, FNR {op.fnr:.3f})")

###############################################################################
# A single image is accepted as a client only if its error is strictly below
# the threshold.
image = D.normalize_face(D.render_genuine(spec, "test", 0))
print("decision for one client:", M.classify(model, image, threshold))
