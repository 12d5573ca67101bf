"""Small in-memory datasets shared by the training tests."""

import numpy as np

from hmadapt.data import PatchDataset
from hmadapt.imaging import AnnotationBox, Image2D
from hmadapt.patches import ManifestRecord, PatchSpec


def blob_dataset(rng, n, size=16, levels=256, contrast=120, split="train"):
    """Half the images carry a bright square blob; labels are perfectly separable."""
    records, images = [], {}
    for k in range(n):
        positive = k % 2 == 1
        px = rng.integers(40, 80, (size, size))
        ann = None
        if positive:
            cx, cy = (int(v) for v in rng.integers(3, size - 3, 2))
            px[cy - 2:cy + 3, cx - 2:cx + 3] += contrast
            ann = AnnotationBox(cx, cy, 5, 5)
        path = f"{split}/{k}.pgm"
        images[path] = Image2D(np.minimum(px, levels - 1), levels)
        records.append(ManifestRecord(path, "malignant" if positive else "normal", f"p{k}", split, ann))
    return PatchDataset(records, images, PatchSpec(size, size))


def inverted_blob_dataset(rng, n, size=16, levels=256, contrast=120, split="train"):
    """Same images as :func:`blob_dataset` but the blob marks the negative class."""
    ds = blob_dataset(rng, n, size, levels, contrast, split)
    records = []
    for r in ds.records:
        if r.label == 1:
            records.append(ManifestRecord(r.image_path, "benign", r.patient_id, split, r.annotation))
        else:
            c = size // 2
            records.append(ManifestRecord(r.image_path, "high_risk", r.patient_id, split,
                                          AnnotationBox(c, c, 4, 4)))
    return PatchDataset(records, ds.images, ds.spec)
