"""
Choosing the decision threshold
===============================

Final scores of correct and wrong correspondences form two modes. Otsu's
method places the threshold at the histogram split with the largest
between-class variance.
"""

import numpy as np

from corrvote.thresholding import between_class_variance, otsu_threshold, score_histogram

rng = np.random.default_rng(0)
scores = np.clip(np.r_[rng.normal(0.2, 0.07, 3000), rng.normal(0.75, 0.1, 600)], 0, 1)

hist = score_histogram(scores, bins=20)
var = between_class_variance(hist)
t = otsu_threshold(scores, bins=20)
for b, count in enumerate(hist.bins):
    split = var[b - 1] if b else 0.0
    marker = "  <- threshold" if np.isclose(b / 20, t) else ""
    print(f"[{b / 20:.2f}, {(b + 1) / 20:.2f})  {'#' * (count // 25):<40s} variance {split:.4f}{marker}")
print(f"accept scores >= {t:.2f}: {np.sum(scores >= t)} of {len(scores)}")
