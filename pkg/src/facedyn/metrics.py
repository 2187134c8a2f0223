"""Mean-accuracy metric over trait predictions."""

import numpy as np

from facedyn import N_TRAITS, TRAIT_COLUMNS


def acc_metric(predictions, labels):
    """Per-trait ACC plus their average.

    ACC_trait = 1 - (1/N) * sum |p_i - g_i|. Returns a dict keyed by the
    trait column names plus "Avg".
    """
    p = np.asarray(predictions, dtype=np.float64)
    g = np.asarray(labels, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction/label shape mismatch: {p.shape} vs {g.shape}")
    if p.ndim != 2 or p.shape[1] != N_TRAITS or p.shape[0] < 1:
        raise ValueError(f"expected [N, {N_TRAITS}] arrays with N >= 1, got {p.shape}")
    for name, arr in (("labels", g), ("predictions", p)):
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    per_trait = 1.0 - np.mean(np.abs(p - g), axis=0)
    out = {col: float(v) for col, v in zip(TRAIT_COLUMNS, per_trait)}
    out["Avg"] = float(per_trait.mean())
    return out
