"""Identity probe: does a linear classifier recover identity better
from the noise features than from the personality features?

The probe trains on frozen features from videos of identities the
backbone never saw, split video-wise so the probe's test segments come
from unseen videos. A large noise-over-personality accuracy gap is the
observable signature of successful disentanglement.
"""

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from facedyn.data import video_segments
from facedyn.engine import Tensor, concat, no_grad
from facedyn.engine.rng import stream


def _ds_module(model):
    ds = model.ds
    # Per-scale variant: probe the module attached to the native scale.
    return ds.modules_per_scale[0] if hasattr(ds, "modules_per_scale") else ds


def segment_features(model, video, segment_length):
    """(personality [N, 5*d_ds], noise [N, 5*d_ds]) frozen features."""
    model.eval()
    segs = Tensor(video_segments(video, segment_length))
    ds = _ds_module(model)
    with no_grad():
        _, rep = model.representation(segs)
        if isinstance(rep, list):
            rep = rep[0]
        pairs = ds.encode_all(rep)
        personality = concat([p for p, _ in pairs], axis=-1)
        noise = concat([n for _, n in pairs], axis=-1)
    return (
        np.asarray(personality.data, dtype=np.float64),
        np.asarray(noise.data, dtype=np.float64),
    )


def _video_wise_split(videos, gen):
    """Split each identity's videos between probe-train and probe-test.

    Identities with fewer than two videos cannot appear on both sides
    and are dropped.
    """
    by_identity = {}
    for v in videos:
        by_identity.setdefault(v.identity, []).append(v)
    train, test = [], []
    for identity in sorted(by_identity):
        vids = by_identity[identity]
        if len(vids) < 2:
            continue
        order = gen.permutation(len(vids))
        cut = max(1, len(vids) // 2)
        train.extend(vids[i] for i in order[:cut])
        test.extend(vids[i] for i in order[cut:])
    if not train or not test:
        raise ValueError(
            "identity probe needs at least one identity with two or more videos"
        )
    return train, test


def _collect(model, videos, segment_length):
    personality, noise, identities = [], [], []
    for v in videos:
        p, n = segment_features(model, v, segment_length)
        personality.append(p)
        noise.append(n)
        identities.extend([v.identity] * p.shape[0])
    return np.concatenate(personality), np.concatenate(noise), np.array(identities)


def _fit_accuracy(train_x, train_y, test_x, test_y, seed):
    clf = make_pipeline(
        StandardScaler(),
        LogisticRegression(max_iter=2000, random_state=seed),
    )
    clf.fit(train_x, train_y)
    return float(clf.score(test_x, test_y))


def identity_probe(model, videos, segment_length, seed=0):
    """-> dict with personality/noise probe accuracies and their gap.

    `videos` should come from splits whose identities the backbone never
    trained on (the held-out identity pools).
    """
    gen = stream(seed, "identity_probe")
    probe_train, probe_test = _video_wise_split(videos, gen)
    train_p, train_n, train_y = _collect(model, probe_train, segment_length)
    test_p, test_n, test_y = _collect(model, probe_test, segment_length)
    acc_p = _fit_accuracy(train_p, train_y, test_p, test_y, seed)
    acc_n = _fit_accuracy(train_n, train_y, test_n, test_y, seed)
    return {
        "personality_accuracy": acc_p,
        "noise_accuracy": acc_n,
        "gap": acc_n - acc_p,
        "n_identities": int(len(np.unique(train_y))),
        "n_train_segments": int(len(train_y)),
        "n_test_segments": int(len(test_y)),
    }
