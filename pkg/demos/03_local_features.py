"""From activation tensors to elliptical local features.

Each detected region becomes an ellipse: activation-weighted mean and
covariance over the region's pixels, plus a strength from pooling the
activations.  The channel index acts as a visual word, so later matching
only compares features from the same channel.
"""

import numpy as np

from dsm import (
    DetectorParams,
    FeatureCaps,
    ROLE_DATABASE,
    ROLE_QUERY,
    TensorSet,
    compute_delta,
    detect_features,
    synth_tensor,
)


def build_set(rng, k=6, h=28, w=28, n_blobs=20):
    blobs = []
    for _ in range(n_blobs):
        center = rng.uniform(4.0, w - 5.0, size=2)
        a = rng.standard_normal((2, 2)) * 0.8
        cov = a @ a.T + 1.2 * np.eye(2)
        blobs.append((int(rng.integers(k)), tuple(center), cov, float(rng.uniform(1.0, 3.0))))
    return TensorSet("demo", "synthnet", [(1.0, synth_tensor(blobs, k, h, w))])


def main():
    rng = np.random.default_rng(42)
    tset = build_set(rng)

    # The stability band adapts to each image's value distribution.
    sample = np.concatenate([t.values.ravel() for _, t in tset.scales])
    det = DetectorParams(delta=compute_delta(sample, 0.12))

    caps = FeatureCaps(budget=40)
    for role in (ROLE_QUERY, ROLE_DATABASE):
        feats = detect_features(tset, det, role, caps)
        print(f"role {role!r}: {feats.total_count} features over {feats.channels} channels")
        for ch, fs in enumerate(feats.per_channel):
            if not fs:
                continue
            strongest = max(fs, key=lambda f: f.strength)
            print(
                f"  channel {ch}: {len(fs)} features, strongest at "
                f"({strongest.mu[0]:5.1f}, {strongest.mu[1]:5.1f}) "
                f"strength {strongest.strength:.2f}"
            )
        print()

    # Database detection additionally applies cross-channel NMS, so a busy
    # location keeps only its strongest channel; query keeps everything that
    # fits the budget.
    q = detect_features(tset, det, ROLE_QUERY, caps).total_count
    d = detect_features(tset, det, ROLE_DATABASE, caps).total_count
    print(f"query keeps {q} features, database keeps {d} after cross-channel NMS")


if __name__ == "__main__":
    main()
