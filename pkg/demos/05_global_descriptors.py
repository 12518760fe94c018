"""Global descriptors: pooling, multi-scale aggregation, whitening, ranking.

Each (k, h, w) tensor collapses to a k-vector by per-channel pooling; the
vectors from all scales are summed and L2-normalized.  A whitening
transform fitted on database descriptors decorrelates the embedding before
cosine ranking.
"""

import numpy as np

from dsm import FeatureTensor, aggregate_scales, apply_whitening, cosine_rank, fit_whitening, pool


def main():
    rng = np.random.default_rng(42)

    # Pooling on one tensor: max pooling keeps peaks, generalized-mean
    # pooling interpolates between average (p=1) and max (p -> inf).
    t = FeatureTensor(rng.uniform(0.0, 2.0, size=(6, 10, 10)).astype(np.float32))
    print("channel 0 pooled:")
    print(f"  mac        = {pool(t, 'mac')[0]:.4f}")
    for p in (1.0, 3.0, 10.0, 100.0):
        print(f"  gem(p={p:<5g}) = {pool(t, 'gem', gem_p=p)[0]:.4f}")
    print("  gem grows monotonically with p, from the mean toward the max\n")

    # Aggregate three scales into one unit-length descriptor.
    scales = [pool(FeatureTensor(rng.uniform(0, 2, (6, s, s)).astype(np.float32)), "gem")
              for s in (10, 7, 5)]
    desc = aggregate_scales(scales, "gem")
    print(f"aggregated descriptor: dim {desc.dim}, norm {np.linalg.norm(desc.values):.6f}\n")

    # Whitening: fit on correlated database vectors, then rank.
    base = rng.standard_normal((400, 6))
    mix = rng.standard_normal((6, 6)) * 0.5 + np.eye(6)
    db_raw = base @ mix.T
    t_white = fit_whitening(db_raw)
    db = [apply_whitening(t_white, z) for z in db_raw]

    probe = db_raw[17] + 0.05 * rng.standard_normal(6)
    order, scores = cosine_rank(apply_whitening(t_white, probe), db)
    print("query = noisy copy of database item 17")
    for rank in range(3):
        print(f"  rank {rank}: item {order[rank]:3d}, cosine {scores[order[rank]]:.4f}")


if __name__ == "__main__":
    main()
