"""Label noise on the diagonal toy problem.

Flip 20 of 1000 training labels, boost 500 full trees, prune with QMM and
compare the margins of flipped and clean points under both votes.

    python3 demos/label_noise.py [seed]
"""
import sys

import numpy as np

from marginprune.dataset import synth_diagonal
from marginprune.ensemble import fit_adaboost, test_error
from marginprune.margins import prediction_matrix
from marginprune.qmm import qmm_prune
from marginprune.tree import config_for


def main(seed=0):
    train = synth_diagonal(1000, 20, seed)
    clean = synth_diagonal(1000, 0, seed)
    test = synth_diagonal(1000, 0, seed + 100_000)
    flipped = train.labels != clean.labels

    e = fit_adaboost(train, 500, config_for("full"), boosting="resample", seed=seed)
    H = prediction_matrix(e.learners, train.features)
    Ht = prediction_matrix(e.learners, test.features)
    res = qmm_prune(e, train, H=H)
    print(f"{e.T} trees -> {len(res.survivors)} survivors (upsilon {res.upsilon_used}, {res.solver_status})")
    print(f"test error: full {test_error(Ht, test, e.alpha):.4f}, pruned {test_error(Ht, test, res.weights):.4f}\n")

    # full trees fit every training point, so compare where margins sit rather than their sign
    print(f"{'weights':8s} {'group':8s} {'min':>6s} {'5%':>6s} {'median':>7s}")
    for name, w in (("full", e.alpha), ("pruned", res.weights)):
        m = train.labels * (H @ w)
        for group, mask in (("flipped", flipped), ("clean", ~flipped)):
            lo, q5, med = np.min(m[mask]), *np.quantile(m[mask], [0.05, 0.5])
            print(f"{name:8s} {group:8s} {lo:6.3f} {q5:6.3f} {med:7.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
