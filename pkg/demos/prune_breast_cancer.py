"""Compare QMM, kappa pruning and DREP on the bundled breast-cancer data.

Trains 200 depth-2 AdaBoost trees and 200 depth-2 random-forest trees,
prunes each with the three methods and prints one line per method.

    python3 demos/prune_breast_cancer.py [seed]
"""
import sys

from marginprune.baselines import diversity, drep_prune, kappa_prune
from marginprune.dataset import SplitSpec, load_bundled, split
from marginprune.ensemble import fit_adaboost, fit_random_forest, test_error
from marginprune.margins import prediction_matrix
from marginprune.qmm import qmm_prune
from marginprune.tree import config_for


def main(seed=0):
    train, test = split(load_bundled("BC"), SplitSpec(0.7, seed))
    print(f"breast cancer: {train.n} train / {test.n} test rows, {train.p} features\n")
    cfg = config_for("depth2")
    for name, e in (("adaboost", fit_adaboost(train, 200, cfg, seed=seed)),
                    ("forest", fit_random_forest(train, 200, cfg, seed=seed))):
        H = prediction_matrix(e.learners, train.features)
        Ht = prediction_matrix(e.learners, test.features)
        print(f"{name:9s} {'method':6s} {'kept':>5s} {'train':>7s} {'test':>7s} {'div':>6s}")
        print(f"{'':9s} {'full':6s} {e.T:5d} {test_error(H, train, e.alpha):7.4f} "
              f"{test_error(Ht, test, e.alpha):7.4f} {diversity(Ht):6.3f}")
        for res in (qmm_prune(e, train, H=H), kappa_prune(e, train, H=H), drep_prune(e, train, H=H, seed=seed)):
            s = res.survivors
            print(f"{'':9s} {res.method:6s} {len(s):5d} {test_error(H, train, res.weights):7.4f} "
                  f"{test_error(Ht, test, res.weights):7.4f} {diversity(Ht[:, s]):6.3f}")
        print()


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
