"""Step through one QMM solve by hand.

Builds a small AdaBoost ensemble with repeated trees, shows what rank
reduction does to it, sets up the lower-margin constraints for one
upsilon and solves the quadratic program directly, printing the
solver diagnostics and a KKT check.

    python3 demos/inside_the_qp.py
"""
import numpy as np

from marginprune.dataset import SplitSpec, load_bundled, split
from marginprune.ensemble import fit_adaboost
from marginprune.margins import margin_system, prediction_matrix
from marginprune.qmm import rank_reduce
from marginprune.qpsolver import QpProblem, solve
from marginprune.tree import config_for


def main():
    train, _ = split(load_bundled("AU"), SplitSpec(0.7, 0))
    e = fit_adaboost(train, 60, config_for("stump"), seed=0)
    H = prediction_matrix(e.learners, train.features)
    print(f"{e.T} stumps on {train.n} rows; {np.unique(H, axis=1).shape[1]} distinct prediction columns")

    rr = rank_reduce(H, e.alpha)
    print(f"rank {rr.rank}: kept columns {[int(i) for i in rr.pivots]}")
    same = np.array_equal(np.sign(H @ e.alpha), np.sign(rr.H_prime @ rr.alpha_prime))
    print(f"folded vote gives the same predictions: {same}\n")

    ms = margin_system(rr.H_prime, train.labels, rr.alpha_prime)
    for upsilon in (0.5, 0.25, 0.05):
        blk = ms.lower_block(upsilon)
        sol = solve(QpProblem(ms.sigma, blk.Lambda, blk.phi), warm_start=rr.alpha_prime)
        print(f"upsilon {upsilon}: {len(blk.rows)} margin rows, status {sol.status}")
        if not sol.ok:
            continue
        d = sol.diagnostics
        print(f"  unique rows {d['unique_rows']}, implicit equalities {d['implicit_equalities']}, "
              f"implicit zeros {d['implicit_zeros']}")
        print(f"  variance {rr.alpha_prime @ ms.sigma @ rr.alpha_prime:.3e} -> {sol.objective:.3e}")
        print(f"  min slack {np.min(blk.Lambda @ sol.w - blk.phi):.1e}, KKT residual {sol.kkt_residual:.1e}, "
              f"{sol.iterations} iterations")
        print(f"  nonzero weights {np.count_nonzero(sol.w > 1e-6)} of {len(sol.w)}")


if __name__ == "__main__":
    main()
