"""Naive and importance-sampling query estimates on a constant-rate,
static-Bernoulli model, next to their closed forms."""
import argparse

import numpy as np

from setmtpp.data import Sequence
from setmtpp.oracles import PoissonStaticSpec, poisson_ab_closed_form, poisson_hitting_closed_form, \
    poisson_static_model
from setmtpp.queries import QuerySpec, ab_importance, ab_naive, hitting_importance, hitting_naive, \
    relative_efficiency


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    empty = Sequence((), 0.0)

    spec = PoissonStaticSpec(2.0, (0.3, 0.5))
    m = poisson_static_model(spec)
    A = m.vocab.itemset(["i0"])
    for t in (0.1, 0.5, 1.0, 3.0):
        q = QuerySpec(empty, A, t, n_samples=args.samples)
        nv, imp = hitting_naive(m, q, args.seed), hitting_importance(m, q, args.seed)
        eff = relative_efficiency(nv, imp)
        print(f"hitting t={t:<4} closed={poisson_hitting_closed_form(spec, [0], t):.6f} "
              f"IS={imp.estimate:.6f} naive={nv.estimate:.4f}±{nv.std_error:.4f} "
              f"rel.eff={'inf' if eff.infinite else f'{eff.ratio:.1f}'}")

    spec = PoissonStaticSpec(1.0, (0.3, 0.2))
    m = poisson_static_model(spec)
    A, B = m.vocab.itemset(["i0"]), m.vocab.itemset(["i1"])
    q = QuerySpec(empty, A, 5.0, B, n_samples=args.samples)
    truth = np.array(poisson_ab_closed_form(spec, [0], [1], 5.0))
    print("A-before-B scenarios (A first, B first, together, neither)")
    print("  closed", np.round(truth, 5))
    print("  IS    ", np.round(ab_importance(m, q, args.seed).scenarios, 5))
    print("  naive ", np.round(ab_naive(m, q, args.seed).scenarios, 5))


if __name__ == "__main__":
    main()
