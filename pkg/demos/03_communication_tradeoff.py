"""How rarely can the nodes talk? Sweep the synchronization period U.

Every round costs U optimization passes plus one gradient recomputation
pass, so raising U amortizes the overhead; too large a U wastes work
over-optimizing stale local problems. The two columns count optimization
passes only versus all passes, which is the honest cost.
"""

import numpy as np

from dsaga import (
    ClusterConfig,
    LogisticLoss,
    generate_gaussian,
    partition,
    reference_optimum,
    run_dsaga,
)


def sign_labels(x, rng):
    plant = rng.standard_normal(x.shape[1])
    return np.where(x @ plant >= 0, 1.0, -1.0)


def main():
    n, d, nodes, seed = 6000, 40, 4, 2
    budget = 24  # total passes each configuration may spend
    data = generate_gaussian(n, d, seed=seed, labeler=sign_labels)
    obj = LogisticLoss(1e-3)
    _, f_star = reference_optimum(obj, data)
    shards = partition(data, nodes, seed=seed)

    print(f"K={nodes}, equal total-pass budget of {budget} per setting")
    print(f"{'U':>4} {'rounds':>7} {'pass_opt':>9} {'pass_total':>11} "
          f"{'log10 excess':>13}")
    for u in (1, 2, 3, 5, 11):
        rounds = budget // (u + 1)
        config = ClusterConfig(nodes=nodes, local_passes=u, rounds=rounds,
                               seed=seed, record_inner=False)
        w, records = run_dsaga(obj, shards, config, np.zeros(d))
        final = records[-1]
        excess = final.f - f_star
        print(f"{u:>4} {rounds:>7} {final.pass_opt:>9} {final.pass_total:>11} "
              f"{np.log10(max(excess, 1e-17)):>13.2f}")


if __name__ == "__main__":
    main()
