"""Half-chain field tails of the free chain against the ground-state bounds."""
from schwinger_ribbon.fluctuations import (
    DiracParams,
    correlation_matrix,
    entanglement_spectrum,
    exact_es_rate,
    ground_bound,
)


def main(L=200):
    for am in (0.5, 1.0, 2.0):
        es = entanglement_spectrum(correlation_matrix(DiracParams(L, 1.0, am)))
        print(f"am={am}: fitted rate {es.rate:.3f}, ladder rate {exact_es_rate(am):.3f}, envelope {es.envelope:.4f}")
        for W in range(4):
            b = ground_bound(es, W)
            print(f"  W={W} tail={b['empirical_tail']:.3e} lambda-bound={b['lambda_bound']:.3e} "
                  f"envelope-bound={b['envelope_bound']:.3e}")


if __name__ == "__main__":
    main()
