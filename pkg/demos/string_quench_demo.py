"""Bare string quench: the mid-string field decays as pairs are produced."""
from schwinger_ribbon.dynamics import EvolutionSpec, QuenchScenario, run_quench
from schwinger_ribbon.lattice import LatticeParams


def main():
    lat = LatticeParams.from_dimensionless(8, 0.1, 1.0, 0.0, W=2)
    rec = run_quench(QuenchScenario("string", d=5), lat, EvolutionSpec(10.0, 0.5))
    for t, f in zip(rec.times[::2], rec.mid_field[::2]):
        print(f"t={t:5.1f}  <l_mid>={f:+.4f}")
    print(rec.string_breaking())


if __name__ == "__main__":
    main()
