"""Encode a few gauge configurations as interfaces and check the Ising dictionary."""
import numpy as np

from schwinger_ribbon.interface import RibbonGeometry, encode_path, spin_configuration, verify_equivalence
from schwinger_ribbon.lattice import GaugeConfig, LatticeParams


def main():
    for occ in ((1, 0, 1, 0), (0, 1, 1, 0), (1, 1, 0, 0)):
        path = encode_path(GaugeConfig.from_occupations(occ))
        print(occ, path.moves, path.heights)
    g = RibbonGeometry(2, 1)
    spins = spin_configuration(encode_path(GaugeConfig.from_occupations((0, 1, 1, 0))), g)
    print("free spins:", g.n_free, "wall heights:", spins.heights())
    rep = verify_equivalence(LatticeParams(2, a=1, m=0.7, q=1.3, theta=0.9, W=1))
    print(f"max deviation {rep.max_abs_deviation:.2e}, offset {rep.constant_offset:.4f}")


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    main()
