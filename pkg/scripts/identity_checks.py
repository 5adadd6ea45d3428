"""Print the bubble residual, Kazdan-Warner and Pohozaev checks over a small (n, sigma) matrix."""
import numpy as np

from fracnirenberg.constants import make_constants
from fracnirenberg.exact_solutions import BubbleParams, bubble_function, flat_bubble_profile, south_pole
from fracnirenberg.extension import FlatField, HalfSpaceGrid, poisson_extend
from fracnirenberg.identities import kazdan_warner, pohozaev
from fracnirenberg.kfunctions import parse_k
from fracnirenberg.solver import SolverConfig, residual


def bubble_residual(n, s, lam, kmax):
    cfg = SolverConfig(n, s, 1.0, kmax=kmax)
    v = bubble_function(cfg.make_grid(), BubbleParams("sphere", south_pole(n), lam, s))
    c = make_constants(n, s).c_n_sigma
    return float(np.max(np.abs(residual(v, cfg).values) / (c * v.values ** cfg.p)))


def kw_witness(n, s, lam):
    cfg = SolverConfig(n, s, 1.0, kmax=128)
    g = cfg.make_grid()
    v = bubble_function(g, BubbleParams("sphere", south_pole(n), lam, s))
    rep = kazdan_warner(parse_k(f"coordinate:{n + 1} offset:2", n).sphere_function(g), v, s)
    return rep.components[-1], rep.quadrature_estimate_error


def pohozaev_defect(n, s, R):
    c = make_constants(n, s)
    u = FlatField.radial(n, flat_bubble_profile(1.0, n, s, c.a_liouville))
    U = poisson_extend(u, HalfSpaceGrid.radial_grid(n, s, R=4, nr=9, T=2.0, J=64), s)
    rep = pohozaev(U, 1.0, R, c.p_critical)
    return abs(rep.sum) / rep.scale


def main():
    print(f"{'n':>2} {'sigma':>5} {'residual':>9} {'KW_last':>9} {'KW_err':>8} {'poh R=.5':>9} {'poh R=1':>9}")
    for n in (2, 3, 4):
        for s in (0.25, 0.5, 0.75):
            res = max(bubble_residual(n, s, lam, 64 if n == 2 else 128) for lam in (1.0, 2.0, 5.0))
            kw, err = kw_witness(n, s, 2.0)
            p1, p2 = pohozaev_defect(n, s, 0.5), pohozaev_defect(n, s, 1.0)
            print(f"{n:2d} {s:5.2f} {res:9.1e} {kw:9.3e} {err:8.1e} {p1:9.1e} {p2:9.1e}")


if __name__ == "__main__":
    main()
