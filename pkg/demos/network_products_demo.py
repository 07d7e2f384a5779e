"""Curvature products on a small network, checked against explicit tensors.

For a 2-3-2 network the output Jacobian and Hessian are small enough to
assemble by finite differences.  The matrix-free products (one forward R/S
pass plus one backward pass) should match the explicit contractions, and the
geodesic and small-curvature perturbation corrections coincide for squared
loss but not for cross-entropy.

Run:  python demos/network_products_demo.py
"""

import numpy as np

from natgeo.harness.checks import brute_force_products, correction_pair, rel_err, small_network
from natgeo.network import connection_vp, fisher_vp, term3_vp


def main():
    rng = np.random.default_rng(0)
    for kind in ("squared", "bce", "mce"):
        net, loss, batch = small_network(kind)
        v = rng.normal(size=net.n_params)
        Gv, conn, t3, _ = brute_force_products(net, loss, batch, v)
        print(f"{kind:8} fisher {rel_err(fisher_vp(net, loss, batch, v), Gv):.1e}"
              f"  connection {rel_err(connection_vp(net, loss, batch, v), conn):.1e}"
              f"  term3 {rel_err(term3_vp(net, loss, batch, v), t3):.1e}")

    print()
    for kind in ("squared", "bce"):
        geo, pert = correction_pair(kind, 0)
        print(f"{kind:8} |geo| {np.linalg.norm(geo):.3e}  |perturb - geo| {np.linalg.norm(pert - geo):.3e}")


if __name__ == "__main__":
    main()
