"""Global error order of the corrected updates.

Integrate the natural gradient flow to T = 2 with step h = 2**-k and compare
the end point against two references: the Riemannian Euler method with the
same h, and an accurate RK4 solution of the flow.  Log-log slopes near 1 mean
first order agreement, slopes near 2 mean second order.

Run:  python demos/order_demo.py
"""

import os

from natgeo.harness import load_config, parse_csv, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    out = run_experiment(load_config(os.path.join(HERE, "..", "configs", "order.json")))
    rows = parse_csv(out.files["order_study.csv"])
    for label, slope in out.summary["slopes"].items():
        errs = [float(r["error"]) for r in rows if r["method"] == label]
        print(f"{label:20} slope {slope:5.2f}   errors " + " ".join(f"{e:.1e}" for e in errs))


if __name__ == "__main__":
    main()
