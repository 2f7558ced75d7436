"""Small tour: the hemisphere constant, a gauge solve and the flat calibration.

Run with ``python demos/quickstart.py``; it takes a few seconds.
"""
import io
import json

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.cli import run
from umbilic_yamabe.energy import integrated_estimate
from umbilic_yamabe.gauge import solve_V


def cli(argv):
    buf = io.StringIO()
    code = run(argv, buf)
    return code, json.loads(buf.getvalue())


def main():
    _, doc = cli(["constants"])
    print(f"hemisphere constant (n=6): {doc['result']['value']:.12f}")

    E0 = st.standard_example(6)
    print("standard tensor admissible:", st.check_admissible(st.make_H(E0)).ok)
    for ratio in (1 / 2, 1 / 4, 1 / 8):
        sol = solve_V(E0, 0.25 * ratio, 0.25, 3)
        est = integrated_estimate(sol)
        print(f"eps/delta = {ratio:<6g} lambda_hat = {est.lam_hat:.4e}  "
              f"orthogonality = {sol.diagnostics['orthogonality']:.1e}")

    code, doc = cli(["compare", "--config", "experiments/flat.json"])
    for rep in doc["result"]["reports"]:
        print(f"flat metric, eps = {rep['eps']:<9g} E - Y = {-rep['margin']:.3e}  ({rep['verdict']})")


if __name__ == "__main__":
    main()
