"""Regenerate the bundled d=8 example and its exhaustive-search answer.

Run from the repository root: ``python3 scripts/make_example.py``.
"""

import json
import os

from scqr.cli import read_csv, write_csv, write_json
from scqr.evaluation import brute_force_subset
from scqr.synth import DgpSpec, gen_dgp
from scqr.types import QuantileConfig, standardize

OUT = os.path.join(os.path.dirname(__file__), os.pardir, "src", "scqr", "data")
TAU, C, K = 0.5, 1.0, 3


def main():
    spec = DgpSpec("QuadraticGaussian", n=60, d=8, k=K, snr=3.0, rho=0.2, seed=0)
    data, truth = gen_dgp(spec)
    csv_path = os.path.join(OUT, "example_d8.csv")
    write_csv(csv_path, data)
    write_json(os.path.join(OUT, "example_d8_truth.json"), {"kind": "truth", **truth.to_dict()})
    # solve on exactly what the CLI will read back
    raw, _ = read_csv(csv_path)
    z, g, table = brute_force_subset(standardize(raw), QuantileConfig(tau=TAU, C=C), K)
    write_json(os.path.join(OUT, "example_d8_bruteforce.json"), {
        "kind": "brute_force",
        "tau": TAU, "C": C, "k": K, "standardized": True,
        "support_bits": z.bits(), "selected": list(z.indices), "g": g,
        "table": table,
    })
    print(json.dumps({"selected": list(z.indices), "g": g, "truth": list(truth.support)}))


if __name__ == "__main__":
    main()
