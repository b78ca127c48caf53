"""Regenerate the bundled JSON corpus and the golden ``classify`` reports.

Run from the repository root: ``python3 scripts/build_corpus.py``.
"""

import json
import sys
from fractions import Fraction
from pathlib import Path

from smalltime import systems
from smalltime.cli import cmd_classify
from smalltime.polyvec import Polynomial

ROOT = Path(__file__).resolve().parents[1] / "src" / "smalltime" / "corpus"


def quartic(k):
    U = Polynomial.zero(k)
    for i in range(k):
        U = U + Polynomial.variable(k, i, 4) * Fraction(1, 4)
    return U


def corpus_systems():
    out = {
        "brownian_n2": systems.brownian(2),
        "brownian_n3": systems.brownian(3),
        "kolmogorov2": systems.kolmogorov(),
        "kolmogorov2_damped": systems.kolmogorov(damping=1),
        "langevin_k1": systems.langevin(1, quartic(1)),
        "langevin_k2": systems.langevin(2, quartic(2)),
        "langevin_k2_shifted": systems.shifted_langevin(2, quartic(2), [1, 0], [1, 0]),
        "rdr": systems.rdr(),
        "npnh": systems.npnh(),
        "sabra_J4": systems.sabra(4),
        "quadratic_cone": systems.quadratic_example(1, 0),
        "quadratic_span": systems.quadratic_example(0, 1),
        "lorenz96_n5_noise1": systems.lorenz96(5, noisy=(0,)),
    }
    for n in range(2, 9):
        out[f"ik_n{n}"] = systems.iterated_kolmogorov(n)
    for n in range(4, 9):
        out[f"lorenz96_n{n}"] = systems.lorenz96(n)
    return out


def h_langevin():
    """``|p|^2 / 2 + q^4 / 4`` on ``(q, p)`` in R^2."""
    return Polynomial.variable(2, 1, 2) * Fraction(1, 2) + Polynomial.variable(2, 0, 4) * Fraction(1, 4)


def domains():
    H = h_langevin().to_json()
    ik4 = [{"coeff": "1", "exponents": ["0"] * i + [f"1/{2 * i + 1}"] + ["0"] * (3 - i)} for i in range(1, 4)]
    lor = [{"coeff": "1", "exponents": ["0"] * i + [e] + ["0"] * (4 - i)} for i, e in
           zip(range(1, 5), ["1", "1/4", "1/7", "1/10"])]
    return {
        "levelset": {"form": "superlevel", "H": H, "level": "3/4", "point": [1, 1]},
        "levelset_p0zero": {"form": "superlevel", "H": H, "level": "1/4", "point": [1, 0]},
        "bm_cone": {"form": "graph", "index": 1, "terms": [{"coeff": "2", "exponents": ["1", "0"]}]},
        "ik4_graph": {"form": "graph", "index": 0, "terms": ik4},
        "lorenz96_n5_graph": {"form": "graph", "index": 0, "terms": lor},
        "lorenz96_n5_halfspace": {"form": "graph", "index": 0, "terms": [{"coeff": "1", "exponents": ["0", "1", "0", "0", "0"]}]},
    }


class _Args:
    def __init__(self, spec):
        self.spec = spec


def main():
    ROOT.mkdir(exist_ok=True)
    (ROOT / "golden").mkdir(exist_ok=True)
    for name, sysm in corpus_systems().items():
        obj = sysm.to_json()
        obj["name"] = name
        (ROOT / f"{name}.json").write_text(json.dumps(obj, indent=1) + "\n")
    for name, dom in domains().items():
        (ROOT / f"{name}.json").write_text(json.dumps(dom, indent=1) + "\n")
    for name in corpus_systems():
        result, _ = cmd_classify(_Args(str(ROOT / f"{name}.json")), [])
        (ROOT / "golden" / f"{name}.classify.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
