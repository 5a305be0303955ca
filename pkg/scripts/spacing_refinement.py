"""Covering, T/U split and weak-type measurements at spacing 1 and 1/2 on the same connected sum."""

from dataclasses import asdict

import numpy as np
from _common import dump, parser

from rieszlab.covering import admissible_cover, verify_covering
from rieszlab.studies import spacing_pair, split_bounds, weak_type_study


def main():
    p = parser(__doc__)
    p.add_argument("--r0", type=float, default=4.0)
    p.add_argument("--instances", type=int, default=10)
    args = p.parse_args()
    graphs = spacing_pair()
    result = {}
    for label, g in zip(("h=1", "h=0.5"), graphs):
        cov = verify_covering(admissible_cover(g, args.r0))
        split = split_bounds(g, args.instances)
        weak = weak_type_study(g, args.instances) if label == "h=0.5" else []
        result[label] = {"n_vertices": g.n, "covering": cov.to_dict(),
                         "split": [asdict(r) for r in split], "weak_type": [asdict(r) for r in weak]}
        print(f"{label}: {g.n} vertices, covering N = {cov.overlap_N}, "
              f"gradient constant {cov.gradient_constant:.3f}, all passed {cov.all_passed}")
    a, b = result["h=1"]["split"], result["h=0.5"]["split"]
    print(f"\n{'inst':>4}{'s':>5}{'U ratio':>10}{'T ratio':>10}")
    for x, y in zip(a, b):
        print(f"{x['instance']:>4}{x['exponent']:>5g}{y['U'] / x['U']:>10.3f}"
              f"{y['T_off'] / x['T_off']:>10.3f}")
    weak = result["h=0.5"]["weak_type"]
    if weak:
        print("\nweak type at h=0.5: constants", np.round([w["constant"] for w in weak], 4).tolist())
        print("argmax of", weak[0]["grid_size"], ":", [w["argmax"] for w in weak])
    dump(result, args.out)


if __name__ == "__main__":
    main()
