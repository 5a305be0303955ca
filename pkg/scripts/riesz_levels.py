"""Riesz and reverse Riesz lower bounds across connected sums of growing side."""

from _common import dump, parser

from rieszlab.studies import reverse_riesz_levels, riesz_levels


def main():
    p = parser(__doc__)
    p.add_argument("--rr-sides", type=int, nargs="+", default=[9, 17])
    p.add_argument("--r-sides", type=int, nargs="+", default=[5, 9, 13])
    args = p.parse_args()
    series = reverse_riesz_levels(args.rr_sides) + riesz_levels(args.r_sides)
    for s in series:
        print(f"{s.label:>8}: " + "  ".join(f"side {x}: {y:.4f}" for x, y in zip(s.x, s.y)))
    dump([s.to_dict() for s in series], args.out)


if __name__ == "__main__":
    main()
