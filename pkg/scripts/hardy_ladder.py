"""Exact p = 2 Hardy constants on cubes of growing side against the continuum value 4."""

from _common import dump, parser

from rieszlab.studies import hardy_ladder


def main():
    p = parser(__doc__)
    p.add_argument("--sides", type=int, nargs="+", default=[17, 33, 65])
    args = p.parse_args()
    s = hardy_ladder(args.sides)
    print(f"{'side':>6}{'C':>12}{'C/4':>10}")
    for side, c in zip(s.x, s.y):
        print(f"{side:>6}{c:>12.6f}{c / 4:>10.4f}")
    dump(s.to_dict(), args.out)


if __name__ == "__main__":
    main()
