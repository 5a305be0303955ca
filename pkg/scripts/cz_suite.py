"""Calderon-Zygmund property suite over random remote-ball instances."""

from dataclasses import asdict

from _common import dump, parser

from rieszlab.studies import connected_sum, cz_suite


def main():
    p = parser(__doc__)
    p.add_argument("--side", type=int, default=9)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    runs = cz_suite(connected_sum(args.side), args.count, args.seed)
    print(f"{'inst':>4}{'q':>7}{'pass':>6}{'c2 spread':>11}{'max c4':>10}{'N':>4}")
    for r in runs:
        print(f"{r.seed:>4}{r.q:>7.3f}{str(r.all_passed):>6}{r.c2_spread:>11.3f}"
              f"{max(r.c4):>10.3f}{max(r.N):>4}")
    dump([asdict(r) for r in runs], args.out)


if __name__ == "__main__":
    main()
