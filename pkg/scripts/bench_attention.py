"""Decomposed row+column attention against full HW×HW attention: counted MACs and wall time.

    python3 scripts/bench_attention.py --grids 16 32 48 64 --width 32
"""
import argparse
import json

from ssdm.bench import bench_attention


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--grids", type=int, nargs="+", default=[16, 32, 48, 64], help="square grid sides")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = p.parse_args()

    costs = [bench_attention(s, s, args.width, args.heads, args.repeats) for s in args.grids]
    if args.json:
        print(json.dumps([c.to_dict() for c in costs], indent=2))
        return
    print(f"{'grid':>7} {'decomposed MACs':>16} {'full MACs':>14} {'MAC ratio':>10} "
          f"{'decomposed ms':>14} {'full ms':>10} {'closed form':>12}")
    for c in costs:
        print(f"{c.height:>3}×{c.width:<3} {c.decomposed_macs:>16} {c.full_macs:>14} "
              f"{c.full_macs / c.decomposed_macs:>10.1f} {c.decomposed_seconds * 1e3:>14.2f} "
              f"{c.full_seconds * 1e3:>10.2f} {'match' if c.macs_match else 'MISMATCH':>12}")


if __name__ == "__main__":
    main()
