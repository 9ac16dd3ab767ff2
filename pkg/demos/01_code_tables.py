"""Enumerate structured sparse ternary codes and their storage numbers.

A code (N, K) is every length-N vector over {-1, 0, +1} with at most K
non-zero entries.  The table below reports, per code: the entry count T,
the look-up table footprint 2*N*T bits, and the index width ceil(log2 T),
i.e. how many bits one stored sub-vector costs.
"""

from sstc import CodeParams, address_bits, build_table, count_entries, table_storage_kb


def main():
    print(f"{'code':>8} {'entries T':>10} {'table KB':>10} {'index bits':>11} {'bits/weight':>12}")
    for n, k in [(16, 4), (16, 3), (16, 2), (8, 2), (8, 1), (4, 1)]:
        params = CodeParams(n, k)
        t = count_entries(params)
        bits = address_bits(params)
        print(f"{str(params):>8} {t:>10} {table_storage_kb(params):>10.3f} "
              f"{bits:>11} {bits / n:>12.4f}")

    print("\nThe (4,1) code enumerated in canonical order:")
    table = build_table(CodeParams(4, 1))
    for idx, row in enumerate(table.trits):
        print(f"  index {idx}: {tuple(int(v) for v in row)}")
    print("\nOrder is lexicographic with digit precedence 0 < +1 < -1, so the")
    print("all-zero vector is always index 0 and encoding needs no table scan.")


if __name__ == "__main__":
    main()
