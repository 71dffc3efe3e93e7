"""Writes the 1000-SNV test fixture. Run once; the output is checked in."""

import math
import random
from pathlib import Path

HERE = Path(__file__).parent
SAMPLES = ["ctrl_a", "ctrl_b", "case_a", "case_b"]
N_SNV = 1000
L = 5


def poisson(rng, mean):
    k = 0
    while mean > 30.0:
        k += poisson(rng, 30.0)
        mean -= 30.0
    limit, prod = math.exp(-mean), rng.random()
    while prod > limit:
        k += 1
        prod *= rng.random()
    return k


def nb(rng, r, p):
    # failures before the r-th success; mean r (1 - p) / p
    return poisson(rng, rng.gammavariate(r, (1.0 - p) / p))


def main():
    rng = random.Random(20240917)
    bases = "ACGT"
    rows = {s: [] for s in SAMPLES}
    for i in range(N_SNV):
        chrom = "chr%d" % (1 + i % 3)
        pos = 10_000 + 137 * i
        ref = bases[i % 4]
        alt = bases[(i + 1 + i // 4 % 3) % 4]
        # chr2 below 80 kb carries BAD 2
        bad = 2.0 if chrom == "chr2" and pos < 80_000 else 1.0
        imbalanced = i % 50 == 7
        carriers = [s for s in SAMPLES if rng.random() < 0.55] or [rng.choice(SAMPLES)]
        for s in carriers:
            y = L + nb(rng, 2.0, 0.08)
            if imbalanced and s.startswith("case"):
                p = 0.25
            elif bad > 1.0:
                p = 1.0 / 3.0 if rng.random() < 0.5 else 2.0 / 3.0
            else:
                p = 0.5
            x = nb(rng, y + 0.5, p)
            if i % 97 == 3:
                x = 0
            rows[s].append((chrom, pos, "rs%d" % (100_000 + i), ref, alt, x, y))
    for s, rs in rows.items():
        with open(HERE / "counts" / (s + ".tsv"), "w") as f:
            f.write("chr\tpos\tid\tref\talt\tref_count\talt_count\n")
            for r in rs:
                f.write("%s\t%d\t%s\t%s\t%s\t%d\t%d\n" % r)
    with open(HERE / "bad.bed", "w") as f:
        f.write("chr1\t0\t1000000\t1\n")
        f.write("chr2\t0\t80000\t2\n")
    (HERE / "groups" / "control.txt").write_text("ctrl_*\n")
    (HERE / "groups" / "case.txt").write_text("case_a\ncase_b.tsv\n")


if __name__ == "__main__":
    main()
