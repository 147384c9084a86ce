"""Study 3 null calibration: LRT statistics against chi-squared with 2 df.

    python scripts/study3_lrt.py --reps 200 --out lrt.csv

Prints empirical quantiles next to the chi-squared quantiles (a text Q-Q
plot), the mean and the Kolmogorov-Smirnov p-value.
"""
import argparse

import numpy as np
from scipy import stats

from gztreg.simulate import SimDesign, study3_lrt_battery


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--seed", type=int, default=10)
    ap.add_argument("--variances", type=float, nargs=2, default=(1.0, 1.0),
                    metavar=("SCHOOL", "CLASS"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="write the statistics to this CSV file")
    args = ap.parse_args()

    design = SimDesign("study3", n=args.n, seed=args.seed, variances=tuple(args.variances))
    bat = study3_lrt_battery(args.reps, design, threads=args.threads)
    s = np.sort(bat.statistics)
    ref = stats.chi2(bat.df)
    print(f"{s.size} statistics, {bat.failures} failed fits, df {bat.df}")
    print(f"mean {s.mean():.3f} (expect {bat.df}), variance {s.var(ddof=1):.3f} "
          f"(expect {2 * bat.df})")
    print(f"KS p-value {stats.kstest(s, ref.cdf).pvalue:.3f}")
    print("prob   empirical   chi2")
    for p in (0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99):
        print(f"{p:4.2f}   {np.quantile(s, p):9.3f}   {ref.ppf(p):6.3f}")
    if args.out:
        np.savetxt(args.out, s, header="statistic", comments="", fmt="%.17g")


if __name__ == "__main__":
    main()
