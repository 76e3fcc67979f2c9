"""Sweep the observation time T across the Blowup/Decay threshold 2(eta + R_D).

For each T the trend of e^{tau T} I(tau) is classified and compared with the
verdict predicted from the true obstacle radius.
"""

from __future__ import annotations

import argparse

from _common import csv_writer, pulse, trace_pair

from enclosure.extraction import fit_slope, qualitative_criterion
from enclosure.indicator import TauGrid, compute_indicator, noise_floor


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Ts", type=float, nargs="+", default=[1.9, 2.1, 2.3, 2.5, 2.6, 2.8])
    ap.add_argument("--eta", type=float, default=0.9)
    ap.add_argument("--radius", type=float, default=0.3)
    ap.add_argument("--resolution", type=int, default=48)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    taus = TauGrid.from_range(2.0, 40.0, 16, "log")
    src = pulse(args.eta)
    fh, w = csv_writer(args.out)
    w.writerow(["T", "threshold", "trend_rate", "trend", "predicted", "consistent", "R_D_estimate"])
    for T in args.Ts:
        tr_d, tr_0 = trace_pair(args.resolution, T, args.eta, args.radius)
        floor = noise_floor(tr_0, src, taus, "background", trace=tr_d)
        series = compute_indicator(tr_d, src, taus, reference="background", background=tr_0, floor=floor)
        rep = qualitative_criterion(series, T, args.eta, args.radius)
        try:
            r_est = f"{fit_slope(series, args.eta).R_D_estimate:.4f}"
        except ValueError:
            r_est = "nan"
        w.writerow([T, rep.threshold, f"{rep.rate:+.4f}", rep.trend.value, rep.predicted.value, rep.consistent, r_est])
        fh.flush()


if __name__ == "__main__":
    main()
