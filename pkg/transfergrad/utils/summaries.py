"""
Shared helpers for printing report tables to stdout.
"""

from collections.abc import Sequence

from transfergrad.report_csv import RankedRow, SweepSummaryRow, TransferRow, fmt_rate


def _pct(value: float | None) -> str:
    return "   NA " if value is None else f"{100 * value:6.1f}%"


def print_ranked_summary(rows: Sequence[RankedRow]) -> None:
    """Pretty-print the ranked attack table (best transfer rate first)."""
    print("\n📋 RANKED ATTACKS (mean transfer success, off-diagonal):")
    print(f"   {'#':>2}  {'attack':<10} {'transfer':>8} {'filtered':>8} {'white-box':>9}")
    for row in rows:
        print(
            f"   {row.rank:>2}  {row.attack:<10} {_pct(row.transfer_raw_rate):>8} "
            f"{_pct(row.transfer_filtered_rate):>8} {_pct(row.white_box_raw_rate):>9}"
        )


def print_transfer_matrix(rows: Sequence[TransferRow], attack: str) -> None:
    """Surrogate x victim raw success rates for one attack."""
    cells = [r for r in rows if r.attack == attack]
    surrogates = list(dict.fromkeys(r.surrogate for r in cells))
    victims = list(dict.fromkeys(r.victim for r in cells))
    rate = {(r.surrogate, r.victim): r.raw_rate for r in cells}
    print(f"\n📋 {attack}: surrogate (rows) x victim (columns), raw success")
    print("   " + " " * 10 + "".join(f"{v:>9}" for v in victims))
    for s in surrogates:
        line = "".join(
            f"{_pct(rate.get((s, v))):>8}" + ("*" if s == v else " ") for v in victims
        )
        print(f"   {s:<10}{line}")


def print_sweep_summary(rows: Sequence[SweepSummaryRow]) -> None:
    """Mean success per grid value (victim == "mean" rows only)."""
    means = [r for r in rows if r.victim == "mean"]
    if not means:
        print("   (no sweep rows)")
        return
    print(f"\n📋 SWEEP {means[0].parameter} (mean over victims and {means[0].seeds} seed(s)):")
    for r in means:
        print(f"   • {r.parameter}={r.value:g}: raw {fmt_rate(r.raw_rate)}")
