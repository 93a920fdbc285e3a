"""Tests for summaries module."""

from transfergrad.report_csv import RankedRow, SweepSummaryRow, TransferRow
from transfergrad.utils.summaries import (
    print_ranked_summary,
    print_sweep_summary,
    print_transfer_matrix,
)


def _cell(surrogate, victim, raw):
    return TransferRow(surrogate, victim, "us_mm", raw, None, 0.0, 10, 0)


def test_print_ranked_summary_outputs(capsys):
    rows = [
        RankedRow(1, "us_mm", 0.625, 0.5, 1.0, 4),
        RankedRow(2, "mifgsm", None, None, 0.9, 2),
    ]

    print_ranked_summary(rows)

    captured = capsys.readouterr().out
    assert "RANKED ATTACKS" in captured
    assert "us_mm" in captured and "62.5%" in captured
    assert "mifgsm" in captured and "NA" in captured


def test_print_transfer_matrix_marks_white_box(capsys):
    rows = [_cell("a", "a", 1.0), _cell("a", "b", 0.25), _cell("b", "a", 0.5)]

    print_transfer_matrix(rows, "us_mm")

    lines = capsys.readouterr().out.splitlines()
    row_a = next(line for line in lines if line.strip().startswith("a ") and "%" in line)
    assert "100.0%*" in row_a
    assert " 25.0% " in row_a
    row_b = next(line for line in lines if line.strip().startswith("b ") and "%" in line)
    assert "NA" in row_b  # b was never scored against itself


def test_print_sweep_summary_uses_mean_rows(capsys):
    rows = [
        SweepSummaryRow("L", 0.1, "cnn", 0.2, None, 3),
        SweepSummaryRow("L", 0.1, "mean", 0.3, None, 3),
        SweepSummaryRow("L", 0.2, "mean", 0.4, None, 3),
    ]

    print_sweep_summary(rows)

    captured = capsys.readouterr().out
    assert "SWEEP L" in captured and "3 seed(s)" in captured
    assert "L=0.1: raw 0.300000" in captured
    assert "L=0.2: raw 0.400000" in captured
    assert "0.200000" not in captured


def test_print_sweep_summary_empty(capsys):
    print_sweep_summary([])
    assert "no sweep rows" in capsys.readouterr().out
