"""Tests for report_csv module -- row models and CSV files."""

import pytest

from transfergrad import report_csv as rc
from transfergrad.errors import DataError


@pytest.fixture
def transfer_rows():
    return [
        rc.TransferRow("mlp_a", "cnn_a", "us_mm", 0.4, None, 0.125, 8, 0),
        rc.TransferRow("mlp_a", "mlp_a", "us_mm", 1.0, 1.0, 0.0, 8, 0),
    ]


class TestFormatting:
    def test_rates(self):
        assert rc.fmt_rate(0.5) == "0.500000"
        assert rc.fmt_rate(None) == "NA"
        assert rc.fmt_rate(float("nan")) == "NA"

    def test_parse_rate(self):
        assert rc.parse_rate("0.250000") == 0.25
        assert rc.parse_rate("NA") is None
        assert rc.parse_rate("") is None

    def test_grid_values_lose_float_noise(self):
        assert rc.fmt_value(0.1 + 0.2) == "0.3"
        assert rc.fmt_value(12.0) == "12"


class TestTransferCsv:
    def test_header_and_na(self, transfer_rows):
        text = rc.rows_to_csv_string(transfer_rows, rc.TRANSFER_COLUMNS)
        lines = text.splitlines()
        assert lines[0] == "surrogate,victim,attack,raw_rate,filtered_rate,clean_error,n,seed"
        assert lines[1] == "mlp_a,cnn_a,us_mm,0.400000,NA,0.125000,8,0"

    def test_file_reload(self, tmp_path, transfer_rows):
        path = rc.write_transfer_csv(tmp_path / "reports" / "transfer.csv", transfer_rows)
        loaded = rc.load_transfer_csv(path)
        assert loaded == transfer_rows
        assert loaded[1].white_box and not loaded[0].white_box

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="report not found"):
            rc.load_transfer_csv(tmp_path / "nope.csv")

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("surrogate,victim\nmlp,cnn\n", encoding="utf-8")
        with pytest.raises(DataError, match="missing columns attack"):
            rc.load_transfer_csv(path)


class TestOtherRows:
    def test_sweep_rows(self, tmp_path):
        rows = [rc.SweepRow("L", 0.1 + 0.2, "cnn_a", 0.5, None, 3)]
        path = rc.write_sweep_csv(tmp_path / "sweep-L.csv", rows)
        assert path.read_text(encoding="utf-8").splitlines()[1] == "L,0.3,cnn_a,0.500000,NA,3"
        assert rc.load_sweep_csv(path)[0].filtered_rate is None

    def test_summary_and_ranked_rows(self):
        summary = rc.SweepSummaryRow("m", 4.0, "mean", 0.25, 0.5, 3)
        assert summary.to_row()["value"] == "4"
        assert summary.to_row()["seeds"] == "3"
        ranked = rc.RankedRow(1, "us_mm", 0.7, None, 0.9, 12)
        assert ranked.to_row() == {
            "rank": "1",
            "attack": "us_mm",
            "transfer_raw_rate": "0.700000",
            "transfer_filtered_rate": "NA",
            "white_box_raw_rate": "0.900000",
            "cells": "12",
        }

    def test_epoch_row(self):
        row = rc.EpochRow(0, 1.23456789, 0.5, None).to_row()
        assert row == {
            "epoch": "0",
            "loss": "1.234568",
            "train_accuracy": "0.500000",
            "test_accuracy": "NA",
        }
