"""Tests for evalharness module -- success rates, crafting, transfer matrices and sweeps."""

from dataclasses import replace

import numpy as np
import pytest

from transfergrad import evalharness as eh
from transfergrad import transforms as tf
from transfergrad.attacks import AttackBudget, AttackConfig, AttackFamily
from transfergrad.errors import ConfigError, DataError, NumericalError, ShapeError
from transfergrad.models import predict
from transfergrad.report_csv import SweepRow, TransferRow

EPS = 8 / 255


def _cfg(family: str, **kwargs) -> AttackConfig:
    kwargs.setdefault("budget", AttackBudget(epsilon=EPS, iterations=2))
    kwargs.setdefault("scale", tf.ScaleSpec(m=2))
    kwargs.setdefault("mix", tf.MixSpec(m_mix=1))
    return AttackConfig(family=family, seed=0, **kwargs)


@pytest.fixture
def attack_set(tiny_splits):
    return tiny_splits.attack


@pytest.fixture
def small_set(tiny_splits):
    return tiny_splits.attack.subset(np.arange(4))


def _row(surrogate, victim, attack, raw, filtered=None):
    return TransferRow(
        surrogate=surrogate,
        victim=victim,
        attack=attack,
        raw_rate=raw,
        filtered_rate=filtered,
        clean_error=0.0,
        n=10,
        seed=0,
    )


class TestSuccessRate:
    def test_clean_images_score_clean_error(self, tiny_models, attack_set):
        model = tiny_models["cnn"]
        rates = eh.success_rate(model, attack_set.images, attack_set.labels, attack_set.images)
        correct = int((predict(model, attack_set.images) == attack_set.labels).sum())
        assert rates.n == len(attack_set)
        assert rates.n_clean_correct == correct
        assert rates.raw_rate == pytest.approx(rates.clean_error)
        assert rates.filtered_rate == 0.0

    def test_filtered_undefined_without_clean_hits(self, tiny_models, attack_set):
        model = tiny_models["mlp"]
        wrong = (predict(model, attack_set.images) + 1) % 4
        rates = eh.success_rate(model, attack_set.images, wrong, attack_set.images)
        assert rates.filtered_rate is None
        assert rates.raw_rate == 1.0
        assert rates.clean_error == 1.0

    def test_length_mismatch(self, tiny_models, attack_set):
        with pytest.raises(ShapeError):
            eh.success_rate(
                tiny_models["mlp"], attack_set.images[:2], attack_set.labels, attack_set.images
            )

    def test_empty(self, tiny_models, attack_set):
        empty = attack_set.images[:0]
        with pytest.raises(DataError):
            eh.success_rate(tiny_models["mlp"], empty, attack_set.labels[:0], empty)


class TestAuditBudget:
    def test_returns_worst_perturbation(self):
        x0 = np.full((3, 1, 2, 2), 0.5, dtype=np.float32)
        adv = x0.copy()
        adv[1, 0, 0, 0] += 0.01
        assert eh.audit_budget(adv, x0, 0.02) == pytest.approx(0.01, rel=1e-5)

    def test_counts_violations(self):
        x0 = np.full((3, 4), 0.5, dtype=np.float32)
        adv = x0 + 0.1
        with pytest.raises(NumericalError, match="3 adversarials exceed"):
            eh.audit_budget(adv, x0, 0.05)

    def test_pixel_range(self):
        x0 = np.zeros((1, 4), dtype=np.float32)
        with pytest.raises(NumericalError, match=r"\[0, 1\]"):
            eh.audit_budget(x0 - 0.01, x0, 0.05)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            eh.audit_budget(np.zeros((2, 3)), np.zeros((3, 3)), 0.1)


class TestLossTraces:
    def test_median_curve(self):
        curve = eh.median_loss_curve([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]])
        np.testing.assert_allclose(curve, [3.0, 2.0])

    def test_non_decreasing_fraction(self):
        traces = [[1.0, 1.0, 2.0], [1.0, 0.5, 2.0], [0.1, 0.2, 0.3], [2.0, 1.0, 0.0]]
        assert eh.non_decreasing_fraction(traces) == 0.5
        assert eh.non_decreasing_fraction([]) == 0.0


class TestTelemetry:
    def test_printed_when_enabled(self, monkeypatch, capsys):
        monkeypatch.setenv("TRANSFERGRAD_TELEMETRY", "1")
        eh.AttackTelemetry(images=2, queries=8).log_summary("mlp/us_mm")
        out = capsys.readouterr().out
        assert "attack telemetry mlp/us_mm: images=2 queries=8" in out

    def test_silent_by_default(self, capsys):
        eh.AttackTelemetry().log_summary("x")
        assert capsys.readouterr().out == ""


class TestCraft:
    def test_counts_and_budget(self, tiny_models, small_set, tiny_splits):
        cfg = _cfg("us_mm")
        batch = eh.craft_adversarials(tiny_models["mlp"], small_set, cfg, tiny_splits.train)
        assert batch.adversarials.shape == small_set.images.shape
        assert batch.telemetry.images == 4
        assert batch.telemetry.queries == 4 * 2 * cfg.ensemble_size()
        assert batch.max_linf <= EPS + 1e-6
        assert [len(t) for t in batch.loss_traces] == [2, 2, 2, 2]

    def test_threads_do_not_change_results(self, tiny_models, attack_set, tiny_splits):
        cfg = _cfg("us_mm")
        serial = eh.craft_adversarials(tiny_models["cnn"], attack_set, cfg, tiny_splits.train)
        threaded = eh.craft_adversarials(
            tiny_models["cnn"], attack_set, cfg, tiny_splits.train, threads=4
        )
        np.testing.assert_array_equal(serial.adversarials, threaded.adversarials)

    def test_empty_attack_set(self, tiny_models, attack_set):
        with pytest.raises(DataError, match="empty"):
            eh.craft_adversarials(tiny_models["mlp"], attack_set.subset(np.arange(0)), _cfg("bim"))


class TestTransferMatrix:
    def test_grid_of_cells(self, tiny_models, small_set):
        cfgs = {"bim": _cfg("bim"), "mifgsm": _cfg("mifgsm")}
        seen = []
        report = eh.transfer_matrix(
            tiny_models,
            cfgs,
            small_set,
            seed=7,
            on_crafted=lambda s, a, cfg, batch: seen.append((s, a, cfg.seed)),
        )
        assert len(report.rows) == 2 * 2 * 2
        assert seen == [
            ("mlp", "bim", 7),
            ("mlp", "mifgsm", 7),
            ("cnn", "bim", 7),
            ("cnn", "mifgsm", 7),
        ]
        assert report.cell("mlp", "mlp", "bim").white_box
        assert not report.cell("mlp", "cnn", "bim").white_box
        assert report.metadata["victims"] == ["mlp", "cnn"]
        assert all(0.0 <= r.raw_rate <= 1.0 for r in report.rows)

    def test_cells_match_direct_crafting(self, tiny_models, small_set):
        cfg = _cfg("mifgsm")
        report = eh.transfer_matrix(tiny_models, {"mifgsm": cfg}, small_set, 5, surrogates=["cnn"])
        batch = eh.craft_adversarials(tiny_models["cnn"], small_set, replace(cfg, seed=5))
        rates = eh.success_rate(
            tiny_models["mlp"], batch.adversarials, small_set.labels, small_set.images
        )
        assert report.cell("cnn", "mlp", "mifgsm").raw_rate == rates.raw_rate

    def test_white_box_is_strong(self, tiny_models, attack_set):
        cfg = _cfg("mifgsm", budget=AttackBudget(epsilon=0.3, iterations=10))
        report = eh.transfer_matrix(tiny_models, {"mifgsm": cfg}, attack_set, 1)
        assert report.cell("mlp", "mlp", "mifgsm").raw_rate >= 0.5

    def test_needs_two_models(self, tiny_models, small_set):
        with pytest.raises(ConfigError, match="at least 2"):
            eh.transfer_matrix({"mlp": tiny_models["mlp"]}, {"bim": _cfg("bim")}, small_set, 0)

    def test_unknown_surrogate(self, tiny_models, small_set):
        with pytest.raises(ConfigError, match="resnet"):
            eh.transfer_matrix(
                tiny_models, {"bim": _cfg("bim")}, small_set, 0, surrogates=["resnet"]
            )


class TestRankedSummary:
    def test_ranked_by_transfer_rate(self):
        rows = [
            _row("a", "a", "mifgsm", 1.0),
            _row("a", "b", "mifgsm", 0.2, 0.25),
            _row("b", "a", "mifgsm", 0.4, 0.5),
            _row("a", "a", "us_mm", 0.9),
            _row("a", "b", "us_mm", 0.6, None),
            _row("b", "a", "us_mm", 0.8, 0.75),
        ]
        ranked = eh.ranked_summary(rows)
        assert [r.attack for r in ranked] == ["us_mm", "mifgsm"]
        assert [r.rank for r in ranked] == [1, 2]
        top = ranked[0]
        assert top.transfer_raw_rate == pytest.approx(0.7)
        assert top.transfer_filtered_rate == pytest.approx(0.75)
        assert top.white_box_raw_rate == pytest.approx(0.9)
        assert top.cells == 3

    def test_white_box_only_ranks_last(self):
        rows = [_row("a", "a", "solo", 1.0), _row("a", "b", "other", 0.1)]
        ranked = eh.ranked_summary(rows)
        assert [r.attack for r in ranked] == ["other", "solo"]
        assert ranked[1].transfer_raw_rate is None


class TestGrids:
    def test_range_is_inclusive(self):
        assert eh.parse_grid("0:0.3:0.05") == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
        assert len(eh.parse_grid("0.5:1.0:0.05")) == 11
        assert eh.parse_grid("1:12:1") == [float(i) for i in range(1, 13)]

    def test_comma_list(self):
        assert eh.parse_grid("0.1, 0.2,0.4") == [0.1, 0.2, 0.4]

    @pytest.mark.parametrize("text", ["0.2,0.1", "0.1,0.1", "", "a,b", "0:1:0"])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            eh.parse_grid(text)

    def test_with_parameter(self):
        cfg = _cfg("us_mm")
        assert eh.with_parameter(cfg, "L", 0.2).scale.L == 0.2
        assert eh.with_parameter(cfg, "H", 0.9).scale.H == 0.9
        assert eh.with_parameter(cfg, "r", 0.3).mix.r == 0.3
        assert eh.with_parameter(cfg, "m", 4.0).scale.m == 4

    def test_with_parameter_rejects_illegal_values(self):
        with pytest.raises(ConfigError, match="illegal value 1.5 for parameter r"):
            eh.with_parameter(_cfg("us_mm"), "r", 1.5)
        with pytest.raises(ConfigError, match="integer"):
            eh.with_parameter(_cfg("usm"), "m", 2.5)
        with pytest.raises(ConfigError, match="valid: L, H, r, m"):
            eh.with_parameter(_cfg("usm"), "eta", 0.1)

    def test_presets_without_base(self):
        grid, cfg = eh.preset_config("L", seed=5)
        assert cfg.family is AttackFamily.US_MM
        assert cfg.seed == 5
        assert (cfg.scale.H, cfg.mix.r) == (0.75, 0.0)
        assert grid[0] == 0.0 and grid[-1] == pytest.approx(0.3)
        grid, cfg = eh.preset_config("m")
        assert cfg.family is AttackFamily.USM
        assert grid == [float(i) for i in range(1, 13)]
        with pytest.raises(ConfigError, match="no ablation preset"):
            eh.preset_config("eta")

    def test_named_base_keeps_family_and_settings(self):
        base = _cfg(
            "us_mm",
            scale=tf.ScaleSpec(m=2, L=0.2, H=0.9),
            mix=tf.MixSpec(m_mix=1, r=0.6),
        )
        grid, cfg = eh.preset_config("L", base)
        assert cfg == base
        assert (cfg.scale.H, cfg.mix.r) == (0.9, 0.6)
        assert grid[-1] == pytest.approx(0.3)
        _, cfg = eh.preset_config("m", _cfg("admix"))
        assert cfg.family is AttackFamily.ADMIX
        assert cfg.scale.family is tf.ScaleFamily.SIM

    @pytest.mark.parametrize(
        "parameter, family",
        [("r", "admix"), ("r", "usm"), ("L", "sim_mm"), ("H", "mm"), ("m", "mifgsm")],
    )
    def test_parameter_must_act_on_named_family(self, parameter, family):
        with pytest.raises(ConfigError, match=f"no effect on attack family {family}"):
            eh.preset_config(parameter, _cfg(family))

    @pytest.mark.parametrize(
        "parameter, family",
        [("r", "mm"), ("r", "sim_mm"), ("L", "bsm"), ("H", "usm"), ("m", "sim"), ("m", "admix")],
    )
    def test_sweepable_pairs(self, parameter, family):
        eh.check_sweepable(parameter, AttackFamily(family))

    def test_sweep_seeds(self):
        assert eh.sweep_seeds(10, 3) == [10, 11, 12]
        with pytest.raises(ConfigError):
            eh.sweep_seeds(10, 0)


class TestSweep:
    def test_rows_per_value_victim_and_seed(self, tiny_models, small_set, tiny_splits):
        report = eh.ablation_sweep(
            "r",
            [0.0, 0.5],
            _cfg("us_mm"),
            tiny_models,
            small_set,
            surrogate="mlp",
            seeds=[1, 2],
            mix_pool=tiny_splits.train,
        )
        assert len(report.rows) == 2 * 2
        assert {r.victim for r in report.rows} == {"cnn"}
        assert len(report.mean_curve()) == 2
        summary = report.summary()
        assert [(s.value, s.victim) for s in summary] == [
            (0.0, "cnn"),
            (0.0, "mean"),
            (0.5, "cnn"),
            (0.5, "mean"),
        ]
        assert all(s.seeds == 2 for s in summary)

    def test_bad_inputs(self, tiny_models, small_set):
        with pytest.raises(ConfigError, match="unknown sweep parameter"):
            eh.ablation_sweep(
                "eta", [0.1], _cfg("usm"), tiny_models, small_set, surrogate="mlp", seeds=[0]
            )
        with pytest.raises(ConfigError, match="strictly increasing"):
            eh.ablation_sweep(
                "L", [0.2, 0.1], _cfg("usm"), tiny_models, small_set, surrogate="mlp", seeds=[0]
            )
        with pytest.raises(ConfigError, match="unknown surrogate"):
            eh.ablation_sweep(
                "L", [0.1], _cfg("usm"), tiny_models, small_set, surrogate="vgg", seeds=[0]
            )

    def test_summarize_means_over_seeds(self):
        rows = [
            SweepRow("L", 0.1, "a", 0.2, 0.5, 1),
            SweepRow("L", 0.1, "a", 0.4, None, 2),
            SweepRow("L", 0.1, "b", 0.6, 0.7, 1),
        ]
        summary = {s.victim: s for s in eh.summarize_sweep(rows)}
        assert summary["a"].raw_rate == pytest.approx(0.3)
        assert summary["a"].filtered_rate == pytest.approx(0.5)
        assert summary["a"].seeds == 2
        assert summary["mean"].raw_rate == pytest.approx(0.4)
        assert summary["mean"].filtered_rate == pytest.approx(0.6)


class TestComparisons:
    def test_equal_cost_pairs(self):
        pair = eh.mm_versus_admix(_cfg("mifgsm"))
        assert pair["sim_mm"].ensemble_size() == pair["admix"].ensemble_size() == 15
        pair = eh.sim_versus_usm(_cfg("mifgsm"), 4)
        assert pair["sim"].scale.family is tf.ScaleFamily.SIM
        assert pair["usm"].ensemble_size() == pair["sim"].ensemble_size() == 4

    def test_compare_attacks(self, tiny_models, small_set):
        rates = eh.compare_attacks(
            {"bim": _cfg("bim"), "mifgsm": _cfg("mifgsm")},
            tiny_models,
            small_set,
            surrogate="cnn",
            seeds=[0],
        )
        assert set(rates) == {"bim", "mifgsm"}
        assert all(0.0 <= v <= 1.0 for v in rates.values())
