import json

import pytest

from qalign import experiment as X
from qalign.data import gen_synthetic
from qalign.metrics import AggregateCell
from qalign.model import ModelConfig
from qalign.prompts import ObjectiveKind
from qalign.training import desk_config

TINY_MODEL = ModelConfig(n_encoder_layers=1, n_decoder_layers=1, d_model=16,
                         n_heads=2, d_ff=32, max_positions=64)


def tiny_dataset():
    _, qa = gen_synthetic(n_examples=40, n_entities=8, n_relations=3,
                          context_facts=3, seed=3, n_corpus_texts=5)
    return qa


@pytest.fixture(scope="module")
def small_report():
    base = desk_config(model=TINY_MODEL, max_steps=3, eval_every=3, batch_size=8)
    return X.run_experiment({"tiny": tiny_dataset()}, sizes=[4, 8],
                            objectives=[ObjectiveKind.QUESTION_THEN_ANSWER,
                                        ObjectiveKind.SPAN_SELECTION],
                            base_config=base, n_seeds=2, master_seed=0,
                            test_cap=6)


class TestRunExperiment:
    def test_grid_completeness(self, small_report):
        assert len(small_report.cells) == 1 * 2 * 2

    def test_each_cell_aggregates_every_seed(self, small_report):
        for cell in small_report.cells:
            assert len(cell.f1_scores) == 2
            assert cell.seeds == [0, 1]
            assert isinstance(cell.f1, AggregateCell)
            assert cell.f1.n_runs == 2

    def test_provenance_recorded(self, small_report):
        prov = small_report.provenance
        assert prov["n_seeds"] == 2 and prov["sizes"] == [4, 8]
        assert prov["datasets"] == {"tiny": 40}
        assert len(prov["config_hash"]) == 16

    def test_failed_runs_recorded_not_raised(self):
        base = desk_config(model=TINY_MODEL, max_steps=2, eval_every=2)
        report = X.run_experiment({"tiny": tiny_dataset()}, sizes=[30],
                                  objectives=[ObjectiveKind.QUESTION_THEN_ANSWER],
                                  base_config=base, n_seeds=2, test_cap=4)
        cell = report.cell("tiny", 30, ObjectiveKind.QUESTION_THEN_ANSWER)
        assert len(cell.failures) == 2
        assert cell.f1 is None

    def test_report_json_round_trip(self, small_report):
        again = X.ExperimentReport.from_json(small_report.to_json())
        assert again.to_json() == small_report.to_json()


class TestEmitReport:
    def test_formats_and_cells(self, small_report, tmp_path):
        written = X.emit_report(small_report, tmp_path)
        table = written["table"].read_text()
        assert table.splitlines()[0] == "dataset\ttrain_size\tobjective\tn_runs\tf1\tem"
        assert len(table.splitlines()) == 1 + 4
        series = written["series"].read_text()
        assert series.splitlines()[0].startswith("dataset,objective,train_size")
        payload = json.loads(written["json"].read_text())
        assert payload["provenance"]["n_seeds"] == 2

    def test_mean_std_rendering(self):
        assert X.format_cell(AggregateCell(mean=55.5, std=2.0, n_runs=5)) == "55.5±2.0"
        assert X.format_cell(None) == "—"

    def test_failed_cell_renders_dash_with_footnote(self, tmp_path):
        base = desk_config(model=TINY_MODEL, max_steps=2, eval_every=2)
        report = X.run_experiment({"tiny": tiny_dataset()}, sizes=[30],
                                  objectives=[ObjectiveKind.QUESTION_THEN_ANSWER],
                                  base_config=base, n_seeds=1, test_cap=4)
        table = X.emit_report(report, tmp_path)["table"].read_text()
        assert "—" in table
        assert "# tiny/30/question_then_answer failed seed 0" in table

    def test_reemit_byte_identical(self, small_report, tmp_path):
        first = X.emit_report(small_report, tmp_path / "a")
        second = X.emit_report(small_report, tmp_path / "b")
        assert first["table"].read_bytes() == second["table"].read_bytes()
        assert first["series"].read_bytes() == second["series"].read_bytes()

    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            X.emit_report(X.ExperimentReport(cells=[], provenance={}), tmp_path)
