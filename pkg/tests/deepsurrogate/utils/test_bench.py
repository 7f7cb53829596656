import pytest

from deepsurrogate.errors import UsageError
from deepsurrogate.utils.bench import BENCH_COLUMNS, BenchResult, BenchTable
from deepsurrogate.utils.metrics import EvalReport


def _result(scenario: str, method: str, rmspe: float, replicate: int = 0) -> BenchResult:
    report = EvalReport(rmspe=rmspe, coverage=0.95, mean_length=1.0, misclass_rate=0.1, n_eval=10)
    return BenchResult(scenario, method, replicate, report, seconds=1.23456)


@pytest.fixture
def table() -> BenchTable:
    return BenchTable(["s6-desk", "s7-desk"], ["deepsurrogate", "fosr"])


class TestBenchTable:
    def test_requires_scenarios_and_methods(self):
        """Test empty lists raise UsageError."""
        with pytest.raises(UsageError):
            BenchTable([], ["fosr"])
        with pytest.raises(UsageError):
            BenchTable(["s7"], [])

    def test_unknown_result(self, table):
        """Test results outside the grid are rejected."""
        with pytest.raises(UsageError):
            table.on_result(_result("s1", "fosr", 1.0))

    def test_frame_uses_declaration_order(self, table):
        """Test rows follow declared scenario and method order, not arrival."""
        table.on_result(_result("s7-desk", "fosr", 2.0))
        table.on_result(_result("s6-desk", "fosr", 1.5))
        table.on_result(_result("s7-desk", "deepsurrogate", 0.5))
        frame = table.to_frame()
        assert list(frame.columns) == BENCH_COLUMNS
        assert list(zip(frame["scenario"], frame["method"], strict=True)) == [
            ("s6-desk", "fosr"),
            ("s7-desk", "deepsurrogate"),
            ("s7-desk", "fosr"),
        ]

    def test_summary_averages_replicates(self, table):
        """Test replicate means per cell."""
        table.on_result(_result("s6-desk", "fosr", 1.0, 0))
        table.on_result(_result("s6-desk", "fosr", 3.0, 1))
        summary = table.summary()
        assert summary.loc[0, "rmspe"] == pytest.approx(2.0)

    def test_markdown_bolds_best(self, table):
        """Test the lowest RMSPE is bold and missing cells show a dash."""
        table.on_result(_result("s6-desk", "deepsurrogate", 0.5))
        table.on_result(_result("s6-desk", "fosr", 0.9))
        table.on_result(_result("s7-desk", "fosr", 1.1))
        lines = table.to_markdown().splitlines()
        assert lines[0] == (
            "| Scenario | deepsurrogate RMSPE | deepsurrogate Coverage | deepsurrogate Length"
            " | fosr RMSPE | fosr Coverage | fosr Length |"
        )
        assert lines[1] == "|" + "---|" * 7
        assert lines[2].startswith("| s6-desk | **0.5000** | 0.9500 | 1.0000 | 0.9000 |")
        assert lines[3] == "| s7-desk | - | - | - | **1.1000** | 0.9500 | 1.0000 |"

    def test_export(self, table, tmp_path):
        """Test markdown and CSV exports; CSV omits wall-clock times."""
        table.on_result(_result("s6-desk", "fosr", 1.0))
        md = table.export(tmp_path / "bench.md")
        csv = table.export(tmp_path / "bench.csv")
        assert md.read_text().startswith("| Scenario")
        header = csv.read_text().splitlines()[0]
        assert header == ",".join(c for c in BENCH_COLUMNS if c != "seconds")

    def test_clear(self, table):
        """Test clearing drops recorded results."""
        table.on_result(_result("s6-desk", "fosr", 1.0))
        table.clear()
        assert table.to_frame().empty
