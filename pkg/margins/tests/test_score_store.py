# margins/tests/test_score_store.py
"""
margins Score Import/Export Tests
"""

import numpy as np
import pytest

from margins.services.score_store import export_scores, import_scores
from margins.tests.factories import make_table
from margins.utils.validators import DomainError, FormatError, SchemaError


class TestImportScores:
    def setup_method(self):
        self.table = make_table(
            toxicity={"toxicity": [0.0, 0.8, 0.3], "insult": [0.1, 0.6, 0.0]},
            demographics={"female": [1.0, 0.0, 0.0]},
            ids=[10, 20, 30],
        )

    def test_joins_on_id(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,toxicity,insult\n30,0.25,0.5\n10,0.75,\n")
        table = import_scores(self.table, path, "offline")

        assert table.model_ids == ["offline"]
        assert list(table.values["offline__toxicity"][[0, 2]]) == [0.75, 0.25]
        assert np.isnan(table.values["offline__toxicity"][1])
        assert np.isnan(table.values["offline__insult"][0])
        assert list(table.binary["offline__insult"]) == [0, 0, 1]

    def test_unknown_ids_are_ignored(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,toxicity\n20,0.9\n99,0.1\n")
        table = import_scores(self.table, path, "offline")
        assert table.values["offline__toxicity"][1] == 0.9

    def test_non_toxicity_column(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,female\n10,0.5\n")
        with pytest.raises(SchemaError):
            import_scores(self.table, path, "offline")

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,toxicity\n10,0.5\n10,0.6\n")
        with pytest.raises(FormatError, match="duplicate id 10"):
            import_scores(self.table, path, "offline")

    def test_score_out_of_range(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,toxicity\n10,1.2\n")
        with pytest.raises(DomainError):
            import_scores(self.table, path, "offline")

    def test_missing_id_column(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("row,toxicity\n10,0.5\n")
        with pytest.raises(FormatError, match="no id column"):
            import_scores(self.table, path, "offline")

    def test_reimport_replaces_channels(self, tmp_path):
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        first.write_text("id,toxicity\n10,0.1\n20,0.1\n30,0.1\n")
        second.write_text("id,toxicity\n10,0.9\n20,0.9\n30,0.9\n")
        table = import_scores(import_scores(self.table, first, "m"), second, "m")

        assert [c.name for c in table.score_channels] == ["m__toxicity"]
        assert np.all(table.values["m__toxicity"] == 0.9)


class TestExportScores:
    def test_export_then_import_gives_same_scores(self, tmp_path):
        table = make_table(
            toxicity={"toxicity": [0.0, 1.0]},
            demographics={"female": [1.0, 0.0]},
            scores={"m": {"toxicity": [0.1234567890123, np.nan]}},
        )
        path = tmp_path / "m.csv"
        export_scores(table, "m", path)
        assert path.read_text().splitlines()[0] == "id,toxicity"

        plain = make_table(toxicity={"toxicity": [0.0, 1.0]}, demographics={"female": [1.0, 0.0]})
        again = import_scores(plain, path, "m")
        assert np.array_equal(again.values["m__toxicity"], table.values["m__toxicity"], equal_nan=True)

    def test_unknown_model(self, tmp_path):
        table = make_table(toxicity={"toxicity": [0.0]}, demographics={})
        with pytest.raises(SchemaError):
            export_scores(table, "nobody", tmp_path / "x.csv")
