# margins/tests/test_dataset.py
"""
margins Dataset Tests
CSV ingestion, binarization, disagreement, sampling, dedup and the canonical dump
"""

import json

import numpy as np
import pytest

from margins.schemas.dataset_schema import ModelScoreColumn, SchemaConfig
from margins.services.dataset import (
    binarize,
    dedup_texts,
    demographic_vector,
    disagreement,
    disagreement_vector,
    load_canonical,
    load_dataset,
    preprocess,
    save_dataset,
    stratified_sample,
)
from margins.tests.factories import make_table
from margins.utils.validators import ConfigError, DomainError, ParseError, SchemaError

HEADER = "id,comment_text,toxicity,insult,female,muslim,m1_toxicity\n"


def write_csv(path, body, header=HEADER):
    path.write_text(header + body, encoding="utf-8")
    return path


def small_schema(with_scores=True):
    return SchemaConfig(
        id_column="id",
        text_column="comment_text",
        toxicity_annotations=["toxicity", "insult"],
        demographic_annotations=["female", "muslim"],
        model_scores=[ModelScoreColumn(column="m1_toxicity", model="m1", target="toxicity")] if with_scores else [],
    )


class TestScalarOperations:
    """Binarization and disagreement of single values"""

    def test_binarize_threshold_is_inclusive(self):
        assert binarize(0.5) == 1
        assert binarize(0.4999) == 0
        assert binarize(1.0) == 1
        assert binarize(0.0) == 0

    def test_disagreement_values(self):
        assert disagreement(0.0) == (0.0, 0)
        assert disagreement(1.0) == (0.0, 0)
        assert disagreement(0.5) == (0.25, 1)
        value, flag = disagreement(0.2)
        assert value == pytest.approx(0.16)
        assert flag == 1


class TestLoadDataset:
    """CSV parsing through a schema config"""

    def test_loads_channels_in_schema_order(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "1,hello,0.5,0.0,1.0,0.0,0.4\n2,world,0.1,0.9,0.0,0.6,\n")
        table = load_dataset(path, small_schema())

        assert list(table.ids) == [1, 2]
        assert table.toxicity_names == ["toxicity", "insult"]
        assert table.demographic_names == ["female", "muslim"]
        assert table.model_ids == ["m1"]
        assert np.isnan(table.values["m1__toxicity"][1])
        assert not table.is_preprocessed

    def test_unsorted_ids_are_reordered(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "7,later,0.1,0,0,0,0.1\n3,earlier,0.9,0,1,0,0.8\n")
        table = load_dataset(path, small_schema())

        assert list(table.ids) == [3, 7]
        assert table.texts == ("earlier", "later")
        assert table.values["toxicity"][0] == 0.9

    def test_duplicate_id_rejected(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "1,a,0,0,0,0,0\n1,b,0,0,0,0,0\n")
        with pytest.raises(ParseError, match="duplicate id 1"):
            load_dataset(path, small_schema())

    def test_missing_configured_column(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "1,a,0,0,0,0\n", header="id,comment_text,toxicity,insult,female,muslim\n")
        with pytest.raises(SchemaError) as exc_info:
            load_dataset(path, small_schema())
        assert exc_info.value.field == "m1_toxicity"

    def test_value_outside_unit_interval(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "1,a,0.2,1.5,0,0,0\n")
        with pytest.raises(DomainError) as exc_info:
            load_dataset(path, small_schema())
        assert exc_info.value.row == 1
        assert exc_info.value.field == "insult"

    def test_unparseable_annotation(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "1,a,high,0,0,0,0\n")
        with pytest.raises(ParseError):
            load_dataset(path, small_schema())

    def test_missing_annotation_is_an_error_but_missing_score_is_not(self, tmp_path):
        path = write_csv(tmp_path / "data.csv", "1,a,,0,0,0,0.3\n")
        with pytest.raises(ParseError, match="missing value"):
            load_dataset(path, small_schema())

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="not found"):
            load_dataset(tmp_path / "absent.csv", small_schema())

    def test_score_targeting_unknown_attribute_rejected_by_schema(self):
        with pytest.raises(ValueError):
            SchemaConfig(
                text_column="t",
                toxicity_annotations=["toxicity"],
                demographic_annotations=[],
                model_scores=[ModelScoreColumn(column="s", model="m", target="threat")],
            )


class TestPreprocess:
    """Binarization and disagreement over whole tables"""

    def setup_method(self):
        self.table = make_table(
            toxicity={"toxicity": [0.0, 0.5, 0.2, 1.0]},
            demographics={"female": [1.0, 0.3, 0.5, 0.0]},
            scores={"m1": {"toxicity": [0.1, np.nan, 0.7, 0.9]}},
        )

    def test_binary_labels(self):
        assert list(self.table.binary_column("toxicity")) == [0, 1, 0, 1]
        assert list(self.table.binary_column("female")) == [1, 0, 1, 0]

    def test_absent_score_binarizes_to_zero(self):
        assert list(self.table.binary["m1__toxicity"]) == [0, 0, 1, 1]

    def test_disagreement_only_for_annotations(self):
        assert "m1__toxicity" not in self.table.disagreement
        assert list(self.table.disagreement_flags["toxicity"]) == [0, 1, 1, 0]
        assert self.table.disagreement["female"][2] == pytest.approx(0.25)

    def test_row_vectors_match_matrix_views(self):
        demographics = self.table.demographic_matrix()
        disagreements = self.table.disagreement_matrix()
        for index, record in enumerate(self.table.records()):
            assert np.array_equal(demographic_vector(record, self.table), demographics[index])
            assert np.array_equal(disagreement_vector(record), disagreements[index])
        assert disagreement_vector(self.table.record(2), ["female"]) == pytest.approx([0.25])

    def test_preprocess_is_idempotent(self):
        again = preprocess(self.table)
        for name in self.table.binary:
            assert np.array_equal(again.binary[name], self.table.binary[name])

    def test_unbinarized_column_access_fails(self):
        raw = make_table(toxicity={"toxicity": [0.1]}, demographics={}, raw=True)
        with pytest.raises(ConfigError):
            raw.binary_column("toxicity")


class TestSamplingAndDedup:
    """Stratified sampling and exact-text dedup"""

    def setup_method(self):
        n = 40
        female = [1.0 if i % 2 == 0 else 0.0 for i in range(n)]
        muslim = [1.0 if i % 5 == 0 else 0.0 for i in range(n)]
        self.table = make_table(
            toxicity={"toxicity": [0.0] * n},
            demographics={"female": female, "muslim": muslim},
            texts=[f"text {i % 30}" for i in range(n)],
        )

    def test_sample_is_deterministic(self):
        first = stratified_sample(self.table, 0.5, seed=3)
        second = stratified_sample(self.table, 0.5, seed=3)
        assert np.array_equal(first.ids, second.ids)

    def test_sample_keeps_ceil_of_each_group(self):
        sample = stratified_sample(self.table, 0.25, seed=1)
        assert int(sample.binary_column("female").sum()) >= 5  # ceil(0.25 * 20)
        assert int(sample.binary_column("muslim").sum()) >= 2  # ceil(0.25 * 8)
        assert np.all(np.diff(sample.ids) > 0)

    def test_full_fraction_keeps_every_group_member(self):
        sample = stratified_sample(self.table, 1.0, seed=0)
        members = (self.table.binary_column("female") | self.table.binary_column("muslim")).sum()
        assert len(sample) == members

    def test_fraction_out_of_range(self):
        with pytest.raises(ConfigError):
            stratified_sample(self.table, 0.0, seed=0)

    def test_dedup_keeps_lowest_id(self):
        deduped = dedup_texts(self.table)
        assert len(deduped) == 30
        assert list(deduped.ids) == list(range(30))


class TestCanonicalDump:
    """save_dataset / load_canonical"""

    def test_dump_reads_back_bit_exact(self, tmp_path):
        table = make_table(
            toxicity={"toxicity": [0.1, 1 / 3, 0.7]},
            demographics={"female": [0.0, 0.6, 1.0]},
            scores={"m1": {"toxicity": [0.123456789012345678, np.nan, 0.5]}},
            texts=["a, with comma", 'quoted "text"', "line"],
        )
        path = tmp_path / "dataset.csv"
        save_dataset(table, path)
        loaded = load_canonical(path)

        assert loaded.texts == table.texts
        assert [c.name for c in loaded.channels] == [c.name for c in table.channels]
        for name in table.values:
            assert np.array_equal(loaded.values[name], table.values[name], equal_nan=True)
        assert np.array_equal(loaded.disagreement["toxicity"], table.disagreement["toxicity"])
        assert loaded.is_preprocessed

    def test_sidecar_row_count_checked(self, tmp_path):
        table = make_table(toxicity={"toxicity": [0.1, 0.2]}, demographics={"female": [0.0, 1.0]})
        path = tmp_path / "dataset.csv"
        save_dataset(table, path)
        sidecar = tmp_path / "dataset.csv.schema.json"
        meta = json.loads(sidecar.read_text())
        meta["rows"] = 5
        sidecar.write_text(json.dumps(meta))
        with pytest.raises(Exception, match="sidecar says 5"):
            load_canonical(path)
