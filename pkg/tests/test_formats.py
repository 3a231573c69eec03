import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factories import random_dataset
from workchoice.core import Individual, Zone, build_dataset
from workchoice.formats import (
    ACCESS_MAGIC,
    INDIVIDUALS_HEADER,
    ZONES_HEADER,
    DataFormatError,
    load_accessibility,
    load_dataset,
    load_individuals,
    load_zones,
    model_from_dict,
    model_to_dict,
    read_model_file,
    save_accessibility_bin,
    save_accessibility_csv,
    save_dataset,
    save_model,
)
from workchoice.nested_logit import NestedLogitModel, NlParams, estimate_nl
from workchoice.neural import FeatureSpec, TrainConfig, fit_feature_scaler, init_model
from workchoice.rng import Rng
from workchoice.synthgen import NonlinearOracle


def write(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


class TestZones:
    def test_two_zones(self, tmp_path):
        p = write(tmp_path / "z.csv", ZONES_HEADER, [[1, 0, 0, 1, 2, 3, 4, 5, 6, 7], [2, 3, 4, 0, 0, 0, 0, 0, 0, 1]])
        zones, labels = load_zones(p)
        assert labels == [1, 2]
        assert zones[0] == Zone(0, 0.0, 0.0, (1, 2, 3, 4, 5, 6, 7))
        assert zones[1].total_jobs == 1

    def test_bad_row_reports_line(self, tmp_path):
        p = write(tmp_path / "z.csv", ZONES_HEADER, [[1, 0, 0] + [1] * 7, [2, "x", 0] + [1] * 7])
        with pytest.raises(DataFormatError, match=r"z\.csv:3"):
            load_zones(p)

    def test_negative_jobs(self, tmp_path):
        p = write(tmp_path / "z.csv", ZONES_HEADER, [[1, 0, 0, -1] + [1] * 6])
        with pytest.raises(DataFormatError, match=":2"):
            load_zones(p)

    def test_duplicate_id(self, tmp_path):
        p = write(tmp_path / "z.csv", ZONES_HEADER, [[5, 0, 0] + [1] * 7, [5, 1, 0] + [1] * 7])
        with pytest.raises(DataFormatError, match="duplicate zone id 5"):
            load_zones(p)

    def test_wrong_header(self, tmp_path):
        p = write(tmp_path / "z.csv", ["id", "x", "y"], [[1, 0, 0]])
        with pytest.raises(DataFormatError, match=":1"):
            load_zones(p)

    def test_field_count(self, tmp_path):
        p = write(tmp_path / "z.csv", ZONES_HEADER, [[1, 0, 0, 1]])
        with pytest.raises(DataFormatError, match="expected 10 fields"):
            load_zones(p)


class TestIndividuals:
    def test_remap_ids(self, tmp_path):
        p = write(tmp_path / "i.csv", INDIVIDUALS_HEADER, [[7, 20, 10, 1, 0, 1, 1, 5, 2, 1.5], [8, 10, "", 2, 1, 0, 0, 1, 1, 1]])
        people = load_individuals(p, [10, 20])
        assert people[0] == Individual(7, 1, 0, 1, 0, 1, 1, 5, 2, weight=1.5)
        assert people[1].work_zone is None

    def test_unknown_zone(self, tmp_path):
        p = write(tmp_path / "i.csv", INDIVIDUALS_HEADER, [[7, 30, 10, 1, 0, 1, 1, 5, 2, 1]])
        with pytest.raises(DataFormatError, match="unknown zone id 30"):
            load_individuals(p, [10, 20])

    def test_attribute_range(self, tmp_path):
        p = write(tmp_path / "i.csv", INDIVIDUALS_HEADER, [[7, 10, 10, 1, 0, 1, 1, 12, 2, 1]])
        with pytest.raises(DataFormatError, match=r"i\.csv:2.*income_class"):
            load_individuals(p, [10])

    def test_duplicate_person(self, tmp_path):
        row = [7, 10, 10, 1, 0, 1, 1, 5, 2, 1]
        p = write(tmp_path / "i.csv", INDIVIDUALS_HEADER, [row, row])
        with pytest.raises(DataFormatError, match="duplicate person id 7"):
            load_individuals(p, [10])


class TestAccessibility:
    def test_binary_size(self, tmp_path):
        p = tmp_path / "a.bin"
        save_accessibility_bin(np.arange(6.0).reshape(3, 2), p)
        raw = p.read_bytes()
        assert len(raw) == 69
        assert raw.startswith(ACCESS_MAGIC)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
    def test_csv_and_binary_identical(self, n, j, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(n, j)) * 10.0 ** rng.integers(-5, 5, size=(n, j))
        with tempfile.TemporaryDirectory() as d:
            save_accessibility_bin(m, Path(d) / "a.bin")
            save_accessibility_csv(m, Path(d) / "a.csv")
            a = load_accessibility(Path(d) / "a.bin")
            b = load_accessibility(Path(d) / "a.csv")
        assert a.tobytes() == m.tobytes() == b.tobytes()

    def test_truncated(self, tmp_path):
        p = tmp_path / "a.bin"
        save_accessibility_bin(np.zeros((3, 2)), p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(DataFormatError, match="expected 69 bytes"):
            load_accessibility(p)

    def test_ragged_csv(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(DataFormatError, match=":2"):
            load_accessibility(p)


class TestDatasetRoundTrip:
    def test_exact(self, tmp_path):
        ds = random_dataset(seed=3, n_zones=6, n_people=20, empty=(2,))
        save_dataset(ds, tmp_path)
        assert load_dataset(tmp_path).fingerprint() == ds.fingerprint()

    def test_non_dense_labels(self, tmp_path):
        zones = [Zone(j, float(j), 0.0, (1,) * 7) for j in range(3)]
        people = [Individual(0, 2, 1, 1, 0, 1, 1, 1, 1)]
        ds = build_dataset(zones, people, np.zeros((1, 3)), zone_labels=[100, 7, 42])
        save_dataset(ds, tmp_path)
        text = (tmp_path / "individuals.csv").read_text().splitlines()[1]
        assert text.startswith("0,42,7,")
        back = load_dataset(tmp_path)
        assert back.zone_labels == (100, 7, 42)
        assert back.fingerprint() == ds.fingerprint()

    def test_csv_accessibility_fallback(self, tmp_path):
        ds = random_dataset(seed=4, n_zones=4, n_people=5)
        save_dataset(ds, tmp_path)
        (tmp_path / "accessibility.bin").unlink()
        save_accessibility_csv(ds.accessibility, tmp_path / "accessibility.csv")
        assert load_dataset(tmp_path).fingerprint() == ds.fingerprint()


class TestModelJson:
    def test_nl_without_estimation(self, tmp_path):
        m = NestedLogitModel(NlParams((0.1, -0.2, 0.3, 0.0, 0.5, -0.6), 1.3, 0.4, -0.05))
        save_model(m, tmp_path / "m.json", note="x")
        back, doc = read_model_file(tmp_path / "m.json")
        assert back.params == m.params
        assert doc["note"] == "x"

    def test_nl_with_estimation(self):
        ds = random_dataset(seed=5, n_zones=5, n_people=60)
        est = estimate_nl(ds)
        m = NestedLogitModel(est.params, est)
        d = json.loads(json.dumps(model_to_dict(m)))
        back = model_from_dict(d)
        assert back.params == m.params
        np.testing.assert_array_equal(back.estimation.std_errors, m.estimation.std_errors)
        assert back.estimation.ll_final == m.estimation.ll_final
        assert [r["name"] for r in d["parameters"]][-3:] == ["lambda", "beta_a", "beta_acr"]

    @pytest.mark.parametrize("mode", ["car", "all"])
    def test_neural_bit_exact(self, mode):
        ds = random_dataset(seed=6, n_zones=4, n_people=10)
        spec = FeatureSpec(mode)
        m = init_model(spec, fit_feature_scaler(spec, ds), 4, TrainConfig(hidden_sizes=(5, 3)), Rng(1))
        m.asc[:] = [0.1, -0.2, 0.3, 0.0]
        back = model_from_dict(json.loads(json.dumps(model_to_dict(m))))
        assert back.feature_spec == spec
        for a, b in zip(m.parameters(), back.parameters()):
            assert a.tobytes() == b.tobytes()
        assert back.probabilities(ds).tobytes() == m.probabilities(ds).tobytes()

    def test_oracle(self):
        m = NonlinearOracle(NlParams(), 0.5, -0.1)
        back = model_from_dict(model_to_dict(m))
        assert (back.params, back.gamma, back.delta) == (m.params, 0.5, -0.1)

    def test_unknown_kind(self):
        with pytest.raises(DataFormatError, match="model_kind"):
            model_from_dict({"model_kind": "probit"})
