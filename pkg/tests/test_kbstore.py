import json

import numpy as np
import pytest

from jobpruner.kbstore import (SCHEMA_VERSION, KbEntry, KbError,
                               entry_from_dict, entry_to_dict, load_kb, save,
                               save_record)
from jobpruner.space import (CATEGORICAL, FeasibilityExpr, Job, ParamDomain,
                             SearchSpace, enumerate_points)
from jobpruner.surrogate import fit

from _util import grid_space, record_of


def _sample_record(rec_id="exp-a"):
    space = SearchSpace((ParamDomain("rate", (0.125, 0.25, 0.5)),
                         ParamDomain("mode", ("fast", "safe"), kind=CATEGORICAL)),
                        feasibility=FeasibilityExpr("rate < 0.5"))
    jobs = (Job((0, 0), 0.1), Job((0, 1), 0.7000000000000001), Job((1, 0), -0.3))
    from jobpruner.space import ExperimentRecord
    return ExperimentRecord(id=rec_id, space=space, jobs=jobs)


class TestRoundTrip:
    def test_save_then_load_is_structurally_equal(self, tmp_path):
        record = _sample_record()
        save_record(record, tmp_path, metadata={"app": "demo"})
        entries = load_kb(tmp_path)
        assert len(entries) == 1
        loaded = entries[0].record
        assert loaded.id == record.id
        assert loaded.space == record.space
        assert loaded.jobs == record.jobs
        assert entries[0].metadata == {"app": "demo"}

    def test_float_outputs_round_trip_bit_identically(self, tmp_path):
        rng = np.random.default_rng(0)
        space = grid_space(50)
        outputs = rng.uniform(-1, 1, size=50) * np.pi
        record = record_of(space, [((i,), v) for i, v in enumerate(outputs)], rec_id="floats")
        save_record(record, tmp_path)
        loaded = load_kb(tmp_path)[0].record
        for job, original in zip(loaded.jobs, outputs):
            assert job.output == original  # exact, not approximate

    def test_surrogate_parameters_survive(self, tmp_path):
        record = _sample_record()
        from jobpruner.space import ExperimentRecord
        record = ExperimentRecord(id=record.id, space=record.space, jobs=record.jobs,
                                  surrogate=fit(record.jobs, record.space, k=2))
        save_record(record, tmp_path)
        loaded = load_kb(tmp_path)[0].record
        assert loaded.surrogate is not None
        assert loaded.surrogate.k == 2
        assert loaded.surrogate.predict((1, 1)) == record.surrogate.predict((1, 1))

    def test_dict_round_trip(self):
        entry = KbEntry(SCHEMA_VERSION, _sample_record(), {"note": "x"})
        again = entry_from_dict(entry_to_dict(entry))
        assert again.record.space == entry.record.space
        assert again.record.jobs == entry.record.jobs

    def test_large_record_persists(self, tmp_path):
        space = grid_space(74, 75)  # 5550 points
        points = list(enumerate_points(space))[:5502]
        rng = np.random.default_rng(1)
        record = record_of(space, [(p, v) for p, v in zip(points, rng.uniform(size=5502))],
                           rec_id="big")
        save_record(record, tmp_path)
        assert len(load_kb(tmp_path)[0].record.jobs) == 5502


class TestSave:
    def test_overwrite_keeps_a_single_file(self, tmp_path):
        record = _sample_record()
        save_record(record, tmp_path)
        save_record(record, tmp_path, metadata={"rev": 2})
        files = list(tmp_path.glob("*.json"))
        assert len(files) == 1
        assert load_kb(tmp_path)[0].metadata == {"rev": 2}

    def test_no_leftover_temp_files(self, tmp_path):
        save_record(_sample_record(), tmp_path)
        assert [p.name for p in tmp_path.iterdir()] == ["exp-a.json"]


class TestLoadKb:
    def test_empty_directory(self, tmp_path):
        assert load_kb(tmp_path) == []

    def test_missing_directory(self, tmp_path):
        with pytest.raises(KbError):
            load_kb(tmp_path / "nope")

    def test_malformed_file_is_skipped_with_warning(self, tmp_path, caplog):
        save_record(_sample_record(), tmp_path)
        (tmp_path / "broken.json").write_text("{not json", encoding="utf-8")
        with caplog.at_level("WARNING"):
            entries = load_kb(tmp_path)
        assert len(entries) == 1
        assert any("broken.json" in r.message for r in caplog.records)

    def test_unrecognized_schema_version_is_skipped(self, tmp_path):
        doc = entry_to_dict(KbEntry(SCHEMA_VERSION, _sample_record(), {}))
        doc["version"] = 999
        (tmp_path / "future.json").write_text(json.dumps(doc), encoding="utf-8")
        assert load_kb(tmp_path) == []

    def test_n_saved_entries_all_load(self, tmp_path):
        for i in range(5):
            save_record(_sample_record(rec_id=f"exp-{i}"), tmp_path)
        assert len(load_kb(tmp_path)) == 5
