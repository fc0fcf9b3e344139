import hashlib
import json

import pytest

from unfolding_atlas import SweepJob, henon_family, run_sweep
from unfolding_atlas.sweep import dumps17, finalize, run_cell

FAM = henon_family().to_dict()


def _job(tmp_path, name, shape=(10, 10), task="census", **kw):
    return SweepJob(job_id="h", family=FAM, axes=("a", "b"), rect=(-2.0, 0.5, -0.5, 0.5),
                    shape=shape, task=task, out_dir=str(tmp_path / name), **kw)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_dumps17_is_byte_stable():
    assert dumps17({"b": 0.1, "a": [1.0 / 3.0]}) == '{"a":[0.33333333333333331],"b":0.10000000000000001}'
    assert json.loads(dumps17({"x": float("nan")}).replace("NaN", "null"))["x"] is None


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    path = run_sweep(_job(tmp, "a"))
    return tmp, path


def test_full_sweep_has_one_record_per_cell(full_run):
    _, path = full_run
    lines = path.read_text().splitlines()
    assert len(lines) == 100
    cells = [json.loads(s)["cell"] for s in lines]
    assert cells == list(range(100))
    assert (path.parent / "results.csv").read_text().count("\n") == 101


def test_interrupted_and_resumed_is_byte_identical(full_run):
    tmp, path = full_run
    job = _job(tmp, "b")
    partial = run_sweep(job, max_cells=50)
    assert partial.name == "results.partial.jsonl"
    assert len(job.completed()) == 50
    assert _digest(run_sweep(job)) == _digest(path)


def test_torn_line_reruns_only_that_cell(full_run):
    tmp, path = full_run
    job = _job(tmp, "c")
    run_sweep(job, max_cells=30)
    res = job.path / "results.partial.jsonl"
    data = res.read_bytes()
    res.write_bytes(data[:-25])
    done = job.completed()
    assert len(done) == 29
    assert _digest(run_sweep(job)) == _digest(path)


def test_worker_count_does_not_change_store(full_run):
    tmp, path = full_run
    assert _digest(run_sweep(_job(tmp, "d"), workers=4)) == _digest(path)


def test_empty_rectangle(tmp_path):
    path = run_sweep(_job(tmp_path, "e", shape=(0, 0)))
    assert path.read_text() == ""


def test_cell_rerun_is_deterministic(tmp_path):
    job = _job(tmp_path, "f", task_kw={"jitter": 0.01})
    cell = job.cells()[37]
    assert dumps17(run_cell(job.to_dict(), cell)) == dumps17(run_cell(job.to_dict(), cell))


def test_failed_cell_is_recorded(tmp_path):
    job = _job(tmp_path, "g", shape=(2, 1), task="pd", task_kw={"bracket": [0.0, -1.0]})
    path = run_sweep(job)
    recs = [json.loads(s) for s in path.read_text().splitlines()]
    assert len(recs) == 2
    assert any(r["status"] == "failed" and "error" in r for r in recs)


def test_changed_job_refuses_directory(tmp_path):
    run_sweep(_job(tmp_path, "h", shape=(1, 1)))
    with pytest.raises(ValueError):
        run_sweep(_job(tmp_path, "h", shape=(2, 1)))


def test_finalize_skips_unverified_records(tmp_path):
    job = _job(tmp_path, "i", shape=(2, 1))
    run_sweep(job)
    with open(job.path / "results.partial.jsonl", "a") as fh:
        fh.write('{"cell":0,"status":"ok"}\tdeadbeef\n')
    assert len(finalize(job).read_text().splitlines()) == 2


def test_bad_task_rejected(tmp_path):
    with pytest.raises(ValueError):
        _job(tmp_path, "j", task="bogus")
