import json
import math
import sys
import time

import numpy as np
import pytest

from probuq.errors import ConfigError, ModelEvaluationError
from probuq.harness import (
    SCHEMA_VERSION,
    BatchFunction,
    EvaluationRecord,
    EvaluationRequest,
    JsonlReporter,
    ModelSpec,
    batch_totals,
    evaluate_batch,
    evaluate_one,
    read_stream,
    report_stream,
    write_summary,
)

PY = sys.executable


def _reqs(rows, configs=None):
    return [EvaluationRequest(i, r, None if configs is None else configs[i]) for i, r in enumerate(rows)]


def test_sum_of_squares_example():
    recs = evaluate_batch(ModelSpec.builtin("sum_of_squares"), _reqs([(1, 2), (0, 0)]))
    assert [r.outputs for r in recs] == [(5.0,), (0.0,)]
    assert all(r.ok for r in recs)


def test_builtin_examples():
    def one(name, x, c=None, **p):
        return evaluate_one(ModelSpec.builtin(name, **p), EvaluationRequest(0, x, c)).outputs[0]

    assert one("rosenbrock_log_density", [1.0, 1.0]) == 0.0
    assert one("rosenbrock_log_density", [0.0, 0.0]) < 0.0
    assert one("affine_limit_state", [1.0, 5.0], beta=3.0) == 2.0
    assert one("affine_limit_state", [1.0, 1.0], beta=3.0, coefficients=[1.0, 2.0]) == 0.0
    assert one("ishigami", [0.0, 0.0, 0.0]) == 0.0
    assert one("ishigami", [math.pi / 2, math.pi / 2, 1.0]) == pytest.approx(1 + 7 + 0.1)
    assert one("linear_model", [1.0, 2.0], [3.0]) == 7.0
    assert one("step_function", [0.1]) == 1.0 and one("step_function", [-0.1]) == 0.0
    assert one("quadratic", [1.0, 1.0], center=[1.0, 0.0], height=2.0) == 1.0
    assert one("series_system_4branch", [0.0, 0.0]) == pytest.approx(3.0)
    out = evaluate_one(ModelSpec.builtin("field_2param", n_points=16), EvaluationRequest(0, [0.1, 0.2])).outputs
    assert len(out) == 16


def test_unknown_builtin_and_bad_template():
    with pytest.raises(ConfigError):
        ModelSpec.builtin("nope")
    with pytest.raises(ConfigError):
        ModelSpec.external("echo 1")
    with pytest.raises(ConfigError):
        ModelSpec("remote", "x")


def test_faulty_model_isolated():
    m = ModelSpec.builtin("faulty", fail_above=0.5)
    recs = evaluate_batch(m, _reqs([(0.0, 1.0), (1.0, 1.0), (0.2, 0.0)]), max_concurrency=3)
    assert [r.status for r in recs] == ["ok", "failed", "ok"]
    assert "injected fault" in recs[1].error
    assert batch_totals(recs) == {"requests": 3, "ok": 2, "failed": 1, "timeout": 0}


def test_concurrency_preserves_results_and_order(rng):
    X = rng.standard_normal((24, 2))
    m = ModelSpec.builtin("slow", delay=0.02)
    t0 = time.perf_counter()
    serial = evaluate_batch(m, _reqs(X), 1)
    t1 = time.perf_counter()
    parallel = evaluate_batch(m, _reqs(X), 8)
    t2 = time.perf_counter()
    assert [r.outputs for r in serial] == [r.outputs for r in parallel]
    assert [r.request_id for r in parallel] == list(range(24))
    assert t2 - t1 < t1 - t0
    assert len({r.worker_id for r in parallel}) > 1


def test_batch_validation():
    m = ModelSpec.builtin("sum_of_squares")
    assert evaluate_batch(m, []) == []
    with pytest.raises(ValueError):
        evaluate_batch(m, _reqs([(1.0,)]), max_concurrency=0)
    with pytest.raises(ValueError):
        evaluate_batch(m, [EvaluationRequest(0, [1.0]), EvaluationRequest(0, [2.0])])


def test_external_command_templating(tmp_path):
    script = tmp_path / "m.py"
    script.write_text("import sys\nprint('noise line')\nprint(float(sys.argv[1]) * float(sys.argv[2]), 7)\n")
    m = ModelSpec.external(f"{PY} {script} {{p0}} {{c0}}")
    recs = evaluate_batch(m, _reqs([(2.0,), (3.0,)], [(5.0,), (0.5,)]), 2)
    assert [r.outputs for r in recs] == [(10.0, 7.0), (1.5, 7.0)]


def test_external_output_file(tmp_path):
    script = tmp_path / "m.py"
    script.write_text("import sys, pathlib\npathlib.Path(sys.argv[2], 'out.txt').write_text(sys.argv[1] + ',1')\n")
    m = ModelSpec.external(f"{PY} {script} {{p0}} {{workdir}}", output_file="out.txt")
    assert evaluate_one(m, EvaluationRequest(0, [4.0])).outputs == (4.0, 1.0)


def test_external_failure_and_timeout(tmp_path):
    bad = tmp_path / "bad.py"
    bad.write_text("import sys\nsys.stderr.write('broken')\nsys.exit(3)\n")
    rec = evaluate_one(ModelSpec.external(f"{PY} {bad} {{p0}}"), EvaluationRequest(0, [1.0]))
    assert rec.status == "failed" and "exit status 3" in rec.error
    slow = tmp_path / "slow.py"
    slow.write_text("import time\ntime.sleep(30)\n")
    t0 = time.perf_counter()
    rec = evaluate_one(ModelSpec.external(f"{PY} {slow} {{p0}}", timeout=0.5), EvaluationRequest(1, [1.0]))
    assert rec.status == "timeout"
    assert time.perf_counter() - t0 < 0.5 + 1.0
    rec = evaluate_one(ModelSpec.external(f"{PY} {bad} {{p7}}"), EvaluationRequest(2, [1.0]))
    assert rec.status == "failed" and "placeholder" in rec.error


def test_batch_function_policies():
    f = BatchFunction(ModelSpec.builtin("faulty", fail_above=0.0))
    out = f(np.array([[-1.0], [1.0]]))
    assert out[0] == 1.0 and math.isnan(out[1])
    assert f.calls == 2 and f.failures == 1
    strict = BatchFunction(ModelSpec.builtin("faulty", fail_above=0.0), failure_policy="raise")
    with pytest.raises(ModelEvaluationError):
        strict(np.array([[1.0]]))
    g = BatchFunction(ModelSpec.builtin("linear_model"))
    np.testing.assert_array_equal(g.calibration_outputs([[1.0, 2.0], [0.0, 1.0]], [[1.0], [3.0]]),
                                  [[3.0, 7.0], [1.0, 3.0]])


def test_report_stream_round_trip(tmp_path):
    recs = [EvaluationRecord(0, (1.5, -math.inf), "ok", 0.1, 2), EvaluationRecord(1, (), "failed", 0.0, 0, "x")]
    path = report_stream(recs, tmp_path / "r.jsonl")
    header, back = read_stream(path)
    assert header["schema_version"] == SCHEMA_VERSION
    assert back == recs
    empty = report_stream([], tmp_path / "e.jsonl")
    assert read_stream(empty)[1] == []
    (tmp_path / "bad.jsonl").write_text(json.dumps({"type": "header"}) + "\n")
    with pytest.raises(ValueError):
        read_stream(tmp_path / "bad.jsonl")


def test_reporter_marks_partial_on_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        JsonlReporter(blocker / "sub" / "r.jsonl")


def test_summary_layout(tmp_path):
    path = write_summary(tmp_path / "s.json", {"a": 1}, 3, {"requests": 0}, {"x": np.array([1.0, np.nan])},
                         {"t": 1})
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == SCHEMA_VERSION
    assert doc["results"]["x"] == [1.0, "nan"]
    assert set(doc) == {"schema_version", "config", "seed", "totals", "results", "run"}
