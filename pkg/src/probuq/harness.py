"""Concurrent batch evaluation of models, plus JSON-lines reporting.

Models are either builtin analytic functions or external executables.
External commands are templates whose tokens may contain ``{p0}``,
``{p1}``, ... (parameters), ``{c0}``, ... (configuration entries),
``{workdir}`` (a fresh per-request directory) and ``{request_id}``. The
process writes its outputs as comma- or whitespace-separated reals on the
last non-empty stdout line, or into ``output_file`` (relative to the
working directory) when one is configured.

Builtin models (``x`` = parameters, ``c`` = configuration):

``affine_limit_state``      ``beta - a . x`` (``a`` defaults to ``e_1``)
``linear_model``            ``sum_j x_j b_j(c)`` with ``b = [1, c_0, c_1, ...]``
``sum_of_squares``          ``sum x_i^2``
``rosenbrock_log_density``  ``-((1 - x_0)^2 + 100 (x_1 - x_0^2)^2) / 20``
``ishigami``                ``sin x_0 + a sin^2 x_1 + b x_2^4 sin x_0`` (a=7, b=0.1)
``series_system_4branch``   minimum of the four classic branch functions
``step_function``           ``1`` where ``x_0 > location`` else ``0``
``quadratic``               ``height - sum (x - center)^2``
``field_2param``            smooth field on a 1-D grid driven by two parameters
``slow``                    wraps ``inner`` and sleeps ``delay`` seconds
``faulty``                  wraps ``inner``; raises when ``x_0 > fail_above``
"""

from __future__ import annotations

import json
import math
import os
import shlex
import signal
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ModelEvaluationError

SCHEMA_VERSION = "1.0"

# ---------------------------------------------------------------- builtins


def _affine_limit_state(x, c, beta=0.0, coefficients=None):
    a = np.zeros(x.size) if coefficients is None else np.asarray(coefficients, dtype=float)
    if coefficients is None:
        a[0] = 1.0
    return [beta - float(a @ x)]


def _linear_model(x, c, **_):
    basis = np.concatenate([[1.0], np.asarray(c if c is not None else [], dtype=float)])
    k = min(x.size, basis.size)
    return [float(x[:k] @ basis[:k])]


def _sum_of_squares(x, c, **_):
    return [float(x @ x)]


def _rosenbrock_log_density(x, c, **_):
    return [-((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2) / 20.0]


def _ishigami(x, c, a=7.0, b=0.1):
    return [math.sin(x[0]) + a * math.sin(x[1]) ** 2 + b * x[2] ** 4 * math.sin(x[0])]


def _series_system_4branch(x, c, **_):
    x1, x2 = x[0], x[1]
    r2 = math.sqrt(2.0)
    return [min(
        3.0 + 0.1 * (x1 - x2) ** 2 - (x1 + x2) / r2,
        3.0 + 0.1 * (x1 - x2) ** 2 + (x1 + x2) / r2,
        (x1 - x2) + 6.0 / r2,
        (x2 - x1) + 6.0 / r2,
    )]


def _step_function(x, c, location=0.0, low=0.0, high=1.0):
    return [high if x[0] > location else low]


def _quadratic(x, c, center=0.0, height=0.0):
    d = x - np.asarray(center, dtype=float)
    return [height - float(d @ d)]


def field_2param_values(x, n_points=64):
    s = np.linspace(0.0, 1.0, int(n_points))
    p1, p2 = float(x[0]), float(x[1])
    return (1.0 + 0.5 * p1) * np.exp(-((s - 0.5 - 0.2 * p2) ** 2) / 0.08) + 0.3 * p2 * np.sin(np.pi * s) + 0.1 * p1 * s


def _field_2param(x, c, n_points=64):
    return list(field_2param_values(x, n_points))


def _slow(x, c, inner="sum_of_squares", delay=0.01, inner_params=None):
    time.sleep(float(delay))
    return BUILTINS[inner](x, c, **(inner_params or {}))


def _faulty(x, c, inner="sum_of_squares", fail_above=0.0, inner_params=None):
    if x[0] > fail_above:
        raise ModelEvaluationError(f"injected fault at x0={x[0]}")
    return BUILTINS[inner](x, c, **(inner_params or {}))


BUILTINS: dict[str, Callable] = {
    "affine_limit_state": _affine_limit_state,
    "linear_model": _linear_model,
    "sum_of_squares": _sum_of_squares,
    "rosenbrock_log_density": _rosenbrock_log_density,
    "ishigami": _ishigami,
    "series_system_4branch": _series_system_4branch,
    "step_function": _step_function,
    "quadratic": _quadratic,
    "field_2param": _field_2param,
    "slow": _slow,
    "faulty": _faulty,
}

# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "builtin"
    name: str | None = None
    params: dict = field(default_factory=dict)
    command: str | None = None
    output_file: str | None = None
    timeout: float | None = None
    env_passthrough: tuple | None = None

    def __post_init__(self):
        if self.kind == "builtin":
            if self.name not in BUILTINS:
                raise ConfigError(f"unknown builtin model {self.name!r}; valid: {sorted(BUILTINS)}")
        elif self.kind == "external":
            if not self.command or "{" not in self.command:
                raise ConfigError("external command template must contain placeholders such as {p0}")
        else:
            raise ConfigError(f"model kind must be 'builtin' or 'external', got {self.kind!r}")

    @classmethod
    def builtin(cls, name: str, **params) -> "ModelSpec":
        return cls("builtin", name, params)

    @classmethod
    def external(cls, command: str, output_file=None, timeout=None, env_passthrough=None) -> "ModelSpec":
        env = tuple(env_passthrough) if env_passthrough is not None else None
        return cls("external", None, {}, command, output_file, timeout, env)


@dataclass(frozen=True)
class EvaluationRequest:
    request_id: int
    parameters: tuple
    configuration: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "parameters", tuple(float(v) for v in np.atleast_1d(self.parameters)))
        if self.configuration is not None:
            object.__setattr__(self, "configuration",
                               tuple(float(v) for v in np.atleast_1d(self.configuration)))


@dataclass(frozen=True)
class EvaluationRecord:
    request_id: int
    outputs: tuple
    status: str
    wall_time: float = 0.0
    worker_id: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "outputs": [_json_float(v) for v in self.outputs],
            "status": self.status,
            "wall_time": self.wall_time,
            "worker_id": self.worker_id,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationRecord":
        return cls(int(d["request_id"]), tuple(_from_json_float(v) for v in d["outputs"]), d["status"],
                   float(d.get("wall_time", 0.0)), int(d.get("worker_id", 0)), d.get("error"))


def _json_float(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _from_json_float(v):
    return float(v)


# ---------------------------------------------------------------- evaluation


def _parse_reals(text: str) -> tuple:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ModelEvaluationError("model produced no output")
    tokens = lines[-1].replace(",", " ").split()
    return tuple(float(t) for t in tokens)


def _run_external(model: ModelSpec, req: EvaluationRequest) -> tuple:
    with tempfile.TemporaryDirectory(prefix="probuq_") as workdir:
        mapping = {f"p{i}": repr(v) for i, v in enumerate(req.parameters)}
        mapping.update({f"c{i}": repr(v) for i, v in enumerate(req.configuration or ())})
        mapping.update(workdir=workdir, request_id=str(req.request_id))
        try:
            argv = [tok.format(**mapping) for tok in shlex.split(model.command)]
        except (KeyError, IndexError) as exc:
            raise ModelEvaluationError(f"command template references unknown placeholder {exc}") from exc
        env = None
        if model.env_passthrough is not None:
            env = {k: os.environ[k] for k in model.env_passthrough if k in os.environ}
            env.setdefault("PATH", os.environ.get("PATH", ""))
        proc = subprocess.Popen(argv, stdout=subprocess.PIPE, stderr=subprocess.PIPE, cwd=workdir, env=env,
                                start_new_session=True, text=True)
        try:
            out, err = proc.communicate(timeout=model.timeout)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.communicate()
            raise TimeoutError(f"timed out after {model.timeout} s")
        if proc.returncode != 0:
            raise ModelEvaluationError(f"exit status {proc.returncode}: {err.strip()[-500:]}")
        if model.output_file:
            return _parse_reals(Path(workdir, model.output_file.format(**mapping)).read_text())
        return _parse_reals(out)


def evaluate_one(model: ModelSpec, req: EvaluationRequest, worker_id: int = 0) -> EvaluationRecord:
    t0 = time.perf_counter()
    try:
        if model.kind == "builtin":
            x = np.array(req.parameters, dtype=float)
            c = None if req.configuration is None else np.array(req.configuration, dtype=float)
            outputs = tuple(float(v) for v in BUILTINS[model.name](x, c, **model.params))
        else:
            outputs = _run_external(model, req)
        if not all(math.isfinite(v) for v in outputs):
            raise ModelEvaluationError("non-finite model output")
        status, error = "ok", None
    except TimeoutError as exc:
        outputs, status, error = (), "timeout", str(exc)
    except Exception as exc:  # noqa: BLE001 - isolate every per-request failure
        outputs, status, error = (), "failed", f"{type(exc).__name__}: {exc}"
    return EvaluationRecord(req.request_id, outputs, status, time.perf_counter() - t0, worker_id, error)


def evaluate_batch(model: ModelSpec, requests: Sequence[EvaluationRequest], max_concurrency: int = 1) -> list:
    """Evaluate all requests, at most ``max_concurrency`` at a time.

    Records come back in request order. A failure only affects its own record.
    """
    if max_concurrency < 1:
        raise ValueError("max_concurrency must be >= 1")
    ids = [r.request_id for r in requests]
    if len(set(ids)) != len(ids):
        raise ValueError("request ids must be unique within a batch")
    if max_concurrency == 1 or len(requests) <= 1:
        return [evaluate_one(model, r, 0) for r in requests]
    local = threading.local()
    counter = iter(range(1 << 30))
    lock = threading.Lock()

    def work(req):
        if not hasattr(local, "wid"):
            with lock:
                local.wid = next(counter)
        return evaluate_one(model, req, local.wid)

    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        return list(pool.map(work, requests))


class BatchFunction:
    """Expose a model as ``f(X) -> outputs`` for samplers and learners.

    Row ``i`` of ``X`` becomes one request (paired with ``configuration``
    if given). ``failure_policy="nan"`` maps failed records to NaN rows;
    ``"raise"`` raises :class:`ModelEvaluationError`. Returns shape ``(n,)``
    for scalar models and ``(n, m)`` otherwise.
    """

    def __init__(self, model: ModelSpec, max_concurrency: int = 1, failure_policy: str = "nan",
                 configuration=None, recorder: Callable | None = None):
        if failure_policy not in ("nan", "raise"):
            raise ValueError("failure_policy must be 'nan' or 'raise'")
        self.model = model
        self.max_concurrency = max_concurrency
        self.failure_policy = failure_policy
        self.configuration = configuration
        self.recorder = recorder
        self.calls = 0
        self.failures = 0
        self._next_id = 0

    def requests(self, X, configurations=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        reqs = []
        for i, x in enumerate(X):
            c = self.configuration if configurations is None else configurations[i]
            reqs.append(EvaluationRequest(self._next_id, x, c))
            self._next_id += 1
        return reqs

    def evaluate_requests(self, reqs) -> list:
        records = evaluate_batch(self.model, reqs, self.max_concurrency)
        self.calls += len(records)
        bad = [r for r in records if not r.ok]
        self.failures += len(bad)
        if self.recorder is not None:
            self.recorder(records)
        if bad and self.failure_policy == "raise":
            raise ModelEvaluationError(f"request {bad[0].request_id} {bad[0].status}: {bad[0].error}")
        return records

    @staticmethod
    def stack(records) -> np.ndarray:
        width = max((len(r.outputs) for r in records if r.ok), default=1)
        out = np.full((len(records), width), np.nan)
        for i, r in enumerate(records):
            if r.ok:
                out[i, : len(r.outputs)] = r.outputs
        return out[:, 0] if width == 1 else out

    def __call__(self, X, configurations=None) -> np.ndarray:
        return self.stack(self.evaluate_requests(self.requests(X, configurations)))

    def calibration_outputs(self, thetas, configurations) -> np.ndarray:
        """``(P, N_exp)`` outputs of every parameter row at every configuration, one batch."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        C = np.atleast_2d(np.asarray(configurations, dtype=float))
        X = np.repeat(thetas, C.shape[0], axis=0)
        cfgs = np.tile(C, (thetas.shape[0], 1))
        out = self(X, list(cfgs))
        return np.asarray(out, dtype=float).reshape(thetas.shape[0], C.shape[0])


# ---------------------------------------------------------------- reporting


class JsonlReporter:
    """Append-only JSON-lines stream; the first line is a header with ``schema_version``.

    If writing fails, a ``<name>.partial`` marker is created next to the
    destination before the error propagates.
    """

    def __init__(self, destination, stream: str = "records", meta: dict | None = None):
        self.path = Path(destination)
        self._fh = None
        self.stream = stream
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
            self._write({"type": "header", "schema_version": SCHEMA_VERSION, "stream": stream, **(meta or {})})
        except OSError:
            self._mark_partial()
            raise

    def _mark_partial(self):
        try:
            Path(str(self.path) + ".partial").write_text("incomplete\n")
        except OSError:
            pass

    def _write(self, obj):
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")

    def write(self, payload: dict):
        try:
            self._write({"type": self.stream, **payload})
        except OSError:
            self._mark_partial()
            raise

    def write_records(self, records):
        for r in records:
            self.write(r.to_dict())

    def close(self):
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError:
                self._mark_partial()
                raise
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def report_stream(records, destination) -> Path:
    """Write evaluation records as JSON lines after a versioned header."""
    with JsonlReporter(destination, "record") as rep:
        rep.write_records(records)
    return Path(destination)


def read_stream(path) -> tuple[dict, list]:
    """Return ``(header, payloads)``; evaluation records are rebuilt as :class:`EvaluationRecord`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty stream")
    header = json.loads(lines[0])
    if "schema_version" not in header:
        raise ValueError(f"{path}: missing schema_version header")
    out = []
    for ln in lines[1:]:
        d = json.loads(ln)
        kind = d.pop("type", None)
        out.append(EvaluationRecord.from_dict(d) if kind == "record" else d)
    return header, out


def batch_totals(records) -> dict:
    statuses = [r.status for r in records]
    return {
        "requests": len(records),
        "ok": statuses.count("ok"),
        "failed": statuses.count("failed"),
        "timeout": statuses.count("timeout"),
    }


def write_summary(path, config: dict, seed: int | None, totals: dict, results: dict | None = None,
                  run_info: dict | None = None) -> Path:
    """Summary JSON. Everything except ``run`` (timestamps, wall times, paths) is reproducible."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "seed": seed,
        "totals": totals,
        "results": results or {},
        "run": run_info or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return [_json_float(v) for v in o.ravel()] if o.ndim <= 1 else [_json_default(r) for r in o]
    if isinstance(o, (np.floating,)):
        return _json_float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
