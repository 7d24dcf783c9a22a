"""Simulation harness and pass@k scoring.

Candidate Verilog is compiled and run against a task's testbench with an
external toolchain described by command templates. Correctness is judged by
comparing the run's monitored-output transcript against the transcript the
reference design produces under the same testbench: testbenches print one
line per sampled cycle, so the two transcripts align by line index.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field


class ToolchainMissing(RuntimeError):
    """The configured compiler or runner binary cannot be found."""


class DomainError(ValueError):
    """pass@k arguments outside 0 <= c <= n, 1 <= k <= n."""


class EmptyInput(ValueError):
    """An aggregate was requested over no samples."""


_PLACEHOLDERS = ("{design}", "{tb}", "{out}")


@dataclass(frozen=True)
class ToolchainConfig:
    """External simulator invocation templates.

    ``compile_cmd`` and ``run_cmd`` are shell-style token lists after
    substituting {design}, {tb} and {out}. ``env`` entries overlay the
    inherited environment.
    """

    compile_cmd: str = "iverilog -g2005 -o {out} {design} {tb}"
    run_cmd: str = "vvp {out}"
    env: dict[str, str] = field(default_factory=dict)
    compile_timeout_ms: int = 30_000
    keep_artifacts: bool = False
    workers: int = 4

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if "{out}" not in self.compile_cmd:
            raise ValueError("compile_cmd must reference {out}")
        if "{out}" not in self.run_cmd:
            raise ValueError("run_cmd must reference {out}")

    @classmethod
    def from_file(cls, path: str) -> "ToolchainConfig":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        allowed = {
            "compile_cmd", "run_cmd", "env", "compile_timeout_ms",
            "keep_artifacts", "workers",
        }
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown toolchain config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def echo(cls, **overrides) -> "ToolchainConfig":
        """The bundled text-echo pseudo-simulator (see cruxkit.echosim)."""
        py = shlex.quote(sys.executable)
        return cls(
            compile_cmd=f"{py} -m cruxkit.echosim compile {{out}} {{design}} {{tb}}",
            run_cmd=f"{py} -m cruxkit.echosim run {{out}}",
            **overrides,
        )

    def binaries(self) -> tuple[str, str]:
        return shlex.split(self.compile_cmd)[0], shlex.split(self.run_cmd)[0]

    def available(self) -> bool:
        return all(shutil.which(b) is not None for b in self.binaries())

    def check_available(self) -> None:
        for binary in self.binaries():
            if shutil.which(binary) is None:
                raise ToolchainMissing(f"toolchain binary not found: {binary!r}")


@dataclass(frozen=True)
class SimJob:
    design_source: str
    testbench_source: str
    top_module: str = ""
    timeout_ms: int = 10_000

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if not self.design_source.strip() or not self.testbench_source.strip():
            raise EmptyInput("design and testbench sources must be nonempty")


@dataclass(frozen=True)
class SimOutcome:
    """Result of one compile+run. ``match_fraction`` is set iff the run
    completed; a run scored without reference lines matches itself (1.0)."""

    compile_ok: bool
    ran_ok: bool
    stdout_lines: tuple[str, ...] = ()
    match_fraction: float | None = None
    wall_ms: int = 0
    timed_out: bool = False
    returncode: int | None = None
    log: str = ""
    scratch_dir: str = ""

    def __post_init__(self) -> None:
        if self.ran_ok and not self.compile_ok:
            raise ValueError("ran_ok requires compile_ok")
        if (self.match_fraction is not None) != self.ran_ok:
            raise ValueError("match_fraction must be present iff ran_ok")
        if self.match_fraction is not None and not 0.0 <= self.match_fraction <= 1.0:
            raise ValueError("match_fraction must be in [0,1]")


def normalize_line(line: str) -> str:
    return " ".join(line.split())


def match_outputs(candidate_lines: list[str], reference_lines: list[str]) -> float:
    """Fraction of reference lines the candidate reproduces, position by
    position after whitespace normalization. A short candidate counts its
    missing lines as mismatches; extra candidate lines are ignored."""
    if not reference_lines:
        return 1.0 if not candidate_lines else 0.0
    hits = 0
    for i, ref in enumerate(reference_lines):
        if i < len(candidate_lines) and normalize_line(candidate_lines[i]) == normalize_line(ref):
            hits += 1
    return hits / len(reference_lines)


def _render_cmd(template: str, design: str, tb: str, out: str) -> list[str]:
    return [tok.format(design=design, tb=tb, out=out) for tok in shlex.split(template)]


def run_sim(
    job: SimJob,
    toolchain: ToolchainConfig = ToolchainConfig(),
    reference_lines: list[str] | None = None,
) -> SimOutcome:
    """Compile and run one design+testbench pair in a fresh scratch directory.

    When ``reference_lines`` is given, ``match_fraction`` scores the run's
    transcript against it; without it a completed run scores 1.0 (used when
    producing the reference transcript itself). Compile failures, crashes and
    timeouts are outcomes, not exceptions; only a missing toolchain raises.
    """
    toolchain.check_available()
    scratch = tempfile.mkdtemp(prefix="cruxsim-")
    design_path = os.path.join(scratch, "design.v")
    tb_path = os.path.join(scratch, "tb.v")
    out_path = os.path.join(scratch, "sim.image")
    with open(design_path, "w", encoding="utf-8") as f:
        f.write(job.design_source)
    with open(tb_path, "w", encoding="utf-8") as f:
        f.write(job.testbench_source)
    env = {**os.environ, **toolchain.env}
    started = time.perf_counter()

    def _elapsed_ms() -> int:
        return int((time.perf_counter() - started) * 1000)

    def _finish(outcome: SimOutcome) -> SimOutcome:
        if not toolchain.keep_artifacts:
            shutil.rmtree(scratch, ignore_errors=True)
        return outcome

    try:
        try:
            compiled = subprocess.run(
                _render_cmd(toolchain.compile_cmd, design_path, tb_path, out_path),
                cwd=scratch,
                env=env,
                capture_output=True,
                text=True,
                timeout=toolchain.compile_timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            return _finish(
                SimOutcome(
                    compile_ok=False, ran_ok=False, wall_ms=_elapsed_ms(),
                    timed_out=True, log="compile timed out", scratch_dir=scratch,
                )
            )
        if compiled.returncode != 0:
            return _finish(
                SimOutcome(
                    compile_ok=False, ran_ok=False, wall_ms=_elapsed_ms(),
                    returncode=compiled.returncode,
                    log=(compiled.stderr or compiled.stdout)[-4000:],
                    scratch_dir=scratch,
                )
            )
        try:
            ran = subprocess.run(
                _render_cmd(toolchain.run_cmd, design_path, tb_path, out_path),
                cwd=scratch,
                env=env,
                capture_output=True,
                text=True,
                timeout=job.timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            return _finish(
                SimOutcome(
                    compile_ok=True, ran_ok=False, wall_ms=_elapsed_ms(),
                    timed_out=True, log="run timed out", scratch_dir=scratch,
                )
            )
        lines = tuple(ran.stdout.splitlines())
        if ran.returncode != 0:
            return _finish(
                SimOutcome(
                    compile_ok=True, ran_ok=False, stdout_lines=lines,
                    wall_ms=_elapsed_ms(), returncode=ran.returncode,
                    log=ran.stderr[-4000:], scratch_dir=scratch,
                )
            )
        fraction = match_outputs(
            list(lines), reference_lines if reference_lines is not None else list(lines)
        )
        return _finish(
            SimOutcome(
                compile_ok=True, ran_ok=True, stdout_lines=lines,
                match_fraction=fraction, wall_ms=_elapsed_ms(),
                returncode=0, scratch_dir=scratch,
            )
        )
    except FileNotFoundError as exc:
        shutil.rmtree(scratch, ignore_errors=True)
        raise ToolchainMissing(str(exc)) from exc


def run_many(
    jobs: list[SimJob],
    toolchain: ToolchainConfig = ToolchainConfig(),
    reference_lines: list[list[str] | None] | None = None,
) -> list[SimOutcome]:
    """Run jobs on a bounded worker pool, preserving order."""
    refs = reference_lines if reference_lines is not None else [None] * len(jobs)
    if len(refs) != len(jobs):
        raise ValueError("reference_lines length must match jobs")
    with ThreadPoolExecutor(max_workers=toolchain.workers) as pool:
        futures = [
            pool.submit(run_sim, job, toolchain, ref) for job, ref in zip(jobs, refs)
        ]
        return [f.result() for f in futures]


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased probability that at least one of k samples drawn without
    replacement from n (of which c are correct) is correct.

    Computed in product form: 1 - prod_{i=n-c+1..n} (1 - k/i). Exactly 0.0
    when c == 0 and exactly 1.0 when n - c < k.
    """
    if not isinstance(n, int) or not isinstance(c, int) or not isinstance(k, int):
        raise DomainError("n, c, k must be integers")
    if n < 1 or not 0 <= c <= n or not 1 <= k <= n:
        raise DomainError(f"need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    prod = 1.0
    for i in range(n - c + 1, n + 1):
        prod *= 1.0 - k / i
    return 1.0 - prod


@dataclass(frozen=True)
class TaskTally:
    n: int
    c: int

    def __post_init__(self) -> None:
        if self.n < 0 or not 0 <= self.c <= self.n:
            raise ValueError(f"need 0 <= c <= n, got n={self.n} c={self.c}")


@dataclass
class PassAtKReport:
    per_task: dict[str, TaskTally]
    k_values: tuple[int, ...]
    estimates: dict[tuple[str, int], float | None]
    aggregate: dict[int, float]
    warnings: list[str] = field(default_factory=list)


def aggregate_report(
    samples: dict[str, list[SimOutcome]],
    threshold: float = 1.0,
    k_values: tuple[int, ...] = (1, 5, 10),
) -> PassAtKReport:
    """Tally outcomes per task and estimate pass@k.

    A sample is correct when it ran and its match_fraction meets the
    threshold. Tasks with no samples score 0 with a warning; a k larger than
    a task's sample count cannot be estimated (None) and is left out of that
    k's aggregate.
    """
    if not samples:
        raise EmptyInput("no tasks to aggregate")
    if not k_values or any(k < 1 for k in k_values):
        raise DomainError("k_values must be positive")
    per_task: dict[str, TaskTally] = {}
    estimates: dict[tuple[str, int], float | None] = {}
    warnings: list[str] = []
    for task_id, outcomes in samples.items():
        n = len(outcomes)
        c = sum(
            1
            for o in outcomes
            if o.ran_ok and o.match_fraction is not None and o.match_fraction >= threshold
        )
        per_task[task_id] = TaskTally(n, c)
        for k in k_values:
            if n == 0:
                estimates[(task_id, k)] = 0.0
            elif k > n:
                estimates[(task_id, k)] = None
            else:
                estimates[(task_id, k)] = pass_at_k(n, c, k)
        if n == 0:
            warnings.append(f"task {task_id!r} has no samples; scored 0")
        elif any(k > n for k in k_values):
            warnings.append(f"task {task_id!r} has n={n} < max k; those k skipped")
    aggregate: dict[int, float] = {}
    for k in k_values:
        values = [
            est for (tid, kk), est in estimates.items() if kk == k and est is not None
        ]
        aggregate[k] = math.fsum(values) / len(values) if values else 0.0
    return PassAtKReport(per_task, tuple(k_values), estimates, aggregate, warnings)


def report_rows(report: PassAtKReport) -> list[dict]:
    rows = []
    for task_id in sorted(report.per_task):
        tally = report.per_task[task_id]
        row = {"task_id": task_id, "n": tally.n, "c": tally.c}
        for k in report.k_values:
            est = report.estimates[(task_id, k)]
            row[f"pass@{k}"] = est
        rows.append(row)
    return rows


def report_table(report: PassAtKReport) -> str:
    """Plain-text summary table."""
    header = ["task", "n", "c"] + [f"pass@{k}" for k in report.k_values]
    lines = ["\t".join(header)]
    for row in report_rows(report):
        cells = [str(row["task_id"]), str(row["n"]), str(row["c"])]
        for k in report.k_values:
            est = row[f"pass@{k}"]
            cells.append("-" if est is None else f"{est:.4f}")
        lines.append("\t".join(cells))
    agg_cells = ["aggregate", "", ""]
    for k in report.k_values:
        agg_cells.append(f"{report.aggregate[k]:.4f}")
    lines.append("\t".join(agg_cells))
    for w in report.warnings:
        lines.append(f"# warning: {w}")
    return "\n".join(lines) + "\n"


def report_csv(report: PassAtKReport) -> str:
    header = ["task_id", "n", "c"] + [f"pass@{k}" for k in report.k_values]
    lines = [",".join(header)]
    for row in report_rows(report):
        cells = [str(row["task_id"]), str(row["n"]), str(row["c"])]
        for k in report.k_values:
            est = row[f"pass@{k}"]
            cells.append("" if est is None else repr(est))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
