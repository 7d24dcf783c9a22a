"""End-to-end command-line runs on the bundled corpora, fully offline."""

import json
import math
from pathlib import Path

import pytest
from click.testing import CliRunner

from cruxkit.cli import main

TOY = Path(__file__).resolve().parents[1] / "src" / "cruxkit" / "data" / "toy_corpus"
CAT12 = Path(__file__).resolve().parents[1] / "src" / "cruxkit" / "data" / "categorize12"


def run_cli(*args, **kwargs):
    return CliRunner().invoke(main, [str(a) for a in args], **kwargs)


def read_jsonl(path):
    rows = [json.loads(line) for line in Path(path).read_text().splitlines()]
    meta = rows[0]["meta"] if rows and set(rows[0]) == {"meta"} else None
    return meta, [r for r in rows if set(r) != {"meta"}]


@pytest.fixture()
def echo_toolchain_file(tmp_path):
    from cruxkit.harness import ToolchainConfig

    echo = ToolchainConfig.echo()
    path = tmp_path / "toolchain.json"
    path.write_text(json.dumps({"compile_cmd": echo.compile_cmd, "run_cmd": echo.run_cmd}))
    return path


class TestCategorize:
    def test_golden_twelve(self, tmp_path):
        out = tmp_path / "cat.jsonl"
        result = run_cli(
            "categorize",
            "--input", CAT12 / "pairs.jsonl",
            "--verdicts", CAT12 / "verdicts.jsonl",
            "--output", out,
        )
        assert result.exit_code == 0, result.output
        golden = json.loads((CAT12 / "golden.json").read_text())
        meta, rows = read_jsonl(out)
        assert meta is not None and "config_sha256" in meta
        got = {r["id"]: r["category"] for r in rows}
        assert got == golden["categories"]
        counts = {c: sum(1 for v in got.values() if v == c) for c in set(got.values())}
        assert counts == golden["counts"]

    def test_missing_verdict_is_config_error(self, tmp_path):
        verdicts = tmp_path / "v.jsonl"
        verdicts.write_text('{"id": "adder01", "passed": true}\n')
        result = run_cli(
            "categorize",
            "--input", CAT12 / "pairs.jsonl",
            "--verdicts", verdicts,
            "--output", tmp_path / "cat.jsonl",
        )
        assert result.exit_code == 2
        assert "verdict" in result.stderr

    def test_missing_input_exit_code(self, tmp_path):
        result = run_cli(
            "categorize",
            "--input", tmp_path / "nope.jsonl",
            "--verdicts", CAT12 / "verdicts.jsonl",
            "--output", tmp_path / "cat.jsonl",
        )
        assert result.exit_code == 2

    def test_reruns_byte_identical(self, tmp_path):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            out = tmp_path / name
            run_cli(
                "categorize",
                "--input", CAT12 / "pairs.jsonl",
                "--verdicts", CAT12 / "verdicts.jsonl",
                "--output", out,
            )
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


@pytest.fixture()
def categorized_toy(tmp_path):
    out = tmp_path / "categorized.jsonl"
    result = run_cli(
        "categorize",
        "--input", TOY / "pairs.jsonl",
        "--verdicts", TOY / "verdicts.jsonl",
        "--output", out,
    )
    assert result.exit_code == 0, result.output
    return out


class TestDeriveCrux:
    def test_emit_bundles_for_non_easy(self, tmp_path, categorized_toy):
        out = tmp_path / "bundles.jsonl"
        result = run_cli("derive-crux", "--input", categorized_toy, "--emit", out)
        assert result.exit_code == 0, result.output
        _, rows = read_jsonl(out)
        # 2 Normal + 1 Special in the toy corpus
        assert len(rows) == 3
        stages = {r["task_id"]: [p["stage"] for p in r["prompts"]] for r in rows}
        assert stages["ece241_2013_q8"] == ["circuit_parse", "validate"]
        assert stages["dff8p"] == ["extract"]

    def test_live_matches_bundled_transcripts(self, tmp_path, categorized_toy):
        out = tmp_path / "transcripts.jsonl"
        result = run_cli(
            "derive-crux",
            "--input", categorized_toy,
            "--live",
            "--mock-provider", TOY / "mock_provider.json",
            "--output", out,
        )
        assert result.exit_code == 0, result.output
        _, live = read_jsonl(out)
        _, bundled = read_jsonl(TOY / "transcripts.jsonl")
        key = lambda r: (r["id"], r["stage"])
        assert {key(r): r["text"] for r in live} == {key(r): r["text"] for r in bundled}

    def test_needs_a_mode(self, categorized_toy):
        result = run_cli("derive-crux", "--input", categorized_toy)
        assert result.exit_code == 2


class TestBuildDataset:
    def test_full_toy_build(self, tmp_path, categorized_toy):
        records = tmp_path / "records.jsonl"
        recl = tmp_path / "recl.jsonl"
        result = run_cli(
            "build-dataset",
            "--input", categorized_toy,
            "--transcripts", TOY / "transcripts.jsonl",
            "--output", records,
            "--reclassified", recl,
        )
        assert result.exit_code == 0, result.output
        _, rows = read_jsonl(records)
        _, reclassified = read_jsonl(recl)
        assert len(rows) == 5
        assert reclassified == []
        by_id = {r["id"]: r for r in rows}
        assert by_id["ece241_2013_q8"]["category"] == "SpecialNonText"
        # Special realspecs carry the diagram, not the original description
        assert "State transitions" in by_id["ece241_2013_q8"]["realspec"]
        for row in rows:
            assert "Module name:" in row["realspec"]
            assert row["crux"].startswith("## Module Interface")
            assert row["provenance"]["master_seed"] == 0

    def test_missing_transcript_reclassifies(self, tmp_path, categorized_toy):
        records = tmp_path / "records.jsonl"
        recl = tmp_path / "recl.jsonl"
        result = run_cli(
            "build-dataset",
            "--input", categorized_toy,
            "--output", records,
            "--reclassified", recl,
        )
        assert result.exit_code == 0, result.output
        _, rows = read_jsonl(records)
        _, reclassified = read_jsonl(recl)
        # only the two Easy tasks survive without transcripts
        assert {r["id"] for r in rows} == {"clkgenerator", "mux2to1"}
        assert {r["id"] for r in reclassified} == {"dff8p", "ece241_2013_q8", "count4"}
        assert all(r["to"] == "NormalData" for r in reclassified)

    def test_seed_changes_realspec_sampling(self, tmp_path, categorized_toy):
        texts = {}
        for seed in (0, 1):
            out = tmp_path / f"records{seed}.jsonl"
            run_cli(
                "--seed", seed,
                "build-dataset",
                "--input", categorized_toy,
                "--transcripts", TOY / "transcripts.jsonl",
                "--output", out,
            )
            _, rows = read_jsonl(out)
            texts[seed] = {r["id"]: r["realspec"] for r in rows}
        assert texts[0] != texts[1]

    def test_rerun_byte_identical(self, tmp_path, categorized_toy):
        blobs = []
        for name in ("r1.jsonl", "r2.jsonl"):
            out = tmp_path / name
            run_cli(
                "build-dataset",
                "--input", categorized_toy,
                "--transcripts", TOY / "transcripts.jsonl",
                "--output", out,
            )
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]


def write_candidates(tmp_path, pairs_rows):
    path = tmp_path / "candidates.jsonl"
    with open(path, "w") as f:
        for row in pairs_rows:
            broken = row["reference_code"].replace("endmodule", "SYNTAX_ERROR\nendmodule")
            f.write(json.dumps({"task_id": row["id"], "candidates": [row["reference_code"], broken]}) + "\n")
    return path


class TestEvaluate:
    def test_pass_at_k_over_toy_corpus(self, tmp_path, echo_toolchain_file):
        _, pairs = read_jsonl(TOY / "pairs.jsonl")
        candidates = write_candidates(tmp_path, pairs)
        outdir = tmp_path / "eval"
        result = run_cli(
            "evaluate",
            "--tasks", TOY / "pairs.jsonl",
            "--candidates", candidates,
            "--testbenches", TOY / "testbenches",
            "--toolchain", echo_toolchain_file,
            "--output-dir", outdir,
            "-k", 1, "-k", 2,
        )
        assert result.exit_code == 0, result.output
        _, per_task = read_jsonl(outdir / "per_task.jsonl")
        for row in per_task:
            assert (row["n"], row["c"]) == (2, 1)
            assert row["pass@1"] == pytest.approx(0.5)
            assert row["pass@2"] == pytest.approx(1.0)
        meta, outcomes = read_jsonl(outdir / "outcomes.jsonl")
        assert meta["k_values"] == [1, 2]
        assert len(outcomes) == 10
        compiled = [o for o in outcomes if o["compile_ok"]]
        assert len(compiled) == 5
        assert (outdir / "summary.txt").exists()
        assert (outdir / "summary.csv").exists()

    def test_unknown_task_in_candidates(self, tmp_path, echo_toolchain_file):
        candidates = tmp_path / "c.jsonl"
        candidates.write_text(json.dumps({"task_id": "ghost", "candidates": ["module m; endmodule"]}) + "\n")
        result = run_cli(
            "evaluate",
            "--tasks", TOY / "pairs.jsonl",
            "--candidates", candidates,
            "--testbenches", TOY / "testbenches",
            "--toolchain", echo_toolchain_file,
            "--output-dir", tmp_path / "eval",
        )
        assert result.exit_code == 2
        assert "ghost" in result.stderr

    def test_missing_simulator_exits_before_work(self, tmp_path):
        tc = tmp_path / "tc.json"
        tc.write_text(json.dumps({
            "compile_cmd": "missing-sim {out} {design} {tb}",
            "run_cmd": "missing-sim-run {out}",
        }))
        _, pairs = read_jsonl(TOY / "pairs.jsonl")
        candidates = write_candidates(tmp_path, pairs)
        outdir = tmp_path / "eval"
        result = run_cli(
            "evaluate",
            "--tasks", TOY / "pairs.jsonl",
            "--candidates", candidates,
            "--testbenches", TOY / "testbenches",
            "--toolchain", tc,
            "--output-dir", outdir,
        )
        assert result.exit_code == 2
        assert not (outdir / "per_task.jsonl").exists()

    def test_rerun_byte_identical(self, tmp_path, echo_toolchain_file):
        _, pairs = read_jsonl(TOY / "pairs.jsonl")
        candidates = write_candidates(tmp_path, pairs)
        blobs = []
        for name in ("e1", "e2"):
            outdir = tmp_path / name
            run_cli(
                "evaluate",
                "--tasks", TOY / "pairs.jsonl",
                "--candidates", candidates,
                "--testbenches", TOY / "testbenches",
                "--toolchain", echo_toolchain_file,
                "--output-dir", outdir,
                "-k", 1,
            )
            blobs.append(b"".join(
                (outdir / n).read_bytes()
                for n in ("outcomes.jsonl", "per_task.jsonl", "summary.txt", "summary.csv")
            ))
        assert blobs[0] == blobs[1]


def payload(logprobs):
    return {"tokens": list(range(len(logprobs))), "logprobs": list(logprobs)}


def write_groups(tmp_path, pairs, step):
    path = tmp_path / "groups.jsonl"
    ln_half = math.log(0.5)
    with open(path, "w") as f:
        for row in pairs:
            good = row["reference_code"]
            broken = good.replace("endmodule", "SYNTAX_ERROR\nendmodule")
            rollouts = [
                {
                    "crux_text": "## Module Interface\n", "code_text": good,
                    "logprobs_new": payload([-0.1]), "logprobs_old": payload([-0.1]),
                    "crux_score": payload([ln_half, ln_half]),
                },
                {
                    "crux_text": "", "code_text": broken,
                    "logprobs_new": payload([-0.2, -0.2]),
                    "logprobs_old": payload([-0.2, -0.2]),
                    "crux_score": payload([ln_half]),
                },
            ]
            f.write(json.dumps({"task_id": row["id"], "step": step, "rollouts": rollouts}) + "\n")
    return path


class TestReward:
    def test_scores_and_objective(self, tmp_path, echo_toolchain_file):
        _, pairs = read_jsonl(TOY / "pairs.jsonl")
        groups = write_groups(tmp_path, pairs[:2], step=0)
        out = tmp_path / "rewarded.jsonl"
        result = run_cli(
            "reward",
            "--groups", groups,
            "--tasks", TOY / "pairs.jsonl",
            "--testbenches", TOY / "testbenches",
            "--toolchain", echo_toolchain_file,
            "--output", out,
        )
        assert result.exit_code == 0, result.output
        _, rows = read_jsonl(out)
        assert len(rows) == 2
        for row in rows:
            good, bad = row["rewards"]
            assert good["compile_r"] == 1.0
            assert good["code_r"] == 1.0
            assert good["crux_r"] == pytest.approx(0.5)
            assert bad["compile_r"] == 0.0
            assert bad["code_r"] == 0.0
            assert good["mixed"] > bad["mixed"]
            assert row["advantages"][0] > 0 > row["advantages"][1]
            # theta == theta_old: surrogate equals the advantage mean, zero clipping
            assert row["objective"]["surrogate"] == pytest.approx(
                sum(row["advantages"]) / 2, abs=1e-12
            )
            assert row["objective"]["clip_fraction"] == 0.0
        assert "mean mixed reward" in result.output

    def test_late_phase_weights_applied(self, tmp_path, echo_toolchain_file):
        _, pairs = read_jsonl(TOY / "pairs.jsonl")
        out_by_step = {}
        for step in (0, 52):
            groups = write_groups(tmp_path, pairs[:1], step=step)
            out = tmp_path / f"rewarded{step}.jsonl"
            result = run_cli(
                "reward",
                "--groups", groups,
                "--tasks", TOY / "pairs.jsonl",
                "--testbenches", TOY / "testbenches",
                "--toolchain", echo_toolchain_file,
                "--output", out,
            )
            assert result.exit_code == 0, result.output
            _, rows = read_jsonl(out)
            out_by_step[step] = rows[0]["rewards"][0]
        assert out_by_step[0]["weights_phase"] == "early"
        assert out_by_step[52]["weights_phase"] == "late"
        # same parts, different weights
        assert out_by_step[0]["mixed"] != out_by_step[52]["mixed"]

    def test_unknown_task_exit(self, tmp_path, echo_toolchain_file):
        groups = tmp_path / "groups.jsonl"
        groups.write_text(json.dumps({"task_id": "ghost", "rollouts": []}) + "\n")
        result = run_cli(
            "reward",
            "--groups", groups,
            "--tasks", TOY / "pairs.jsonl",
            "--testbenches", TOY / "testbenches",
            "--toolchain", echo_toolchain_file,
            "--output", tmp_path / "out.jsonl",
        )
        assert result.exit_code == 2


class TestReport:
    def test_reward_summary(self, tmp_path, echo_toolchain_file):
        _, pairs = read_jsonl(TOY / "pairs.jsonl")
        groups = write_groups(tmp_path, pairs[:2], step=3)
        rewarded = tmp_path / "rewarded.jsonl"
        run_cli(
            "reward",
            "--groups", groups,
            "--tasks", TOY / "pairs.jsonl",
            "--testbenches", TOY / "testbenches",
            "--toolchain", echo_toolchain_file,
            "--output", rewarded,
        )
        outdir = tmp_path / "rep"
        result = run_cli("report", "--reward", rewarded, "--output-dir", outdir)
        assert result.exit_code == 0, result.output
        csv_lines = (outdir / "reward_by_step.csv").read_text().splitlines()
        assert csv_lines[0] == "step,mean_mixed_reward,rollouts"
        step, mean, count = csv_lines[1].split(",")
        assert step == "3"
        assert int(count) == 4
        assert 0.0 <= float(mean) <= 14.0

    def test_needs_an_input(self, tmp_path):
        result = run_cli("report", "--output-dir", tmp_path / "rep")
        assert result.exit_code == 2


class TestGrpoCheckCommand:
    def test_passes(self):
        result = run_cli("grpo-check", "--instances", 5)
        assert result.exit_code == 0, result.output
        assert "gradient check passed" in result.output

    def test_with_kl(self):
        result = run_cli("grpo-check", "--instances", 3, "--beta", 0.04)
        assert result.exit_code == 0, result.output


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"not_a_key": 1}))
        result = run_cli("--config", cfg, "grpo-check", "--instances", 1)
        assert result.exit_code == 2

    def test_config_changes_hash(self, tmp_path, categorized_toy):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"augmentation": {"p_prefix": 0.9}}))
        out_default = tmp_path / "d.jsonl"
        out_custom = tmp_path / "c.jsonl"
        run_cli("build-dataset", "--input", categorized_toy,
                "--transcripts", TOY / "transcripts.jsonl", "--output", out_default)
        run_cli("--config", cfg, "build-dataset", "--input", categorized_toy,
                "--transcripts", TOY / "transcripts.jsonl", "--output", out_custom)
        meta_d, _ = read_jsonl(out_default)
        meta_c, _ = read_jsonl(out_custom)
        assert meta_d["config_sha256"] != meta_c["config_sha256"]

    def test_seed_recorded_in_meta(self, tmp_path, categorized_toy):
        out = tmp_path / "r.jsonl"
        run_cli("--seed", 9, "build-dataset", "--input", categorized_toy,
                "--transcripts", TOY / "transcripts.jsonl", "--output", out)
        meta, _ = read_jsonl(out)
        assert meta["seed"] == 9
