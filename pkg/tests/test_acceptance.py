"""Exit-criteria suite: one printed PASS/FAIL line per criterion."""

import json
import math
import random
import statistics
import subprocess
import time

import pytest
import yaml

from helpers import (
    naive_cell_location,
    naive_paint,
    random_grid_spec,
    render_html,
    render_latex,
    render_markdown,
)
from tabforge import pipeline
from tabforge.curate import (
    compare_answers,
    compute_stats,
    read_dataset,
    reverify,
    verify,
    write_dataset,
)
from tabforge.codec import Annotation, TokenCounts
from tabforge.curate import Sample, filter_lengths
from tabforge.grid import TableGrid
from tabforge.metrics import accuracy, cell_f1, resolve_answer, tsd_accuracy
from tabforge.parsers import parse_html, parse_latex, parse_markdown
from tabforge.prompts import TableFormat, Task
from tabforge.reward import advantages
from tabforge.sandbox import ExecResult, SandboxPolicy, execute, execute_pool, screen


def _report(name: str, ok: bool) -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}")
    assert ok, name


def _ops_match_oracle(grid: TableGrid, spec) -> bool:
    cells = naive_paint(spec)
    if grid.size() != (spec.n_rows, spec.n_cols):
        return False
    for r in range(1, spec.n_rows + 1):
        if list(grid.row_values(r)) != cells[r - 1]:
            return False
    for c in range(1, spec.n_cols + 1):
        if list(grid.col_values(c)) != [row[c - 1] for row in cells]:
            return False
    for r in range(1, spec.n_rows + 1):
        for c in range(1, spec.n_cols + 1):
            if grid.cell_value((r, c)) != cells[r - 1][c - 1]:
                return False
    values = {v for row in cells for v in row}
    for v in values:
        loc = grid.cell_location(v)
        if (loc.row, loc.col) != naive_cell_location(cells, v):
            return False
    expected_merges = sorted(
        ((s.row_start, s.row_end, s.col_start, s.col_end) for s in spec.spans),
        key=lambda m: (m[0], m[2]),
    )
    got_merges = [
        (m.row_start, m.row_end, m.col_start, m.col_end) for m in grid.merged_regions()
    ]
    return got_merges == expected_merges


def test_grid_oracle_equivalence():
    rng = random.Random(20240817)
    start = time.monotonic()
    ok = True
    for i in range(500):
        spec = random_grid_spec(rng)
        sources = [parse_html(render_html(spec)).grid, parse_latex(render_latex(spec)).grid]
        if not spec.spans:
            sources.append(parse_markdown(render_markdown(spec)).grid)
        for grid in sources:
            painted = [list(row) for row in grid.cells]
            if painted != naive_paint(spec) or not _ops_match_oracle(grid, spec):
                ok = False
    elapsed = time.monotonic() - start
    _report("grid-oracle-equivalence", ok and elapsed < 10.0)


def _four_case_records():
    ann = Annotation("r", "print(4)", "4", "<reason>r</reason><code>print(4)</code><answer>4</answer>",
                     TokenCounts(1, 4, 1, 6))
    sample = lambda sid, gt="4": Sample(sid, Task.WTQ, "<table><tr><td>4</td></tr></table>",
                                        TableFormat.HTML, "q", gt)
    return [
        verify(sample("a"), ann, ExecResult("ok", "4\n", "", 0.01)),
        verify(sample("b", gt="9"), ann, ExecResult("ok", "4\n", "", 0.01)),
        verify(sample("c"), ann, ExecResult("runtime_error", "", "tb", 0.01)),
        verify(sample("d"), None, None),
    ]


def test_verification_loop_fidelity():
    histograms = []
    rates = []
    for _ in range(3):  # deterministic across runs
        stats = compute_stats(_four_case_records())
        counts = stats.verdict_counts["wtq"]
        histograms.append(
            (counts["accepted"], counts["rejected_mismatch"],
             counts["rejected_exec"], counts["rejected_format"])
        )
        rates.append(stats.rejection_rate["wtq"])
    ok = histograms == [(1, 1, 1, 1)] * 3 and rates == [0.75] * 3
    _report("verification-loop-fidelity", ok)


def test_filtering_rules():
    sample = lambda sid, task=Task.WTQ: Sample(sid, task, "t", TableFormat.HTML, "q", "4")
    ann = lambda reason, total: Annotation(
        "r", "c", "a", "raw", TokenCounts(reason, 1, 1, total)
    )
    keep = verify(sample("keep"), ann(1024, 1026), ExecResult("ok", "4", "", 0.0))
    drop = verify(sample("drop"), ann(1025, 1027), ExecResult("ok", "4", "", 0.0))
    boundary_ok = filter_lengths([keep, drop]) == [keep]

    tsu = [
        verify(sample(f"t{i:04d}", Task.TSD), ann(1, 10_000 - i), ExecResult("ok", "4", "", 0.0))
        for i in range(6000)
    ]
    kept = filter_lengths(tsu, tsu_keep=5000)
    totals = sorted(r.annotation.token_counts.total for r in kept)
    tsu_ok = len(kept) == 5000 and totals == list(range(4001, 9001))
    _report("filtering-rules", boundary_ok and tsu_ok)


def test_grpo_math():
    golden = advantages([2.0, 1.0, 1.0, 0.0])
    expected = [math.sqrt(2), 0.0, 0.0, -math.sqrt(2)]
    ok = all(abs(g - e) < 1e-6 for g, e in zip(golden, expected))
    ok = ok and advantages([1.0, 1.0, 1.0, 1.0]) == [0.0, 0.0, 0.0, 0.0]
    rng = random.Random(99)
    for _ in range(1000):
        rewards = [float(rng.choice([0, 1, 2])) for _ in range(rng.randint(2, 8))]
        if abs(statistics.fmean(advantages(rewards))) >= 1e-6:
            ok = False
    _report("grpo-math", ok)


def test_metric_correctness():
    ok = cell_f1(["a", "b", "c"], ["b", "c", "d"]) == pytest.approx(2 / 3, abs=1e-12)
    preds = {"a": "3 5", "b": "3 9", "c": "3 5", "d": "1 1"}
    tsd = tsd_accuracy(preds, {k: (3, 5) for k in preds})
    ok = ok and (tsd.values["row_acc"], tsd.values["col_acc"]) == (0.75, 0.5)

    rng = random.Random(7)
    vocab = ["1", "2", "yes", "no", "$1,234", "1234", "alpha"]
    pred_map = {f"s{i}": rng.choice(vocab) for i in range(200)}
    gt_map = {f"s{i}": rng.choice(vocab) for i in range(200)}
    naive = sum(compare_answers(pred_map[k], gt_map[k]) for k in pred_map) / 200
    ok = ok and accuracy(pred_map, gt_map).values["accuracy"] == pytest.approx(naive)
    _report("metric-correctness", ok)


def test_answer_priority_rule(fake_harness_cmd):
    grid = TableGrid([["x"]])
    policy = SandboxPolicy(timeout=5.0)
    first = resolve_answer(
        "a", "<reason>r</reason><code>print(7)</code><answer>8</answer>",
        grid, policy, harness_cmd=fake_harness_cmd,
    )
    second = resolve_answer(
        "b", "<reason>r</reason><code>print(1/0)</code><answer>8</answer>",
        grid, policy, harness_cmd=fake_harness_cmd,
    )
    ok = (first.resolved_answer, first.exec_used) == ("7", True)
    ok = ok and (second.resolved_answer, second.exec_used) == ("8", False)
    _report("answer-priority-rule", ok)


def _live_children() -> int:
    out = subprocess.run(
        ["ps", "--ppid", str(subprocess.os.getpid()), "-o", "comm="],
        capture_output=True, text=True,
    ).stdout
    return sum(1 for name in out.split() if name != "ps")


def test_sandbox_safety(fake_harness_cmd):
    policy = SandboxPolicy(timeout=2.0)
    ok = bool(screen("import os", policy)) and bool(screen('__import__("sys")', policy))

    grid = TableGrid([["x"]])
    start = time.monotonic()
    result = execute("while True: pass", grid, policy, harness_cmd=fake_harness_cmd)
    ok = ok and result.status == "timeout" and (time.monotonic() - start) < policy.timeout + 1.0

    jobs = [("print(1)", grid)] * 100
    results = execute_pool(jobs, SandboxPolicy(timeout=5.0), parallelism=8,
                           harness_cmd=fake_harness_cmd)
    ok = ok and all(r.status == "ok" for r in results)
    time.sleep(0.2)
    ok = ok and _live_children() == 0
    _report("sandbox-safety", ok)


def test_end_to_end_dry_run(tmp_path, fake_harness_cmd):
    start = time.monotonic()
    rng = random.Random(1)
    samples, responses = [], []
    for i in range(50):
        gt = str(rng.randint(1, 99))
        kind = i % 5
        if kind in (0, 1, 2):  # correct
            resp = f"<reason>read cell</reason><code>print({gt})</code><answer>{gt}</answer>"
        elif kind == 3:  # wrong value
            resp = f"<reason>read cell</reason><code>print({int(gt) + 1})</code><answer>x</answer>"
        else:  # crash
            resp = f"<reason>read cell</reason><code>print(1/0)</code><answer>{gt}</answer>"
        samples.append({
            "id": f"s{i:03d}",
            "task": "wtq" if i % 2 else "tabfact",
            "table_format": "html",
            "table_source": f"<table><tr><td>{gt}</td></tr></table>",
            "question": f"q{i:03d}",
            "gt_answer": gt,
        })
        responses.append({"key": f"q{i:03d}", "response": resp})
    (tmp_path / "samples.jsonl").write_text(
        "".join(json.dumps(s) + "\n" for s in samples)
    )
    (tmp_path / "annotator.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in responses)
    )
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump({
        "paths": {k: str(tmp_path / v) for k, v in {
            "samples": "samples.jsonl", "pool": "pool.jsonl", "raw": "raw.jsonl",
            "verified": "verified.jsonl", "dataset": "dataset.jsonl",
            "stats": "stats.json", "stats_text": "stats.txt",
        }.items()},
        "annotator": {"endpoint_url": f"mock:{tmp_path / 'annotator.jsonl'}"},
        "sandbox": {"timeout": 5.0},
        "few_shot_k": 0,
        "seed": 3,
        "parallelism": 8,
    }))
    cfg = pipeline.load_config(cfg_path)
    pipeline.run_generate(cfg)
    pipeline.run_verify(cfg, harness_cmd=fake_harness_cmd)
    pipeline.run_curate(cfg)
    stats = pipeline.run_stats(cfg)

    loaded = read_dataset(cfg.verified_path)  # schema-valid round trip
    ok = len(loaded) == 50
    write_dataset(reverify(loaded), tmp_path / "reverified.jsonl")
    ok = ok and (
        (tmp_path / "reverified.jsonl").read_bytes()
        == (tmp_path / "verified.jsonl").read_bytes()
    )
    # 30 correct / 10 wrong / 10 crash split across the two tasks
    accepted = sum(r.verdict == "accepted" for r in loaded)
    ok = ok and accepted == 30
    final = read_dataset(cfg.dataset_path)
    ok = ok and all(r.verdict == "accepted" for r in final) and len(final) == 30
    # token-length report is consistent with the fixture annotations
    expected_mean = statistics.fmean(
        r.annotation.token_counts.total for r in loaded if r.annotation is not None
    )
    ok = ok and stats.mean_total_tokens == pytest.approx(expected_mean)
    report = json.loads((tmp_path / "stats.json").read_text())
    ok = ok and report["config_hash"] == cfg.config_hash() and "mean_total_tokens" in report
    elapsed = time.monotonic() - start
    _report("end-to-end-dry-run", ok and elapsed < 60.0)
