import json

import pytest

from sdsim import ClusterConfig, parse_swf
from sdsim.cli import DEFAULTS, build_parser, main, read_config

FILES = ("events.log", "report.json", "report.csv", "heatmap.csv", "daily.csv")


def one_job(path):
    f = [-1] * 18
    f[0], f[1], f[3], f[7], f[8] = 1, 0, 100, 48, 200
    path.write_text(" ".join(map(str, f)) + "\n")
    return path


def test_simulate_minimal(tmp_path, capsys):
    wl = one_job(tmp_path / "one.swf")
    out = tmp_path / "out"
    assert main(["simulate", "--workload", str(wl), "--nodes", "2", "--out", str(out)]) == 0
    for name in FILES:
        assert (out / name).exists()
    rep = json.loads((out / "report.json").read_text())
    assert rep["avg_slowdown"] == 1 and rep["settings"]["policy"] == "static"


def test_sd_dyn_flags_accepted(tmp_path):
    wl = one_job(tmp_path / "one.swf")
    argv = ["simulate", "--workload", str(wl), "--nodes", "2", "--policy=sd", "--max-slowdown=dyn",
            "--runtime-model", "worst", "--use-free-nodes", "--easy", "--out", str(tmp_path / "o")]
    assert main(argv) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["settings"]["max_slowdown"] == "dyn" and rep["settings"]["easy"] is True


def test_invalid_sharing_factor(tmp_path, capsys):
    wl = one_job(tmp_path / "one.swf")
    assert main(["simulate", "--workload", str(wl), "--sharing-factor", "1.5"]) != 0
    assert "between 0 and 1" in capsys.readouterr().err


def test_missing_workload(tmp_path, capsys):
    assert main(["compare", "--workload", str(tmp_path / "nope.swf"), "--out", str(tmp_path)]) != 0
    assert main(["simulate", "--out", str(tmp_path)]) != 0
    assert "--workload is required" in capsys.readouterr().err


def test_compare_same_policy(tmp_path):
    wl = tmp_path / "w.swf"
    assert main(["gen-workload", "--jobs", "30", "--nodes", "8", "--max-nodes", "4", "--out", str(wl)]) == 0
    out = tmp_path / "cmp"
    assert main(["compare", "--workload", str(wl), "--nodes", "8", "--baseline", "static",
                 "--policy", "static", "--out", str(out)]) == 0
    ratios = json.loads((out / "ratios.json").read_text())
    assert set(ratios.values()) == {1.0}
    for sub in ("baseline", "policy"):
        for name in FILES:
            assert (out / sub / name).exists()


def test_compare_golden_scenario(tmp_path):
    lines = []
    for id, req in ((1, 10000), (2, 1000)):
        f = [-1] * 18
        f[0], f[1], f[3], f[7], f[8] = id, 0, req, 96, req
        lines.append(" ".join(map(str, f)))
    wl = tmp_path / "two.swf"
    wl.write_text("\n".join(lines) + "\n")
    out = tmp_path / "cmp"
    assert main(["compare", "--workload", str(wl), "--nodes", "2", "--policy", "sd", "--max-slowdown", "inf",
                 "--out", str(out)]) == 0
    ratios = json.loads((out / "ratios.json").read_text())
    assert ratios["avg_slowdown"] == pytest.approx(1.55 / 6)
    assert ratios["makespan"] == 1.0
    assert ratios["avg_wait_time"] == 0.0


def test_gen_workload_repeatable(tmp_path):
    a, b = tmp_path / "a.swf", tmp_path / "b.swf"
    for p in (a, b):
        assert main(["gen-workload", "--jobs", "57", "--seed", "3", "--nodes", "64", "--out", str(p)]) == 0
    assert a.read_text() == b.read_text()
    jobs, _ = parse_swf(a.read_text(), ClusterConfig(64))
    assert len(jobs) == 57


def test_gen_workload_rejects_bad_params(tmp_path):
    assert main(["gen-workload", "--jobs", "0", "--out", str(tmp_path / "x.swf")]) != 0


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\npolicy = sd\nmax-slowdown = 10\nnodes = 2\n")
    wl = one_job(tmp_path / "one.swf")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--workload", str(wl), "--max-slowdown", "5",
                 "--out", str(out)]) == 0
    settings = json.loads((out / "report.json").read_text())["settings"]
    assert (settings["policy"], settings["max_slowdown"], settings["nodes"]) == ("sd", "5", 2)
    assert settings["sharing_factor"] == DEFAULTS["sharing_factor"]


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(Exception, match="unknown setting"):
        read_config(bad)
    bad.write_text("policy sd\n")
    with pytest.raises(Exception, match="key = value"):
        read_config(bad)


def test_help_lists_defaults():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices["simulate"]
    text = sub.format_help()
    for flag in ("--workload", "--policy", "--runtime-model", "--max-slowdown", "--sharing-factor", "--max-mates",
                 "--candidate-cap", "--use-free-nodes", "--backfill-interval", "--easy", "--seed", "--nodes",
                 "--sockets", "--cores-per-socket", "--out"):
        assert flag in text
    for key in ("sharing_factor", "max_mates", "candidate_cap", "backfill_interval"):
        assert f"default {DEFAULTS[key]}" in text


def test_cli_defaults_match_config_defaults():
    from sdsim import ClusterConfig, SimConfig
    from sdsim.cli import resolve
    cfg = SimConfig(ClusterConfig(4))
    args = build_parser().parse_args(["simulate"])
    s = resolve(args)
    assert s["policy"] == cfg.policy
    assert s["runtime_model"] == cfg.model.value
    assert s["max_slowdown"] == cfg.cutoff.label()
    for key in ("sharing_factor", "max_mates", "candidate_cap", "use_free_nodes", "backfill_interval",
                "backfill_depth", "easy", "seed"):
        assert s[key] == getattr(cfg, key), key
    cl = ClusterConfig(s["nodes"])
    assert (s["sockets"], s["cores_per_socket"]) == (cl.sockets_per_node, cl.cores_per_socket)
