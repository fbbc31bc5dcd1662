"""Command-line interface: exit codes, formats, determinism, config."""

from __future__ import annotations

import io
import json

import pytest

from epochsim.cli import (
    EXIT_NO_WITNESS,
    EXIT_OK,
    build_parser,
    main,
)


def run_cli(*argv: str) -> tuple[int, str]:
    buf = io.StringIO()
    code = main(list(argv), stdout=buf)
    return code, buf.getvalue()


# ---------------------------------------------------------------------------
# basics
# ---------------------------------------------------------------------------


def test_no_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_parser_lists_all_subcommands():
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    assert set(subs) == {"lattice-table", "straddle", "bilateral-vs-naive",
                         "adamw-skew", "retry", "deploy"}


# ---------------------------------------------------------------------------
# per-command happy paths
# ---------------------------------------------------------------------------


def test_lattice_table_text():
    code, out = run_cli("lattice-table", "--trials", "0")
    assert code == EXIT_OK
    assert "seed: 0" in out
    assert "0.368" in out and "0.905" in out


def test_lattice_table_json_all_match():
    code, out = run_cli("lattice-table", "--trials", "0", "--format", "json")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["seed"] == 0
    assert len(obj["rows"]) == 5
    assert all(r["matches"] for r in obj["rows"])


def test_lattice_table_single_cell():
    code, out = run_cli("lattice-table", "--trials", "0", "--q", "0.999",
                        "--n", "1000", "--format", "json")
    assert code == EXIT_OK
    rows = json.loads(out)["rows"]
    assert len(rows) == 1
    assert rows[0]["n"] == 1000


def test_lattice_table_with_monte_carlo():
    code, out = run_cli("lattice-table", "--trials", "2000",
                        "--format", "json", "--seed", "5")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["seed"] == 5
    assert all("mc_pr_atomic" in r for r in obj["rows"])


def test_straddle_witnesses():
    code, out = run_cli("straddle", "--grid", "6", "--seed", "2")
    assert code == EXIT_OK
    assert "6/6 mixed" in out


def test_straddle_negative_control():
    code, out = run_cli("straddle", "--grid", "6", "--no-crash")
    assert code == EXIT_OK
    assert "0/6" in out


def test_straddle_json():
    code, out = run_cli("straddle", "--grid", "4", "--format", "json")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["mixed"] == 4 and obj["grid"] == 4


def test_bilateral_vs_naive_small_battery():
    code, out = run_cli("bilateral-vs-naive", "--runs", "120", "--n", "3",
                        "--format", "json", "--seed", "3")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["bilateral"]["mixed"] == 0
    assert obj["naive"]["mixed"] > 0
    assert obj["runs"] == 120


def test_adamw_skew_exit_zero():
    code, out = run_cli("adamw-skew", "--format", "json")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["closed_form_error"] <= 1e-12
    assert obj["skew_per_unit_gradient"] == pytest.approx(0.09, abs=1e-12)


def test_retry_csv():
    code, out = run_cli("retry", "--runs", "300", "--format", "csv")
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert lines[0].startswith("alpha,")
    assert len(lines) == 4  # header + three alphas


def test_deploy_small_budget():
    code, out = run_cli("deploy", "--budget", "10", "--format", "json")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["naive_witness_found"] is True
    assert obj["consensus_mixed"] == 0


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("argv", [
    ("lattice-table", "--trials", "500"),
    ("straddle", "--grid", "5"),
    ("bilateral-vs-naive", "--runs", "60", "--n", "2"),
    ("adamw-skew", "--horizon", "20"),
    ("retry", "--runs", "200"),
    ("deploy", "--budget", "5"),
])
def test_outputs_byte_identical_across_reruns(argv):
    a = run_cli(*argv, "--format", "json")
    b = run_cli(*argv, "--format", "json")
    assert a == b


def test_seed_changes_monte_carlo_output():
    _, a = run_cli("lattice-table", "--trials", "500", "--seed", "1",
                   "--format", "json")
    _, b = run_cli("lattice-table", "--trials", "500", "--seed", "2",
                   "--format", "json")
    assert a != b


def test_seed_echoed_everywhere():
    for argv in (("lattice-table", "--trials", "0"),
                 ("straddle", "--grid", "3"),
                 ("retry", "--runs", "50")):
        _, out = run_cli(*argv, "--seed", "77")
        assert "77" in out


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------


def test_config_file_supplies_values(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"grid": 3, "seed": 12}))
    code, out = run_cli("straddle", "--config", str(conf))
    assert code == EXIT_OK
    assert "3/3 mixed" in out
    assert "seed: 12" in out


def test_explicit_flag_beats_config(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"grid": 3, "seed": 12}))
    code, out = run_cli("straddle", "--config", str(conf), "--seed", "99")
    assert code == EXIT_OK
    assert "seed: 99" in out
    assert "3/3 mixed" in out


def test_config_ignores_unknown_keys(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"grid": 2, "nonsense": True}))
    code, _ = run_cli("straddle", "--config", str(conf))
    assert code == EXIT_OK


# ---------------------------------------------------------------------------
# failure exit codes
# ---------------------------------------------------------------------------


def test_straddle_rejects_single_component():
    with pytest.raises(SystemExit) as exc:
        main(["straddle", "--n", "1"])
    assert exc.value.code == 2


def test_no_crash_straddle_uses_witness_exit_code():
    # force a contradiction: no-crash control claiming witnesses must fail
    code, _ = run_cli("straddle", "--grid", "3", "--no-crash")
    assert code in (EXIT_OK, EXIT_NO_WITNESS)
    assert code == EXIT_OK  # control is clean in this build


def test_bilateral_zero_crash_prob_all_top():
    code, out = run_cli("bilateral-vs-naive", "--runs", "80", "--n", "3",
                        "--crash-prob", "0", "--format", "json")
    assert code == EXIT_OK
    obj = json.loads(out)
    for proto in ("naive", "bilateral"):
        assert obj[proto]["top"] == 80
        assert obj[proto]["mixed"] == 0
        assert obj[proto]["disagreements"] == 0


def test_adamw_skew_beta1_zero_is_skewless():
    # with no momentum there is nothing to lag: predicted and measured
    # skew are both zero and the check passes trivially
    code, out = run_cli("adamw-skew", "--beta1", "0", "--format", "json")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["skew_per_unit_gradient"] == 0.0
    assert obj["closed_form_error"] <= 1e-12


def test_battery_output_identical_across_worker_counts():
    base = ("bilateral-vs-naive", "--runs", "150", "--n", "3",
            "--seed", "21", "--format", "json")
    _, one = run_cli(*base, "--workers", "1")
    _, four = run_cli(*base, "--workers", "4")
    assert one == four
