import filecmp
import os

import pytest

from algoincentive.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from algoincentive.config import load_config, read_config_text
from algoincentive.errors import ConfigurationError

SMALL = """
[scenario]
node_count = 120
rounds = 3
replications = 2
seed = 5
[stakes]
distribution = U(1,50)
[sortition]
tau_proposer = 26
tau_step = 200
tau_final = 400
[rewards]
mechanism = role-based
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_and_sections():
    cfg, extra = read_config_text(SMALL)
    assert cfg.node_count == 120 and cfg.rewards.mechanism == "role-based"
    assert cfg.sortition.tau_step == 200 and extra == {}


def test_aggregate_costs_parsed():
    cfg, _ = read_config_text("[costs]\nc_L = 16\nc_M = 12\nc_K = 6\nc_so = 5\n")
    assert (cfg.costs.c_L, cfg.costs.c_M, cfg.costs.c_K, cfg.costs.c_so) == (16, 12, 6, 5)


@pytest.mark.parametrize("text", [
    "[nosuch]\nx = 1\n",
    "[scenario]\nbogus = 1\n",
    "[scenario]\nrounds = many\n",
    "[stakes]\ndistribution = P(3)\n",
    "[costs]\nc_L = 16\nc_M = 12\nc_K = 6\nc_bl = 3\n",
    "[rewards]\nalpha = 0.1\n",
    "[behavior]\ndefection_rate = 1.5\n",
    "no header line\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigurationError):
        read_config_text(text)


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/cfg.ini")


def test_node_count_from_total_stake():
    cfg, _ = read_config_text("[stakes]\ndistribution = N(100,10)\ntotal_stake_algos = 50000000\n")
    assert cfg.stake_spec().node_count == 500_000


def test_shipped_configs_parse(config_path):
    for name in ("compute_parameters.ini", "desk_sweep.ini", "sanity.ini", "reward_compare.ini"):
        load_config(config_path(name))


def test_compute_parameters_output(config_path, capsys):
    assert main(["compute-parameters", "--config", config_path("compute_parameters.ini")]) == EXIT_OK
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header == "alpha,beta,gamma,B_i,binding_bound"
    fields = row.split(",")
    assert fields[4] == "bound_K"
    for x in fields[:4]:
        mantissa = x.split("e")[0].replace(".", "").replace("-", "").lstrip("0")
        assert len(mantissa) <= 9
    assert abs(sum(float(x) for x in fields[:3]) - 1) < 1e-8


def test_exit_code_config_error(tmp_path):
    assert main(["simulate", "--config", write(tmp_path, "[bad]\n"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate"]) == EXIT_CONFIG
    assert main(["compute-parameters", "--config", write(tmp_path, SMALL), "--seed", "-3"]) == EXIT_CONFIG


def test_exit_code_runtime_error(tmp_path):
    text = "[parameters]\nS_L = 1e9\nS_M = 1e9\nS_K = 1\ns_l = 1\ns_m = 1\ns_k = 1\n"
    assert main(["compute-parameters", "--config", write(tmp_path, text)]) == EXIT_RUNTIME


def test_simulate_dumps_and_determinism(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b, c = (str(tmp_path / d) for d in "abc")
    assert main(["simulate", "--config", cfg, "--out", a]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", b]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", c, "--seed", "99"]) == EXIT_OK
    names = ["ledger.csv", "outcomes.csv", "payments.csv", "behaviors.csv", "reachability.csv", "summary.csv"]
    headers = {
        "ledger.csv": "node_id,stake_microalgos",
        "outcomes.csv": "round,node_id,outcome,block_hash",
        "payments.csv": "round,node_id,role,strategy,reward_microalgos,cost_microalgos,payoff_microalgos",
        "behaviors.csv": "round,node_id,strategy",
        "reachability.csv": "round,sender,reached_fraction",
    }
    for n in names:
        assert filecmp.cmp(os.path.join(a, n), os.path.join(b, n), shallow=False)
        if n in headers:
            with open(os.path.join(a, n)) as fh:
                assert fh.readline().strip() == headers[n]
    assert not filecmp.cmp(os.path.join(a, "ledger.csv"), os.path.join(c, "ledger.csv"), shallow=False)


def test_sweep_writes_per_rate_files(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", cfg, "--rates", "0,30", "--out", str(out)]) == EXIT_OK
    assert sorted(os.listdir(out)) == ["fig3_0.csv", "fig3_30.csv"]
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "defection_rate_percent,final_fraction_trimmed_mean" and len(lines) == 3


def test_sweep_bad_rates(tmp_path):
    assert main(["sweep", "--config", write(tmp_path, SMALL), "--rates", "5,x"]) == EXIT_CONFIG
    assert main(["sweep", "--config", write(tmp_path, SMALL), "--rates", "150"]) == EXIT_CONFIG


def test_compare_rewards_files(tmp_path):
    text = """
[scenario]
rounds = 2
replications = 2
seed = 1
[stakes]
distribution = U(1,50)
total_stake_algos = 100000
[sortition]
tau_proposer = 26
tau_step = 200
tau_final = 400
[rewards]
min_stake_floor = 10
[compare]
distributions = U(1,50); N(100,10)
floors = 3, 5
floor_distribution = U(1,50)
"""
    out = tmp_path / "cmp"
    assert main(["compare-rewards", "--config", write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert sorted(os.listdir(out)) == ["fig5_N100-10.csv", "fig5_U1-50.csv", "fig6.csv", "fig7.csv"]
