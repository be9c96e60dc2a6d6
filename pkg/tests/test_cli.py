import json

import numpy as np
import pytest

from mfirl.cli import EXIT_CONFIG, EXIT_NUMERIC, main
from mfirl.irl import RewardModel, save_reward_model

QUICK = {"irl": {"epochs": 5, "lr": 0.003, "hidden": [8], "sampler": {"mode": "tabular"}},
         "baseline": {"epochs": 2, "n_samples": 8, "sampler_steps": 2, "hidden": [8]}}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "config.json").write_text(json.dumps(QUICK))
    return tmp_path


def gen(d, name="demos.json", seed=0, env="virus"):
    out = d / name
    assert main(["gen-experts", "--env", env, "--agents", "20", "--plays", "2", "--horizon", "10",
                 "--seed", str(seed), "--out", str(out)]) == 0
    return out


def test_gen_experts_is_byte_identical(workdir):
    a, b = gen(workdir, "a.json"), gen(workdir, "b.json")
    assert a.read_bytes() == b.read_bytes()
    assert gen(workdir, "c.json", seed=1).read_bytes() != a.read_bytes()
    doc = json.loads(a.read_text())
    assert (doc["M"], doc["N"], doc["T"], doc["env"]) == (2, 20, 10, "virus")


@pytest.mark.parametrize("algo", ["mfirl", "mfg-mdp"])
def test_train_and_eval_are_byte_identical(workdir, algo):
    demos = gen(workdir)
    outs = []
    for tag in ("x", "y"):
        reward, log, ev = workdir / f"r{tag}.json", workdir / f"l{tag}.csv", workdir / f"e{tag}.json"
        assert main(["train", "--algo", algo, "--demos", str(demos), "--env", "virus",
                     "--config", str(workdir / "config.json"), "--out", str(reward), "--log", str(log)]) == 0
        assert main(["eval", "--reward", str(reward), "--env", "virus", "--variant", "new",
                     "--horizon", "10", "--out", str(ev)]) == 0
        outs.append((reward.read_bytes(), log.read_bytes(), ev.read_bytes()))
    assert outs[0] == outs[1]
    result = json.loads(outs[0][2])
    assert result["converged"] and result["dev_mf"] >= 0 and result["dev_policy"] >= 0


def test_run_from_config_file(workdir):
    cfg = dict(QUICK, env="lr", plays=[1], seeds=[0], horizon=10)
    (workdir / "exp.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(workdir / "exp.json"), "--out", str(workdir / "res")]) == 0
    lines = (workdir / "res" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("env,variant,algorithm,M,seed")


def test_reproduce_suite_is_deterministic(workdir):
    outs = []
    for tag in ("a", "b"):
        d = workdir / tag
        assert main(["reproduce", "--suite", "table1", "--out", str(d), "--seeds", "0", "--plays", "1",
                     "--envs", "lr", "--algos", "mfirl", "--epochs", "3"]) == 0
        outs.append((d / "table1.csv").read_bytes())
    assert outs[0] == outs[1]
    assert b"expert" in outs[0]


def test_config_errors_exit_with_code_2(workdir, capsys):
    demos = gen(workdir)
    assert main(["train", "--algo", "mfirl", "--demos", str(demos), "--env", "lr", "--out", "x.json"]) == EXIT_CONFIG
    assert main(["train", "--algo", "mfirl", "--demos", str(workdir / "missing.json"), "--env", "virus",
                 "--out", "x.json"]) == EXIT_CONFIG
    (workdir / "bad.json").write_text(json.dumps({"irl": {"epochs": 0}}))
    assert main(["train", "--algo", "mfirl", "--demos", str(demos), "--env", "virus",
                 "--config", str(workdir / "bad.json"), "--out", "x.json"]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["gen-experts", "--env", "chess", "--out", "x.json"])
    assert exc.value.code == EXIT_CONFIG


def test_numeric_failure_exits_with_code_3(workdir, capsys):
    model = RewardModel.create(2, 2, 0.99, np.random.default_rng(0), hidden=(4,))
    model.core_params[:] = np.nan
    save_reward_model(workdir / "nan.json", model)
    code = main(["eval", "--reward", str(workdir / "nan.json"), "--env", "virus", "--horizon", "5",
                 "--out", str(workdir / "e.json")])
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err
