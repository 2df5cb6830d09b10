import json

import numpy as np
import pytest

from masa.checkpoint import load_checkpoint, save_checkpoint
from masa.checks import mdp_commutation, network_residuals, symmetry_report
from masa.cli import EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from masa.envs import RotReach, ThrusterPole
from masa.offline import load_dataset
from masa.ppo import make_learner
from masa.config import PpoConfig, RunConfig


def write_config(tmp_path, name="cfg.json", **kw):
    doc = dict(run_name="t", variant="MASA", seeds=[0],
               env_params={"n_arms": 3, "horizon": 20},
               ppo=dict(num_actors=4, horizon_length=8, minibatch_size=16, total_env_steps=64,
                        policy_hidden=[8], critic_hidden=[8], eval_episodes=3))
    doc.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("MASA_OUTPUT_ROOT", str(root))
    return root


def test_train_creates_files_and_is_deterministic(tmp_path, out_root):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg)]) == EXIT_OK
    seed_dir = out_root / "t" / "seed_0"
    first = (seed_dir / "metrics.csv").read_bytes()
    assert (seed_dir / "checkpoint.bin").exists() and (seed_dir / "checkpoint.spec.json").exists()
    assert main(["train", str(cfg)]) == EXIT_OK
    assert (seed_dir / "metrics.csv").read_bytes() == first


def test_train_bad_gamma_is_usage_error(tmp_path, out_root, capsys):
    cfg = write_config(tmp_path, ppo={"gamma": 1.5})
    assert main(["train", "--config", str(cfg)]) == EXIT_USAGE
    assert "gamma" in capsys.readouterr().err


def test_missing_config_and_bad_command(tmp_path):
    assert main(["train"]) == EXIT_USAGE
    assert main(["train", str(tmp_path / "none.json")]) == EXIT_USAGE
    assert main(["fly"]) == EXIT_USAGE


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "variant": "MASA",\n  oops\n}')
    assert main(["train", str(p)]) == EXIT_USAGE
    assert "line 3" in capsys.readouterr().err


def test_expert_eval_success(tmp_path, capsys):
    out = tmp_path / "expert.bin"
    assert main(["eval", str(out), "--expert", "--env", "rotreach", "--episodes", "50"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["success_rate"] >= 0.95
    assert (tmp_path / "expert.eval.csv").exists()


def test_eval_deterministic(tmp_path, capsys):
    out = tmp_path / "expert.bin"
    main(["eval", str(out), "--expert", "--env", "thrusterpole", "--episodes", "5", "--out", str(tmp_path / "a.csv")])
    main(["eval", str(out), "--episodes", "5", "--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_eval_garbage_checkpoint(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"junk")
    assert main(["eval", str(tmp_path / "x.bin")]) == EXIT_USAGE


def test_make_dataset_and_augment(tmp_path, capsys):
    cfg = write_config(tmp_path, env_id="thrusterpole", env_params={"horizon": 30},
                       dataset={"policy_kind": "expert", "episodes": 3, "output": str(tmp_path / "d.jsonl")})
    assert main(["make-dataset", "--config", str(cfg)]) == EXIT_OK
    meta = json.loads(capsys.readouterr().out)
    ds = load_dataset(tmp_path / "d.jsonl")
    assert meta["transitions"] == len(ds) == 90
    assert main(["augment", str(tmp_path / "d.jsonl")]) == EXIT_OK
    assert len(load_dataset(tmp_path / "d.aug.jsonl")) == 180


def test_make_dataset_meta_matches_fresh_eval(tmp_path, capsys):
    cfg = write_config(tmp_path, dataset={"policy_kind": "expert", "episodes": 60, "output": str(tmp_path / "e.jsonl")},
                       env_params={"n_arms": 3})
    main(["make-dataset", str(cfg)])
    meta = json.loads(capsys.readouterr().out)
    main(["eval", str(tmp_path / "x.bin"), "--expert", "--env", "rotreach", "--episodes", "60"])
    fresh = json.loads(capsys.readouterr().out)
    assert abs(meta["mean_success"] - fresh["success_rate"]) <= 0.05


def test_augment_missing_file(tmp_path):
    assert main(["augment", str(tmp_path / "none.jsonl")]) == EXIT_USAGE


def test_check_symmetry_env_only(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert main(["check-symmetry", "--env", "thrusterpole", "--report", str(rep)]) == EXIT_OK
    report = json.loads(rep.read_text())
    assert report["passed"]
    state = next(r for r in report["results"] if r["name"] == "mdp.state")
    assert state["residual"] <= 1e-8


def _ppo_checkpoint(tmp_path, variant):
    cfg = RunConfig(variant=variant, ppo=PpoConfig(policy_hidden=(8,), critic_hidden=(8,)))
    learner, env = make_learner(cfg, 0)
    for a in learner.policy.net_arrays() + learner.critic.net_arrays():
        a[...] = np.random.default_rng(1).standard_normal(a.shape) * 0.5
    path = tmp_path / f"{variant}.bin"
    from masa.checkpoint import arch_meta

    arch = arch_meta(variant, (8,), (8,), "elu", 0.0, learner.variant.pooled_normalizer, True)
    save_checkpoint(path, "ppo", env, learner.state_dict(), arch)
    return path


def test_check_symmetry_masa_checkpoint_passes(tmp_path):
    path = _ppo_checkpoint(tmp_path, "MASA")
    assert main(["check-symmetry", "--checkpoint", str(path), "--probes", "200"]) == EXIT_OK


def test_check_symmetry_sa_checkpoint_fails(tmp_path, capsys):
    path = _ppo_checkpoint(tmp_path, "SA")
    assert main(["check-symmetry", "--checkpoint", str(path), "--probes", "200"]) == EXIT_VIOLATION
    assert "FAIL network.policy_equivariance" in capsys.readouterr().out


def test_check_symmetry_needs_target():
    assert main(["check-symmetry"]) == EXIT_USAGE


def test_aggregate_command(tmp_path, out_root, capsys):
    cfg = write_config(tmp_path, seeds=[0, 1])
    assert main(["train", str(cfg)]) == EXIT_OK
    capsys.readouterr()
    assert main(["aggregate", str(out_root / "t")]) == EXIT_OK
    assert (out_root / "t" / "summary.csv").exists()
    assert main(["aggregate", str(tmp_path / "empty")]) == EXIT_USAGE


def test_offline_train_via_cli(tmp_path, out_root):
    cfg = write_config(tmp_path, "d.json", dataset={"policy_kind": "expert", "episodes": 4,
                                                    "output": str(tmp_path / "d.jsonl")})
    assert main(["make-dataset", str(cfg)]) == EXIT_OK
    cfg2 = write_config(tmp_path, "bc.json", algorithm="bc",
                        offline={"dataset": str(tmp_path / "d.jsonl"), "grad_steps": 10, "log_every": 5,
                                 "eval_episodes": 2, "policy_hidden": [8], "critic_hidden": [8]})
    assert main(["train", str(cfg2)]) == EXIT_OK
    ck = load_checkpoint(out_root / "t" / "seed_0" / "checkpoint.bin")
    assert ck.kind == "bc"


# -- library checks ----------------------------------------------------------

def test_symmetry_report_all_pass_for_envs():
    for env in (RotReach(3), ThrusterPole()):
        assert all(r.ok for r in symmetry_report(env, probes=200))


def test_mdp_commutation_detects_broken_env():
    class Broken(RotReach):
        def dynamics(self, states, actions):
            nxt, r, term, succ = super().dynamics(states, actions)
            return nxt + 1e-3 * states[:, :1], r, term, succ

    assert mdp_commutation(Broken(3), 50)["state"] > 1e-6


def test_network_residuals_for_expert(tmp_path):
    from masa.checkpoint import save_expert_checkpoint

    path = save_expert_checkpoint(tmp_path / "e.bin", ThrusterPole())
    res = network_residuals(load_checkpoint(path), 50)
    assert res["policy_equivariance"] <= 1e-12
