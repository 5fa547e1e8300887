import math

import numpy as np
import pytest

import mdpo

TINY = {
    "domain": {"n_prompts": 1000},
    "vae": {"steps": 20, "hidden": 32},
    "diffusion_raw": {"steps": 10, "hidden": 32, "depth": 1, "T": 10},
    "diffusion_latent": {"steps": 10, "hidden": 32, "depth": 1, "T": 10},
    "ranker": {"steps": 20, "motion_hidden": 32, "text_hidden": 16},
    "pam": {"n_prompts": 12, "K": 2},
    "align": {"steps": 3, "batch": 4, "online_prompts": 8},
    "eval": {"n_gen": 2, "real_draws": 1, "bootstrap": 2},
}


def test_prompts_and_tokens():
    p = mdpo.PromptSpec(mdpo.Action.walk, speed=1.9, amplitude=0.3)
    assert mdpo.token_text(p) == "a person walks quickly gently"
    assert len(mdpo.render_tokens(p)) == 5
    assert all(0 <= t < mdpo.VOCAB_SIZE for t in mdpo.render_tokens(p))
    with pytest.raises(mdpo.DomainError):
        mdpo.PromptSpec(mdpo.Action.walk, speed=5.0)


def test_motion_and_oracle():
    p = mdpo.PromptSpec(mdpo.Action.circle, speed=1.2, amplitude=0.8)
    m = mdpo.generate_ground_truth(p, frames=60, seed=3)
    assert m.shape == (60, mdpo.FEATURES)
    assert np.array_equal(m, mdpo.generate_ground_truth(p, frames=60, seed=3))
    clean = mdpo.family_motion(mdpo.Action.circle, 1.2, 0.8)
    assert mdpo.oracle_score(p, clean) == pytest.approx(0.0, abs=1e-9)
    assert mdpo.oracle_score(p, m) < 0.0
    judged = mdpo.oracle_judge(p, m)
    assert judged["score"] == pytest.approx(-(judged["realism_residual"] + judged["attribute_mismatch"]))
    assert mdpo.oracle_features(p, m).shape == (4,)
    with pytest.raises(mdpo.ContractError):
        mdpo.oracle_score(p, m[:, :5])


def test_schedule_and_forward_process():
    s = mdpo.make_schedule("linear", 100, 1e-3, 0.2)
    assert s.T == 100
    assert np.allclose(np.cumprod(1 - np.array(s.betas)), s.alpha_bars, rtol=0, atol=1e-12)
    rng = np.random.default_rng(0)
    x0, eps = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    xt = mdpo.q_sample(x0, 30, eps, s)
    ab = s.alpha_bars[29]
    assert np.allclose(xt, math.sqrt(ab) * x0 + math.sqrt(1 - ab) * eps)
    with pytest.raises(mdpo.ContractError):
        mdpo.q_sample(x0, 0, eps, s)


def test_fid():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 4))
    cov = a @ a.T + np.eye(4)
    mean = rng.standard_normal(4)
    assert mdpo.fid(mean, cov, mean, cov) <= 1e-8
    assert mdpo.fid(np.zeros(4), np.eye(4), mean, np.eye(4)) == pytest.approx(mean @ mean, abs=1e-9)
    x = rng.standard_normal((20000, 3))
    assert mdpo.fid_from_samples(x, x + 1.0) == pytest.approx(3.0, rel=0.05)


def test_pairs():
    assert [mdpo.pair_count(n) for n in (2, 3, 8)] == [1, 3, 28]
    scores = [0.1, 0.9, -0.4, 0.3]
    edge = mdpo.select_pair(scores, "edge")
    assert (edge["winner"], edge["loser"]) == (1, 2)
    stoch = mdpo.select_pair(scores, "stochastic", seed=4)
    assert stoch["winner_rank"] < 2 <= stoch["loser_rank"]
    with pytest.raises(mdpo.ConfigError):
        mdpo.select_pair(scores, "greedy")


def test_tiny_pipeline(tmp_path):
    stages = mdpo.run_pipeline(tmp_path / "a", TINY)
    names = [s["stage"] for s in stages]
    assert names[0] == "gen-data" and names[-1] == "report"
    assert all(not s["skipped"] for s in stages)
    assert all(s["skipped"] for s in mdpo.run_pipeline(tmp_path / "a", TINY))

    latent = next(s for s in stages if s["stage"] == "train-diffusion-latent")["summary"]
    ckpt = tmp_path / "a" / latent["dir"] / "generator.ckpt"
    assert mdpo.checkpoint_hash(ckpt) == latent["outputs"]["generator.ckpt"]

    g = mdpo.Generator.load(ckpt)
    assert g.space == "latent" and g.state_dim == 16
    p = mdpo.PromptSpec(mdpo.Action.jump)
    m1, m2 = g.sample([p, p], [7, 7])
    assert m1.shape == (60, mdpo.FEATURES) and np.array_equal(m1, m2)

    pam_stage = next(s for s in stages if s["stage"] == "build-pam")["summary"]
    pam = mdpo.load_pam(tmp_path / "a" / pam_stage["dir"] / "pam.jsonl")
    assert pam["records"] == 12 and pam["K"] == 2

    other = mdpo.run_pipeline(tmp_path / "b", TINY)
    for x, y in zip(stages, other):
        assert x["summary"]["outputs"] == y["summary"]["outputs"]


def test_config_errors(tmp_path):
    assert "align" in mdpo.default_config()
    with pytest.raises(mdpo.ConfigError):
        mdpo.run_stage("gen-data", tmp_path, {"domain": {"bogus": 1}})
    with pytest.raises(mdpo.PipelineError):
        mdpo.run_stage("train-vae", tmp_path / "empty", TINY)
    assert issubclass(mdpo.StalenessError, mdpo.Error)
