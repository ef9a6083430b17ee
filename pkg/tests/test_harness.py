import json
import os

import numpy as np
import pytest
import torch

from conftest import random_lines
from linereg.bench import Level, evaluate_scene, noise_levels, overlap_levels, run_benchmark
from linereg.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, model_from_dict, load_optimizer_state
from linereg.cli import main
from linereg.config import RunConfig
from linereg.errors import CheckpointMismatch, ConfigError, MissingCheckpoint, NonFiniteGradient, ParseError
from linereg.features import NetConfig
from linereg.formats import (
    dumps_lineset,
    dumps_result,
    dumps_scene,
    loads_lineset,
    loads_result,
    loads_scene,
    save_lineset,
)
from linereg.metrics import quartiles, recall_curve, summarize
from linereg.pose import RegistrationResult
from linereg.plucker import RigidTransform, canonicalize_lines
from linereg.synth import NoiseConfig, generate_scene
from linereg.training import create_model, make_optimizer, train

TINY16 = NetConfig(knn_k=3, subspace_mlp=(8, 8), fuse_mlp=(16, 16), depth=2, heads=2, feat_dim=16)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


# line-set files -----------------------------------------------------------------------------

def test_lineset_round_trip(rng):
    L = canonicalize_lines(random_lines(rng, 25) * rng.uniform(0.5, 3, size=(25, 1)))
    text = dumps_lineset(L)
    assert text.splitlines()[0] == "PLUECKER_LINES v1 25"
    np.testing.assert_array_equal(loads_lineset(text), L)


def test_lineset_segments_and_comments():
    text = "# two lines\nPLUECKER_LINES v1 2\nSEG 0 1 0 1 1 0  # along x\n\nPLK -2 0 0 0 0 2\n"
    L = loads_lineset(text)
    np.testing.assert_allclose(L, [[1, 0, 0, 0, 0, -1], [1, 0, 0, 0, 0, -1]])


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("PLUECKER_LINE v1 1\nPLK 1 0 0 0 0 0\n", 1),
        ("PLUECKER_LINES v1 2\nPLK 1 0 0 0 0 0\n", 2),
        ("PLUECKER_LINES v1 1\n# c\nPLK 1 0 0 0 zero 0\n", 3),
        ("PLUECKER_LINES v1 1\nPLK 0 0 0 0 0 1\n", 2),
        ("PLUECKER_LINES v1 1\nSEG 1 1 1 1 1 1\n", 2),
        ("PLUECKER_LINES v1 1\nPLK 1 0 0 1 0 0\n", 2),
        ("PLUECKER_LINES v1 1\nPLK 1 0 0 0 0\n", 2),
    ],
)
def test_lineset_parse_errors_name_line(text, lineno):
    with pytest.raises(ParseError) as exc:
        loads_lineset(text, "x.lines")
    assert exc.value.lineno == lineno
    assert f"x.lines:{lineno}" in str(exc.value)


# scenes / results / config ---------------------------------------------------------------------

def test_scene_round_trip():
    sc = generate_scene(4, 2)
    text = dumps_scene(sc)
    back = loads_scene(text)
    np.testing.assert_array_equal(back.source, sc.source)
    np.testing.assert_array_equal(back.target, sc.target)
    np.testing.assert_array_equal(back.gt_matches, sc.gt_matches)
    assert back.gt_pose == sc.gt_pose
    assert dumps_scene(back) == text


def test_scene_bad_json():
    with pytest.raises(ParseError):
        loads_scene("{not json", "s.json")
    with pytest.raises(ParseError):
        loads_scene(json.dumps({"format": "other"}), "s.json")


def test_result_round_trip_and_fields():
    g = RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0]))
    res = RegistrationResult(g, np.array([[0, 1], [2, 3]]), 0.25, 7)
    d = json.loads(dumps_result(res, "net", RigidTransform.identity()))
    assert len(d["R"]) == 9 and d["t"] == [1.0, 2.0, 3.0] and d["quaternion"] == [1.0, 0.0, 0.0, 0.0]
    assert d["inlier_pairs"] == [[0, 1], [2, 3]] and d["score_sum"] == 0.25
    assert d["translation_error_m"] == pytest.approx(np.sqrt(14))
    back = loads_result(dumps_result(res, "net"))
    assert back.pose == g and back.hypothesis_count == 7


def test_config_round_trip(tmp_path):
    cfg = RunConfig.paper(seed=3, rot_range_deg=(0, 30), noise=NoiseConfig.zero())
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(method="sift")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"format": "linereg.config/1", "net": {"feat_dim": 30}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"format": "linereg.config/1", "bogus": 1})


# checkpoints --------------------------------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = RunConfig(net=NetConfig.tiny(), epochs=1, num_lines=20)
    model = create_model(cfg)
    scenes = [generate_scene(0, i, 20) for i in range(3)]
    _, opt = train(model, scenes, cfg)
    save_checkpoint(tmp_path / "m.ckpt", model, opt, 1)
    back, manifest = load_checkpoint(tmp_path / "m.ckpt")
    assert manifest["epoch"] == 1
    for (n, a), (_, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(a, b), n


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingCheckpoint):
        read_checkpoint(tmp_path / "none.ckpt")
    (tmp_path / "bad.ckpt").write_text("garbage")
    with pytest.raises(ParseError):
        read_checkpoint(tmp_path / "bad.ckpt")
    save_checkpoint(tmp_path / "m.ckpt", create_model(RunConfig(net=NetConfig.tiny())))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "m.ckpt", NetConfig.desk())


# metrics -----------------------------------------------------------------------------------------

def test_metric_examples():
    assert recall_curve([0.1, 0.5, 2.0], [1.0])[0] == pytest.approx(2 / 3)
    assert quartiles([3.0]) == (3.0, 3.0, 3.0)


def test_quartiles_sort_oracle(rng):
    e = rng.exponential(size=1000)
    s = sorted(e)

    def q(p):
        pos = p * 999
        lo = int(pos)
        return s[lo] + (s[min(lo + 1, 999)] - s[lo]) * (pos - lo)

    q1, med, q3 = quartiles(e)
    assert (q1, med, q3) == pytest.approx((q(0.25), q(0.5), q(0.75)), abs=1e-12)
    assert q1 <= med <= q3


def test_recall_monotone_and_failures(rng):
    e = np.concatenate([rng.exponential(size=90), np.full(10, np.inf)])
    th = np.sort(rng.uniform(0, 10, size=50))
    r = recall_curve(e, th)
    assert np.all(np.diff(r) >= 0)
    assert recall_curve(e, [np.inf])[0] == pytest.approx(1 - 0.1)
    s = summarize(e, th)
    assert s["failures"] == 10 and s["count"] == 100
    assert np.isfinite(quartiles(e)[1])


# training ------------------------------------------------------------------------------------------

def test_training_lr_zero_leaves_everything_unchanged():
    cfg = RunConfig(net=NetConfig.tiny(), epochs=3, learning_rate=0.0, num_lines=20)
    scenes = [generate_scene(1, i, 20) for i in range(5)]
    model = create_model(cfg)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    hist, _ = train(model, scenes, cfg)
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k]), k
    assert hist[0].mean_loss == hist[1].mean_loss == hist[2].mean_loss


def test_training_trend_tiny():
    cfg = RunConfig(net=TINY16, epochs=50, num_lines=30)
    scenes = [generate_scene(2, i, 30) for i in range(20)]
    hist, _ = train(create_model(cfg), scenes, cfg)
    assert hist[-1].mean_loss < hist[0].mean_loss


def test_training_resume_bitwise(tmp_path):
    cfg = RunConfig(net=NetConfig.tiny(), epochs=4, num_lines=20, batch_size=3)
    scenes = [generate_scene(3, i, 20) for i in range(7)]
    full = create_model(cfg)
    hist_full, _ = train(full, scenes, cfg)

    part = create_model(cfg)
    _, opt = train(part, scenes, cfg.replace(epochs=2))
    save_checkpoint(tmp_path / "half.ckpt", part, opt, 2)
    d = read_checkpoint(tmp_path / "half.ckpt")
    resumed = model_from_dict(d)
    opt2 = make_optimizer(resumed, cfg)
    load_optimizer_state(d, resumed, opt2)
    hist_rest, _ = train(resumed, scenes, cfg, opt2, start_epoch=2)

    assert [h.mean_loss for h in hist_rest] == [h.mean_loss for h in hist_full[2:]]
    for (n, a), (_, b) in zip(full.state_dict().items(), resumed.state_dict().items()):
        assert torch.equal(a, b), n


def test_training_regression_method():
    cfg = RunConfig(net=NetConfig.tiny(), epochs=2, num_lines=20, method="regression")
    hist, _ = train(create_model(cfg), [generate_scene(4, i, 20) for i in range(3)], cfg)
    assert np.isfinite(hist[-1].mean_loss) and np.isnan(hist[-1].precision)


def test_training_non_finite_gradient_names_scene():
    cfg = RunConfig(net=NetConfig.tiny(), epochs=1, num_lines=20)
    model = create_model(cfg)
    with torch.no_grad():
        model.proj.weight.fill_(float("nan"))
    with pytest.raises(NonFiniteGradient, match="epoch 1, scene s"):
        train(model, [generate_scene(5, 0, 20)], cfg, scene_ids=["s0"])


# benchmark -------------------------------------------------------------------------------------------

def test_sweep_grids():
    lv = noise_levels(6)
    assert (lv[0].angle_sigma, lv[0].footprint_sigma) == (0.0, 0.0)
    assert (lv[-1].angle_sigma, lv[-1].footprint_sigma) == (5.0, 0.1)
    assert overlap_levels(5) == [0.2, 0.4, 0.6000000000000001, 0.8, 1.0]


def test_bench_failure_rows_do_not_abort():
    cfg = RunConfig(num_lines=20)
    good = generate_scene(0, 0, 20)
    parallel = np.array([[1.0, 0, 0, 0, 0, z] for z in range(20)])
    bad = type(good)(parallel, parallel, good.gt_pose, good.gt_matches, 0, good.noise_params, 1.0)
    rep = run_benchmark(cfg, [Level("none", NoiseConfig(), 0.7, [good, bad], ["a", "b"])], ["icl"])
    rows = rep.per_scene_csv().splitlines()
    assert len(rows) == 3 and "failed:DegenerateDirections" in rows[2]
    s = rep.summary()[0]["rotation_deg"]
    assert s["failures"] == 1 and s["recall"][-1][1] <= 0.5


def test_evaluate_scene_needs_model():
    with pytest.raises(ValueError):
        evaluate_scene("net", generate_scene(0, 0, 20), "a", RunConfig())


# CLI ---------------------------------------------------------------------------------------------------

def test_cli_generate_deterministic(tmp_path):
    args = ["generate", "--num-scenes", "1", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert read(tmp_path / "a" / "scene_0000.json") == read(tmp_path / "b" / "scene_0000.json")


def test_cli_generate_full_overlap_noise_free(tmp_path):
    assert main(["generate", "--num-scenes", "2", "--overlap", "1", "--noise-footprint-sigma", "0",
                 "--noise-footprint-clip", "0", "--noise-angle-sigma", "0", "--noise-angle-clip", "0",
                 "--out", str(tmp_path)]) == 0
    from linereg.formats import load_scene
    from linereg.plucker import paired_line_distance, transform_lines

    sc = load_scene(tmp_path / "scene_0001.json")
    m = sc.gt_matches
    assert len(m) == 40
    assert paired_line_distance(transform_lines(sc.gt_pose, sc.source[m[:, 0]]), sc.target[m[:, 1]]).max() < 1e-9


def test_cli_register_icl_identity(tmp_path, capsys):
    L = generate_scene(0, 0).source
    save_lineset(tmp_path / "a.lines", L)
    save_lineset(tmp_path / "b.lines", L)
    assert main(["register", "--method", "icl", "--source", str(tmp_path / "a.lines"),
                 "--target", str(tmp_path / "b.lines"), "--out", str(tmp_path / "r.json")]) == 0
    d = json.loads((tmp_path / "r.json").read_text())
    np.testing.assert_allclose(np.reshape(d["R"], (3, 3)), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(d["t"], 0, atol=1e-12)


def test_cli_register_net_on_symmetric_scene(tmp_path):
    # identical source and target give identical features, so the diagonal leads the match list
    save_checkpoint(tmp_path / "m.ckpt", create_model(RunConfig(net=NetConfig.tiny())))
    L = generate_scene(0, 0).source
    save_lineset(tmp_path / "a.lines", L)
    assert main(["register", "--source", str(tmp_path / "a.lines"), "--target", str(tmp_path / "a.lines"),
                 "--checkpoint", str(tmp_path / "m.ckpt"), "--out", str(tmp_path / "r.json")]) == 0
    d = json.loads((tmp_path / "r.json").read_text())
    np.testing.assert_allclose(np.reshape(d["R"], (3, 3)), np.eye(3), atol=1e-9)
    np.testing.assert_allclose(d["t"], 0, atol=1e-9)
    assert len(d["inlier_pairs"]) >= 2
    assert main(["match", "--source", str(tmp_path / "a.lines"), "--target", str(tmp_path / "a.lines"),
                 "--checkpoint", str(tmp_path / "m.ckpt"), "--top-k", "5", "--out", str(tmp_path / "m.csv")]) == 0
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "source_idx,target_idx,weight" and len(rows) == 6


def test_cli_exit_codes(tmp_path, capsys):
    (tmp_path / "bad.lines").write_text("PLUECKER_LINES v1 1\nPLK 1 0 0 1 0 0\n")
    code = main(["register", "--method", "icl", "--source", str(tmp_path / "bad.lines"),
                 "--target", str(tmp_path / "bad.lines")])
    assert code == 2 and "bad.lines:2" in capsys.readouterr().err
    assert main(["register", "--method", "net", "--source", str(tmp_path / "bad.lines"),
                 "--target", str(tmp_path / "bad.lines"), "--checkpoint", str(tmp_path / "none")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["register", "--bogus"])
    assert exc.value.code == 2
    parallel = np.array([[1.0, 0, 0, 0, 0, z] for z in range(5)])
    save_lineset(tmp_path / "p.lines", parallel)
    assert main(["register", "--method", "icl", "--source", str(tmp_path / "p.lines"),
                 "--target", str(tmp_path / "p.lines")]) == 3


def test_cli_train_resume_matches_uninterrupted(tmp_path):
    assert main(["generate", "--num-scenes", "4", "--num-lines", "20", "--out", str(tmp_path / "s")]) == 0
    base = ["train", "--scenes", str(tmp_path / "s"), "--net-knn-k", "3", "--net-subspace-mlp", "8", "8",
            "--net-fuse-mlp", "8", "8", "--net-depth", "2", "--net-feat-dim", "8", "--batch-size", "2"]
    assert main(base + ["--epochs", "3", "--checkpoint", str(tmp_path / "full.ckpt")]) == 0
    assert main(base + ["--epochs", "1", "--checkpoint", str(tmp_path / "part.ckpt")]) == 0
    assert main(base + ["--epochs", "3", "--resume", str(tmp_path / "part.ckpt"),
                        "--checkpoint", str(tmp_path / "part.ckpt")]) == 0
    assert read(tmp_path / "full.ckpt") == read(tmp_path / "part.ckpt")
    assert read(tmp_path / "full.csv") == read(tmp_path / "part.csv")
    assert (tmp_path / "full.csv").read_text().splitlines()[0] == "epoch,mean_loss,match_precision_at_K"


def test_cli_bench_sweep_outputs(tmp_path):
    out = tmp_path / "b"
    assert main(["bench", "--sweep", "overlap", "--sweep-levels", "3", "--num-scenes", "2", "--num-lines", "20",
                 "--methods", "icl", "--out", str(out)]) == 0
    for name in ("per_scene.csv", "recall.csv", "summary.json", "timing.csv"):
        assert os.path.exists(out / name)
    summary = json.loads((out / "summary.json").read_text())
    assert [e["overlap"] for e in summary] == pytest.approx([0.2, 0.6, 1.0])


def test_cli_config_profiles(capsys):
    assert main(["config", "--profile", "paper", "--seed", "4"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["net"]["feat_dim"] == 128 and d["seed"] == 4
    assert main(["config", "--net-feat-dim", "30"]) == 2
