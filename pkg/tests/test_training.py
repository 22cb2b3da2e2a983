import math

import numpy as np
import pytest
import torch

import posekit.training as T
from posekit.data import generate_dataset, load_dataset
from posekit.data.augment import NO_JITTER
from posekit.errors import ConfigMismatch, InvalidConfig, MissingPrediction, NonFiniteLoss, UnknownId
from posekit.geometry import IDENTITY, Pose, quat_angular_distance, random_quaternions
from posekit.model import ModelConfig, build_model
from posekit.training import (
    ImageCache,
    MalformedSubmission,
    TrainConfig,
    build_batch,
    evaluate,
    evaluate_model,
    load_checkpoint,
    lr_at,
    make_checkpoint,
    oracle_report,
    predict,
    read_submission,
    save_checkpoint,
    score_submission,
    train,
    truncate_schedule,
    write_submission,
)


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    generate_dataset(24, 1, "synthetic", out_dir=root / "train")
    generate_dataset(8, 2, "synthetic", out_dir=root / "val")
    return load_dataset(root / "train"), load_dataset(root / "val"), root


def quick_cfg(**kw):
    base = dict(model=ModelConfig(n_bins=6), lr_schedule=((1, 0.01),), batch_size=8, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_schedule_helpers():
    sched = ((30, 0.01), (15, 0.001), (5, 0.0001))
    assert sum(n for n, _ in truncate_schedule(sched, 50)) == 50
    assert truncate_schedule(sched, 31) == ((30, 0.01), (1, 0.001))
    assert truncate_schedule(sched, 60)[-1] == (15, 0.0001)
    assert [lr_at(sched, e) for e in (0, 29, 30, 44, 45, 49, 80)] == [
        0.01, 0.01, 0.001, 0.001, 0.0001, 0.0001, 0.0001]
    with pytest.raises(InvalidConfig):
        truncate_schedule(sched, 0)


def test_paper_recipe_defaults():
    cfg = TrainConfig(lr_schedule=T.PAPER_SCHEDULE)
    assert cfg.epochs == 50
    assert (cfg.batch_size, cfg.momentum, cfg.delta, cfg.roll_prob, cfg.roll_max_deg) == (32, 0.9, 3.0, 0.5, 25.0)
    assert TrainConfig().epochs == 27


def test_train_config_round_trip_and_validation():
    cfg = quick_cfg(delta=2.5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig):
        quick_cfg(lr_schedule=((0, 0.1),))
    with pytest.raises(InvalidConfig):
        quick_cfg(batch_size=0)
    with pytest.raises(InvalidConfig):
        quick_cfg(roll_prob=1.5)


def test_build_batch_is_seeded(small_set):
    tr, _, _ = small_set
    cache = ImageCache(tr[:6])
    cfg = quick_cfg()
    k = T.CameraIntrinsics()
    x1, l1 = build_batch(cache, [0, 3, 5], 2, cfg, k)
    x2, l2 = build_batch(cache, [5, 3, 0], 2, cfg, k)
    torch.testing.assert_close(x1[0], x2[2])
    torch.testing.assert_close(l1["orientation"][1], l2["orientation"][1])
    x3, _ = build_batch(cache, [0], 3, cfg, k)
    assert x1.shape == (3, 1, 120, 192)
    assert not torch.equal(x1[0], x3[0])
    # no augmentation means labels are untouched
    _, plain = build_batch(cache, [0], 0, cfg, k, augment=False)
    np.testing.assert_allclose(plain["position"][0].numpy(), tr[0].pose.position, rtol=1e-6)


@pytest.mark.parametrize("mode", ["softclass", "regression"])
def test_one_epoch_train_and_checkpoint_round_trip(mode, small_set, tmp_path):
    tr, va, _ = small_set
    cfg = quick_cfg(model=ModelConfig(n_bins=6, head_mode=mode))
    rows = []
    result = train(cfg, tr, va, progress=rows.append)
    assert len(result.log.rows) == 1 == len(rows)
    row = result.log.rows[0]
    assert all(math.isfinite(v) for v in vars(row).values())
    path = tmp_path / "ckpt.pt"
    save_checkpoint(result.final, path)
    assert path.with_suffix(".config.json").exists()
    ckpt = load_checkpoint(path)
    assert ckpt["epoch"] == 0 and ckpt["version"] == T.CHECKPOINT_VERSION
    assert TrainConfig.from_dict(ckpt["train_config"]) == cfg
    rep = evaluate(path, va)
    assert rep.n_samples == len(va)
    assert rep.esa_score == pytest.approx(row.val_esa, rel=1e-5)
    assert rep.meta["head_mode"] == mode
    log_text = result.log.to_csv()
    (tmp_path / "log.csv").write_text(log_text)
    assert T.TrainLog.read_csv(tmp_path / "log.csv").rows[0].val_esa == pytest.approx(row.val_esa, rel=1e-8)


def test_training_is_deterministic(small_set):
    tr, va, _ = small_set
    a = train(quick_cfg(), tr, va).log.rows
    b = train(quick_cfg(), tr, va).log.rows
    assert a == b


def test_non_finite_loss_names_batch(small_set, monkeypatch):
    tr, va, _ = small_set

    def bad_loss(*args, **kwargs):
        nan = torch.tensor(float("nan"), requires_grad=True)
        return nan, {"position": nan, "orientation": nan}

    monkeypatch.setattr(T, "combined_loss", bad_loss)
    with pytest.raises(NonFiniteLoss) as info:
        train(quick_cfg(), tr, va)
    assert len(info.value.batch_ids) == 8
    assert all(i.startswith("img") for i in info.value.batch_ids)


def test_checkpoint_rejects_foreign_files(tmp_path):
    torch.save({"format": "other"}, tmp_path / "x.pt")
    with pytest.raises(ConfigMismatch):
        load_checkpoint(tmp_path / "x.pt")


def test_evaluate_rejects_color_images(small_set):
    _, va, _ = small_set
    ckpt = make_checkpoint(build_model(ModelConfig(n_bins=6)), quick_cfg(), 0, T.CameraIntrinsics())
    with pytest.raises(ConfigMismatch):
        evaluate(ckpt, va[:1], [np.zeros((120, 192, 3), np.uint8)])


def test_untrained_model_is_at_random_baseline(tmp_path):
    generate_dataset(320, 77, out_dir=tmp_path)
    records = load_dataset(tmp_path)
    rep = evaluate_model(build_model(ModelConfig(seed=5)), records)
    errs = np.array([s.e_q for s in rep.per_image])
    baseline = math.degrees(math.pi / 2 + 2 / math.pi)
    # per-sample spread of the angle to a uniform rotation, from Monte Carlo
    rng = np.random.default_rng(0)
    spread = np.degrees(quat_angular_distance(random_quaternions(rng, 100_000), IDENTITY)).std()
    assert abs(errs.mean() - baseline) < 3 * spread / math.sqrt(len(errs))


def test_oracle_report_is_zero(small_set):
    rep = oracle_report(small_set[1])
    assert (rep.e_t_mean, rep.e_q_mean, rep.esa_score) == (0.0, 0.0, 0.0)


def test_predict_and_score_round_trip(small_set, tmp_path):
    tr, va, root = small_set
    ckpt = make_checkpoint(build_model(ModelConfig(n_bins=6)), quick_cfg(jitter=NO_JITTER), 0, T.CameraIntrinsics())
    text = predict(ckpt, root / "val", tmp_path / "sub.csv")
    assert text.splitlines()[0] == ",".join(T.SUBMISSION_HEADER)
    assert len(text.splitlines()) == 1 + len(va)
    result = score_submission(tmp_path / "sub.csv", root / "val" / "labels.json")
    direct = evaluate(ckpt, va)
    assert result.report.esa_score == pytest.approx(direct.esa_score, rel=1e-6)
    assert result.g_factor is None


def _labels(tmp_path, rows):
    import json

    entries = [{"filename": i, "q_vbs2tango": list(IDENTITY), "r_Vo2To_vbs_true": [0, 0, 10.0], "domain": d}
               for i, d in rows]
    path = tmp_path / "labels.json"
    path.write_text(json.dumps(entries))
    return path


def test_score_reproduces_published_g_factor(tmp_path):
    labels = _labels(tmp_path, [("s1", "synthetic"), ("s2", "synthetic"), ("r1", "pseudo_real")])
    # ESA = e_t / ||t|| with ||t|| = 10 and exact orientation
    rows = [("s1", IDENTITY, [0, 0, 10.571]), ("s2", IDENTITY, [0, 0, 9.429]), ("r1", IDENTITY, [0, 0, 11.555])]
    write_submission(rows, tmp_path / "sub.csv")
    result = score_submission(tmp_path / "sub.csv", labels)
    assert result.per_domain["synthetic"].esa_score == pytest.approx(0.0571, abs=1e-9)
    assert result.per_domain["pseudo_real"].esa_score == pytest.approx(0.1555, abs=1e-9)
    assert round(result.g_factor, 2) == 2.72


def test_score_join_errors(tmp_path):
    labels = _labels(tmp_path, [("a", "synthetic"), ("b", "synthetic")])
    write_submission([("a", IDENTITY, [0, 0, 10])], tmp_path / "missing.csv")
    with pytest.raises(MissingPrediction):
        score_submission(tmp_path / "missing.csv", labels)
    write_submission([("a", IDENTITY, [0, 0, 10]), ("b", IDENTITY, [0, 0, 10]), ("c", IDENTITY, [0, 0, 1])],
                     tmp_path / "extra.csv")
    with pytest.raises(UnknownId):
        score_submission(tmp_path / "extra.csv", labels)


@pytest.mark.parametrize(
    "body, line",
    [
        ("a,1,0,0,0,0,0,10\nb,1,0,0\n", 3),
        ("a,1,0,0,0,0,0,x\n", 2),
        ("a,0,0,0,0,0,0,10\n", 2),
        ("a,1,0,0,0,0,0,10\na,1,0,0,0,0,0,10\n", 3),
    ],
)
def test_read_submission_reports_line_numbers(tmp_path, body, line):
    path = tmp_path / "s.csv"
    path.write_text(",".join(T.SUBMISSION_HEADER) + "\n" + body)
    with pytest.raises(MalformedSubmission, match=f"s.csv:{line}:"):
        read_submission(path)


def test_submission_round_trip(tmp_path):
    q = random_quaternions(np.random.default_rng(1), 3)
    rows = [(f"i{j}", q[j], [j, 1.0, 5.0]) for j in range(3)]
    write_submission(rows, tmp_path / "s.csv")
    back = read_submission(tmp_path / "s.csv")
    for name, qj, tj in rows:
        assert quat_angular_distance(back[name].orientation, qj) < 1e-7
        np.testing.assert_allclose(back[name].position, tj)
    assert isinstance(back["i0"], Pose)
