import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daftgan.checkpoint import MAGIC, Checkpoint, CheckpointError, load_checkpoint, load_model
from daftgan.config import Config, ConfigError, parse_config, serialize_config
from daftgan.harness.evaluate import evaluate, mask_bias_experiment
from daftgan.harness.masks import MaskSpec
from daftgan.harness.train import LOG_COLUMNS, Trainer, train


# -- config ------------------------------------------------------------------------------------

def test_defaults_match_stated_values():
    cfg = Config()
    assert (cfg.lambda_rec, cfg.lambda_damsm, cfg.lr_g, cfg.lr_d) == (0.2, 0.01, 1e-4, 4e-4)
    assert (cfg.beta1, cfg.beta2, cfg.gp_k, cfg.gp_p) == (0.0, 0.9, 2.0, 6.0)
    assert (cfg.image_size, cfg.batch_size, cfg.steps) == (32, 8, 2000)
    cfg.validate()


def test_trained_text_table_uses_config_scale(tiny_cfg):
    table = Trainer(tiny_cfg).model.text.table.data
    assert Config().text_init_scale == 1.0
    assert 0.8 < table.std() < 1.2
    small = Trainer(tiny_cfg.with_overrides(text_init_scale=0.02)).model.text.table.data
    assert np.allclose(small, table * 0.02, rtol=1e-12, atol=0)


def test_illegal_size_names_rule():
    with pytest.raises(ConfigError, match=r"S = 4\*2\^\(L-1\)"):
        Config(image_size=48).validate()


@pytest.mark.parametrize("field,value,key", [
    ("lambda_rec", -0.1, "loss.lambda_rec"), ("depth", 7, "model.depth"), ("batch_size", 1, "train.batch_size"),
    ("beta2", 1.0, "optim.beta2"), ("kind", "blob", "mask.kind"), ("channels", (4, 4), "model.channels"),
    ("text_init_scale", 0.0, "model.text_init_scale"),
])
def test_validation_names_the_field(field, value, key):
    with pytest.raises(ConfigError) as err:
        Config(**{field: value}).validate()
    assert err.value.key == key and str(err.value).startswith(key)


def test_unknown_and_unparsable_fields():
    with pytest.raises(ConfigError, match="model.widht"):
        parse_config("[model]\nwidht = 3\n")
    with pytest.raises(ConfigError, match="train.steps"):
        parse_config("[train]\nsteps = many\n")


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([3, 4, 5]), st.floats(0, 10, allow_nan=False), st.floats(1e-6, 1e-2),
       st.integers(2, 64), st.integers(0, 2**31), st.sampled_from(["irregular", "center"]),
       st.floats(0, 0.5), st.floats(0.5, 1.0), st.text("abcxyz/_-", min_size=1, max_size=12))
def test_config_roundtrip_fixed_point(depth, lam, lr, bs, master, kind, lo, hi, out):
    cfg = Config(image_size=4 * 2 ** (depth - 1), depth=depth, channels=tuple(range(3, 3 + depth)),
                 lambda_rec=lam, lr_g=lr, batch_size=bs, master=master, kind=kind, lo=lo, hi=hi, dir=out)
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


# -- training loop -------------------------------------------------------------------------------

def test_zero_learning_rates_keep_parameters(tiny_cfg):
    tr = Trainer(tiny_cfg.with_overrides(lr_g=0.0, lr_d=0.0))
    before = tr.model.state_dict()
    tr.run(3)
    after = tr.model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_changes_parameters(tiny_cfg):
    tr = Trainer(tiny_cfg)
    before = tr.model.state_dict()
    tr.run(2)
    changed = [k for k, v in tr.model.state_dict().items() if not np.array_equal(v, before[k])]
    assert any(k.startswith("discriminator.") for k in changed)
    assert any(k.startswith("generator.") for k in changed)
    assert "text.table" in changed


def test_log_and_checkpoints(tiny_run):
    cfg, out = tiny_run
    rows = list(csv.reader(open(out / "train_log.csv")))
    assert rows[0] == LOG_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
    assert all(np.isfinite(float(v)) for r in rows[1:] for v in r[1:])
    assert sorted(p.name for p in out.glob("*.ckpt")) == ["final.ckpt", "step_000002.ckpt", "step_000004.ckpt"]
    assert (out / "final.ckpt").read_bytes() == (out / "step_000004.ckpt").read_bytes()


def test_identical_seeds_identical_runs(tmp_path, tiny_run):
    cfg, ref = tiny_run  # the config text, output dir included, is part of the checkpoint
    train(cfg, tmp_path / "again")
    assert (tmp_path / "again" / "train_log.csv").read_bytes() == (ref / "train_log.csv").read_bytes()
    assert (tmp_path / "again" / "final.ckpt").read_bytes() == (ref / "final.ckpt").read_bytes()


def test_different_master_seed_differs(tiny_cfg, tmp_path, tiny_run):
    _, ref = tiny_run
    train(tiny_cfg.with_overrides(master=1), tmp_path / "other")
    assert (tmp_path / "other" / "final.ckpt").read_bytes() != (ref / "final.ckpt").read_bytes()


def test_resume_matches_uninterrupted(tmp_path, tiny_run):
    cfg, ref = tiny_run
    out = tmp_path / "resumed"
    train(cfg, out, resume=ref / "step_000002.ckpt")
    assert (out / "final.ckpt").read_bytes() == (ref / "final.ckpt").read_bytes()


def test_resume_with_zero_steps_is_identity(tmp_path, tiny_run):
    cfg, ref = tiny_run
    out = tmp_path / "noop"
    train(cfg, out, resume=ref / "final.ckpt")
    assert (out / "final.ckpt").read_bytes() == (ref / "final.ckpt").read_bytes()


def test_nan_aborts_naming_component(tiny_cfg):
    tr = Trainer(tiny_cfg)
    tr.model.generator.to_rgb.bias.data[:] = np.nan
    with pytest.raises(FloatingPointError, match="loss component 'd_"):
        tr.train_step()


def test_trainer_rejects_bad_data(tiny_cfg):
    with pytest.raises(ValueError, match="caption"):
        Trainer(tiny_cfg, np.zeros((3, 3, 16, 16)), ["a"])
    with pytest.raises(ValueError, match="16"):
        Trainer(tiny_cfg, np.zeros((3, 3, 32, 32)), ["a", "b", "c"])


# -- checkpoints --------------------------------------------------------------------------------------

def test_checkpoint_byte_roundtrip(tiny_run, tmp_path):
    _, out = tiny_run
    raw = (out / "final.ckpt").read_bytes()
    assert raw.startswith(MAGIC)
    Checkpoint.from_bytes(raw).save(tmp_path / "copy.ckpt")
    assert (tmp_path / "copy.ckpt").read_bytes() == raw


def test_checkpoint_validation(tiny_run, tiny_cfg):
    _, out = tiny_run
    ck = Checkpoint.load(out / "final.ckpt")
    name = next(iter(ck.params))
    ck.params[name] = np.zeros(ck.params[name].shape + (1,))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(ck, Trainer(tiny_cfg))
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.from_bytes(b"NOTACKPT" + b"\0" * 20)
    raw = (out / "final.ckpt").read_bytes()
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(raw[: len(raw) // 2])
    with pytest.raises(FileNotFoundError):
        Checkpoint.load(out / "missing.ckpt")


def test_load_model_restores_exactly(tiny_run):
    cfg, out = tiny_run
    cfg2, model, ck = load_model(out / "final.ckpt")
    assert cfg2 == cfg and ck.step == 4
    state = model.state_dict()
    assert all(np.array_equal(state[k], ck.params[k]) for k in state)


# -- evaluation ------------------------------------------------------------------------------------------

def test_untrained_model_equals_baseline(tiny_cfg):
    tr = Trainer(tiny_cfg)
    res = evaluate(tr.model, tiny_cfg)
    assert res.psnr == res.baseline_psnr and res.ssim == res.baseline_ssim
    assert res.count == tiny_cfg.eval_scenes


def test_empty_masks_score_cap(tiny_cfg):
    tr = Trainer(tiny_cfg)
    res = evaluate(tr.model, tiny_cfg, MaskSpec("irregular", 0.0, 0.0))
    assert res.psnr == 100.0 and res.ssim == pytest.approx(1.0, abs=1e-15)


def test_evaluate_deterministic_and_csv(tiny_run, tmp_path):
    _, out = tiny_run
    cfg, model, _ = load_model(out / "final.ckpt")
    a, b = evaluate(model, cfg), evaluate(model, cfg)
    assert a == b
    a.write_csv(tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["row", "psnr", "ssim", "count"]
    assert [r[0] for r in rows[1:]] == ["composited", "masked_input"]
    assert float(rows[1][1]) == a.psnr


def test_mask_bias_experiment_plumbing(tiny_run, tmp_path):
    _, out = tiny_run
    ck = out / "final.ckpt"
    rep = mask_bias_experiment(ck, ck, 8)
    assert rep.grid[("center", "center")] == rep.grid[("diverse", "center")]
    assert rep.grid[("center", "irregular")] == rep.grid[("diverse", "irregular")]
    assert rep.gap("center") == rep.gap("diverse")
    assert "gap" in rep.table()
    with pytest.raises(FileNotFoundError, match="center"):
        mask_bias_experiment(tmp_path / "none.ckpt", ck, 8)
