import numpy as np
import pytest

from lnfno import autodiff as ad
from lnfno.autodiff import Tensor
from lnfno.errors import ContractError, DimensionError, TrainingError
from lnfno.models import ModelSpec, build_model
from lnfno.train import (Dataset, Metrics, Normalizer, TrainConfig, evaluate, loss_multifield,
                         relative_errors, split_dataset, train_loop, write_final, write_history)

from gradcheck import probe_gradients


def toy_dataset(n=40, seed=0):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, 16))
    W = rng.standard_normal((16, 9)) / 4
    u = np.tanh(g @ W) + 0.5
    return Dataset({"g": g}, {"u": u.reshape(n, 3, 3)})


def toy_model(seed=0):
    return build_model(ModelSpec("lnfno", "A", [(16,)], (3, 3), ablation="no_enc_dec", hidden=8), seed)


def test_split_is_deterministic_disjoint_and_nine_to_one():
    tr, te = split_dataset(200, seed=3)
    tr2, te2 = split_dataset(200, seed=3)
    np.testing.assert_array_equal(tr, tr2)
    assert len(tr) == 180 and len(te) == 20
    assert not set(tr) & set(te) and np.all(np.diff(tr) > 0)
    assert not np.array_equal(split_dataset(200, seed=4)[1], te)
    with pytest.raises(ContractError):
        split_dataset(5)


def test_normalizer_statistics_and_inverse():
    ds = toy_dataset()
    norm = Normalizer().fit(ds)
    z = norm.normalize("u", ds.outputs["u"])
    assert abs(z.mean()) < 1e-10 and abs(z.std() - 1) < 1e-10
    np.testing.assert_allclose(norm.denormalize("u", z), ds.outputs["u"], atol=1e-12)
    again = Normalizer.from_dict(norm.to_dict())
    assert again.stats == norm.stats


def test_normalizer_constant_field_falls_back_to_unit_scale():
    ds = Dataset({"g": np.full((12, 3), 2.0)}, {"u": np.ones((12, 2))})
    norm = Normalizer().fit(ds)
    assert norm.stats["g"] == (2.0, 1.0)
    np.testing.assert_array_equal(norm.normalize("g", ds.inputs["g"]), 0.0)
    with pytest.raises(ContractError):
        Normalizer().normalize("g", 1.0)


def test_loss_matches_formula_and_gradient():
    rng = np.random.default_rng(0)
    pred = rng.standard_normal((4, 10))
    target = rng.standard_normal((4, 10))
    p = Tensor(pred, requires_grad=True)
    val = float(loss_multifield(p, target, n_fields=2).data)
    ref = np.mean([np.linalg.norm(pred[b, c * 5:(c + 1) * 5] - target[b, c * 5:(c + 1) * 5])
                   / (np.linalg.norm(target[b, c * 5:(c + 1) * 5]) + 1e-12)
                   for b in range(4) for c in range(2)])
    assert val == pytest.approx(ref, rel=1e-13)
    assert probe_gradients(lambda: loss_multifield(p, target, 2), [p], rng) < 1e-5
    np.testing.assert_allclose(relative_errors(target, target, 2), 0.0)
    with pytest.raises(DimensionError):
        loss_multifield(p, target, n_fields=3)


def test_training_is_deterministic_and_learns():
    ds = toy_dataset()
    tr, te = split_dataset(ds.n_samples, 0)
    train_ds, test_ds = ds.subset(tr), ds.subset(te)
    norm = Normalizer().fit(train_ds)
    cfg = TrainConfig(epochs=30, lr=3e-3, batch_size=8)
    m1, h1 = train_loop(toy_model(), train_ds, norm, cfg)
    m2, h2 = train_loop(toy_model(), train_ds, norm, cfg)
    assert h1.train_loss == h2.train_loss
    for name, t in m1.params.items():
        assert t.data.tobytes() == m2.params[name].data.tobytes()
    assert h1.train_loss[-1] < 0.5 * h1.train_loss[0]
    ev = evaluate(m1, test_ds, norm)
    assert set(ev.per_field) == {"u"} and ev.test_rel_l2 == ev.per_field["u"]


def test_training_reports_non_finite_loss():
    ds = toy_dataset(20)
    norm = Normalizer().fit(ds)
    bad = Dataset({"g": np.where(np.arange(16) == 3, np.nan, ds.inputs["g"])}, ds.outputs)
    with pytest.raises(TrainingError) as exc:
        train_loop(toy_model(), bad, norm, TrainConfig(epochs=2))
    assert exc.value.epoch == 0


def test_config_contract():
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)


def test_metric_files(tmp_path):
    m = Metrics(train_loss=[0.5, 0.25], test_rel_l2=0.125, per_field={"phi": 0.1, "c": 0.15},
                wall_seconds=1.23456)
    write_history(tmp_path / "h.csv", m)
    write_final(tmp_path / "f.csv", m)
    assert (tmp_path / "h.csv").read_text() == "epoch,train_loss\n0,0.5\n1,0.25\n"
    assert (tmp_path / "f.csv").read_text() == "test_rel_l2,phi,c,wall_seconds\n0.125,0.1,0.15,1.235\n"
