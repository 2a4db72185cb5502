import numpy as np
import pytest

from templatenet.errors import InvalidConfig
from templatenet.nn import ModelGraph, Dense
from templatenet.signal import EpochSet
from templatenet.stager import (
    History,
    PredictionSet,
    TargetSpec,
    TrainConfig,
    accuracy,
    build_target,
    confusion_matrix,
    macro_f1,
    per_class_f1,
    predict,
    train,
)


def _preds(truth, pred):
    logits = np.eye(5)[np.asarray(pred)] * 4
    return PredictionSet.from_logits(logits, truth)


def test_perfect_predictions():
    p = _preds([0, 1, 2, 3, 4, 2], [0, 1, 2, 3, 4, 2])
    assert macro_f1(p) == 1.0 and accuracy(p) == 1.0


def test_f1_hand_case():
    # class 0: tp 1, fp 1, fn 1 -> F1 0.5; class 1: tp 1, fn 0, fp 1 -> 2/3; others absent -> undefined, scored 0
    p = _preds([0, 0, 1], [0, 1, 0])
    f1, undefined = per_class_f1(p)
    assert f1[0] == pytest.approx(0.5)
    assert f1[1] == pytest.approx(0.0)
    assert undefined.tolist() == [False, False, True, True, True]
    assert macro_f1(p) == pytest.approx(0.1)


def test_confusion_matrix():
    cm = confusion_matrix([0, 0, 2], [0, 1, 2])
    assert cm[0, 0] == 1 and cm[0, 1] == 1 and cm[2, 2] == 1 and cm.sum() == 3


def test_prediction_csv_roundtrip(rng):
    p = PredictionSet.from_logits(rng.normal(size=(4, 5)), [0, 1, 2, 3])
    back = PredictionSet.from_csv(p.to_csv())
    np.testing.assert_array_equal(back.logits, p.logits)
    np.testing.assert_array_equal(back.predicted, p.predicted)
    assert p.to_csv().splitlines()[0].startswith("epoch_idx,truth,pred,logit_W")


def test_target_spec_validation():
    with pytest.raises(InvalidConfig):
        TargetSpec(head=(64, 4))
    with pytest.raises(InvalidConfig):
        TargetSpec(first_conv=(8, 150))
    with pytest.raises(InvalidConfig):
        TargetSpec(trunk=((16, 400, 1, 4),))
    with pytest.raises(InvalidConfig):
        build_target(TargetSpec(), init="xavier")


def test_build_target_forward_shape():
    model = build_target(TargetSpec(seed=1))
    assert model.forward(np.zeros((2, 3000))).shape == (2, 5)
    assert build_target(TargetSpec(seed=1)).param_count() == model.param_count()


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(lr_decay=0.0)
    with pytest.raises(InvalidConfig):
        TrainConfig(batch_size=0)


def _separable(rng, n=60, length=20):
    labels = np.arange(n) % 5
    values = rng.normal(size=(n, length)) * 0.1
    values[np.arange(n), labels] += 3.0
    return EpochSet(values, labels, np.array(["a"] * n, dtype=object))


def test_train_learns_separable_problem(rng):
    data = _separable(rng)
    model = ModelGraph([Dense.init(rng, 20, 5)])
    model, hist = train(model, data, data, TrainConfig(lr=0.1, max_epochs=30, patience=5, batch_size=8))
    assert macro_f1(predict(model, data)) == 1.0
    assert hist.rows[0]["epoch"] == 0
    assert hist.to_csv().splitlines()[0] == "epoch,train_loss,val_macro_f1"


def test_train_restores_best_snapshot_and_is_deterministic(rng):
    data = _separable(rng)
    init = ModelGraph([Dense.init(rng, 20, 5)])
    cfg = TrainConfig(lr=0.05, max_epochs=5, patience=2, batch_size=16, seed=3)
    a, ha = train(init.copy(), data, data, cfg)
    b, hb = train(init.copy(), data, data, cfg)
    np.testing.assert_array_equal(a.named_params()["0.dense.weight"], b.named_params()["0.dense.weight"])
    assert ha.rows == hb.rows or all(
        (x["epoch"], x["val_macro_f1"]) == (y["epoch"], y["val_macro_f1"]) for x, y in zip(ha.rows, hb.rows)
    )
    assert macro_f1(predict(a, data)) == ha.best_val_f1


def test_train_rejects_empty(rng):
    data = _separable(rng)
    with pytest.raises(InvalidConfig):
        train(ModelGraph([Dense.init(rng, 20, 5)]), data.subset(np.array([], dtype=int)), data, TrainConfig())


def test_history_defaults():
    assert History().best_val_f1 == float("-inf")
