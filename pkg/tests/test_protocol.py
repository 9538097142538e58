import numpy as np
import pytest

from prompt_dqa.protocol import (METHODS, MetricsReport, average_triples, build_model, evaluate, load_samples,
                                 run_protocol)
from prompt_dqa.tensor import ContractError
from prompt_dqa.training import TrainConfig


@pytest.fixture(scope="module")
def samples(tiny_corpus):
    root, records = tiny_corpus
    return load_samples(records, root)


def test_method_table():
    assert METHODS == {"m1": ("none", False), "m2": ("textual_only", False),
                       "m3": ("both", False), "full": ("both", True)}
    with pytest.raises(ContractError):
        build_model(None, "m9")


def test_single_repeat_average_equals_triple(toy_backbone, samples):
    rep = run_protocol(samples, toy_backbone, "m1", TrainConfig(epochs=0), repeats=1, n_patches=1)
    assert rep.average == {k: rep.repeats[0][k] for k in ("srcc", "plcc", "krcc")}


def test_protocol_is_deterministic(toy_backbone, samples):
    cfg = TrainConfig(epochs=1, batch_size=8, learning_rate=1e-2)
    a = run_protocol(samples, toy_backbone, "full", cfg, repeats=2, n_patches=1, with_train_metrics=True)
    b = run_protocol(samples, toy_backbone, "full", cfg, repeats=2, n_patches=1, with_train_metrics=True)
    assert a.to_json() == b.to_json()
    assert set(a.repeats[0]) == {"repeat", "srcc", "plcc", "krcc", "train"}


def test_repeats_use_different_splits(toy_backbone, samples):
    rep = run_protocol(samples, toy_backbone, "m1", TrainConfig(epochs=0), repeats=3, n_patches=1)
    assert len({(r["srcc"], r["plcc"]) for r in rep.repeats}) > 1
    with pytest.raises(ContractError):
        run_protocol(samples, toy_backbone, "m1", TrainConfig(), repeats=0)


def test_model_evaluation_and_empty_split(toy_backbone, samples):
    model = build_model(toy_backbone, "full", 0)
    triple = evaluate(model, samples, n_patches=2)
    assert all(-1 <= v <= 1 for v in triple.values())
    with pytest.raises(ContractError):
        evaluate(model, [])


def test_average_and_report_json():
    avg = average_triples([{"srcc": 0.2, "plcc": 0.4, "krcc": 0.0}, {"srcc": 0.4, "plcc": 0.0, "krcc": 1.0}])
    assert avg == pytest.approx({"srcc": 0.3, "plcc": 0.2, "krcc": 0.5})
    assert MetricsReport([], avg).to_json().startswith('{"average"')
