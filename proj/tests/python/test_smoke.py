import math

import pytest

import stancemil

TINY = {
    "seed": 4,
    "encoder": {"model_dim": 8, "ff_dim": 8, "hash_buckets": 64},
    "stage1": {"learning_rate": 0.01, "max_epochs": 2},
    "stage2": {"learning_rate": 0.01, "max_epochs": 2},
}


@pytest.fixture(scope="module")
def corpus():
    train = stancemil.generate_synthetic(trees=16, seed=1, min_posts=2, max_posts=5, id_prefix="tr")
    test = stancemil.generate_synthetic(trees=6, seed=2, min_posts=2, max_posts=5, id_prefix="te")
    return train, test


def test_target_pairs_and_binarization():
    pairs = stancemil.target_pairs()
    assert len(pairs) == 16
    assert pairs[0] == ("N", "S") and pairs[5] == ("T", "D")
    assert stancemil.binarize("F") == [1 if v == "F" else 0 for v, _ in pairs]
    assert len(stancemil.target_pairs(["T", "F", "U"])) == 12
    with pytest.raises(stancemil.StancemilError) as err:
        stancemil.binarize("X")
    assert err.value.args[0] == "label"


def test_losses_and_auc():
    assert stancemil.binary_loss([(0.8, 1), (0.3, 0)]) == pytest.approx(-math.log(0.8) - math.log(0.7), abs=1e-12)
    expect = -math.log(0.5) - 2 * math.log(0.8) - math.log(0.9)
    assert stancemil.aggregation_claim_loss([0.5, 0.2, 0.2, 0.1], 0) == pytest.approx(expect, abs=1e-12)
    assert stancemil.binary_auc([0.1, 0.4, 0.4, 0.9], [0, 0, 1, 1]) == pytest.approx(0.875)


def test_synthetic_records(corpus):
    train, _ = corpus
    assert len(train) == 16
    assert all(t["veracity"] in "NTFU" for t in train)
    assert all(2 <= len(t["posts"]) <= 5 for t in train)
    assert stancemil.generate_synthetic(trees=16, seed=1, min_posts=2, max_posts=5, id_prefix="tr") == train


def test_train_predict_and_reload(corpus, tmp_path):
    train, test = corpus
    model = stancemil.Model(TINY)
    tr = model.prepare(train, require_labels=True)
    te = model.prepare(test)
    assert len(tr) == 16 and te.claim_ids[0] == "te0000"

    stage1 = model.train_stage1(tr)
    assert len(stage1) == 16 and all(len(h) == 2 for h in stage1)
    before = model.classifier_digests()
    agg = model.aggregator_digest()
    stage2 = model.train_stage2(tr)
    assert len(stage2) == 2
    assert model.classifier_digests() == before
    assert model.aggregator_digest() != agg

    preds = model.predict(te)
    assert [p["claim_id"] for p in preds] == te.claim_ids
    assert sum(preds[0]["beta"]) == pytest.approx(1.0)
    metrics = model.evaluate(te)
    assert 0.0 <= metrics["rumor"]["micro_f1"] <= 1.0

    model.save(tmp_path / "run")
    again = stancemil.Model.from_run(tmp_path / "run")
    assert again.predict(again.prepare(test)) == preds
    att = model.attention(te, te.claim_ids[0])
    assert len(att["beta"]) == 16
    with pytest.raises(stancemil.StancemilError):
        model.attention(te, "missing")


def test_cache_only_generation_gap(corpus):
    train, _ = corpus
    model = stancemil.Model(TINY, provider="none")
    with pytest.raises(stancemil.StancemilError) as err:
        model.prepare(train[:2], require_labels=True)
    assert err.value.args[0] == "generation-gap"


def test_run_is_deterministic(corpus, tmp_path):
    train, test = corpus
    outputs = []
    for i in range(2):
        model = stancemil.Model(TINY)
        model.run(model.prepare(train, True), model.prepare(test), tmp_path / f"r{i}")
        outputs.append((tmp_path / f"r{i}" / "predictions.jsonl").read_bytes())
    assert outputs[0] == outputs[1]


def test_ablations_share_classifiers(corpus):
    train, test = corpus
    res = stancemil.run_ablations(TINY, ["full", "woa"], train, test)
    assert set(res) == {"full", "woa"}
    with pytest.raises(stancemil.StancemilError):
        stancemil.run_ablations(TINY, ["wox"], train, test)


def test_config_errors():
    with pytest.raises(stancemil.StancemilError):
        stancemil.Model({"rho": 2.0})
    with pytest.raises(stancemil.StancemilError):
        stancemil.Model(TINY, provider="carrier-pigeon")
    assert stancemil.Model({"preset": "local-heavy"}).config["lambda"] == 0.7
