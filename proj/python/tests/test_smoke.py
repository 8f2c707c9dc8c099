import math

import pytest

import dynret


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    files = dynret.synthesize(root, seed=5, num_docs=80)
    return root, files


def test_tokenize():
    assert dynret.tokenize("The cat, the CAT!") == ["the", "cat", "the", "cat"]


def test_metrics_fixture():
    run = {"q1": ["a"], "q2": ["x", "y", "z", "b"], "q3": ["c"]}
    qrels = {"q1": "a", "q2": "b", "q3": "d"}
    assert dynret.mrr(run, qrels) == pytest.approx(0.416667, abs=1e-6)
    assert dynret.recall_at_k(run, qrels, 1) == pytest.approx(1 / 3)
    report = dynret.evaluate(run, qrels)
    assert report["queries"] == 3
    assert report["Recall@20"] == pytest.approx(2 / 3)
    with pytest.raises(ValueError, match="absent from qrels"):
        dynret.mrr({"zz": ["a"]}, qrels)


def test_merge_modes():
    a = [(0, 3.0), (1, 1.0)]
    b = [(10, 103.0), (11, 101.0)]
    assert [d for d, _ in dynret.merge([a, b], 4, "raw")] == [10, 11, 0, 1]
    z = dynret.merge([a, b], 4, "zscore")
    assert {d for d, _ in z[:2]} == {0, 10}
    with pytest.raises(ValueError):
        dynret.merge([a], 1, "median")


def test_config_hash_is_layout_independent():
    assert dynret.config_hash("lr = 0.01\nseed = 5\n") == dynret.config_hash("seed=5\n# note\nlr=1e-2")
    with pytest.raises(ValueError):
        dynret.config_hash("bogus = 1")


def test_gradcheck():
    err, per_tensor = dynret.gradcheck()
    assert err < 1e-4
    assert len(per_tensor) > 10


def test_bm25(data):
    _, files = data
    corpus = dynret.Corpus.load(files["docs"])
    assert len(corpus) == 80
    first = corpus.docids()[0]
    hits = dynret.bm25_search(corpus, "t0w0 t0w1", k=5)
    assert 0 < len(hits) <= 5
    assert all(s1 >= s2 for (_, s1), (_, s2) in zip(hits, hits[1:]))
    assert isinstance(first, str)


def test_cli_train_retrieve_eval(data, tmp_path):
    root, files = data
    common = [
        "--quiet", "--corpus", str(files["docs"]), "--queries", str(files["train_queries"]),
        "--qrels", str(files["train_qrels"]), "--set", "d_model=16", "--set", "heads=2", "--set", "layers=1",
        "--set", "d_ff=32", "--set", "pretrain_epochs=1", "--set", "finetune_epochs=2",
        "--set", "samples_per_doc=2", "--out-dir", str(tmp_path),
    ]
    assert dynret.run_cli(common + ["train-vanilla"]) == 0
    ckpt = tmp_path / "model.ckpt"
    assert ckpt.read_bytes()[:4] == b"DYNR"
    assert dynret.run_cli(common + ["retrieve", "--checkpoint", str(ckpt)]) == 0
    report = dynret.evaluate_files(tmp_path / "run.trec", files["train_qrels"])
    assert 0.0 <= report["MRR@100"] <= report["Recall@100"] <= 1.0

    corpus = dynret.Corpus.load(files["docs"])
    model = dynret.Retriever(ckpt, corpus)
    assert model.num_docs == 80
    logits, probs = model.score_all("t1w3 t1w4")
    assert logits.shape == (80,)
    assert math.isclose(float(probs.sum()), 1.0, rel_tol=1e-5)
    hits = model.search("t1w3 t1w4", k=10)
    assert len(hits) == 10
    assert hits[0][0] == corpus.docids()[int(logits.argmax())]


def test_usage_errors_exit_two():
    assert dynret.run_cli(["--set", "no_such_key=1", "ingest"]) == 2
