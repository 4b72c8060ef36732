import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcshift.errors import ConfigError, DataError
from vcshift.evaluation import (
    SCENARIOS,
    ConversionStudy,
    EvalConfig,
    EvalReport,
    conversion_matrix,
    fit_probe,
    probe_accuracy,
    probe_transfer_accuracy,
    round_robin,
    run_conversions,
    run_eval,
    similarity,
    utterance_embedding,
)
from vcshift.corpus import read_manifest
from vcshift.dsp import load_waveform


def test_similarity_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert similarity(a, a) == pytest.approx(1.0)
    assert similarity([1, 0], [0, 1]) == 0.0
    assert similarity(a, -a) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        similarity([0, 0], [1, 0])
    with pytest.raises(ValueError):
        similarity([1, 0], [1, 0, 0])


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.floats(1e-3, 1e3))
def test_similarity_symmetric_and_scale_invariant(a, b, lam):
    assert similarity(a, b) == pytest.approx(similarity(b, a), abs=1e-12)
    assert similarity(np.multiply(lam, a), b) == pytest.approx(similarity(a, b), abs=1e-9)


def _clusters(n=20, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-5, 1, (n, 4)), rng.normal(5, 1, (n, 4))])
    return x, ["a"] * n + ["b"] * n


def test_probe_separable_is_perfect():
    x, y = _clusters()
    assert probe_accuracy(x, y) == 100.0
    assert probe_transfer_accuracy(fit_probe(x, y), x, y) == 100.0


def test_probe_shuffled_labels_near_chance():
    # permutation oracle: averaged over several shuffles of structureless data
    rng = np.random.default_rng(1)
    accs = []
    for k in range(5):
        x = rng.normal(size=(60, 8))
        y = rng.permutation(["a", "b", "c"] * 20)
        accs.append(probe_accuracy(x, y, seed=k))
    assert abs(np.mean(accs) - 100 / 3) <= 15


def test_probe_label_errors():
    with pytest.raises(DataError):
        probe_accuracy(np.zeros((5, 2)), ["a"] * 5)
    with pytest.raises(DataError):
        probe_accuracy(np.zeros((7, 2)), ["a"] * 4 + ["b"] * 3)


def test_probe_folds_capped_at_class_size():
    x, y = _clusters(4)
    assert probe_accuracy(x, y, folds=5) == 100.0


def _study():
    rng = np.random.default_rng(2)
    orig = rng.normal(size=(4, 5))
    conv = rng.normal(size=(4, 2, 5))
    return ConversionStudy(["s0", "s0", "s1", "s1"], ["s0", "s1"], orig, conv,
                           {"s0": orig[:2], "s1": orig[2:]})


def test_matrix_against_direct_enumeration():
    s = _study()
    m = conversion_matrix(s)
    o2o = np.mean([similarity(s.original[0], s.original[1]), similarity(s.original[2], s.original[3])])
    assert m["O2O"] == pytest.approx(o2o)
    c2c = [similarity(s.converted[i, k], s.converted[j, k]) for k in range(2) for i in range(4) for j in range(i + 1, 4)]
    assert m["C2C"] == pytest.approx(np.mean(c2c))
    assert set(SCENARIOS) <= set(m)


def test_o2o_self_pair_is_one():
    v = np.array([[0.3, -1.0, 2.0], [0.3, -1.0, 2.0]])
    s = ConversionStudy(["a", "a"], ["a"], v, v[:, None, :], {"a": v})
    m = conversion_matrix(s)
    assert m["O2O"] == 1.0


def test_matrix_empty_population():
    s = _study()
    s.target_originals = {}
    with pytest.raises(DataError, match="O2C"):
        conversion_matrix(s)


def test_report_rendering(tmp_path):
    rep = EvalReport({"original clips": {"voice_id": 90.6, "accent": 95.6}}, {**dict.fromkeys(SCENARIOS, 0.95), "cross_target": -0.2},
                     {"checkpoint": "x.vckp"})
    assert rep.floored()["cross_target"] == 0.0
    text = rep.to_text("Proposed")
    assert "Voice Identification" in text and "90.6" in text and "95.6" in text
    assert "0.9500" in text and "checkpoint: x.vckp" in text
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "section,row,column,value"
    assert "similarity,cosine similarity of utterance embeddings,cross_target,0.0000" in lines


def test_round_robin():
    class R:
        def __init__(self, s, i):
            self.speaker_id, self.i = s, i
    recs = [R("a", 0), R("a", 1), R("a", 2), R("b", 0), R("c", 0)]
    assert [(r.speaker_id, r.i) for r in round_robin(recs, 4)] == [("a", 0), ("b", 0), ("c", 0), ("a", 1)]


def test_eval_config_validation():
    with pytest.raises(ConfigError, match="eval.probe_folds"):
        EvalConfig(probe_folds=1).validate()


# --------------------------------------------------------- with a model

def test_embedding_contract(tiny_trained, tiny_cfg, tiny_corpus):
    result, _ = tiny_trained
    w = load_waveform(read_manifest(tiny_corpus)[0].path)
    a = utterance_embedding(w, result.model, tiny_cfg)
    b = utterance_embedding(w, result.model, tiny_cfg)
    assert a.shape == (tiny_cfg.encoder.hidden_size + 2,)
    np.testing.assert_array_equal(a, b)


def test_run_eval_deterministic(tiny_trained, tiny_cfg, tiny_corpus):
    from dataclasses import replace
    result, _ = tiny_trained
    cfg = replace(tiny_cfg, eval=replace(tiny_cfg.eval, held_out_clips=4))
    recs = read_manifest(tiny_corpus)
    one = run_eval(result.model, cfg, recs, recs)
    two = run_eval(result.model, cfg, recs, recs)
    assert one.report.matrix == two.report.matrix
    assert one.report.accuracies == two.report.accuracies
    assert one.voice_study.converted.shape == (4, 2, tiny_cfg.encoder.hidden_size + 2)
