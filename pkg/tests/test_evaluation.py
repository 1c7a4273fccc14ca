import numpy as np
import pytest

from gaid.evaluation import (
    dsl,
    evaluate,
    mean_gates,
    query_ranks,
    rank_metrics,
    v2t_metrics,
    v2t_ranks,
    write_rank_csv,
)
from gaid.feature_io import SynthConfig, gen_synthetic
from gaid.train.params import init_params
from oracles import dsl_direct, metrics_from_ranks, t2v_ranks_brute, v2t_ranks_brute


def _as_dict(m):
    return {k: getattr(m, k) for k in ("r1", "r5", "r10", "mdr", "mnr")}


def test_identity_is_perfect():
    m = rank_metrics(np.eye(10), np.arange(10))
    assert _as_dict(m) == {"r1": 100, "r5": 100, "r10": 100, "mdr": 1, "mnr": 1}
    assert _as_dict(v2t_metrics(np.eye(10).T, np.arange(10))) == _as_dict(m)


def test_true_scores_smallest():
    sim = np.ones((10, 10)) - np.eye(10)
    m = rank_metrics(sim, np.arange(10))
    assert _as_dict(m) == {"r1": 0, "r5": 0, "r10": 100, "mdr": 10, "mnr": 10}


def test_ties_are_pessimistic():
    sim = np.zeros((3, 3))
    assert query_ranks(sim, np.arange(3)).tolist() == [3, 3, 3]


def test_random_against_sort_oracle(rng):
    sim = rng.standard_normal((20, 20))
    truth = rng.integers(0, 20, size=20)
    assert _as_dict(rank_metrics(sim, truth)) == metrics_from_ranks(t2v_ranks_brute(sim.tolist(), truth))


def test_v2t_single_caption_equals_transpose(rng):
    sim = rng.standard_normal((12, 12))
    perm = rng.permutation(12)
    # caption q belongs to video perm[q]; on the transpose, video perm[q] must find caption q
    inv = np.argsort(perm)
    assert v2t_ranks(sim, perm).tolist() == query_ranks(sim.T, inv).tolist()


def test_v2t_five_captions_against_oracle(rng):
    V = 8
    truth = np.repeat(np.arange(V), 5)
    rng.shuffle(truth)
    sim = np.round(rng.standard_normal((5 * V, V)), 1)  # rounding forces ties
    assert v2t_ranks(sim, truth).tolist() == v2t_ranks_brute(sim.tolist(), truth.tolist())


def test_rank_input_errors():
    with pytest.raises(ValueError):
        query_ranks(np.eye(3), np.arange(2))
    with pytest.raises(ValueError):
        query_ranks(np.eye(3), np.array([0, 1, 3]))
    with pytest.raises(ValueError):
        v2t_ranks(np.eye(3), np.array([0, 0, 1]))


def test_dsl_singleton_and_permutation(rng):
    assert dsl(np.array([[0.4]])).tolist() == [[0.4]]
    perm = rng.permutation(6)
    sim = 0.1 * rng.random((6, 6))
    sim[np.arange(6), perm] = 0.9
    assert np.argmax(dsl(sim), axis=1).tolist() == perm.tolist()


def test_dsl_hub_case(frozen):
    case = frozen["dsl_hub"]
    sim = np.array(case["sim"])
    out = dsl(sim, case["beta"])
    np.testing.assert_allclose(out, case["out"], atol=1e-12)
    np.testing.assert_allclose(out, dsl_direct(sim, case["beta"]), atol=1e-12)
    assert np.argmax(sim[1]) == 0 and np.argmax(out[1]) == 1


# --- full evaluation pipeline --------------------------------------------------


@pytest.fixture(scope="module")
def small():
    ds = gen_synthetic(SynthConfig(samples=24, frames=4, d_model=16, rho=0.5, blank_fraction=0.3), 0)
    p = init_params(16, "frame", 0)
    rng = np.random.default_rng(0)
    p.perturb.W_s += 0.3 * rng.standard_normal(p.perturb.W_s.shape).astype(np.float32)
    p.perturb.b_s[:] = -1.0
    return ds, p


def test_pass_counts(small):
    ds, p = small
    assert evaluate(p, ds, "dasp").cost.forward_passes_per_query == 1
    assert evaluate(p, ds, "none").cost.forward_passes_per_query == 1
    assert evaluate(p, ds, "stp", stp_samples=20).cost.forward_passes_per_query == 20


def test_stp_with_sigma_alpha_equals_dasp(small):
    ds, p = small
    alpha = p.perturb.alpha
    stp = evaluate(p, ds, "stp", stp_samples=1, sigma_fn=lambda k, shape: np.full(shape, alpha, np.float32))
    dasp = evaluate(p, ds, "dasp")
    np.testing.assert_allclose(stp.sim, dasp.sim, rtol=0, atol=1e-6)
    assert stp.to_dict()["t2v"] == dasp.to_dict()["t2v"]
    assert stp.to_dict()["v2t"] == dasp.to_dict()["v2t"]


def test_dasp_deterministic(small):
    ds, p = small
    a, b = evaluate(p, ds, "dasp"), evaluate(p, ds, "dasp")
    assert a.sim.tobytes() == b.sim.tobytes()
    assert {k: v for k, v in a.to_dict().items() if k != "cost"} == {k: v for k, v in b.to_dict().items() if k != "cost"}


def test_stp_max_over_draws_dominates_single(small):
    ds, p = small
    one = evaluate(p, ds, "stp", stp_samples=1, seed=3)
    many = evaluate(p, ds, "stp", stp_samples=5, seed=3)
    assert np.all(many.sim >= one.sim)


def test_evaluate_errors(small):
    ds, p = small
    with pytest.raises(ValueError):
        evaluate(p, ds, "stp", stp_samples=0)
    bad = p.copy()
    bad.attn.W_q[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        evaluate(bad, ds)


def test_rank_csv_and_gates(small, tmp_path):
    ds, p = small
    res = evaluate(p, ds, "dasp")
    write_rank_csv(tmp_path / "r.csv", res)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "query,true_video,rank" and len(lines) == 25
    g = mean_gates(p, ds)
    assert g.shape == (24,) and np.all(g == 0.5)
