import numpy as np
import pytest

from latealign import autodiff as ad
from latealign.autodiff import Var, cosine_sim
from latealign.scoring import (ScoredPair, ScoringSet, coarse_score, combine_matrices,
                               combined_score, cosine_rows_graph, fine_score,
                               fine_scores_graph, score_matrix)


def oracle_fine(v, t):
    """Scalar triple-loop reference for the bidirectional pooled score."""
    i2t = sum(max(cosine_sim(vr, tr) for tr in t) for vr in v) / len(v)
    t2i = sum(max(cosine_sim(tr, vr) for vr in v) for tr in t) / len(t)
    return i2t + t2i


def test_self_pair_scores_two():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 4))
    assert fine_score(v, v) == pytest.approx(2.0, abs=1e-9)


def test_fine_score_derived_example():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    t = np.array([[1.0, 0.0], [1 / np.sqrt(2), 1 / np.sqrt(2)]])
    assert fine_score(v, t) == pytest.approx(1.7071067811865475, abs=1e-9)


def test_fine_score_bounds_and_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(40):
        v = rng.normal(size=(int(rng.integers(1, 7)), 5))
        t = rng.normal(size=(int(rng.integers(1, 7)), 5))
        s = fine_score(v, t)
        assert -2 - 1e-9 <= s <= 2 + 1e-9
        assert s == pytest.approx(oracle_fine(v, t), abs=1e-9)


def test_fine_score_set_function_and_row_scaling():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(4, 6))
    t = rng.normal(size=(5, 6))
    base = fine_score(v, t)
    for _ in range(5):
        pv = rng.permutation(4)
        pt = rng.permutation(5)
        assert fine_score(v[pv], t[pt]) == pytest.approx(base, abs=1e-12)
    scale_v = rng.uniform(0.1, 10, size=(4, 1))
    scale_t = rng.uniform(0.1, 10, size=(5, 1))
    assert fine_score(v * scale_v, t * scale_t) == pytest.approx(base, abs=1e-9)


def test_duplicate_row_changes_only_one_direction():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(3, 4))
    t = rng.normal(size=(4, 4))
    v_dup = np.vstack([v, v[0]])
    assert fine_score(v_dup, t) == pytest.approx(oracle_fine(v_dup, t), abs=1e-12)
    # the text-side pooled mean is untouched by duplicating an image row
    t2i = lambda vv: np.mean([max(cosine_sim(tr, vr) for vr in vv) for tr in t])
    assert t2i(v_dup) == pytest.approx(t2i(v), abs=1e-12)


def test_coarse_and_combined():
    assert coarse_score([2.0, 0.0], [4.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    assert coarse_score([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert coarse_score([1.0, 0.0], [1.0, 1.0]) == pytest.approx(
        0.7071067811865475, abs=1e-12)
    assert combined_score(1.3, 0.4, 0.0) == 0.4
    assert combined_score(2.0, -0.7, 1.0) == 1.0
    assert combined_score(2.0, 1.0, 0.5) == 1.0
    with pytest.raises(ValueError):
        combined_score(0.0, 0.0, 1.5)


def test_scored_pair_ranges():
    ScoredPair(fine=2.0, coarse=-1.0)
    with pytest.raises(ValueError):
        ScoredPair(fine=2.5, coarse=0.0)
    with pytest.raises(ValueError):
        ScoredPair(fine=0.0, coarse=1.5)


def _random_sets(rng, b, d=5):
    out = []
    for _ in range(b):
        tokens = rng.normal(size=(int(rng.integers(1, 6)), d))
        out.append(ScoringSet(tokens=tokens, global_vec=rng.normal(size=d)))
    return out


def test_score_matrix_fine_matches_triple_loop_oracle():
    rng = np.random.default_rng(4)
    for _ in range(30):
        b = int(rng.integers(2, 9))
        imgs = _random_sets(rng, b)
        txts = _random_sets(rng, b)
        mat = score_matrix(imgs, txts, "fine")
        assert mat.shape == (b, b)
        for i in range(b):
            for j in range(b):
                assert mat[i, j] == pytest.approx(
                    oracle_fine(imgs[i].tokens, txts[j].tokens), abs=1e-9)


def test_score_matrix_fine_bit_identical_to_per_pair_loop():
    rng = np.random.default_rng(5)
    imgs = _random_sets(rng, 6)
    txts = _random_sets(rng, 6)
    mat = score_matrix(imgs, txts, "fine")
    for i in range(6):
        for j in range(6):
            assert mat[i, j] == fine_score(imgs[i].tokens, txts[j].tokens)


def test_score_matrix_coarse_and_combined_consistency():
    rng = np.random.default_rng(6)
    imgs = _random_sets(rng, 5)
    txts = _random_sets(rng, 5)
    coarse = score_matrix(imgs, txts, "coarse")
    for i in range(5):
        for j in range(5):
            assert coarse[i, j] == coarse_score(imgs[i].global_vec, txts[j].global_vec)
    fine = score_matrix(imgs, txts, "fine")
    comb = score_matrix(imgs, txts, "combined", weight=0.3)
    assert np.array_equal(comb, combine_matrices(fine, coarse, 0.3))
    for i in range(5):
        for j in range(5):
            assert comb[i, j] == combined_score(fine[i, j], coarse[i, j], 0.3)


def test_score_matrix_diagonal_self_pairs():
    rng = np.random.default_rng(7)
    imgs = _random_sets(rng, 5)
    mat = score_matrix(imgs, imgs, "fine")
    assert np.allclose(np.diag(mat), 2.0, atol=1e-9)


def test_score_matrix_errors():
    rng = np.random.default_rng(8)
    imgs = _random_sets(rng, 3)
    with pytest.raises(ValueError, match="ragged batch"):
        score_matrix(imgs, imgs[:2], "fine")
    with pytest.raises(ValueError, match="empty token sequence"):
        score_matrix([ScoringSet(np.zeros((0, 4)), np.zeros(4))],
                     [ScoringSet(np.ones((1, 4)), np.ones(4))], "fine")
    with pytest.raises(ValueError):
        score_matrix(imgs, imgs, "nonsense")
    with pytest.raises(ValueError, match="empty token sequence"):
        fine_score(np.zeros((0, 3)), np.ones((2, 3)))


def test_fine_scores_graph_gradient():
    rng = np.random.default_rng(9)
    vs = [rng.normal(size=(3, 4)), rng.normal(size=(2, 4))]
    ts = [rng.normal(size=(4, 4)), rng.normal(size=(1, 4))]
    w = rng.normal(size=(2, 2))

    def f(ps):
        v_vars = [Var(ps["v0"]), Var(ps["v1"])]
        t_vars = [Var(ps["t0"]), Var(ps["t1"])]
        scores = fine_scores_graph(v_vars, t_vars)
        s = ad.mean_rows(ad.matmul(scores, Var(w)))
        root = ad.matmul(s, ad.transpose(s))
        ad.backward(root)
        grads = {"v0": v_vars[0].grad, "v1": v_vars[1].grad,
                 "t0": t_vars[0].grad, "t1": t_vars[1].grad}
        return float(root.value), grads

    ps = {"v0": vs[0], "v1": vs[1], "t0": ts[0], "t1": ts[1]}
    assert ad.grad_check(f, ps, 1e-5) < 1e-6


def test_cosine_rows_graph_matches_pairs_and_gradient():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(4, 5))
    out = cosine_rows_graph(Var(a), Var(b)).value
    for i in range(4):
        for j in range(4):
            assert out[i, j] == cosine_sim(a[i], b[j])

    w = rng.normal(size=(4, 1))

    def f(ps):
        av, bv = Var(ps["a"]), Var(ps["b"])
        s = cosine_rows_graph(av, bv)
        flat = ad.mean_rows(ad.matmul(s, Var(w)))
        root = ad.matmul(flat, ad.transpose(flat))
        ad.backward(root)
        return float(root.value), {"a": av.grad, "b": bv.grad}

    assert ad.grad_check(f, {"a": a, "b": b}, 1e-5) < 1e-6
