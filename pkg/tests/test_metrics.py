import string

import numpy as np
import pytest

from qalign import metrics as mt


# -- independent brute-force reference scorer (kept deliberately different
#    in construction from the library implementation) --------------------


def ref_tokens(s):
    kept = []
    for ch in s.lower():
        if ch not in string.punctuation:
            kept.append(ch)
    words = "".join(kept).split()
    return [w for w in words if w not in ("a", "an", "the")]


def ref_f1(pred, golds):
    best = 0.0
    for gold in golds:
        p, g = ref_tokens(pred), ref_tokens(gold)
        if not p and not g:
            score = 1.0
        elif not p or not g:
            score = 0.0
        else:
            pool = list(g)
            common = 0
            for w in p:
                if w in pool:
                    pool.remove(w)
                    common += 1
            if common == 0:
                score = 0.0
            else:
                prec, rec = common / len(p), common / len(g)
                score = 2 * prec * rec / (prec + rec)
        best = max(best, score)
    return best


def ref_em(pred, golds):
    return int(any(" ".join(ref_tokens(pred)) == " ".join(ref_tokens(g))
                   for g in golds))


class TestNormalize:
    def test_each_rule_once(self):
        assert mt.normalize_text("The Cat.") == "cat"

    def test_empty(self):
        assert mt.normalize_text("") == ""

    def test_articles_and_whitespace(self):
        assert mt.normalize_text("a  an the x") == "x"


class TestTokenF1:
    def test_worked_case(self):
        # normalization drops the article, leaving precision 1 and recall 2/3
        assert mt.token_f1("the cat sat", {"cat sat down"}) == pytest.approx(0.8)

    def test_identity(self):
        assert mt.token_f1("exact match", {"exact match"}) == 1.0

    def test_disjoint(self):
        assert mt.token_f1("dog", {"cat"}) == 0.0

    def test_both_empty(self):
        assert mt.token_f1("", {""}) == 1.0

    def test_one_empty(self):
        assert mt.token_f1("", {"cat"}) == 0.0
        assert mt.token_f1("cat", {""}) == 0.0

    def test_max_over_golds(self):
        assert mt.token_f1("cat", {"dog", "cat"}) == 1.0

    def test_symmetric_under_swap(self):
        rng = np.random.default_rng(0)
        words = ["cat", "dog", "sat", "ran", "blue", "x"]
        for _ in range(30):
            a = " ".join(rng.choice(words, size=rng.integers(1, 5)))
            b = " ".join(rng.choice(words, size=rng.integers(1, 5)))
            assert mt.token_f1(a, {b}) == pytest.approx(mt.token_f1(b, {a}))

    def test_case_and_article_invariance(self):
        base = mt.token_f1("black cat", {"the black cat"})
        assert base == 1.0
        assert mt.token_f1("The Black CAT", {"black cat"}) == base


class TestExactMatch:
    def test_case_normalization(self):
        assert mt.exact_match("The Cat", {"the cat"}) == 1

    def test_article_removal(self):
        assert mt.exact_match("a cat", {"cat"}) == 1

    def test_mismatch(self):
        assert mt.exact_match("dog", {"cat"}) == 0


class TestAggregate:
    def test_constant(self):
        cell = mt.aggregate([10, 10, 10])
        assert cell.mean == 10 and cell.std == 0 and cell.n_runs == 3

    def test_hand_computed(self):
        cell = mt.aggregate([0, 10])
        assert cell.mean == 5 and cell.std == 5

    def test_singleton(self):
        cell = mt.aggregate([7.5])
        assert cell.mean == 7.5 and cell.std == 0 and cell.n_runs == 1

    def test_population_std(self):
        # population (not sample) formula: sqrt(mean((x - mean)^2))
        cell = mt.aggregate([1, 2, 3])
        assert cell.std == pytest.approx(np.sqrt(2 / 3))


class TestCorpusScores:
    def test_em_implies_f1(self):
        rng = np.random.default_rng(5)
        words = ["cat", "dog", "the", "a", "ran", "Blue", "x7"]
        for _ in range(200):
            pred = " ".join(rng.choice(words, size=rng.integers(1, 5)))
            gold = " ".join(rng.choice(words, size=rng.integers(1, 5)))
            if mt.exact_match(pred, [gold]) == 1:
                assert mt.token_f1(pred, [gold]) == pytest.approx(1.0)

    def test_corpus_em_below_f1(self):
        preds = ["cat", "dog ran", "blue"]
        golds = [["cat"], ["dog walked"], ["red"]]
        result = mt.evaluate_predictions(preds, golds)
        assert result.exact_match <= result.f1
        assert result.n_examples == 3

    def test_agreement_with_reference_scorer(self):
        rng = np.random.default_rng(99)
        words = ["the", "a", "cat", "dog", "sat", "Big", "x", "41", "blue."]
        for _ in range(50):
            pred = " ".join(rng.choice(words, size=rng.integers(0, 6)))
            golds = [" ".join(rng.choice(words, size=rng.integers(1, 6)))
                     for _ in range(rng.integers(1, 3))]
            assert mt.token_f1(pred, golds) == pytest.approx(ref_f1(pred, golds))
            assert mt.exact_match(pred, golds) == ref_em(pred, golds)
