"""Word confidence features, confusion networks, the classifier, and the
tie-aware average-precision metric (checked against scikit-learn)."""

import math

import numpy as np
import pytest
from sklearn.metrics import average_precision_score

from rnntkit.confidence import (
    CSV_FIELDS,
    EPS_TOKEN,
    FEATURE_NAMES,
    ConfusionSlot,
    WordFeatures,
    aupr,
    build_confusion_network,
    edit_align,
    edit_distance,
    evaluation_report,
    hypothesis_weights,
    label_words,
    load_classifier,
    predict_confidence,
    read_feature_csv,
    save_classifier,
    train_classifier,
    word_features,
    write_feature_csv,
)
from rnntkit.errors import (
    ContractError,
    DataError,
    EvaluationError,
    TrainingDataError,
)
from rnntkit.numcore import make_rng
from rnntkit.transducer import Hypothesis, NBestList, Vocabulary

VOCAB = Vocabulary.from_pieces(("▁a", "▁b", "▁c", "▁ab", "cd"))


def make_hyp(words, logp):
    """Hypothesis whose tokens spell the given single-piece words."""
    ids = tuple(VOCAB.id_of("▁" + w) for w in words)
    n = len(ids)
    return Hypothesis(
        token_ids=ids,
        logp=logp,
        emit_frames=tuple(range(n)),
        wp_logp=tuple(-0.1 * (i + 1) for i in range(n)),
        neg_entropy=tuple(-0.2 for _ in range(n)),
        emitted_count=n + 2,
        hyp_logp=tuple(-0.3 * (i + 1) for i in range(n)),
        emitted_counts=tuple(i + 2 for i in range(n)),
    )


def nbest(*hyps):
    return NBestList(utt_id="u", hyps=tuple(hyps))


class TestEditAlignment:
    def test_identity(self):
        assert edit_align(["a", "b"], ["a", "b"]) == [(0, 0), (1, 1)]
        assert edit_distance(["a", "b"], ["a", "b"]) == 0

    def test_substitution_preferred_over_ins_plus_del(self):
        assert edit_align(["a"], ["b"]) == [(0, 0)]
        assert edit_distance(["a"], ["b"]) == 1

    def test_insertion_and_deletion(self):
        assert edit_align(["a", "b", "z"], ["a", "b"]) == [(0, 0), (1, 1), (2, None)]
        assert edit_align(["a"], ["a", "b"]) == [(0, 0), (None, 1)]

    def test_hand_distance(self):
        assert edit_distance(["a", "x"], ["a", "b", "c"]) == 2

    def test_empty_sides(self):
        assert edit_align([], ["a"]) == [(None, 0)]
        assert edit_align(["a"], []) == [(0, None)]
        assert edit_align([], []) == []


class TestLabels:
    def test_match_sub_mix(self):
        assert label_words(["a", "x", "c"], ["a", "b", "c"]) == (1, 0, 1)

    def test_insertion_labeled_incorrect(self):
        assert label_words(["a", "b", "z"], ["a", "b"]) == (1, 1, 0)

    def test_deletion_leaves_no_label(self):
        assert label_words(["a"], ["a", "b"]) == (1,)

    def test_all_wrong(self):
        assert label_words(["x", "y"], ["a", "b"]) == (0, 0)


class TestWeights:
    def test_posterior_softmax(self):
        nb = nbest(make_hyp(["a", "b"], math.log(0.6)),
                   make_hyp(["a", "c"], math.log(0.4)))
        w = hypothesis_weights(nb, VOCAB)
        assert w == pytest.approx([0.6, 0.4], abs=1e-12)

    def test_length_normalized_rescores(self):
        long_hyp = make_hyp(["a", "b", "c"], -3.0)
        short_hyp = make_hyp(["a"], -3.5)
        nb = nbest(long_hyp, short_hyp)
        w_post = hypothesis_weights(nb, VOCAB, "posterior")
        w_norm = hypothesis_weights(nb, VOCAB, "length-normalized")
        assert w_post[0] > w_post[1]
        # per-word: -1.0 vs -3.5 widens the gap toward the long hypothesis
        assert w_norm[0] > w_post[0]

    def test_bad_mode_rejected(self):
        with pytest.raises(ContractError):
            hypothesis_weights(nbest(make_hyp(["a"], -1.0)), VOCAB, "uniform")


class TestConfusionNetwork:
    def test_hand_case_substitution(self):
        nb = nbest(make_hyp(["a", "b"], math.log(0.6)),
                   make_hyp(["a", "c"], math.log(0.4)))
        cn = build_confusion_network(nb, VOCAB)
        assert cn.pivot_words == ("a", "b")
        assert len(cn.slots) == 2
        assert cn.slots[0].votes == pytest.approx({"a": 1.0})
        assert cn.slots[1].votes == pytest.approx({"b": 0.6, "c": 0.4})

    def test_deletion_votes_for_empty_token(self):
        nb = nbest(make_hyp(["a", "b"], math.log(0.6)),
                   make_hyp(["a"], math.log(0.4)))
        cn = build_confusion_network(nb, VOCAB)
        slot = cn.pivot_slot(1)
        assert slot.votes == pytest.approx({"b": 0.6, EPS_TOKEN: 0.4})
        assert slot.prob("b") == pytest.approx(0.6)
        assert slot.norm_prob("b") == pytest.approx(1.0)

    def test_insertion_becomes_gap_slot(self):
        nb = nbest(make_hyp(["a"], math.log(0.6)),
                   make_hyp(["a", "b"], math.log(0.4)))
        cn = build_confusion_network(nb, VOCAB)
        assert cn.pivot_words == ("a",)
        assert len(cn.slots) == 2
        gap = [s for s in cn.slots if s.pivot_index is None]
        assert len(gap) == 1
        assert gap[0].votes == pytest.approx({EPS_TOKEN: 0.6, "b": 0.4})

    def test_every_slot_sums_to_one(self):
        rng = make_rng(5)
        words = ["a", "b", "c"]
        for trial in range(30):
            hyps = []
            scores = sorted(rng.normal(size=3))[::-1]
            for s in scores:
                k = int(rng.integers(1, 4))
                text = [words[int(i)] for i in rng.integers(len(words), size=k)]
                hyps.append(make_hyp(text, float(s)))
            cn = build_confusion_network(nbest(*hyps), VOCAB)
            for slot in cn.slots:
                assert sum(slot.votes.values()) == pytest.approx(1.0, abs=1e-9)

    def test_slot_constructor_rejects_bad_mass(self):
        with pytest.raises(ContractError):
            ConfusionSlot(votes={"a": 0.5}, pivot_index=0)

    def test_empty_nbest_rejected(self):
        with pytest.raises(ContractError):
            build_confusion_network(NBestList(utt_id="u", hyps=()), VOCAB)


class TestWordFeatures:
    def test_single_hypothesis_features_by_hand(self):
        hyp = make_hyp(["a", "b"], -1.0)
        feats = word_features(nbest(hyp), VOCAB)
        assert [f.word for f in feats] == ["a", "b"]
        f0, f1 = feats
        assert f0.avg_hyp_prob == pytest.approx(-0.3 / 2)
        assert f1.avg_hyp_prob == pytest.approx(-0.6 / 3)
        assert f0.min_wp_prob == pytest.approx(-0.1)
        assert f1.avg_wp_prob == pytest.approx(-0.2)
        assert f0.min_neg_entropy == pytest.approx(-0.2)
        assert f0.cn_prob == pytest.approx(1.0)
        assert f0.cn_norm_prob == pytest.approx(1.0)

    def test_multi_piece_word_pools_over_pieces(self):
        ids = (VOCAB.id_of("▁ab"), VOCAB.id_of("cd"))
        hyp = Hypothesis(token_ids=ids, logp=-1.0, emit_frames=(0, 3),
                         wp_logp=(-0.5, -0.1), neg_entropy=(-0.4, -0.6),
                         emitted_count=6, hyp_logp=(-0.5, -0.9),
                         emitted_counts=(1, 5))
        (f,) = word_features(nbest(hyp), VOCAB)
        assert f.word == "abcd"
        assert f.avg_hyp_prob == pytest.approx(-0.9 / 5)
        assert f.min_wp_prob == pytest.approx(-0.5)
        assert f.avg_wp_prob == pytest.approx(-0.3)
        assert f.min_neg_entropy == pytest.approx(-0.6)
        assert f.avg_neg_entropy == pytest.approx(-0.5)

    def test_substituted_word_gets_partial_cn_mass(self):
        nb = nbest(make_hyp(["a", "b"], math.log(0.6)),
                   make_hyp(["a", "c"], math.log(0.4)))
        feats = word_features(nb, VOCAB)
        assert feats[1].cn_prob == pytest.approx(0.6)
        assert feats[1].cn_norm_prob == pytest.approx(0.6)

    def test_vector_order_matches_feature_names(self):
        f = WordFeatures(word="w", avg_hyp_prob=1.0, min_wp_prob=2.0,
                         avg_wp_prob=3.0, min_neg_entropy=4.0,
                         avg_neg_entropy=5.0, cn_prob=6.0, cn_norm_prob=7.0)
        assert np.array_equal(f.vector(), np.arange(1.0, 8.0))
        assert len(FEATURE_NAMES) == 7


class TestAupr:
    def test_hand_case(self):
        value = aupr([0.9, 0.8, 0.7], [1, 0, 1])
        assert value == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-9)

    def test_perfect_ranking(self):
        assert aupr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_all_tied_scores_give_prevalence(self):
        assert aupr([0.5] * 4, [1, 0, 0, 1]) == pytest.approx(0.5)

    def test_matches_sklearn_with_ties(self):
        rng = make_rng(17)
        grid = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
        for trial in range(50):
            n = int(rng.integers(5, 40))
            scores = grid[rng.integers(len(grid), size=n)]
            labels = rng.integers(2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            ours = aupr(scores, labels)
            ref = average_precision_score(labels, scores)
            assert ours == pytest.approx(ref, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = make_rng(3)
        scores = rng.normal(size=20)
        labels = rng.integers(2, size=20)
        labels[0], labels[1] = 0, 1
        assert aupr(3.0 * scores + 2.0, labels) == pytest.approx(
            aupr(scores, labels), abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError):
            aupr([0.1, 0.2], [1, 1])

    def test_nonfinite_scores_rejected(self):
        with pytest.raises(DataError):
            aupr([0.1, float("nan")], [1, 0])


def separable_data(n=200, seed=0):
    rng = make_rng(seed)
    half = n // 2
    pos = rng.normal(loc=1.0, scale=0.6, size=(half, 7))
    neg = rng.normal(loc=-1.0, scale=0.6, size=(n - half, 7))
    x = np.vstack([pos, neg])
    y = np.concatenate([np.ones(half), np.zeros(n - half)])
    order = rng.permutation(n)
    return x[order], y[order]


class TestClassifier:
    def test_learns_separable_data(self):
        x, y = separable_data()
        clf = train_classifier(x, y, epochs=60, seed=1)
        p = predict_confidence(clf, x)
        assert p.shape == (200,)
        assert np.all((p >= 0) & (p <= 1))
        assert aupr(p, y) > 0.99

    def test_training_is_deterministic(self):
        x, y = separable_data()
        a = train_classifier(x, y, epochs=10, seed=4)
        b = train_classifier(x, y, epochs=10, seed=4)
        assert np.array_equal(a.hidden.weight, b.hidden.weight)
        assert np.array_equal(a.out_weight, b.out_weight)

    def test_seed_changes_weights(self):
        x, y = separable_data()
        a = train_classifier(x, y, epochs=2, seed=1)
        b = train_classifier(x, y, epochs=2, seed=2)
        assert not np.array_equal(a.hidden.weight, b.hidden.weight)

    def test_normalization_stats_stored(self):
        x, y = separable_data()
        clf = train_classifier(x, y, epochs=1, seed=0)
        assert clf.mean == pytest.approx(x.mean(axis=0))
        assert clf.std == pytest.approx(x.std(axis=0))

    def test_single_class_rejected(self):
        x, _ = separable_data()
        with pytest.raises(TrainingDataError):
            train_classifier(x, np.ones(len(x)), epochs=1)

    def test_nonfinite_features_rejected(self):
        x, y = separable_data()
        bad = x.copy()
        bad[0, 0] = np.inf
        with pytest.raises(TrainingDataError):
            train_classifier(bad, y, epochs=1)
        clf = train_classifier(x, y, epochs=1)
        with pytest.raises(DataError):
            predict_confidence(clf, np.array([[np.nan] * 7]))

    def test_feature_count_checked_at_predict(self):
        x, y = separable_data()
        clf = train_classifier(x, y, epochs=1)
        with pytest.raises(DataError):
            predict_confidence(clf, np.zeros((2, 5)))

    def test_save_load_round_trip(self, tmp_path):
        x, y = separable_data()
        clf = train_classifier(x, y, epochs=5, seed=9)
        save_classifier(clf, tmp_path / "clf")
        revived = load_classifier(tmp_path / "clf")
        assert np.array_equal(predict_confidence(clf, x),
                              predict_confidence(revived, x))


class TestReportAndCsv:
    def test_report_structure(self):
        x, y = separable_data()
        clf = train_classifier(x, y, epochs=40, seed=2)
        report = evaluation_report(clf, x, y)
        assert set(report) == {"aupr_correct", "aupr_incorrect", "per_feature"}
        assert set(report["per_feature"]) == set(FEATURE_NAMES)
        assert report["aupr_incorrect"] > 0.95
        for v in report["per_feature"].values():
            assert 0.0 < v <= 1.0

    def test_csv_round_trip_and_header(self, tmp_path):
        f = WordFeatures(word="ab", avg_hyp_prob=-0.123456789012345,
                         min_wp_prob=-0.2, avg_wp_prob=-0.15,
                         min_neg_entropy=-0.4, avg_neg_entropy=-0.3,
                         cn_prob=0.75, cn_norm_prob=0.9)
        rows = [("u1", 0, f, 1), ("u1", 1, f, 0)]
        path = tmp_path / "feats.csv"
        write_feature_csv(path, rows)
        first_line = path.read_text().splitlines()[0]
        assert first_line == ",".join(CSV_FIELDS)
        revived = read_feature_csv(path)
        assert revived == rows

    def test_csv_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(DataError):
            read_feature_csv(path)
