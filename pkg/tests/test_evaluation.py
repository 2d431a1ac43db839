import numpy as np
import pytest

from drekge import data, evaluation
from drekge.domains import DomainModel
from drekge.ellipsoid import Ellipsoid
from drekge.errors import ConfigurationError, StaleDomainModelError
from drekge.evaluation import (EvalReport, comparison_rows, csv_rows,
                               evaluate, format_comparison, format_report,
                               rank_of_gold, validation_hits10)
from drekge.models import EmbeddingModel

from generators import random_domain_model, random_graph, random_model
from refeval import ref_evaluate


class TestRankOfGold:
    def test_strictly_better_counting(self):
        scores = np.array([0.5, 2.0, 1.0, 3.0])
        assert rank_of_gold(scores, 2) == (2, 0)
        assert rank_of_gold(scores, 0) == (1, 0)
        assert rank_of_gold(scores, 3) == (4, 0)

    def test_tie_handling(self):
        scores = np.array([1.0, 2.0, 2.0, 3.0])
        assert rank_of_gold(scores, 1) == (2, 1)
        assert rank_of_gold(scores, 1, tie_break="pessimistic") == (3, 1)

    def test_mask_removes_competitors(self):
        scores = np.array([0.1, 0.2, 5.0, 0.3])
        allowed = np.array([False, False, True, True])
        rank, ties = rank_of_gold(scores, 2, allowed)
        assert (rank, ties) == (2, 0)

    def test_gold_always_allowed(self):
        scores = np.array([1.0, 2.0])
        allowed = np.array([False, False])
        assert rank_of_gold(scores, 1, allowed) == (1, 0)


def zero_model(graph, dim=4):
    return EmbeddingModel("transe", "l1",
                          np.zeros((graph.n_entities, dim)),
                          np.zeros((graph.n_relations, dim)))


class TestEvaluate:
    def test_two_known_competitors_split_raw_and_filtered(self):
        # head "a" must beat b and c for tail x; both are known heads, so
        # filtering removes them: raw rank 3, filtered rank 1
        g = data.build_graph([("b", "r", "x"), ("c", "r", "x")],
                             [], [("a", "r", "x")])
        dim = 2
        ent = np.zeros((g.n_entities, dim))
        ent[g.entities.id("a")] = (3.0, 0.0)
        ent[g.entities.id("b")] = (1.0, 0.0)
        ent[g.entities.id("c")] = (2.0, 0.0)
        ent[g.entities.id("x")] = (9.0, 9.0)
        # target x - r is the origin: f is b 1, c 2, a 3, x itself 18
        m = EmbeddingModel("transe", "l1", ent, np.array([[9.0, 9.0]]))
        rep = evaluate(g, m)
        assert rep.overall[("raw", "head")].mean_rank == 3.0
        assert rep.overall[("filtered", "head")].mean_rank == 1.0
        assert rep.overall[("filtered", "head")].hits[1] == 100.0

    def test_matches_reference_evaluator(self):
        rng = np.random.default_rng(121)
        g = random_graph(rng, n_entities=25, n_relations=3, n_train=40,
                         n_valid=6, n_test=10)
        m = random_model(rng, g, variant="transr", dim=5)
        params = {"entity": m.entity_vecs, "relation": m.relation_vecs,
                  "head_proj": m.head_proj}
        ref = ref_evaluate(g.n_entities, g.train, g.valid, g.test,
                           "transr", "l1", params)
        rep = evaluate(g, m)
        for key, block in rep.overall.items():
            assert block.mean_rank == ref[key]["mean_rank"]
            for k, v in block.hits.items():
                assert v == ref[key]["hits"][k]

    def test_all_tied_scores(self):
        rng = np.random.default_rng(122)
        g = random_graph(rng, n_entities=10)
        m = zero_model(g)
        rep = evaluate(g, m)
        assert rep.tie_rate == 1.0
        assert rep.overall[("raw", "combined")].mean_rank == 1.0
        pess = evaluate(g, m, tie_break="pessimistic")
        assert pess.overall[("raw", "head")].mean_rank == g.n_entities

    def test_filtered_never_worse_than_raw(self):
        rng = np.random.default_rng(123)
        for trial in range(5):
            g = random_graph(rng, n_entities=15, n_train=40, n_test=10)
            m = random_model(rng, g)
            rep = evaluate(g, m)
            for side in ("head", "tail", "combined"):
                raw = rep.overall[("raw", side)]
                filt = rep.overall[("filtered", side)]
                assert filt.mean_rank <= raw.mean_rank
                for k in filt.hits:
                    assert filt.hits[k] >= raw.hits[k]

    def test_combined_concatenates_sides(self):
        rng = np.random.default_rng(124)
        g = random_graph(rng)
        rep = evaluate(g, random_model(rng, g))
        head = rep.overall[("raw", "head")]
        tail = rep.overall[("raw", "tail")]
        both = rep.overall[("raw", "combined")]
        assert both.n == head.n + tail.n
        assert both.mean_rank == pytest.approx(
            (head.mean_rank * head.n + tail.mean_rank * tail.n) / both.n)

    def test_category_blocks_partition_the_predictions(self):
        rng = np.random.default_rng(125)
        g = random_graph(rng, n_entities=20, n_train=60, n_test=12)
        rep = evaluate(g, random_model(rng, g))
        for setting in ("raw", "filtered"):
            for side in ("head", "tail"):
                total = sum(block.n for (s, d, _), block
                            in rep.by_category.items()
                            if s == setting and d == side)
                assert total == rep.overall[(setting, side)].n

    def test_threads_do_not_change_the_report(self):
        rng = np.random.default_rng(126)
        g = random_graph(rng, n_entities=30, n_relations=4, n_test=16)
        m = random_model(rng, g)
        dm = random_domain_model(rng, g, m)
        serial = evaluate(g, m, dm)
        threaded = evaluate(g, m, dm, threads=4)
        assert serial == threaded

    def test_validation_split_and_helper(self):
        rng = np.random.default_rng(127)
        g = random_graph(rng)
        m = random_model(rng, g)
        rep = evaluate(g, m, split="valid")
        assert rep.n_test == len(g.valid)
        assert validation_hits10(g, m) == rep.overall[("filtered",
                                                       "combined")].hits[10]

    def test_bad_arguments_rejected(self):
        rng = np.random.default_rng(128)
        g = random_graph(rng)
        m = random_model(rng, g)
        with pytest.raises(ConfigurationError):
            evaluate(g, m, split="train")
        with pytest.raises(ConfigurationError):
            evaluate(g, m, tie_break="lucky")
        with pytest.raises(ConfigurationError):
            evaluate(g, random_model(rng, random_graph(
                np.random.default_rng(2), n_entities=5)), split="test")


class TestDomainPenalties:
    def test_enclosing_domains_change_nothing(self):
        rng = np.random.default_rng(131)
        g = random_graph(rng, n_entities=20)
        m = random_model(rng, g, variant="stranse", dim=4)
        huge = {}
        for r in range(g.n_relations):
            for side in ("head", "tail"):
                huge[(r, side)] = Ellipsoid(np.zeros(4), np.eye(4) * 1e-4)
        dm = DomainModel(4, m.fingerprint(), huge, ())
        base = evaluate(g, m)
        dre = evaluate(g, m, dm)
        assert dre.overall == base.overall
        assert dre.missing_domain_predictions == 0

    def test_empty_domain_model_counts_missing_slots(self):
        rng = np.random.default_rng(132)
        g = random_graph(rng)
        m = random_model(rng, g)
        dm = DomainModel(m.rel_dim, m.fingerprint(), {}, ())
        rep = evaluate(g, m, dm)
        assert rep.missing_domain_predictions == 2 * len(g.test)
        assert rep.overall == evaluate(g, m).overall

    def test_matches_reference_with_penalties(self):
        rng = np.random.default_rng(133)
        g = random_graph(rng, n_entities=18, n_relations=3, n_test=8)
        m = random_model(rng, g, variant="stranse", dim=4)
        dm = random_domain_model(rng, g, m)
        params = {"entity": m.entity_vecs, "relation": m.relation_vecs,
                  "head_proj": m.head_proj, "tail_proj": m.tail_proj}
        ells = {key: (ell.center, ell.factor)
                for key, ell in dm.ellipsoids.items()}
        ref = ref_evaluate(g.n_entities, g.train, g.valid, g.test,
                           "stranse", "l1", params, ellipsoids=ells)
        rep = evaluate(g, m, dm)
        for key, block in rep.overall.items():
            assert block.mean_rank == ref[key]["mean_rank"]
            assert block.hits == ref[key]["hits"]

    def test_penalty_can_rescue_the_gold_entity(self):
        # an impostor head beats gold on raw score but sits outside the
        # head domain; the penalty flips the order
        g = data.build_graph([("good", "r", "x"), ("other", "r", "y")],
                             [], [("good", "r", "y")])
        dim = 2
        ent = np.zeros((g.n_entities, dim))
        rid = g.entities.id
        ent[rid("good")] = (1.0, 0.0)
        ent[rid("other")] = (2.5, 0.0)
        ent[rid("x")] = (-3.0, 1.0)
        ent[rid("y")] = (4.0, 0.0)
        rel = np.array([[2.0, 0.0]])
        # f(e) = |e + r - y|: other 0.5, good 1.0, y 2.0, x 6.0
        m = EmbeddingModel("transe", "l1", ent, rel)
        base = evaluate(g, m)
        assert base.overall[("raw", "head")].mean_rank == 2.0

        # head domain: tiny sphere around gold's embedding
        ells = {(0, "head"): Ellipsoid(np.array([1.0, 0.0]),
                                       np.eye(2) / 0.05)}
        dm = DomainModel(dim, m.fingerprint(), ells, ())
        dre = evaluate(g, m, dm)
        assert dre.overall[("raw", "head")].mean_rank == 1.0

    def test_stale_domains_are_refused(self):
        rng = np.random.default_rng(134)
        g = random_graph(rng)
        m = random_model(rng, g)
        dm = random_domain_model(rng, g, m)
        with pytest.raises(StaleDomainModelError):
            evaluate(g, random_model(rng, g), dm)


class TestReportRendering:
    def make_report(self):
        rng = np.random.default_rng(141)
        g = random_graph(rng)
        m = random_model(rng, g)
        return evaluate(g, m), evaluate(g, m, random_domain_model(rng, g, m))

    def test_text_report_mentions_every_block(self):
        rep, _ = self.make_report()
        text = format_report(rep, title="check")
        assert "# check" in text
        assert f"n_test={rep.n_test}" in text
        for setting, side in rep.overall:
            assert f"{setting} {side} " in text

    def test_csv_rows_cover_overall_and_categories(self):
        rep, _ = self.make_report()
        rows = csv_rows(rep)
        expected = 4 * (len(rep.overall) + len(rep.by_category))
        assert len(rows) == expected
        assert {r[:3] for r in rows} >= {(s, d, "all") for s, d in rep.overall}

    def test_comparison_rows_align(self):
        base, dre = self.make_report()
        rows = comparison_rows(base, dre)
        for setting, side, cat, metric, b, v, delta in rows:
            assert delta == pytest.approx(v - b)
        text = format_comparison(base, dre)
        assert "delta" in text

    def test_term_stats_compare_score_and_penalty_scales(self):
        base, dre = self.make_report()
        assert set(base.term_stats) == {"gold_baseline", "median_baseline"}
        assert set(dre.term_stats) >= {"gold_penalty", "median_penalty"}
        for stats in dre.term_stats.values():
            assert set(stats) == {"min", "p25", "median", "p75", "max"}
            assert stats["min"] <= stats["median"] <= stats["max"]
