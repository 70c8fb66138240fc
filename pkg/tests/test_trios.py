import itertools
import math

import numpy as np
import pytest

import fergen
from fergen.bending import PairwiseEnergyTable


def make_table(energies, label=None, ids=None):
    energies = np.asarray(energies, dtype=float)
    n = energies.shape[0]
    return PairwiseEnergyTable(
        category=label or fergen.ExpressionLabel("happiness", 2),
        face_ids=tuple(ids if ids is not None else range(n)),
        energies=energies,
        sample_indices=np.arange(10),
    )


def random_table(rng, n, ids=None):
    energies = rng.uniform(0.0, 5.0, size=(n, n))
    np.fill_diagonal(energies, 0.0)
    return make_table(energies, ids=ids)


def brute_force_selection(table, m):
    """Exhaustive oracle: score every triple via trio_score and sort."""
    scored = [fergen.trio_score(table, i, j, k)
              for i, j, k in itertools.combinations(sorted(table.face_ids), 3)]
    scored.sort(key=lambda t: (-t.score, t.ids))
    return scored[:m]


class TestTrioScore:
    def test_zero_table_scores_zero(self):
        table = make_table(np.zeros((4, 4)))
        assert fergen.trio_score(table, 0, 1, 2).score == 0.0

    def test_permutation_invariant_bitwise(self):
        rng = np.random.default_rng(0)
        table = random_table(rng, 5)
        reference = fergen.trio_score(table, 1, 2, 3)
        for perm in itertools.permutations((1, 2, 3)):
            other = fergen.trio_score(table, *perm)
            assert other.score == reference.score
            assert other.ids == (1, 2, 3)

    def test_matches_hand_summed_entries(self):
        rng = np.random.default_rng(1)
        table = random_table(rng, 4)
        g = table.energies
        for i, j, k in itertools.combinations(range(4), 3):
            expected = (g[i, j] + g[j, i] + g[i, k] + g[k, i] + g[j, k] + g[k, j]) / 6.0
            assert fergen.trio_score(table, i, j, k).score == pytest.approx(
                expected, rel=1e-12)

    def test_rejects_repeated_identity(self):
        table = make_table(np.zeros((4, 4)))
        with pytest.raises(ValueError, match="distinct"):
            fergen.trio_score(table, 1, 1, 2)

    def test_rejects_unknown_identity(self):
        table = make_table(np.zeros((4, 4)))
        with pytest.raises(KeyError):
            fergen.trio_score(table, 0, 1, 9)

    def test_trio_score_type_invariants(self):
        with pytest.raises(ValueError):
            fergen.TrioScore(fergen.ExpressionLabel("neutral"), (2, 1, 3), 1.0)
        with pytest.raises(ValueError):
            fergen.TrioScore(fergen.ExpressionLabel("neutral"), (1, 2, 3), -1.0)


class TestSelectTopTrios:
    def test_empty_selection(self):
        rng = np.random.default_rng(2)
        assert fergen.select_top_trios(random_table(rng, 5), 0) == []

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        table = random_table(rng, 10)
        for m in (1, 5, 40, 120):
            selected = fergen.select_top_trios(table, m)
            expected = brute_force_selection(table, m)
            assert [t.ids for t in selected] == [t.ids for t in expected]
            assert [t.score for t in selected] == [t.score for t in expected]

    def test_ties_break_lexicographically(self):
        # Duplicated rows/cols create exact score ties between triples.
        rng = np.random.default_rng(4)
        energies = rng.uniform(0.0, 5.0, size=(6, 6))
        energies[3, :] = energies[2, :]
        energies[:, 3] = energies[:, 2]
        energies[2, 3] = energies[3, 2] = 0.0
        np.fill_diagonal(energies, 0.0)
        table = make_table(energies)
        selected = fergen.select_top_trios(table, 20)
        expected = brute_force_selection(table, 20)
        assert [t.ids for t in selected] == [t.ids for t in expected]
        scores = [t.score for t in selected]
        assert any(a == b for a, b in zip(scores, scores[1:]))

    def test_oversized_request_returns_all(self):
        rng = np.random.default_rng(5)
        table = random_table(rng, 6)
        assert len(fergen.select_top_trios(table, 10_000)) == math.comb(6, 3)

    def test_sorted_non_increasing(self):
        rng = np.random.default_rng(6)
        selected = fergen.select_top_trios(random_table(rng, 9), 50)
        scores = [t.score for t in selected]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_scaling_invariance(self):
        rng = np.random.default_rng(7)
        energies = rng.uniform(0.0, 5.0, size=(8, 8))
        np.fill_diagonal(energies, 0.0)
        base = fergen.select_top_trios(make_table(energies), 30)
        scaled = fergen.select_top_trios(make_table(3.7 * energies), 30)
        assert [t.ids for t in base] == [t.ids for t in scaled]

    def test_unsorted_face_ids_are_canonicalized(self):
        rng = np.random.default_rng(8)
        table = random_table(rng, 5, ids=(9, 3, 7, 1, 5))
        selected = fergen.select_top_trios(table, 10)
        for trio in selected:
            assert trio.ids[0] < trio.ids[1] < trio.ids[2]
        expected = brute_force_selection(table, 10)
        assert [t.ids for t in selected] == [t.ids for t in expected]
        assert [t.score for t in selected] == [t.score for t in expected]

    def test_small_category_rejected(self):
        rng = np.random.default_rng(9)
        with pytest.raises(ValueError, match="at least 3"):
            fergen.select_top_trios(random_table(rng, 2), 1)
        with pytest.raises(ValueError, match="non-negative"):
            fergen.select_top_trios(random_table(rng, 4), -1)

    def test_exhaustive_match_for_all_small_sizes(self):
        rng = np.random.default_rng(10)
        for n in range(3, 13):
            table = random_table(rng, n)
            selected = fergen.select_top_trios(table, math.comb(n, 3))
            expected = brute_force_selection(table, math.comb(n, 3))
            assert [t.ids for t in selected] == [t.ids for t in expected]


class TestCandidateCounts:
    def test_trio_count_at_full_scale(self):
        # 100 identities per category and 13 categories.
        per_category = math.comb(100, 3)
        assert per_category == 161_700
        assert 13 * per_category == 2_102_100

    def test_selection_covers_trio_budget(self):
        # 64,000 selected per category over 13 categories.
        assert 13 * 64_000 == 832_000
        assert 64_000 <= math.comb(100, 3)


def test_save_trio_scores_csv(tmp_path):
    rng = np.random.default_rng(11)
    table = random_table(rng, 5)
    trios = fergen.select_top_trios(table, 4)
    path = tmp_path / "trios.csv"
    fergen.save_trio_scores(path, trios)
    lines = path.read_text().splitlines()
    assert lines[0] == "category,i,j,k,D"
    assert len(lines) == 5
    first = lines[1].split(",")
    assert first[0] == "happiness_2"
    assert tuple(int(v) for v in first[1:4]) == trios[0].ids
    assert float(first[4]) == trios[0].score
