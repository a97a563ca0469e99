import numpy as np
import pytest

from contrafp.errors import FormatError, InputError, StateError
from contrafp.fingerprint import Fingerprint, SubFingerprint
from contrafp.matchdb import FingerprintDb


def unit_rows(rng, n, dim=256):
    m = rng.standard_normal((n, dim))
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


def basis(i):
    v = np.zeros(256, np.float32)
    v[i] = 1.0
    return v


def fp_from_matrix(name, matrix):
    subs = [SubFingerprint(row, 2.125 * i) for i, row in enumerate(matrix)]
    return Fingerprint(name, subs)


def build_db(rng, track_sizes):
    db = FingerprintDb()
    mats = []
    for i, size in enumerate(track_sizes):
        m = unit_rows(rng, size)
        db.add_track(fp_from_matrix(f"track-{i}", m))
        mats.append(m)
    return db, mats


class TestAddAndNearest:
    def test_self_query_is_exact(self):
        rng = np.random.default_rng(0)
        db, mats = build_db(rng, [4, 4, 4])
        row, sim = db.nearest(mats[1][2])
        assert sim == pytest.approx(1.0, abs=1e-6)
        assert row == 4 + 2

    def test_matches_f64_brute_force(self):
        rng = np.random.default_rng(1)
        db, mats = build_db(rng, [50, 30, 20])
        all_rows = np.concatenate(mats).astype(np.float64)
        queries = unit_rows(rng, 200)
        for q in queries:
            row, sim = db.nearest(q)
            sims = all_rows @ q.astype(np.float64)
            assert row == int(np.argmax(sims))
            assert sim == pytest.approx(float(sims.max()), abs=1e-6)

    def test_tie_prefers_lowest_row(self):
        db = FingerprintDb()
        # rows 0 and 2 are identical; a query equal to them ties exactly
        db.add_track(fp_from_matrix("a", np.stack([basis(0), basis(1)])))
        db.add_track(fp_from_matrix("b", np.stack([basis(0), basis(2)])))
        row, sim = db.nearest(basis(0))
        assert row == 0
        assert sim == pytest.approx(1.0)

    def test_empty_db_rejected(self):
        db = FingerprintDb()
        with pytest.raises(StateError):
            db.nearest(np.zeros(256, np.float32))

    def test_wrong_query_shape_rejected(self):
        rng = np.random.default_rng(12)
        db, _ = build_db(rng, [3])
        with pytest.raises(InputError):
            db.nearest(np.zeros(128, np.float32))

    def test_empty_fingerprint_rejected(self):
        db = FingerprintDb()
        with pytest.raises(InputError):
            db.add_track(Fingerprint("empty", []))

    def test_non_unit_rows_rejected(self):
        db = FingerprintDb()
        with pytest.raises(InputError):
            db.add_track(fp_from_matrix("bad", 0.5 * np.eye(256, dtype=np.float32)[:1]))

    def test_track_ids_are_sequential(self):
        rng = np.random.default_rng(13)
        db, _ = build_db(rng, [2, 2, 2])
        assert [e.track_id for e in db.tracks] == [0, 1, 2]
        assert db.n_tracks == 3
        assert db.n_rows == 6

    def test_adding_track_preserves_earlier_nn(self):
        rng = np.random.default_rng(2)
        db, mats = build_db(rng, [20])
        queries = unit_rows(rng, 50)
        before = [db.nearest(q) for q in queries]
        db.add_track(fp_from_matrix("later", unit_rows(rng, 20)))
        for q, (row_b, sim_b) in zip(queries, before):
            row_a, sim_a = db.nearest(q)
            if row_a == row_b:
                assert sim_a == pytest.approx(sim_b, abs=1e-7)
            else:
                # only a strictly better later row may displace the old NN
                assert sim_a > sim_b
                assert row_a >= 20


class TestIdentify:
    def test_votes_sum_to_query_subs(self):
        rng = np.random.default_rng(3)
        db, _ = build_db(rng, [10, 10, 10])
        results = db.identify(fp_from_matrix("q", unit_rows(rng, 7)))
        assert sum(r.votes for r in results) == 7

    def test_majority_owner_wins(self):
        rng = np.random.default_rng(4)
        db, mats = build_db(rng, [10, 10])
        # three noisy copies of track 0 rows, one of track 1
        noisy = []
        for base in (mats[0][0], mats[0][3], mats[0][7], mats[1][2]):
            v = base + 0.01 * rng.standard_normal(256).astype(np.float32)
            noisy.append(v / np.linalg.norm(v))
        results = db.identify(fp_from_matrix("q", np.stack(noisy)))
        assert results[0].name == "track-0"
        assert results[0].votes == 3
        assert results[1].votes == 1

    def test_sorted_by_votes_then_similarity_then_id(self):
        db = FingerprintDb()
        db.add_track(fp_from_matrix("a", basis(0)[None, :]))
        db.add_track(fp_from_matrix("b", basis(1)[None, :]))
        # one vote each; track b's winning similarity is higher
        q0 = 0.9 * basis(0) + np.sqrt(1 - 0.81).astype(np.float32) * basis(2)
        results = db.identify(fp_from_matrix("q", np.stack([q0, basis(1)])))
        assert [r.name for r in results] == ["b", "a"]
        assert results[0].votes == results[1].votes == 1
        assert results[0].total_similarity > results[1].total_similarity

    def test_equal_everything_breaks_tie_by_track_id(self):
        db = FingerprintDb()
        db.add_track(fp_from_matrix("a", basis(0)[None, :]))
        db.add_track(fp_from_matrix("b", basis(1)[None, :]))
        results = db.identify(fp_from_matrix("q", np.stack([basis(0), basis(1)])))
        assert [r.track_id for r in results] == [0, 1]

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        db, _ = build_db(rng, [15, 15, 15])
        queries = unit_rows(rng, 9)
        base = db.identify(fp_from_matrix("q", queries))
        perm = db.identify(fp_from_matrix("q", queries[rng.permutation(9)]))
        assert [(r.track_id, r.votes) for r in base] == \
               [(r.track_id, r.votes) for r in perm]
        for a, b in zip(base, perm):
            assert a.total_similarity == pytest.approx(b.total_similarity, abs=1e-6)

    def test_per_query_nn_reported(self):
        rng = np.random.default_rng(6)
        db, mats = build_db(rng, [5, 5])
        results = db.identify(fp_from_matrix("q", mats[1][:3]))
        assert results[0].track_id == 1
        assert len(results[0].per_query_nn) == 3

    def test_empty_query_fingerprint_rejected(self):
        rng = np.random.default_rng(7)
        db, _ = build_db(rng, [5])
        with pytest.raises(InputError):
            db.identify(Fingerprint("q", []))

    def test_empty_db_rejected(self):
        db = FingerprintDb()
        with pytest.raises(StateError):
            db.identify(fp_from_matrix("q", np.eye(256, dtype=np.float32)[:1]))


class TestDbIo:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        db, _ = build_db(rng, [7, 3, 12])
        path = tmp_path / "db.cfpd"
        db.save(path)
        back = FingerprintDb.load(path)
        assert [e.name for e in back.tracks] == [e.name for e in db.tracks]
        assert [e.sub_count for e in back.tracks] == [e.sub_count for e in db.tracks]
        np.testing.assert_array_equal(back.matrix(), db.matrix())

    def test_identify_same_after_reload(self, tmp_path):
        rng = np.random.default_rng(9)
        db, _ = build_db(rng, [10, 10])
        queries = fp_from_matrix("q", unit_rows(rng, 5))
        path = tmp_path / "db.cfpd"
        db.save(path)
        back = FingerprintDb.load(path)
        a = db.identify(queries)
        b = back.identify(queries)
        assert [(r.track_id, r.votes, r.name) for r in a] == \
               [(r.track_id, r.votes, r.name) for r in b]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.cfpd").write_bytes(b"XXXX" + bytes(32))
        with pytest.raises(FormatError):
            FingerprintDb.load(tmp_path / "x.cfpd")

    def test_truncated(self, tmp_path):
        rng = np.random.default_rng(10)
        db, _ = build_db(rng, [5])
        path = tmp_path / "db.cfpd"
        db.save(path)
        (tmp_path / "cut.cfpd").write_bytes(path.read_bytes()[:-64])
        with pytest.raises(FormatError, match="truncated"):
            FingerprintDb.load(tmp_path / "cut.cfpd")

    def test_trailing(self, tmp_path):
        rng = np.random.default_rng(11)
        db, _ = build_db(rng, [5])
        path = tmp_path / "db.cfpd"
        db.save(path)
        (tmp_path / "fat.cfpd").write_bytes(path.read_bytes() + b"!")
        with pytest.raises(FormatError, match="trailing"):
            FingerprintDb.load(tmp_path / "fat.cfpd")
