import pytest

from sfvda import data as D


def small_spec(**kw):
    defaults = dict(classes=3, videos_per_class=4, frames=4, frame_dim=6, shift_severity=0.5, noise_std=0.05, seed=5)
    defaults.update(kw)
    return D.DomainSpec(**defaults)


class TestGenerator:
    def test_determinism_bitwise(self):
        a_src, a_tgt = D.generate_domain_pair(small_spec())
        b_src, b_tgt = D.generate_domain_pair(small_spec())
        for a, b in ((a_src, b_src), (a_tgt, b_tgt)):
            assert len(a) == len(b)
            for sa, sb in zip(a.samples, b.samples):
                assert sa.id == sb.id
                assert sa.label == sb.label
                assert sa.frames.tobytes() == sb.frames.tobytes()

    def test_zero_shift_zero_noise_matches_source_exactly(self):
        spec = small_spec(shift_severity=0.0, noise_std=0.0)
        source, target = D.generate_domain_pair(spec)
        for s, t in zip(source.samples, target.samples):
            assert s.label == t.label
            assert s.frames.tobytes() == t.frames.tobytes()

    def test_class_balance_matches_manifest(self):
        source, target = D.generate_domain_pair(small_spec())
        for ds in (source, target):
            assert ds.manifest == {0: 4, 1: 4, 2: 4}

    def test_domains_and_ids(self):
        source, target = D.generate_domain_pair(small_spec())
        assert all(s.domain == "source" for s in source.samples)
        assert all(s.domain == "target" for s in target.samples)
        assert len({s.id for s in source.samples} | {s.id for s in target.samples}) == 2 * len(source)

    def test_shift_changes_target_only(self):
        base_src, base_tgt = D.generate_domain_pair(small_spec(shift_severity=0.2))
        hard_src, hard_tgt = D.generate_domain_pair(small_spec(shift_severity=0.9))
        for a, b in zip(base_src.samples, hard_src.samples):
            assert a.frames.tobytes() == b.frames.tobytes()
        assert any(a.frames.tobytes() != b.frames.tobytes() for a, b in zip(base_tgt.samples, hard_tgt.samples))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            small_spec(classes=1)
        with pytest.raises(ValueError):
            small_spec(frames=2)
        with pytest.raises(ValueError):
            small_spec(shift_severity=1.5)


class TestFileFormat:
    def test_roundtrip_value_exact(self, tmp_path):
        source, _ = D.generate_domain_pair(small_spec())
        path = tmp_path / "source.jsonl"
        D.write_dataset(source, path)
        loaded = D.read_dataset(path)
        assert loaded.domain == source.domain
        assert loaded.manifest == source.manifest
        for a, b in zip(source.samples, loaded.samples):
            assert a.id == b.id
            assert a.label == b.label
            assert a.frames.tobytes() == b.frames.tobytes()
        again = tmp_path / "again.jsonl"
        D.write_dataset(loaded, again)
        assert path.read_bytes() == again.read_bytes()

    def test_malformed_line_reports_line_number(self, tmp_path):
        source, _ = D.generate_domain_pair(small_spec())
        path = tmp_path / "broken.jsonl"
        D.write_dataset(source, path)
        lines = path.read_text().splitlines()
        lines[3] = lines[3][:-10]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 4"):
            D.read_dataset(path)

    def test_wrong_frame_count_reports_line(self, tmp_path):
        source, _ = D.generate_domain_pair(small_spec())
        path = tmp_path / "short.jsonl"
        D.write_dataset(source, path)
        lines = path.read_text().splitlines()
        import json

        record = json.loads(lines[2])
        record["frames"] = record["frames"][:-1]
        lines[2] = json.dumps(record, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 3"):
            D.read_dataset(path)

    def test_null_label_in_source_rejected(self, tmp_path):
        source, _ = D.generate_domain_pair(small_spec())
        path = tmp_path / "bad.jsonl"
        D.write_dataset(source, path)
        lines = path.read_text().splitlines()
        import json

        record = json.loads(lines[1])
        record["label"] = None
        lines[1] = json.dumps(record, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="source requires labels"):
            D.read_dataset(path)

    def test_header_count_mismatch(self, tmp_path):
        source, _ = D.generate_domain_pair(small_spec())
        path = tmp_path / "count.jsonl"
        D.write_dataset(source, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="count"):
            D.read_dataset(path)

    def test_unlabeled_target_roundtrip(self, tmp_path):
        _, target = D.generate_domain_pair(small_spec())
        stripped = target.without_labels()
        assert not stripped.labeled
        path = tmp_path / "unlabeled.jsonl"
        D.write_dataset(stripped, path)
        loaded = D.read_dataset(path)
        assert all(s.label is None for s in loaded.samples)


class TestBatchIterator:
    def test_same_seed_same_order(self):
        source, _ = D.generate_domain_pair(small_spec())
        a = [b.ids for b in D.batch_iterator(source, 4, shuffle_seed=9)]
        b = [b.ids for b in D.batch_iterator(source, 4, shuffle_seed=9)]
        c = [b.ids for b in D.batch_iterator(source, 4, shuffle_seed=10)]
        assert a == b
        assert a != c

    def test_eval_covers_every_sample_once(self):
        source, _ = D.generate_domain_pair(small_spec())
        seen = []
        for batch in D.batch_iterator(source, 5, shuffle_seed=0, train=False):
            seen += batch.ids
        assert sorted(seen) == sorted(s.id for s in source.samples)

    def test_train_drops_last_short_batch(self):
        source, _ = D.generate_domain_pair(small_spec())  # 12 videos
        batches = list(D.batch_iterator(source, 5, shuffle_seed=0, train=True))
        assert [len(b.ids) for b in batches] == [5, 5]

    def test_train_rejects_batch_of_one(self):
        source, _ = D.generate_domain_pair(small_spec())
        with pytest.raises(ValueError, match="batch_size"):
            list(D.batch_iterator(source, 1, shuffle_seed=0, train=True))

    def test_unlabeled_batches_have_no_labels(self):
        _, target = D.generate_domain_pair(small_spec())
        for batch in D.batch_iterator(target.without_labels(), 4, shuffle_seed=0, train=False):
            assert batch.labels is None
