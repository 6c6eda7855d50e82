import hashlib
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vizflow import datamodel as dm

from .conftest import make_sample, png_bytes


class TestImageStore:
    def test_put_idempotent(self, store):
        data = png_bytes(dot=(3, 3))
        r1 = store.put(data)
        r2 = store.put(data)
        assert r1 == r2
        assert store.object_count() == 1

    def test_digest_matches_independent_hasher(self, store):
        data = png_bytes(size=(1, 1), color="black")
        ref = store.put(data)
        assert ref.digest == hashlib.sha256(data).hexdigest()
        assert (ref.width, ref.height) == (1, 1)

    def test_truncated_bytes_rejected(self, store):
        data = png_bytes()
        with pytest.raises(dm.ImageDecodeError):
            store.put(data[: len(data) // 2])

    def test_non_png_rejected(self, store):
        import io
        from PIL import Image
        buf = io.BytesIO()
        Image.new("RGB", (4, 4)).save(buf, format="BMP")
        with pytest.raises(dm.ImageDecodeError):
            store.put(buf.getvalue())

    def test_stored_under_digest_path(self, store):
        ref = store.put(png_bytes(dot=(5, 1)))
        path = store.root / ref.digest[:2] / ref.digest
        assert path.exists()
        assert store.get(ref) == path.read_bytes()

    def test_concurrent_puts_leave_one_object(self, store):
        from concurrent.futures import ThreadPoolExecutor
        data = png_bytes(dot=(2, 6))
        with ThreadPoolExecutor(max_workers=8) as tpe:
            refs = list(tpe.map(lambda _: store.put(data), range(32)))
        assert len({r.digest for r in refs}) == 1
        assert store.object_count() == 1


class TestCanonicalize:
    def test_serialization_deterministic(self, store):
        s = make_sample(store)
        assert s.serialize() == dm.Sample.from_dict(json.loads(s.serialize())).serialize()

    def test_id_matches_independent_hash(self, store):
        s = make_sample(store)
        body = {k: v for k, v in json.loads(s.serialize()).items() if k != "id"}
        expected = hashlib.sha256(
            json.dumps(body, sort_keys=True, separators=(",", ":"),
                       ensure_ascii=False).encode()).hexdigest()
        assert s.id == expected

    def test_depth_over_cap_rejected(self, store):
        with pytest.raises(dm.DepthLimitError):
            make_sample(store, depth=4)

    def test_dangling_image_rejected(self, store, tmp_path):
        s = make_sample(store)
        other = dm.ImageStore(tmp_path / "other")
        with pytest.raises(dm.DanglingImageError):
            dm.canonicalize(s, other)

    def test_any_field_change_changes_id(self, store):
        a = make_sample(store, question="q1")
        b = make_sample(store, question="q2")
        assert a.id != b.id

    def test_step_invariants(self):
        with pytest.raises(dm.DatamodelError):
            dm.Step(thought="t", code="c").validate()  # code without execution
        with pytest.raises(dm.DatamodelError):
            dm.Step(thought="t", output_image=dm.ImageRef("0" * 64)).validate()


class TestShardIO:
    def test_round_trip(self, store, tmp_path):
        samples = [make_sample(store, question=f"q{i}") for i in range(3)]
        manifest = dm.shard_write(samples, tmp_path / "d.jsonl")
        assert manifest["count"] == 3
        back = dm.shard_read(tmp_path / "d.jsonl")
        assert back == samples

    def test_empty_shard(self, tmp_path):
        manifest = dm.shard_write([], tmp_path / "empty.jsonl")
        assert manifest["count"] == 0
        assert dm.shard_read(tmp_path / "empty.jsonl") == []

    def test_tampered_line_reports_position(self, store, tmp_path):
        samples = [make_sample(store, question=f"q{i}") for i in range(3)]
        path = tmp_path / "d.jsonl"
        dm.shard_write(samples, path)
        lines = path.read_text().splitlines()
        lines[1] = lines[1].replace('"question"', '"questioX"', 1)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(dm.ShardError) as err:
            dm.shard_read(path, verify_manifest=False)
        assert err.value.line == 2

    def test_manifest_digest_mismatch(self, store, tmp_path):
        samples = [make_sample(store)]
        path = tmp_path / "d.jsonl"
        dm.shard_write(samples, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-2] + b" \n")
        with pytest.raises(dm.ShardError, match="digest mismatch"):
            dm.shard_read(path)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.text(min_size=1, max_size=40),
                              st.text(min_size=1, max_size=20)), max_size=5))
    def test_round_trip_property(self, tmp_path_factory, qa_pairs):
        tmp = tmp_path_factory.mktemp("prop")
        store = dm.ImageStore(tmp / "img")
        samples = [make_sample(store, question=q, answer=a) for q, a in qa_pairs]
        dm.shard_write(samples, tmp / "d.jsonl")
        assert dm.shard_read(tmp / "d.jsonl") == samples


def test_canonical_png_stable_across_reencode():
    from PIL import Image
    import io
    img = Image.new("RGB", (16, 16), "white")
    a = dm.canonical_png(img)
    b = dm.canonical_png(Image.open(io.BytesIO(a)))
    assert a == b
