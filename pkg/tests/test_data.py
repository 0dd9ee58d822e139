import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddan.data import (DataError, DomainSpec, ManifestRow, DatasetManifest, apply_domain,
                       generate_dataset, index_by_identity, load_manifest, make_domain_specs,
                       make_prototype, pk_sample_batch, pk_sample_indices, render)


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    return generate_dataset(5, 20, 8, (3, 32, 32), seed=7, out_dir=root)


class TestGenerate:
    def test_counts(self, bench):
        assert len(bench) == 800 and bench.num_identities == 100
        assert bench.domain_counts == {d: 160 for d in range(5)}

    def test_layout_and_decode(self, bench):
        assert (bench.root / "manifest.tsv").is_file()
        assert (bench.root / "domain_2/id_45/img_3.png").is_file()
        back = load_manifest(bench.root)
        imgs = back.images()
        assert imgs.shape == (800, 3, 32, 32) and imgs.dtype == np.float32
        assert imgs.min() >= 0 and imgs.max() <= 1

    def test_byte_identical(self, tmp_path):
        a = generate_dataset(2, 3, 2, (3, 16, 16), seed=11, out_dir=tmp_path / "a")
        b = generate_dataset(2, 3, 2, (3, 16, 16), seed=11, out_dir=tmp_path / "b")
        assert tree_digest(a.root) == tree_digest(b.root)
        c = generate_dataset(2, 3, 2, (3, 16, 16), seed=12, out_dir=tmp_path / "c")
        assert tree_digest(a.root) != tree_digest(c.root)

    def test_degenerate(self, tmp_path):
        m = generate_dataset(1, 1, 1, (3, 8, 8), seed=0, out_dir=tmp_path)
        assert len(m) == 1 and m.central_domain == 0
        assert m.sample(0).is_central == 1

    def test_grayscale(self, tmp_path):
        m = generate_dataset(2, 2, 2, (1, 8, 8), seed=0, out_dir=tmp_path)
        assert load_manifest(tmp_path).images().shape == (8, 1, 8, 8)
        assert m.image_shape == (1, 8, 8)

    @pytest.mark.parametrize("counts", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
    def test_zero_counts(self, tmp_path, counts):
        with pytest.raises(DataError):
            generate_dataset(*counts, (3, 8, 8), out_dir=tmp_path)

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError):
            generate_dataset(1, 1, 1, (3, 8, 8), out_dir=blocker / "sub")

    def test_identity_disjointness(self, bench):
        owner = {}
        for r in bench.rows:
            assert owner.setdefault(r.identity_id, r.domain_id) == r.domain_id


class TestManifest:
    def test_overlapping_identities_rejected(self, tmp_path):
        m = DatasetManifest(tmp_path, [ManifestRow("a.png", 1, 0), ManifestRow("b.png", 1, 1)],
                            0, (3, 4, 4))
        m.write()
        with pytest.raises(DataError):
            load_manifest(tmp_path)

    def test_missing_or_bad_header(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path)
        (tmp_path / "manifest.tsv").write_text("a.png\t1\t0\n")
        with pytest.raises(DataError):
            load_manifest(tmp_path)

    def test_central_flag(self, tiny_data):
        m = tiny_data.subset(range(len(tiny_data)))
        m.central_domain = 2
        flags = m.is_central()
        np.testing.assert_array_equal(flags, (m.domain_ids == 2).astype(flags.dtype))

    def test_bad_image_shape(self, tmp_path, tiny_data):
        m = DatasetManifest(tiny_data.root, tiny_data.rows[:1], 0, (3, 8, 8))
        with pytest.raises(DataError):
            m.images()


class TestRendering:
    def test_prototype_range(self):
        p = make_prototype(3, (3, 32, 32), 0)
        assert p.base_pattern.min() >= 0 and p.base_pattern.max() <= 1

    def test_domain_transform_clamps(self, rng):
        spec = DomainSpec(0, 0.4, 3.0, 2.5, 0.1, 0.5, 1)
        out = apply_domain(rng.uniform(size=(3, 16, 16)), spec, np.random.default_rng(0))
        assert out.min() >= 0 and out.max() <= 1

    def test_bit_identical(self):
        p = make_prototype(5, (3, 32, 32), 1)
        spec = make_domain_specs(3, 1)[1]
        np.testing.assert_array_equal(render(p, spec, 4), render(p, spec, 4))

    def test_domains_differ(self):
        p = make_prototype(5, (3, 32, 32), 1)
        a, b = make_domain_specs(2, 1)
        assert np.abs(render(p, a, 0) - render(p, b, 0)).mean() > 0

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            DomainSpec(0, 0.7, 1, 1, 0, 0, 0)
        with pytest.raises(ValueError):
            DomainSpec(0, 0.1, 0, 1, 0, 0, 0)


class TestPK:
    def test_sixteen_by_four_batch(self, bench, rng):
        batch = pk_sample_batch(bench, 16, 4, rng)
        ids = [s.identity_id for s in batch]
        assert len(batch) == 64 and len(set(ids)) == 16
        assert all(ids.count(i) == 4 for i in set(ids))

    def test_single(self, tiny_data, rng):
        assert len(pk_sample_batch(tiny_data, 1, 1, rng)) == 1

    def test_too_few_identities(self, tmp_path, rng):
        m = generate_dataset(1, 3, 4, (3, 8, 8), out_dir=tmp_path)
        with pytest.raises(DataError):
            pk_sample_batch(m, 5, 2, rng)

    def test_deterministic(self, tiny_data):
        groups = index_by_identity(tiny_data)
        a = pk_sample_indices(groups, 4, 3, np.random.default_rng(9))
        b = pk_sample_indices(groups, 4, 3, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_replacement_when_short(self, rng):
        idx = pk_sample_indices({0: np.array([1]), 1: np.array([2, 3])}, 2, 4, rng)
        assert len(idx) == 8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_property_p_identities_k_each(self, P, K, seed):
        rng = np.random.default_rng(seed)
        groups = {i: np.arange(i * 10, i * 10 + int(rng.integers(1, 8))) for i in range(12)}
        idx = pk_sample_indices(groups, P, K, rng)
        owner = {int(r): i for i, rows in groups.items() for r in rows}
        ids = [owner[int(r)] for r in idx]
        assert len(set(ids)) == P and all(ids.count(i) == K for i in set(ids))
