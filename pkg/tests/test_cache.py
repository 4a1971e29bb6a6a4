import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from bctx.errors import CacheFormatError, CorpusError
from bctx.fixtures import forge_corpus
from bctx.harness import dataset_from_cache, extract_all, load_cache, load_manifest
from bctx.harness.cache import read_record, record_from_bytes, record_path, record_to_bytes
from bctx.pipeline import ExtractConfig, FeatureRecord, extract_apk


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    # 4 labels x 3 = 12 apps; tests that need 10 take a slice of the manifest
    return forge_corpus(tmp_path_factory.mktemp("corpus"), n_per_class=3, seed=5)


def first_ten(manifest):
    return load_manifest(manifest)[:10]


def cache_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.bctx"))}


def test_ten_apps_then_noop(corpus, tmp_path):
    entries = first_ten(corpus)
    rep = extract_all(entries, tmp_path)
    assert len(rep.written) == 10 and not rep.errors and not rep.skipped
    snapshot = cache_bytes(tmp_path)
    rep2 = extract_all(entries, tmp_path)
    assert rep2.written == [] and len(rep2.skipped) == 10
    assert cache_bytes(tmp_path) == snapshot
    assert json.loads((tmp_path / "extract_report.json").read_text())["skipped"] == rep2.skipped


def test_corrupt_apk_is_reported(corpus, tmp_path):
    entries = first_ten(corpus)
    bad = tmp_path / "bad.apk"
    bad.write_bytes(b"garbage, not a zip")
    entries[3] = replace(entries[3], path=bad)
    rep = extract_all(entries, tmp_path / "cache")
    assert len(rep.written) == 9 and len(rep.errors) == 1
    assert rep.errors[0]["id"] == entries[3].app_id and "NotAZip" in rep.errors[0]["error"]


def test_version_bump_and_source_change_reextract(corpus, tmp_path):
    entries = first_ten(corpus)[:3]
    extract_all(entries, tmp_path)
    assert len(extract_all(entries, tmp_path, ExtractConfig(version="bctx-extract-2")).written) == 3
    cat = tmp_path / "cat.tsv"
    cat.write_text("only\tads\tLcom/nothing/\n")
    assert len(extract_all(entries, tmp_path, ExtractConfig(catalog_path=str(cat))).written) == 3


def test_reload_is_bit_identical(corpus, tmp_path):
    e = first_ten(corpus)[0]
    rec = extract_apk(e.path, e.app_id, e.label)
    data = record_to_bytes(rec)
    back = record_from_bytes(data)
    assert back == rec and record_to_bytes(back) == data
    assert back.f_lib.dtype == np.uint64 and back.f_bin.dtype == np.float64
    assert data[:5] == b"BCTX1" and struct.unpack_from("<H", data, 5)[0] == 1


def test_jobs_do_not_change_output(corpus, tmp_path):
    entries = first_ten(corpus)
    extract_all(entries, tmp_path / "one", jobs=1)
    extract_all(entries, tmp_path / "two", jobs=2)
    assert cache_bytes(tmp_path / "one") == cache_bytes(tmp_path / "two")


def test_dataset_from_cache(corpus, tmp_path):
    extract_all(corpus, tmp_path)
    ds = dataset_from_cache(tmp_path, with_streams=True)
    assert len(ds) == 12 and ds.ids == sorted(ds.ids)
    assert ds.f_bin.shape == (12, 648) and ds.streams[0][:4] == b"dex\n"
    assert len(load_cache(tmp_path)) == 12


def test_cnn_backend_records(corpus, tmp_path):
    entries = first_ten(corpus)[:2]
    extract_all(entries, tmp_path, ExtractConfig(backend="cnn", cnn_input_side=16))
    ds = dataset_from_cache(tmp_path)
    assert ds.bin_shape == (3, 16, 16) and ds.f_bin.shape == (2, 768)
    assert 0.0 <= ds.f_bin.min() and ds.f_bin.max() <= 1.0


def test_bad_cache_files(tmp_path):
    with pytest.raises(CacheFormatError):
        load_cache(tmp_path)
    rec = FeatureRecord("a/b", "x", np.zeros(3), ("t",), np.zeros(2, dtype=np.uint64))
    data = record_to_bytes(rec)
    for broken in (b"NOPE1" + data[5:], data[:-3], data + b"\0"):
        with pytest.raises(CacheFormatError):
            record_from_bytes(broken)
    assert record_path(tmp_path, "a/b").name == "a%2Fb.bctx"


def test_stale_cache_file_is_replaced(corpus, tmp_path):
    entries = first_ten(corpus)[:1]
    extract_all(entries, tmp_path)
    p = record_path(tmp_path, entries[0].app_id)
    p.write_bytes(b"junk")
    assert extract_all(entries, tmp_path).written == [entries[0].app_id]
    assert read_record(p).app_id == entries[0].app_id


def test_manifest_errors(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"id": "a", "path": "a.apk", "label": "x"}\n')
    with pytest.raises(CorpusError):
        load_manifest(m)
    assert load_manifest(m, check_paths=False)[0].path == tmp_path / "a.apk"
    m.write_text('{"id": "a", "path": "a.apk", "label": "x"}\n{"id": "a", "path": "b.apk", "label": "y"}\n')
    with pytest.raises(CorpusError):
        load_manifest(m, check_paths=False)
    m.write_text('{"id": "a"}\n')
    with pytest.raises(CorpusError):
        load_manifest(m, check_paths=False)
