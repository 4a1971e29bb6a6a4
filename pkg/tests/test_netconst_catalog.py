import ipaddress
import re
import urllib.parse

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bctx.apk import open_apk, write_apk
from bctx.axml import forge_arsc, forge_axml, manifest_tree
from bctx.catalog import load_catalog, parse_catalog
from bctx.dex import DexSpec, ForgeClass, ForgeMethod, forge_dex, parse_dex
from bctx.errors import BadCatalogLine
from bctx.netconst import DEX_CONST_STRING, STRING_RESOURCE, classify, normalize, scan_dex_constants, scan_resources


def dex_with_strings(*texts):
    code = [("const-string", t) for t in texts] + [("return-void",)]
    return parse_dex(forge_dex(DexSpec([ForgeClass("La;", methods=[ForgeMethod("m", "()V", code)])], ["http://unused.org"])))


def test_dex_url_normalized():
    (c,) = scan_dex_constants(dex_with_strings("HTTP://Evil.com/a/"))
    assert (c.kind, c.normalized, c.raw, c.origin) == ("url", "http://evil.com/a", "HTTP://Evil.com/a/", DEX_CONST_STRING)
    assert c.token == "net:http://evil.com/a"


def test_octet_out_of_range():
    assert scan_dex_constants(dex_with_strings("256.1.1.1")) == []


def test_ip():
    (c,) = scan_dex_constants(dex_with_strings("10.0.0.1"))
    assert (c.kind, c.normalized) == ("ip", "10.0.0.1")
    assert normalize("010.000.0.01") == "10.0.0.1"


def test_only_code_strings_are_scanned():
    # the pool holds http://unused.org but no const-string loads it
    assert scan_dex_constants(dex_with_strings("hello")) == []


@pytest.mark.parametrize("text", ["ftp://a.com", "a.com", "http://", "http:// a.com", "+1.2.3.4", "1.2.3", "1.2.3.4.5",
                                  "http://a..b", "https://-"])
def test_non_matches(text):
    if text == "https://-":
        assert classify(text) == ("url", "https://-")  # hyphen-only label is allowed by the grammar
    else:
        assert classify(text) is None


def oracle(text):
    """URL/IP recognizer written against the stated grammar with stdlib parsers."""
    if re.fullmatch(r"[0-9]+(\.[0-9]+){3}", text):
        parts = [int(p) for p in text.split(".")]
        return ("ip", str(ipaddress.IPv4Address(".".join(map(str, parts))))) if max(parts) <= 255 else None
    if not re.match(r"(?i)https?://", text) or re.search(r"\s", text):
        return None
    u = urllib.parse.urlsplit(text)
    netloc = u.netloc
    host, _, port = netloc.partition(":")
    if not re.fullmatch(r"[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*", host):
        return None
    if _ and not port.isdigit():
        return None
    rest = text[len(u.scheme) + 3 + len(netloc):]
    if rest and rest[0] not in "/?#":
        return None
    return "url", (u.scheme.lower() + "://" + host.lower() + (":" + port if _ else "") + rest).rstrip("/")


handcrafted = ["http://a.b", "HTTPS://Ex-Ample.COM:8080/Path/?q=1#F", "http://x.y/", "http://1.2.3.4/a",
               "https://a.b/c//", "http://a.b?x", "192.168.001.1", "255.255.255.255", "0.0.0.0", "300.1.1.1",
               "http://a_b.com", "https://a.b:x", "Http://UPPER.case/Keep/Path"]


@pytest.mark.parametrize("text", handcrafted)
def test_grammar_matches_oracle(text):
    assert classify(text) == oracle(text)


url_text = st.builds(
    lambda scheme, host, port, path: f"{scheme}://{host}{port}{path}",
    st.sampled_from(["http", "https", "HTTP", "hTtPs"]),
    st.from_regex(r"[A-Za-z0-9-]{1,6}(\.[A-Za-z0-9-]{1,6}){0,3}", fullmatch=True),
    st.sampled_from(["", ":80", ":65535"]),
    st.from_regex(r"(/[A-Za-z0-9._~-]{0,6}){0,3}/?(\?[a-z=&]{0,6})?", fullmatch=True),
)


@given(url_text)
def test_random_urls_match_oracle_and_normalize_idempotently(text):
    hit = classify(text)
    assert hit == oracle(text)
    assert normalize(hit[1]) == hit[1]


@given(st.tuples(*[st.integers(0, 999)] * 4))
def test_random_ips(octets):
    text = ".".join(map(str, octets))
    assert classify(text) == oracle(text)


def make_apk(path, resources):
    entries = [("AndroidManifest.xml", forge_axml(manifest_tree("a"))), ("classes.dex", forge_dex(DexSpec()))]
    write_apk(path, entries + resources)
    return open_apk(path)


def test_strings_xml(tmp_path):
    b = make_apk(tmp_path / "a.apk", [("res/values/strings.xml",
                                         b'<resources><string name="u">https://a.b</string></resources>')])
    (c,) = scan_resources(b)
    assert (c.kind, c.normalized, c.origin) == ("url", "https://a.b", STRING_RESOURCE)


def test_empty_resources(tmp_path):
    assert scan_resources(make_apk(tmp_path / "a.apk", [])) == []


def test_arsc_pool_single_hit(tmp_path):
    pool = [f"label {i}" for i in range(50)]
    pool.insert(17, "http://x.y")
    b = make_apk(tmp_path / "a.apk", [("resources.arsc", forge_arsc(pool))])
    hits = scan_resources(b)
    assert [h.normalized for h in hits] == ["http://x.y"]


def test_scanner_output_is_subset_of_pool():
    dex = dex_with_strings("http://a.b", "nope", "8.8.8.8")
    assert {c.raw for c in scan_dex_constants(dex)} <= set(dex.strings)


# -- catalog ---------------------------------------------------------------------

def test_three_line_catalog_in_order():
    cat = parse_catalog("# c\nz\tads\tLz/\na\tmaps\tLa/,Lb/c/\nm\tother\tLm;\n")
    assert cat.library_ids == ["z", "a", "m"] and len(cat) == 3
    assert cat.entries[1].matches("Lb/c/D;") and not cat.entries[1].matches("Lbb/D;")


@pytest.mark.parametrize("text,line", [
    ("a\tads\tLa/\na\tads\tLb/\n", 2),
    ("a\tnope\tLa/\n", 1),
    ("# x\na\tads\n", 2),
    ("a\tads\tcom.a\n", 1),
])
def test_bad_catalog_lines(text, line):
    with pytest.raises(BadCatalogLine) as info:
        parse_catalog(text)
    assert info.value.lineno == line


def test_bundled_catalog():
    cat = load_catalog()
    assert len(cat) >= 8
    assert {"ads", "maps", "payments"} <= {e.category for e in cat.entries}


def test_catalog_fingerprint_changes_with_one_line(tmp_path):
    text = "a\tads\tLa/\nb\tmaps\tLb/\n"
    p = tmp_path / "c.tsv"
    p.write_text(text)
    base = load_catalog(p).fingerprint()
    p.write_text(text.replace("Lb/", "Lbb/"))
    assert load_catalog(p).fingerprint() != base
