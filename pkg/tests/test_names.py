import uuid

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridfs.errors import InvalidPath
from gridfs.names import LfnPath, Pfn, canonical_guid, is_guid, new_guid

segment = st.text(st.characters(blacklist_characters="/\x00@", blacklist_categories=("Cs",)),
                  min_size=1, max_size=20).filter(lambda s: s not in (".", ".."))


@given(st.lists(segment, max_size=6))
def test_lfn_canonical_round_trip(segs):
    path = LfnPath(tuple(segs))
    assert LfnPath.parse(str(path)) == path
    assert str(LfnPath.parse(str(path))) == str(path)


@pytest.mark.parametrize("text,want", [
    ("/", "/"),
    ("/a/b/", "/a/b"),
    ("//a///b", "/a/b"),
    ("/a/./b/../c", "/a/c"),
    ("grid:///alice/run/../f", "/alice/f"),
    ("grid://alice/f", "/alice/f"),
    ("/..", "/"),
])
def test_lfn_normalisation(text, want):
    assert str(LfnPath.parse(text)) == want


def test_relative_lfn_uses_cwd():
    assert str(LfnPath.parse("sim/f", cwd="/alice")) == "/alice/sim/f"
    assert str(LfnPath.parse("../bob", cwd="/alice")) == "/bob"


@pytest.mark.parametrize("bad", ["/a\x00b", "/a@b", "/" + "x" * 256])
def test_lfn_rejects_bad_segments(bad):
    with pytest.raises(InvalidPath):
        LfnPath.parse(bad)


def test_lfn_navigation():
    p = LfnPath.parse("/a/b/c")
    assert p.name == "c"
    assert str(p.parent) == "/a/b"
    assert str(p.child("d")) == "/a/b/c/d"
    assert [str(a) for a in p.ancestors()] == ["/", "/a", "/a/b"]
    assert LfnPath.parse("/").is_root


@given(st.sampled_from(["file", "mem", "aiod", "root"]),
       st.from_regex(r"[a-z][a-z0-9.-]{0,15}", fullmatch=True),
       st.integers(1, 65535),
       st.from_regex(r"[a-z0-9/._-]{0,30}", fullmatch=True))
def test_pfn_round_trip(proto, host, port, direntry):
    pfn = Pfn(proto, host, port, direntry)
    text = str(pfn)
    assert text == "%s://%s:%d/%s" % (proto, host, port, direntry)
    assert Pfn.parse(text) == pfn
    assert pfn.addr == "%s:%d" % (host, port)


@pytest.mark.parametrize("bad", ["se1:7001/x", "file://se1/x", "file://se1:0/x",
                                 "file://se1:70000/x"])
def test_pfn_rejects_malformed(bad):
    with pytest.raises(InvalidPath):
        Pfn.parse(bad)


def test_guid_forms():
    g = new_guid()
    assert is_guid(g) and g == g.lower() and str(uuid.UUID(g)) == g
    assert canonical_guid(g.upper()) == g
    assert not is_guid("not-a-guid")
