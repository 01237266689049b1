import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfs.catalogue import Catalogue
from gridfs.errors import (AlreadyExists, DirectoryNotEmpty, DuplicateGuid, DuplicateReplica,
                           GridError, InvalidPath, IsDirectory, NotFound, PermissionDenied,
                           SizeMismatch)
from gridfs.names import LfnPath, Pfn, new_guid

from conftest import ADMIN, ALICE, BOB, CAROL

PFN1 = "file://se1:7100/v0/ab/f1.guid"
PFN2 = "file://se2:7100/v0/ab/f1.guid"


def reg(cat, who, lfn, pfn=PFN1, size=1024, guid=None, perms="644"):
    guid = guid or cat.mint_guid()
    cat.register_file(who, lfn, pfn, size, guid, perms)
    return guid


def test_mkdir_and_list(cat):
    cat.mkdir(ALICE, "/alice/sim", "755")
    names = [e["name"] for e in cat.list_dir(ALICE, "/alice")]
    assert names == ["sim"]
    info = cat.stat(ALICE, "/alice/sim")
    assert (info["owner"], info["group"], info["mode"]) == ("alice", "alice", "755")


def test_mkdir_needs_write_on_parent(cat):
    with pytest.raises(PermissionDenied):
        cat.mkdir(BOB, "/alice/x", "755")


def test_mkdir_twice(cat):
    cat.mkdir(ALICE, "/alice/sim")
    with pytest.raises(AlreadyExists):
        cat.mkdir(ALICE, "/alice/sim")


def test_mkdir_missing_parent(cat):
    with pytest.raises(NotFound):
        cat.mkdir(ALICE, "/alice/a/b")


def test_register_and_resolve(cat):
    guid = reg(cat, ALICE, "/alice/f1")
    assert cat.resolve(ALICE, "/alice/f1") == (guid, 1024, [Pfn.parse(PFN1)])
    assert cat.replicas.get(LfnPath.parse("/alice/f1")) is None


def test_register_same_lfn_twice(cat):
    reg(cat, ALICE, "/alice/f1")
    with pytest.raises(AlreadyExists):
        reg(cat, ALICE, "/alice/f1")


def test_register_duplicate_guid(cat):
    guid = reg(cat, ALICE, "/alice/f1")
    # oracle: scan every live entry for the GUID before the insert
    assert any(e.guid == guid for e in walk_tree(cat).values())
    with pytest.raises(DuplicateGuid):
        reg(cat, ALICE, "/alice/f2", guid=guid)


def test_register_rejects_meta_names(cat):
    with pytest.raises(InvalidPath):
        reg(cat, ALICE, "/alice/x.meta")


def test_resolve_master_first_and_replica_count(cat):
    reg(cat, ALICE, "/alice/f")
    cat.add_replica(ALICE, "/alice/f", PFN2, 1024)
    assert cat.resolve(ALICE, "/alice/f")[2] == [Pfn.parse(PFN1), Pfn.parse(PFN2)]
    for i in range(2):
        cat.add_replica(ALICE, "/alice/f", "file://se%d:1/x" % (i + 3), 1024)
    # one master plus one entry per add_replica call
    assert len(cat.resolve(ALICE, "/alice/f")[2]) == 1 + 3


def test_resolve_without_read_bit(cat):
    reg(cat, ALICE, "/alice/f", perms="600")
    with pytest.raises(PermissionDenied):
        cat.resolve(BOB, "/alice/f")


def test_add_replica_guards(cat):
    reg(cat, ALICE, "/alice/f")
    with pytest.raises(SizeMismatch):
        cat.add_replica(ALICE, "/alice/f", PFN2, 1000)
    cat.add_replica(ALICE, "/alice/f", PFN2, 1024)
    with pytest.raises(DuplicateReplica):
        cat.add_replica(ALICE, "/alice/f", PFN2, 1024)
    with pytest.raises(DuplicateReplica):
        cat.add_replica(ALICE, "/alice/f", PFN1, 1024)
    with pytest.raises(PermissionDenied):
        cat.add_replica(BOB, "/alice/f", "file://se9:1/x", 1024)
    cat.add_replica(ADMIN, "/alice/f", "file://se9:1/x", 1024)


def test_remove_returns_all_pfns(cat):
    reg(cat, ALICE, "/alice/f")
    cat.add_replica(ALICE, "/alice/f", PFN2, 1024)
    assert cat.remove(ALICE, "/alice/f") == [Pfn.parse(PFN1), Pfn.parse(PFN2)]
    with pytest.raises(NotFound):
        cat.resolve(ALICE, "/alice/f")


def test_remove_directory_is_an_error(cat):
    cat.mkdir(ALICE, "/alice/d")
    reg(cat, ALICE, "/alice/d/f")
    with pytest.raises(IsDirectory):
        cat.remove(ALICE, "/alice/d")
    with pytest.raises(DirectoryNotEmpty):
        cat.rmdir(ALICE, "/alice/d")


def test_remove_then_register_again(cat):
    g1 = reg(cat, ALICE, "/alice/f")
    cat.remove(ALICE, "/alice/f")
    g2 = reg(cat, ALICE, "/alice/f")
    assert g1 != g2 and cat.resolve(ALICE, "/alice/f")[0] == g2


def test_move(cat):
    reg(cat, ALICE, "/alice/f")
    before = cat.resolve(ALICE, "/alice/f")
    cat.move(ALICE, "/alice/f", "/alice/g")
    assert cat.resolve(ALICE, "/alice/g") == before
    with pytest.raises(NotFound):
        cat.resolve(ALICE, "/alice/f")
    reg(cat, ALICE, "/alice/h")
    with pytest.raises(AlreadyExists):
        cat.move(ALICE, "/alice/g", "/alice/h")


def test_move_across_directories_keeps_index_coherent(cat):
    cat.mkdir(ALICE, "/alice/a")
    cat.mkdir(ALICE, "/alice/b")
    reg(cat, ALICE, "/alice/a/f")
    cat.move(ALICE, "/alice/a/f", "/alice/b/f")
    assert_index_coherent(cat)
    with pytest.raises(PermissionDenied):
        cat.move(BOB, "/alice/b/f", "/bob/f")


def test_set_access(cat):
    reg(cat, ALICE, "/alice/f")
    cat.set_access(ALICE, "/alice/f", perms="600")
    with pytest.raises(PermissionDenied):
        cat.resolve(BOB, "/alice/f")
    with pytest.raises(PermissionDenied):
        cat.set_access(BOB, "/alice/f", owner="bob")
    cat.set_access(ADMIN, "/alice/f", owner="bob")
    cat.set_access(BOB, "/alice/f", perms="644")
    assert cat.stat(BOB, "/alice/f")["owner"] == "bob"


def test_metadata_text_and_meta_files(cat):
    reg(cat, ALICE, "/alice/f")
    assert cat.read_metadata(ALICE, "/alice/f") == ""
    cat.set_metadata(ALICE, "/alice/f", {"type": "raw", "run": "7"})
    assert cat.read_metadata(ALICE, "/alice/f") == "run=7\ntype=raw"
    assert cat.read_metadata(ALICE, "/alice/f.meta") == "run=7\ntype=raw"
    names = [e["name"] for e in cat.list_dir(ALICE, "/alice")]
    # oracle: entry list expanded with one .meta companion per file
    assert names == sorted(["f", "f.meta"])


def test_superuser_bypasses_checks(cat):
    reg(cat, ALICE, "/alice/f", perms="000")
    assert cat.resolve(ADMIN, "/alice/f")[1] == 1024


def test_dbfile_content(cat):
    cat.put_dbfile(ALICE, "/alice/.cred", "secret")
    assert cat.read_dbfile(ALICE, "/alice/.cred") == "secret"
    with pytest.raises(PermissionDenied):
        cat.read_dbfile(BOB, "/alice/.cred")
    reg(cat, ALICE, "/alice/f")
    with pytest.raises(NotFound):
        cat.read_dbfile(ALICE, "/alice/f")


def test_journal_replay_and_snapshot(tmp_path):
    path = str(tmp_path / "cat.journal")
    c = Catalogue(journal_path=path, snapshot_every=5, seed=3)
    c.mkdir(ADMIN, "/alice")
    c.set_access(ADMIN, "/alice", owner="alice", group="alice")
    for i in range(8):
        reg(c, ALICE, "/alice/f%d" % i, pfn="file://se1:1/v/%d" % i, size=i)
    c.add_replica(ALICE, "/alice/f3", "file://se2:1/v/3", 3)
    c.set_metadata(ALICE, "/alice/f2", {"k": "v"})
    c.remove(ALICE, "/alice/f0")
    c.move(ALICE, "/alice/f1", "/alice/g1")
    before = c.snapshot()
    c.close()
    again = Catalogue(journal_path=path, snapshot_every=5, seed=3)
    assert again.snapshot() == before
    assert_index_coherent(again)
    assert again.resolve(ALICE, "/alice/f3")[2][1] == Pfn.parse("file://se2:1/v/3")


def test_torn_journal_tail_is_ignored(tmp_path):
    path = str(tmp_path / "cat.journal")
    c = Catalogue(journal_path=path, seed=3)
    c.mkdir(ADMIN, "/x")
    c.close()
    with open(path, "a") as fh:
        fh.write('{"seq": 99, "op": "mk')
    again = Catalogue(journal_path=path, seed=3)
    assert [e["name"] for e in again.list_dir(ADMIN, "/")] == ["x"]


def walk_tree(cat):
    """Root-down walk, independent of the flat index."""
    out = {}
    stack = [cat.root]
    while stack:
        d = stack.pop()
        for name, e in d.entries.items():
            out[d.path.child(name)] = e
        stack.extend(d.subdirs.values())
    return out


def assert_index_coherent(cat):
    tree = walk_tree(cat)
    assert set(cat.index) == set(tree)
    for lfn, table in cat.index.items():
        assert table.entries[lfn.name] is tree[lfn]
    assert set(cat.replicas) <= set(tree)
    guids = [e.guid for e in tree.values()]
    assert len(guids) == len(set(guids)) == len(cat.guids)
    for lfn, reps in cat.replicas.items():
        assert len(reps) == len(set(reps)) and tree[lfn].master_pfn not in reps


ops = st.lists(st.tuples(st.sampled_from(["mkdir", "reg", "rm", "mv", "rep", "rmdir", "chmod"]),
                         st.sampled_from(["/alice", "/alice/d", "/bob", "/alice/d/e"]),
                         st.sampled_from(["f", "g", "h"]),
                         st.sampled_from([ALICE, BOB, CAROL])),
               max_size=60)


@settings(max_examples=60)
@given(ops, st.integers(0, 10_000))
def test_index_coherence_and_write_once(seq, seed):
    cat = Catalogue(seed=seed)
    for p in (ALICE, BOB):
        cat.mkdir(ADMIN, "/" + p.user)
        cat.set_access(ADMIN, "/" + p.user, owner=p.user, group="phys", perms="775")
    rng = random.Random(seed)
    live = {}  # naive map oracle: lfn -> guid
    for op, d, name, who in seq:
        lfn = "%s/%s" % (d, name)
        try:
            if op == "mkdir":
                cat.mkdir(who, d)
            elif op == "reg":
                guid = cat.mint_guid()
                cat.register_file(who, lfn, "file://se1:1/%s" % guid, 10, guid)
                assert lfn not in live, "second registration of a live LFN"
                live[lfn] = guid
            elif op == "rm":
                cat.remove(who, lfn)
                live.pop(lfn)
            elif op == "mv":
                dst = "%s/%s2" % (d, name)
                cat.move(who, lfn, dst)
                live[dst] = live.pop(lfn)
            elif op == "rep":
                cat.add_replica(who, lfn, "file://se%d:1/x" % rng.randint(2, 4), 10)
            elif op == "rmdir":
                cat.rmdir(who, d)
            elif op == "chmod":
                cat.set_access(who, lfn, perms=rng.choice(["600", "644", "664"]))
        except GridError:
            pass
        assert_index_coherent(cat)
    assert {str(k): v.guid for k, v in walk_tree(cat).items()} == live
