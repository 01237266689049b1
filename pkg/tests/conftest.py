import os

import pytest
from hypothesis import HealthCheck, settings

from gridfs.catalogue import Catalogue
from gridfs.deploy import SimGrid
from gridfs.perms import Principal

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture,
                                                 HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ADMIN = Principal("admin", ("admin",))
ALICE = Principal("alice", ("alice", "phys"))
BOB = Principal("bob", ("bob", "phys"))
CAROL = Principal("carol", ("carol",))


@pytest.fixture
def cat():
    c = Catalogue(superuser="admin", seed=1)
    for p in (ALICE, BOB, CAROL):
        c.mkdir(ADMIN, "/" + p.user)
        c.set_access(ADMIN, "/" + p.user, owner=p.user, group=p.primary_group)
    return c


@pytest.fixture
def grid(tmp_path):
    return SimGrid(str(tmp_path))


#: (criterion number, "PASS"/"FAIL", text) filled in by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, text in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, verdict, text))
