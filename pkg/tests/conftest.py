"""Test bootstrap.

Point the SQLite run registry and the artifact root at throwaway locations
BEFORE any app module is imported. app.storage captures the DB path at import
time from GAN_DB, so this must run first, which it does since conftest is
imported before the test modules.
"""
import os
import tempfile

_tmpdir = tempfile.mkdtemp(prefix="ganlab_test_")
os.environ["GAN_DB"] = os.path.join(_tmpdir, "test.db")
os.environ["GAN_OUT_DIR"] = os.path.join(_tmpdir, "out")
