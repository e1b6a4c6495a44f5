import os

os.environ.setdefault("VADB_WORKERS", "1")
