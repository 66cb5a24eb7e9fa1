"""HTTP API over the library (FastAPI app factory in :mod:`.app`)."""
