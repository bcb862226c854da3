"""SQLite cache of highway-layer word representations, stored beside a checkpoint."""

import logging
import sqlite3
from pathlib import Path
from typing import Optional

import numpy as np

from hotflip.errors import ContractError

logger = logging.getLogger(__name__)


class RepresentationCache:
    """Word vectors of one checkpoint, invalidated when the checkpoint changes.

    Rows are float64 arrays stored as bytes; the ``meta`` table records the
    SHA-256 of the checkpoint they were computed from.
    """

    SCHEMA = """
    CREATE TABLE IF NOT EXISTS meta (
        key TEXT PRIMARY KEY,
        value TEXT NOT NULL
    );

    CREATE TABLE IF NOT EXISTS representations (
        rank INTEGER PRIMARY KEY,
        word TEXT NOT NULL UNIQUE,
        vector BLOB NOT NULL
    );
    """

    def __init__(self, db_path: str | Path):
        """Initialize the cache location."""
        self.db_path = Path(db_path)
        self.conn: Optional[sqlite3.Connection] = None

    @classmethod
    def beside(cls, checkpoint: str | Path) -> "RepresentationCache":
        """Cache file ``<checkpoint>.reps.sqlite``."""
        checkpoint = Path(checkpoint)
        return cls(checkpoint.with_name(checkpoint.name + ".reps.sqlite"))

    def connect(self) -> None:
        """Open the database and create the schema."""
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self.conn = sqlite3.connect(str(self.db_path))
        self.conn.row_factory = sqlite3.Row
        self.conn.executescript(self.SCHEMA)
        self.conn.commit()

    def close(self) -> None:
        """Close the database connection."""
        if self.conn:
            self.conn.close()
            self.conn = None

    def __enter__(self) -> "RepresentationCache":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def digest(self) -> Optional[str]:
        """Checkpoint hash the stored rows belong to."""
        if not self.conn:
            raise RuntimeError("Database not connected")
        row = self.conn.execute("SELECT value FROM meta WHERE key = 'digest'").fetchone()
        return row["value"] if row else None

    def is_current(self, digest: str) -> bool:
        return self.digest() == digest

    def store(self, digest: str, words: list[str], vectors: np.ndarray) -> None:
        """Replace every stored row with ``vectors`` computed from checkpoint ``digest``."""
        if not self.conn:
            raise RuntimeError("Database not connected")
        if len(words) != len(vectors):
            raise ContractError("one vector per word required")

        self.conn.execute("DELETE FROM representations")
        self.conn.executemany(
            "INSERT INTO representations (rank, word, vector) VALUES (?, ?, ?)",
            [
                (rank, word, np.ascontiguousarray(vector, dtype="<f8").tobytes())
                for rank, (word, vector) in enumerate(zip(words, vectors))
            ],
        )
        self.conn.execute(
            "INSERT INTO meta (key, value) VALUES ('digest', ?) "
            "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            (digest,),
        )
        self.conn.execute(
            "INSERT INTO meta (key, value) VALUES ('dimensions', ?) "
            "ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            (str(vectors.shape[1] if vectors.ndim == 2 else 0),),
        )
        self.conn.commit()
        logger.info("Cached %d representations in %s", len(words), self.db_path)

    def load(self) -> tuple[list[str], np.ndarray]:
        """All stored words and their vectors, in insertion order."""
        if not self.conn:
            raise RuntimeError("Database not connected")
        dim_row = self.conn.execute("SELECT value FROM meta WHERE key = 'dimensions'").fetchone()
        dimensions = int(dim_row["value"]) if dim_row else 0
        rows = self.conn.execute("SELECT word, vector FROM representations ORDER BY rank").fetchall()
        words = [row["word"] for row in rows]
        vectors = np.array(
            [np.frombuffer(row["vector"], dtype="<f8") for row in rows], dtype=np.float64
        ).reshape(len(rows), dimensions)
        return words, vectors
