#!/usr/bin/env python3
"""Build the wildfire fixture database from the CSVs next to it."""

import csv
import sqlite3
import sys
from pathlib import Path

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures" / "wildfire"

SCHEMA = """
DROP TABLE IF EXISTS wildfires;
DROP TABLE IF EXISTS states;
CREATE TABLE states (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL
);
CREATE TABLE wildfires (
    id INTEGER PRIMARY KEY,
    state_id INTEGER NOT NULL REFERENCES states(id),
    size_acres REAL NOT NULL,
    year INTEGER NOT NULL
);
"""


def load(conn: sqlite3.Connection, table: str, path: Path) -> int:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return 0
    cols = list(rows[0])
    sql = (f"INSERT INTO {table} ({', '.join(cols)}) "
           f"VALUES ({', '.join('?' for _ in cols)})")
    conn.executemany(sql, [[r[c] for c in cols] for r in rows])
    return len(rows)


def build(db_path: Path) -> None:
    conn = sqlite3.connect(str(db_path))
    try:
        conn.executescript(SCHEMA)
        n_states = load(conn, "states", FIXTURES / "states.csv")
        n_fires = load(conn, "wildfires", FIXTURES / "wildfires.csv")
        conn.commit()
    finally:
        conn.close()
    print(f"{db_path}: {n_states} states, {n_fires} wildfires")


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else FIXTURES / "wildfire.db"
    build(target)
