"""Schema-check every config under scripts/configs without running anything."""
import sys
from pathlib import Path

from rwre import harness

bad = 0
for p in sorted((Path(__file__).resolve().parent / "configs").glob("*.json")):
    try:
        harness.load_config(p)
        print(f"ok       {p.name}")
    except harness.ConfigError as exc:
        bad += 1
        print(f"invalid  {p.name}: {exc}")
sys.exit(1 if bad else 0)
