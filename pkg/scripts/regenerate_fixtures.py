"""Rewrite the committed reference SCM fixtures from ``reference_scm``."""

from pathlib import Path

from retrofit_causal.scm import FIXTURES, REFERENCE_SEED, reference_scm

OUT = Path(__file__).resolve().parents[1] / "src" / "retrofit_causal" / "fixtures"

if __name__ == "__main__":
    for kind, name in FIXTURES.items():
        (OUT / name).write_text(reference_scm(kind, REFERENCE_SEED).to_json(), encoding="utf-8")
        print(OUT / name)
