#!/usr/bin/env python3
"""Regenerate the shipped fixture JSONs (deterministic; safe to rerun)."""
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from o2oil.fixtures import build_fixture, fixture_to_json, standard_fixture_specs


def main():
    out_dir = pathlib.Path(__file__).resolve().parents[1] / "src" / "o2oil" / "fixtures"
    out_dir.mkdir(parents=True, exist_ok=True)
    for fixture_id, seed, n_states, n_actions, gamma in standard_fixture_specs():
        fx = build_fixture(fixture_id, seed, n_states, n_actions, gamma)
        path = out_dir / f"{fixture_id}.json"
        path.write_text(fixture_to_json(fx), encoding="utf-8")
        print(f"wrote {path.name}: S={n_states} A={n_actions} gamma={gamma}")


if __name__ == "__main__":
    main()
