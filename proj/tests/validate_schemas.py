"""Runs each monodyn subcommand and validates its JSON output against docs/schema.

usage: validate_schemas.py MONODYN_BINARY SCHEMA_DIR FIXTURE_DIR
"""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource


def main() -> int:
    binary, schema_dir, fixtures = sys.argv[1], pathlib.Path(sys.argv[2]), pathlib.Path(sys.argv[3])
    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.v1.json")}
    registry = Registry().with_resources(
        [(s["$id"], Resource.from_contents(s)) for s in schemas.values()]
        + [(name, Resource.from_contents(s)) for name, s in schemas.items()]
    )

    with tempfile.TemporaryDirectory() as tmp:
        mixed = pathlib.Path(tmp) / "mixed.csv"
        rows = (fixtures / "noisy.csv").read_text().splitlines()
        mixed.write_text("\n".join(rows + ["short,0.1,1.0", "short,0.2,1.1", "short,0.3,1.2"]) + "\n")
        runs = [
            ("fit.v1.json", ["fit", str(mixed), "--grid", "21"]),
            ("fit.v1.json", ["two-stage", "--M", "5", str(fixtures / "noisy.csv")]),
            ("simulate.v1.json", ["simulate", "--replicates", "3", "--seed", "3"]),
            ("rates.v1.json", ["rates", "--n-list", "100,150,200,250", "--replicates", "2"]),
        ]
        failures = 0
        for schema_name, args in runs:
            proc = subprocess.run([binary, *args], capture_output=True, text=True)
            label = " ".join(args[:1])
            if proc.returncode != 0:
                print(f"FAIL {label}: exit {proc.returncode}: {proc.stderr.strip()}")
                failures += 1
                continue
            validator = jsonschema.Draft202012Validator(schemas[schema_name], registry=registry)
            errors = list(validator.iter_errors(json.loads(proc.stdout)))
            for e in errors[:5]:
                print(f"FAIL {label}: {'/'.join(map(str, e.absolute_path))}: {e.message}")
            failures += bool(errors)
            if not errors:
                print(f"ok   {label} validates against {schema_name}")
            broken = json.loads(proc.stdout)
            broken["config"]["order"] = "four"
            if validator.is_valid(broken):
                print(f"FAIL {label}: schema accepted a corrupted document")
                failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
