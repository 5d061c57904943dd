"""Builds a report through the CLI and validates it against docs/report.schema.json."""
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

cli, schema_path = sys.argv[1], sys.argv[2]
schema = json.loads(pathlib.Path(schema_path).read_text())

with tempfile.TemporaryDirectory() as tmp:
    def run(*args):
        subprocess.run([cli, *args], cwd=tmp, check=True, stdout=subprocess.DEVNULL)

    run("gen", "gaussian", "--d", "2", "--ambient", "5", "--n", "300", "-o", "g.fnds")
    run("ide", "--data", "g.fnds", "--out", "o", "--seeds", "0", "1")
    cache = pathlib.Path(tmp, "o", "cache.jsonl")
    cache.write_text(json.dumps({"p": 3, "epochs": 1, "seed": 0, "ide_z": 2.5,
                                 "ide_mu": 2.0, "estimator": "mle", "k": 20}) + "\n")
    run("report", "o/ide.json", "o/ide.csv", "o/cache.jsonl", "-o", "report.json")
    report = json.loads(pathlib.Path(tmp, "report.json").read_text())
    jsonschema.validate(report, schema)
    print("report validates:", len(report["inputs"]), "inputs")
