"""Runs the CLI end to end on a tiny dataset and validates its JSON outputs."""
import json
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema


def run(*args):
    subprocess.run([str(a) for a in args], check=True, stdout=subprocess.DEVNULL)


def validate(path, schema_dir, name):
    schema = json.loads((schema_dir / name).read_text())
    jsonschema.validate(json.loads(Path(path).read_text()), schema)
    print(f"{path}: valid against {name}")


def main():
    cli, schema_dir, work = sys.argv[1], Path(sys.argv[2]), Path(sys.argv[3])
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    small = ["--set", "data.image_size=96", "--set", "data.face_size_max=40", "--set", "data.faces_max=3",
             "--set", "model.pyramid_channels=16", "--set", "model.embed_dim=16"]
    run(cli, "gen-data", "-n", 4, "-o", work / "data", *small)
    validate(work / "data" / "annotations.json", schema_dir, "manifest.schema.json")
    run(cli, "train", "-d", work / "data", "-o", work / "run", *small,
        "--set", "train.max_steps=2", "--set", "train.batch_size=2")
    run(cli, "eval", "-d", work / "data", "--checkpoint", work / "run" / "final.ckpt", *small,
        "-o", work / "report.json", "--dump-predictions", work / "predictions.json")
    validate(work / "report.json", schema_dir, "report.schema.json")
    validate(work / "predictions.json", schema_dir, "predictions.schema.json")


if __name__ == "__main__":
    main()
