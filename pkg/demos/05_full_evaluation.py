"""The whole pipeline as reproducible on-disk stages.

Runs synth -> train -> predict -> detect -> score on a small config and
reads back the PR curves, exactly as `pvdetect eval` would.
"""

import json
import tempfile
from pathlib import Path

from pvdetect.cli import cmd_detect, cmd_predict, cmd_score, cmd_synth, cmd_train
from pvdetect.config import RunConfig
from pvdetect.imagery import load_manifest
from pvdetect.scoring import read_pr_csv

config = RunConfig(
    scenes=6,
    scene_width=192,
    scene_height=192,
    panels_per_scene=4,
    train_pixels=30_000,
    trees=10,
    seed=5,
)

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    manifest_path = cmd_synth(config, out)
    manifest = load_manifest(manifest_path)
    print(f"synth: {len(manifest.subset('train'))} train"
          f" + {len(manifest.subset('test'))} test scenes")

    model_path = cmd_train(config, manifest_path, out)
    print(f"train: wrote {model_path.name}"
          f" ({model_path.stat().st_size} bytes)")

    test_tiles = [e.image_path for e in manifest.subset("test")]
    map_paths = cmd_predict(config, model_path, test_tiles, out)
    print(f"predict: {len(map_paths)} confidence maps")

    enhanced_paths, detections_path = cmd_detect(config, map_paths, out)
    n_detections = sum(
        1 for line in detections_path.read_text().splitlines()[1:] if line.strip()
    )
    print(f"detect: {len(enhanced_paths)} enhanced maps, {n_detections} objects")

    score_dir = out / "scores"
    cmd_score(config, manifest_path, score_dir, out / "maps", detections_path)
    pixel = read_pr_csv(score_dir / "pr_pixel.csv")
    print(f"\npixel PR: prevalence {pixel.prevalence:.4f},"
          f" best P at R>=0.8: {pixel.best_precision_at(0.8):.3f}")
    for level in config.jaccard_levels:
        curve = read_pr_csv(score_dir / f"pr_object_j{level:g}.csv")
        print(f"object PR at J*={level:g}: max recall {curve.max_recall:.2f},"
              f" best R at P>=0.7: {curve.best_recall_at(0.7):.2f}")

    record = json.loads((out / "train_manifest.json").read_text())
    print(f"\nevery stage drops a manifest; train config hash"
          f" {record['config_sha256'][:12]}... with {len(record['inputs'])} inputs")
