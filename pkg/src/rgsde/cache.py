"""On-disk scenario cache keyed by a manifest hash."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .scenario import ScenarioBatch, read_scenario_csv, sample_batch, scenario_seed, write_scenario_csv

__all__ = ["ScenarioCache", "cache_root"]

ENV_VAR = "RGSDE_CACHE_DIR"


def cache_root(out_dir) -> Path:
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else Path(out_dir) / "cache"


class ScenarioCache:
    """Per-scenario CSVs for every (control, index) of a run config, plus ``manifest.json``.

    The directory name is a prefix of the manifest hash; a stored manifest whose
    hash differs, or a missing file, forces regeneration.
    """

    def __init__(self, run, root=None):
        self.run = run
        self.hash = run.manifest_hash()
        self.root = Path(root) if root is not None else cache_root(run.out_dir)
        self.dir = self.root / self.hash[:16]

    def filename(self, ci: int, j: int) -> Path:
        return self.dir / f"c{ci:03d}_s{j:06d}.csv"

    @property
    def manifest_path(self) -> Path:
        return self.dir / "manifest.json"

    def files(self) -> list[Path]:
        return [self.filename(ci, j) for ci in range(len(self.run.controls)) for j in range(self.run.n_paths)]

    def is_valid(self) -> bool:
        try:
            stored = json.loads(self.manifest_path.read_text())
        except (OSError, ValueError):
            return False
        return stored.get("hash") == self.hash and all(f.exists() for f in self.files())

    def ensure(self) -> bool:
        """Generate the scenario files unless a matching cache exists; True when (re)written."""
        if self.is_valid():
            return False
        self.dir.mkdir(parents=True, exist_ok=True)
        for stale in self.dir.glob("*.csv"):
            stale.unlink()
        run = self.run
        idx = np.arange(run.n_paths)
        for ci, c in enumerate(run.controls):
            batch = sample_batch(c, run.grid, run.vol, run.master_seed, idx)
            for j in range(len(batch)):
                write_scenario_csv(batch.path(j), self.filename(ci, j))
        manifest = dict(run.scenario_manifest(), hash=self.hash)
        manifest.pop("control_levels")
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return True

    def load(self, ci: int) -> ScenarioBatch:
        c = self.run.controls[ci]
        paths = [read_scenario_csv(self.filename(ci, j), c.label) for j in range(self.run.n_paths)]
        b = ScenarioBatch.from_paths(paths, np.arange(self.run.n_paths))
        b.seeds = np.array([scenario_seed(self.run.master_seed, j) for j in range(self.run.n_paths)], dtype=np.uint64)
        return b
