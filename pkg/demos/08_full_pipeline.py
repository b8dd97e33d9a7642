"""Run the whole project pipeline from the bundled config: curation,
tokenizer training and merging, complexity analysis, embedding surgery,
continual pre-training, and both evaluations, with a manifest per stage.

Equivalent CLI: langxpand pipeline run --config fixtures/project.json --out demos/out/pipeline
"""

import json
from pathlib import Path

from langxpand.pipeline import STAGES, ProjectConfig, run_pipeline

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
OUT = Path(__file__).resolve().parent / "out" / "pipeline"

project = ProjectConfig.load(FIXTURES / "project.json")
print(f"seed {project.seed}; stages: {', '.join(STAGES)}\n")
results = run_pipeline(project, OUT)

for stage, summary in results.items():
    print(f"{stage:>11}: {summary}")

manifest = json.loads((OUT / "10_eval" / "manifest.json").read_text())
print(f"\nevery stage wrote a manifest; eval stage recorded "
      f"{len(manifest['inputs'])} input hashes and {len(manifest['outputs'])} output hashes")
print(f"artifacts under {OUT}")
