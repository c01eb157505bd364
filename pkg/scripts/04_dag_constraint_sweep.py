"""Drop the acyclicity penalty and watch the scores fall.

Runs a two-cell sweep over lambda2 on planted-hub concepts. Without the
penalty the fit keeps cycles, out-degree stops meaning "upstream", and the
graph-selected targets lose part of their advantage.
"""

import tempfile

from ccg.cli import run_sweep
from ccg.pipeline import ExperimentConfig
from ccg.synth import SynthConfig

base = ExperimentConfig(synth=SynthConfig.planted_hubs(seed=0), source="concepts",
                        methods=["graph"])
with tempfile.TemporaryDirectory() as out:
    for row in run_sweep(base, {"lambda2": [0.0, 0.05]}, out):
        print(f"lambda2={row['lambda2']:<5} cfs {row['mean_cfs']:.3f} ± {row['std_cfs']:.3f}  "
              f"density {row['density']:.3f}  h {row['dag_violation']:.2g}")
