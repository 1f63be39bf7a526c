"""End-to-end reconstruction of the two-circle phantom.

Data come from the fine mesh at 2% noise; the chain runs on the coarse
mesh. The default 100k iterations take about a minute; pass a smaller
count for a quick look.

    python3 demos/two_circles_experiment.py [iterations] [output_dir]
"""
import sys
from dataclasses import replace

from bayes_levelset import ChainConfig, ExperimentConfig, run_experiment

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
out = sys.argv[2] if len(sys.argv) > 2 else "demo_output/two_circles"

cfg = replace(ExperimentConfig(seed=1, output_dir=out),
              chain=ChainConfig(iterations=iterations, burn_in=iterations // 2))


def progress(k, state):
    if (k + 1) % max(iterations // 10, 1) == 0:
        print(f"  iteration {k + 1:>7d}  log-lik {state.current_loglik:10.2f}  "
              f"step {state.delta_current:.4f}")


bundle = run_experiment(cfg, progress=progress)
m = bundle.metrics
print(f"accuracy  a {m['accuracy_a']:.3f}   b {m['accuracy_b']:.3f}")
print(f"Linf      a {m['linf_a']:.3f}   b {m['linf_b']:.3f}")
print(f"acceptance {m['acceptance_rate']:.3f}, {m['num_draws']} draws, "
      f"{bundle.timing['total']:.0f} s")
print(f"fields, traces and figures in {out}")
