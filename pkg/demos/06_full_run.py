# The whole pipeline from one config file
#
# Same as `sae-election run --config <fixture>/config.ini --out <dir>`.

import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from sae_election import RunConfig, run_pipeline
from sae_election.pipeline import fixture_config_path, summary_line

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="sae-run-"))
cfg = replace(RunConfig.from_file(fixture_config_path()), output_dir=out)
state = run_pipeline(cfg)

print(summary_line(state))
print("stages:", ", ".join(state.completed))
for name in sorted(p.name for p in out.iterdir()):
    print("  ", name)
print((out / "poip.csv").read_text().splitlines()[0])
