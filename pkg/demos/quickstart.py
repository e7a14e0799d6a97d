"""Small end-to-end run: synthesize, train briefly, compare with the baselines.

Two hundred steps on 40 clips only shows the plumbing; the baselines still
win at this size. The 2000-step, 200-clip run lives in the acceptance tests.

    python3 demos/quickstart.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from handcast import forecaster as fc
from handcast import trainer as tr
from handcast.synth import SynthConfig, synth_generate


def main(workdir: Path) -> None:
    synth_generate(SynthConfig(n_clips=40, frames_per_clip=60, seed=1), workdir / "data")
    ds = tr.load_dataset(workdir / "data")
    print(f"{len(ds.train)} train / {len(ds.test)} test windows")

    result = tr.train(ds.train, fc.ModelConfig(), tr.TrainConfig(steps=200), checkpoint_path=workdir / "model.ckpt")
    print(f"loss {result.history[0]['loss_total']:.4f} -> {result.history[-1]['loss_total']:.4f}")

    rows = [("model", result.model), ("static", tr.fit_static(ds.train)), ("cvm", "cvm")]
    print(f"{'predictor':<10}{'ADE':>9}{'FDE':>9}{'MPJPE':>9}")
    for name, predictor in rows:
        rep = tr.evaluate(predictor, ds.test)
        print(f"{name:<10}{rep.ade:9.4f}{rep.fde:9.4f}{rep.mpjpe:9.4f}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
