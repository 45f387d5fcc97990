"""
Command line round trip
=======================

degrade -> train -> eval -> report, all through the ``xrestormer`` entry
point, inside a throwaway directory.
"""

import tempfile
from pathlib import Path

from xrestormer.cli import main
from xrestormer.images import smooth_scene, texture, write_png

work = Path(tempfile.mkdtemp(prefix="xrestormer-demo-"))
for i in range(3):
    write_png(work / "clean" / f"scene{i}.png", smooth_scene(48, seed=i))
write_png(work / "clean" / "texture.png", texture(48, seed=0))

run = lambda *args: print(">", "xrestormer", *args) or main([str(a) for a in args])

assert run("degrade", "--input", work / "clean", "--output", work / "noisy50", "--spec", "noise sigma=50") == 0
print((work / "noisy50" / "manifest.json").read_text()[:300], "...")

assert run("train", "--manifest", work / "noisy50" / "manifest.json", "--out", work / "run", "--tiny",
           "--iters", "40", "--patch", "32", "--batch", "2") == 0
print("loss trace tail:", (work / "run" / "loss.csv").read_text().splitlines()[-3:])

assert run("eval", "--checkpoint", work / "run" / "checkpoint.xrck", "--manifest", work / "noisy50" / "manifest.json",
           "--out-json", work / "report.json", "--model-name", "tiny-40it") == 0
assert run("param-audit") == 0
print("artifacts in", work)
