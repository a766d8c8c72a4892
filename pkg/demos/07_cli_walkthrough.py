"""End-to-end command-line walkthrough in a scratch directory.

Builds a tiny on-disk dataset, trains for a handful of iterations, runs a
decomposition, scores predictions against ground truth, and finishes with
the verification gate.  Everything here is also available as the
``intrinsics`` console command; this script drives the same entry point
in-process.
"""

import json
import os
import tempfile

from intrinsics import make_synthetic_sample, write_png
from intrinsics.cli import main

workdir = tempfile.mkdtemp(prefix="intrinsics-demo-")
data_dir = os.path.join(workdir, "data")
os.makedirs(data_dir)
print(f"scratch directory: {workdir}\n")

print("== 1. write a small dataset and its manifest ==")
lines = []
for i in range(3):
    s = make_synthetic_sample(i, h=32, w=32)
    sid = f"s{i}"
    write_png(os.path.join(data_dir, f"{sid}_i.png"), s.image[0].transpose(1, 2, 0), 16)
    write_png(os.path.join(data_dir, f"{sid}_a.png"), s.albedo[0].transpose(1, 2, 0), 16)
    write_png(os.path.join(data_dir, f"{sid}_s.png"), s.shading[0].transpose(1, 2, 0), 16)
    lines.append(f"{sid}\t{sid}_i.png\t{sid}_a.png\t{sid}_s.png\tscene{i}")
manifest = os.path.join(data_dir, "manifest.tsv")
with open(manifest, "w") as f:
    f.write("\n".join(lines) + "\n")
print(f"wrote {len(lines)} samples -> {manifest}")

print("\n== 2. train (30 iterations at desk scale) ==")
out_dir = os.path.join(workdir, "run")
config = os.path.join(workdir, "run.cfg")
with open(config, "w") as f:
    f.write(f"""
[network]
channel_scale = 0.0625
use_deconv_head = false
dropout_prob = 0.0

[loss]
lambda = 0.5

[augment]
crop_h = 32
crop_w = 32
mirror_prob = 0.0
enable_rotate_zoom = false

[train]
base_lr = 0.02
batch_size = 3
max_iterations = 30
seed = 0

[data]
train_manifest = {manifest}

[output]
out_dir = {out_dir}
""")
assert main(["--verbose", "train", "--config", config]) == 0
checkpoint = os.path.join(out_dir, "checkpoint_000030.ckpt")
trace = open(os.path.join(out_dir, "loss_trace.csv")).read().splitlines()
print(f"trace: {trace[1]} ... {trace[-1]}")

print("\n== 3. decompose an image with the trained checkpoint ==")
pred_dir = os.path.join(workdir, "pred")
os.makedirs(pred_dir)
for i in range(3):
    assert main(["decompose", "--checkpoint", checkpoint,
                 "--input", os.path.join(data_dir, f"s{i}_i.png"),
                 "--out-albedo", os.path.join(pred_dir, f"s{i}_albedo.png"),
                 "--out-shading", os.path.join(pred_dir, f"s{i}_shading.png")]) == 0
print(f"wrote predictions -> {pred_dir}")

print("\n== 4. score the predictions ==")
report_path = os.path.join(workdir, "report.json")
main(["--verbose", "eval", "--pred-dir", pred_dir, "--manifest", manifest,
      "--out", report_path])
report = json.load(open(report_path))
print("mean:", json.dumps(report["mean"], indent=2))
print("(30 iterations is a smoke run; demos/05 trains long enough to overfit)")

print("\n== 5. derive a resynthesized dataset ==")
resynth_dir = os.path.join(workdir, "resynth")
assert main(["synth", "--mode", "resynth-sintel", "--manifest", manifest,
             "--out-dir", resynth_dir]) == 0
print(f"new manifest: {os.path.join(resynth_dir, 'manifest.tsv')}")

print("\n== 6. the verification gate ==")
assert main(["verify"]) == 0
