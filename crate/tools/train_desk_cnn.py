"""Train the small reference CNN on a CIFAR-10-format directory and export it
as a manifest + little-endian blob readable by `rram_noise::nn::load_model`.

    python tools/train_desk_cnn.py --data /tmp/synth --out crates/core/fixtures/desk_cnn

Architecture: conv(3->8) bn relu pool2, conv(8->16) bn relu pool2, linear(1024->10).
"""

import argparse
import json
import os

import numpy as np
import torch
from torch import nn

RECORD = 3073


def read_batch(path):
    raw = np.fromfile(path, dtype=np.uint8).reshape(-1, RECORD)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


class DeskCnn(nn.Module):
    def __init__(self, classes=10):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(8)
        self.conv2 = nn.Conv2d(8, 16, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(16)
        self.fc = nn.Linear(16 * 8 * 8, classes)

    def forward(self, x):
        x = torch.max_pool2d(torch.relu(self.bn1(self.conv1(x))), 2)
        x = torch.max_pool2d(torch.relu(self.bn2(self.conv2(x))), 2)
        return self.fc(torch.flatten(x, 1))


LAYERS = [
    {"kind": "conv2d", "name": "conv1", "in_channels": 3, "out_channels": 8, "kernel_size": 3, "stride": 1, "padding": 1},
    {"kind": "batchnorm2d", "name": "bn1", "channels": 8, "eps": 1e-5},
    {"kind": "relu"},
    {"kind": "maxpool2d", "kernel_size": 2, "stride": 2},
    {"kind": "conv2d", "name": "conv2", "in_channels": 8, "out_channels": 16, "kernel_size": 3, "stride": 1, "padding": 1},
    {"kind": "batchnorm2d", "name": "bn2", "channels": 16, "eps": 1e-5},
    {"kind": "relu"},
    {"kind": "maxpool2d", "kernel_size": 2, "stride": 2},
    {"kind": "flatten"},
    {"kind": "linear", "name": "fc", "in_features": 1024, "out_features": 10},
]


def export(model, mean, std, out_dir, stem):
    os.makedirs(out_dir, exist_ok=True)
    blob = bytearray()
    tensors = []
    for name, t in sorted(model.state_dict().items()):
        if name.endswith("num_batches_tracked"):
            continue
        a = t.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(a.shape), "dtype": "float32", "offset": len(blob)})
        blob += a.tobytes()
    manifest = {
        "format_version": 1,
        "architecture": "desk-cnn",
        "input_shape": [3, 32, 32],
        "num_classes": 10,
        "dtype": "float32",
        "normalization": {"mean": [float(m) for m in mean], "std": [float(s) for s in std]},
        "blob": f"{stem}.bin",
        "layers": LAYERS,
        "tensors": tensors,
    }
    with open(os.path.join(out_dir, f"{stem}.bin"), "wb") as f:
        f.write(bytes(blob))
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--stem", default="desk_cnn")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    xtr, ytr = read_batch(os.path.join(args.data, "data_batch_1.bin"))
    xte, yte = read_batch(os.path.join(args.data, "test_batch.bin"))
    mean = xtr.mean(axis=(0, 2, 3))
    std = xtr.std(axis=(0, 2, 3))
    norm = lambda x: (x - mean[None, :, None, None]) / std[None, :, None, None]
    xtr, xte = torch.from_numpy(norm(xtr)), torch.from_numpy(norm(xte))
    ytr, yte = torch.from_numpy(ytr), torch.from_numpy(yte)

    model = DeskCnn()
    opt = torch.optim.Adam(model.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs)
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(xtr))
        for i in range(0, len(xtr), 128):
            idx = perm[i : i + 128]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(model(xtr[idx]), ytr[idx])
            loss.backward()
            opt.step()
        sched.step()
        model.eval()
        with torch.no_grad():
            acc = (model(xte).argmax(1) == yte).float().mean().item()
        print(f"epoch {epoch + 1}: loss {loss.item():.3f} test accuracy {acc:.4f}")
    export(model, mean, std, args.out, args.stem)


if __name__ == "__main__":
    main()
