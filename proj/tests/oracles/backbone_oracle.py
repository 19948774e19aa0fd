"""Reference penultimate features from torchvision for the C++ backbones.

Weights are not trained: every tensor is filled from a closed-form formula
keyed on its state_dict name (mirrored in tests/support.cpp), so both sides
load identical parameters without shipping checkpoints.

    python3 tests/oracles/backbone_oracle.py > tests/oracles/backbone_reference.hpp
"""
import math

import numpy as np
import torch
import torch.nn.functional as F
import torchvision

MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)
SAMPLE = (0, 1, 2, 3, 17, 100, 255, 511, 767, 1279, 2047)


def fill(name, shape):
    n = int(np.prod(shape))
    h = sum(name.encode())
    s = np.sin(0.37 * np.arange(n, dtype=np.float64) + 0.011 * h)
    if name.endswith("running_var"):
        v = 1.0 + 0.2 * np.abs(s)
    elif name.endswith("running_mean"):
        v = 0.05 * s
    elif name in ("class_token", "encoder.pos_embedding"):
        v = 0.02 * s
    elif len(shape) == 1:
        v = 1.0 + 0.1 * s if name.endswith("weight") else 0.05 * s
    else:
        v = s / math.sqrt(n / shape[0])
    return torch.from_numpy(v.astype(np.float32)).reshape(shape)


def image():
    r, c = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
    px = np.stack([(r * 7 + c * 13 + ch * 50) % 256 for ch in range(3)], axis=0)
    x = torch.from_numpy(px.astype(np.float32) / np.float32(255.0))
    for ch in range(3):
        x[ch] = (x[ch] - MEAN[ch]) / STD[ch]
    return x.unsqueeze(0)


def features(name):
    model = getattr(torchvision.models, name)(weights=None)
    head = {"efficientnet_b0": "classifier", "resnet50": "fc", "vit_b_16": "heads"}[name]
    setattr(model, head, torch.nn.Identity())
    state = model.state_dict()
    for key, t in state.items():
        if key.endswith("num_batches_tracked"):
            continue
        state[key] = fill(key, tuple(t.shape))
    model.load_state_dict(state)
    model.eval()
    x = image()
    if name == "vit_b_16":
        x = F.interpolate(x, size=(224, 224), mode="bilinear", align_corners=False, antialias=False)
    with torch.no_grad():
        f = model(x)[0].double().numpy()
    trunk = sum(p.numel() for p in model.parameters())
    return f, trunk


def main():
    print("#pragma once")
    print("// Generated by backbone_oracle.py; do not edit.")
    print("#include <array>")
    print("#include <cstdint>\n")
    print("namespace oracle {\n")
    print("struct BackboneReference {")
    print("  const char* name;")
    print("  int dim;")
    print("  std::int64_t trunk_params;")
    print("  double sum;")
    print("  double abs_sum;")
    print(f"  std::array<int, {len(SAMPLE)}> index;")
    print(f"  std::array<double, {len(SAMPLE)}> value;")
    print("};\n")
    print("inline const BackboneReference backbone_reference[] = {")
    for name in ("efficientnet_b0", "resnet50", "vit_b_16"):
        f, trunk = features(name)
        idx = [i for i in SAMPLE if i < f.size]
        idx += [0] * (len(SAMPLE) - len(idx))
        vals = ", ".join(f"{f[i]:.9g}" for i in idx)
        print(f'    {{"{name}", {f.size}, {trunk}, {f.sum():.9g}, {np.abs(f).sum():.9g},')
        print(f"     {{{', '.join(map(str, idx))}}},")
        print(f"     {{{vals}}}}},")
    print("};\n")
    print("}  // namespace oracle")


if __name__ == "__main__":
    main()
