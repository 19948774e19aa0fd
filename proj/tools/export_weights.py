"""Write a torchvision backbone's trunk weights in the GKW1 checkpoint format.

    python3 tools/export_weights.py efficientnet_b0 out.gkw [--state-dict ft.pt] [--imagenet]

Without --state-dict or --imagenet the model keeps torchvision's random
initialisation, which is only useful for smoke tests.
"""
import argparse
import struct

import torch
import torchvision

ARCHS = ("efficientnet_b0", "resnet50", "vit_b_16")


def write_gkw1(path, state):
    entries = [(k, v) for k, v in state.items()
               if v.is_floating_point() and not k.endswith("num_batches_tracked")]
    with open(path, "wb") as f:
        f.write(b"GKW1")
        f.write(struct.pack("<I", len(entries)))
        for name, t in entries:
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.dim()))
            f.write(struct.pack(f"<{t.dim()}q", *t.shape))
            f.write(t.detach().to(torch.float32).contiguous().numpy().tobytes())
    return len(entries)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("arch", choices=ARCHS)
    ap.add_argument("out")
    ap.add_argument("--state-dict", help="fine-tuned state_dict saved with torch.save")
    ap.add_argument("--imagenet", action="store_true", help="torchvision's default weights")
    args = ap.parse_args()

    model = getattr(torchvision.models, args.arch)(weights="DEFAULT" if args.imagenet else None)
    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
        # head shapes differ after fine-tuning; the C++ side never reads them
        model.load_state_dict(state, strict=False)
    n = write_gkw1(args.out, model.state_dict())
    print(f"wrote {n} tensors to {args.out}")


if __name__ == "__main__":
    main()
