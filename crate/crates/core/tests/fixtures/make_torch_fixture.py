"""Regenerates torch_leaky.json and torch_leaky_vectors.json.

A 3-layer leaky-ReLU(0.3) MLP is built in torch (float64) and its outputs on
64 random inputs are recorded. Run from this directory.
"""
import json

import torch

torch.manual_seed(3)
torch.set_default_dtype(torch.float64)
model = torch.nn.Sequential(
    torch.nn.Linear(3, 5),
    torch.nn.LeakyReLU(0.3),
    torch.nn.Linear(5, 4),
    torch.nn.LeakyReLU(0.3),
    torch.nn.Linear(4, 2),
)
leaky = {"name": "leaky_relu", "breakpoints": [0.0], "slopes": [0.3, 1.0], "intercepts": [0.0, 0.0]}
linears = [m for m in model if isinstance(m, torch.nn.Linear)]
layers = []
for i, lin in enumerate(linears):
    w = lin.weight.detach()
    layers.append({
        "type": "dense",
        "shape": list(w.shape),
        "weights": w.flatten().tolist(),
        "bias": lin.bias.detach().tolist(),
        "activation": leaky if i + 1 < len(linears) else None,
    })
weights = {"version": 1, "name": "torch_leaky", "seed": 3, "input_dim": 3, "layers": layers}

x = torch.randn(64, 3) * 2.0
with torch.no_grad():
    y = model(x)
vectors = {
    "source": f"torch {torch.__version__}",
    "tolerance": 1e-6,
    "inputs": x.tolist(),
    "outputs": y.tolist(),
}
with open("torch_leaky.json", "w") as f:
    json.dump(weights, f, indent=2)
    f.write("\n")
with open("torch_leaky_vectors.json", "w") as f:
    json.dump(vectors, f, indent=2)
    f.write("\n")
