"""Print the per-layer output shapes of the full-width network on one random sequence."""

from spconvot.experiments import shape_trace

observed, expected = shape_trace(resolution=64, num_classes=5)
for (name, got), (_, want) in zip(observed, expected):
    print(f"{name:<12} {str(got):<28} {'ok' if got == want else f'expected {want}'}")
