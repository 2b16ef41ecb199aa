"""Parameter and FLOP budget of the two built-in networks, side by side."""

from leancnn import HeadConfig, analyze, build_custom_cnn, build_resnet50, compare
from leancnn.cost import CostReport

custom = analyze(build_custom_cnn())
print(custom.to_text())

resnet = analyze(build_resnet50())
backbone = analyze(build_resnet50(head=HeadConfig(include=False)))
print(f"ResNet50 backbone params: {backbone.total_params:,}")
print(f"ResNet50 with 7-way head:  {resnet.total_params:,} params, {resnet.total_flops:,} FLOPs")
print()

print("analytic totals")
print(compare(custom, resnet).to_text())

# the published totals, taken at face value
print("published totals")
print(compare(CostReport.from_totals(30_040_000), CostReport.from_totals(4_000_000_000), 87.05, 89.08).to_text())

doubled = analyze(build_custom_cnn(), convention="mul-add-as-two")
assert doubled.total_flops == 2 * custom.total_flops
