"""
Cost of augmenting in embedding space
=====================================

Re-extracting features from an augmented 256x256 patch costs a full pass of
the 50-layer residual network.  Augmenting the embedding costs one small MLP
pass.  Both analytic FLOPs and measured throughput are compared.
"""

from embaug.dagan import GeneratorExp, make_generator
from embaug.harness.bench import bench_speedup, flop_sweep
from embaug.harness.flops import FlopModel, resnet50_layers, total_macs
from embaug.rng import Stream

fm = FlopModel()
print(f"reference extractor @256: {fm.reference_flops / 1e9:.2f} GFLOPs")
print(f"sanity @224: {total_macs(resnet50_layers(224)) / 1e9:.3f} GMACs")

for variant in ("ind", "exp"):
    rep = bench_speedup(make_generator(variant, 1024, Stream(0)), fm)
    print(f"{variant}: {rep.generator_flops:,} FLOPs/sample -> ratio {rep.flop_ratio:,.0f}x analytic, "
          f"{rep.wall_ratio:,.0f}x wall-clock")

# wider generators are costlier
for widths, ratio in flop_sweep(1024, [(256, 128, 256), (1024, 512, 256, 512, 1024), (4096, 4096)]):
    print(widths, f"{ratio:,.0f}x")
