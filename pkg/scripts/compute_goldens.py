"""Recompute golden values for the fusion tests through the naive-convolution path.

Every conv in the extractor and decoder is routed through the six-loop
reference convolution, so the numbers are independent of the vectorized
kernel they are later compared against.
"""
import sys
from pathlib import Path
from unittest import mock

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import conv2d_naive  # noqa: E402

from kfrestore.fusion import extractor as ex_mod  # noqa: E402
from kfrestore.fusion import network as net_mod  # noqa: E402


def golden_inputs(size=32, seed=2024):
    rng = np.random.default_rng(seed)
    deg = rng.random((size, size, 3))
    ref = rng.random((size, size, 3))
    mask = (rng.random((size, size, 1)) > 0.9).astype(float)
    return deg, ref, mask


def main():
    with mock.patch.object(ex_mod, "conv2d", conv2d_naive), mock.patch.object(net_mod, "conv2d", conv2d_naive):
        pyr = ex_mod.test_extractor(0).extract(np.full((32, 32, 3), 0.5))
        print("extractor level means (seed 0, all-0.5 32x32):")
        print([repr(float(lv.mean())) for lv in pyr.levels])
        deg, ref, mask = golden_inputs()
        _, res = net_mod.restore_forward(deg, ref, mask, ex_mod.test_extractor(0),
                                         net_mod.init_weights(0), return_residual=True)
        print("residual L-inf (seed-0 weights, golden inputs):", repr(float(np.abs(res).max())))


if __name__ == "__main__":
    main()
