"""Builds the tiny ONNX encoders used by the tests.

Each graph mimics the tap-layer names and channel counts of the real
Keras backbones (ResNet-50, InceptionV3, VGG-16) with a handful of cheap
grouped convolutions, so the ONNX code path runs in milliseconds.

    python3 make_onnx_fixtures.py [output_dir]
"""

import sys
from pathlib import Path

import json

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper
from onnx.reference import ReferenceEvaluator

# Probe crop used by the encoder tests: pixel (x, y, c) = (7x + 13y + 29c) mod 256,
# fed as RGB scaled by 1/255 with zero mean.
PROBE_SIDE = 40


def conv(name, inp, out, cin, cout, k, stride, group, rng, inits, nodes):
    w = rng.uniform(-0.5, 0.5, size=(cout, cin // group, k, k)).astype(np.float32)
    b = rng.uniform(-0.05, 0.05, size=(cout,)).astype(np.float32)
    inits += [numpy_helper.from_array(w, name + "_w"), numpy_helper.from_array(b, name + "_b")]
    nodes.append(
        helper.make_node(
            "Conv",
            [inp, name + "_w", name + "_b"],
            [name + "_pre"],
            name=name + "_conv",
            kernel_shape=[k, k],
            strides=[stride, stride],
            pads=[k // 2] * 4,
            group=group,
        )
    )
    nodes.append(helper.make_node("Relu", [name + "_pre"], [out], name=out))


def maxpool(inp, out, nodes):
    nodes.append(helper.make_node("MaxPool", [inp], [out], name=out, kernel_shape=[2, 2], strides=[2, 2]))


def save(nodes, inits, outputs, path):
    x = helper.make_tensor_value_info("input", TensorProto.FLOAT, [1, 3, "height", "width"])
    ys = [helper.make_tensor_value_info(o, TensorProto.FLOAT, [1, None, None, None]) for o in outputs]
    graph = helper.make_graph(nodes, path.stem, [x], ys, initializer=inits)
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, str(path))


def single_tap(path, tap, seed):
    rng = np.random.RandomState(seed)
    nodes, inits = [], []
    conv("stem", "input", "stem_out", 3, 16, 3, 2, 1, rng, inits, nodes)
    maxpool("stem_out", "stem_pool", nodes)
    conv("head", "stem_pool", tap, 16, 2048, 1, 1, 16, rng, inits, nodes)
    save(nodes, inits, [tap], path)


def vgg_like(path, seed):
    rng = np.random.RandomState(seed)
    nodes, inits = [], []
    conv("stem", "input", "stem_out", 3, 8, 3, 2, 1, rng, inits, nodes)
    conv("b2", "stem_out", "block2_conv2", 8, 128, 1, 1, 8, rng, inits, nodes)
    maxpool("block2_conv2", "block2_pool", nodes)
    conv("b3", "block2_pool", "block3_conv3", 128, 256, 1, 1, 128, rng, inits, nodes)
    maxpool("block3_conv3", "block3_pool", nodes)
    conv("b4", "block3_pool", "block4_conv3", 256, 512, 1, 1, 256, rng, inits, nodes)
    maxpool("block4_conv3", "block4_pool", nodes)
    conv("b5", "block4_pool", "block5_conv3", 512, 512, 1, 1, 512, rng, inits, nodes)
    save(nodes, inits, ["block5_conv3"], path)


def probe_input():
    y, x, c = np.meshgrid(np.arange(PROBE_SIDE), np.arange(PROBE_SIDE), np.arange(3), indexing="ij")
    rgb = ((7 * x + 13 * y + 29 * c) % 256).astype(np.float32) / np.float32(255.0)
    return rgb.transpose(2, 0, 1)[None]


def expected_descriptor(path, taps):
    """Global-average-pooled tap activations from the ONNX reference evaluator."""
    model = onnx.load(str(path))
    # Expose every tap as a graph output so the evaluator returns it.
    names = [o.name for o in model.graph.output]
    for t in taps:
        if t not in names:
            model.graph.output.append(helper.make_tensor_value_info(t, TensorProto.FLOAT, [1, None, None, None]))
    sess = ReferenceEvaluator(model)
    outs = sess.run(taps, {"input": probe_input()})
    return np.concatenate([o.mean(axis=(0, 2, 3)) for o in outs]).astype(float).tolist()


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
    out.mkdir(parents=True, exist_ok=True)
    single_tap(out / "tiny_resnet50.onnx", "conv5_block3_out", 1)
    single_tap(out / "tiny_inception_v3.onnx", "mixed10", 2)
    vgg_like(out / "tiny_vgg16.onnx", 3)
    expected = {
        "tiny_resnet50.onnx": expected_descriptor(out / "tiny_resnet50.onnx", ["conv5_block3_out"]),
        "tiny_inception_v3.onnx": expected_descriptor(out / "tiny_inception_v3.onnx", ["mixed10"]),
        "tiny_vgg16.onnx": expected_descriptor(
            out / "tiny_vgg16.onnx", ["block2_conv2", "block3_conv3", "block4_conv3", "block5_conv3"]
        ),
    }
    (out / "tiny_expected.json").write_text(json.dumps(expected))


if __name__ == "__main__":
    main()
