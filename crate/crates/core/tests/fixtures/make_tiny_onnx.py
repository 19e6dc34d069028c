"""Writes a small ONNX graph with a pooled and a conv output, for backend tests.

usage: make_tiny_onnx.py OUT CHANNELS [nchw|nhwc]

The graph maps a 299x299x3 image through a strided 3x3 convolution and ReLU
to an 8x8xCHANNELS grid (output "mixed10"), then global-average-pools it
(output "avg_pool", shape N x CHANNELS). Weights are fixed by a simple
integer formula so the file is reproducible.
"""
import struct
import sys


def varint(v):
    out = bytearray()
    v &= (1 << 64) - 1
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def key(field, wire):
    return varint((field << 3) | wire)


def f_int(field, v):
    return key(field, 0) + varint(v)


def f_bytes(field, b):
    if isinstance(b, str):
        b = b.encode()
    return key(field, 2) + varint(len(b)) + b


def tensor(name, dims, values):
    body = b"".join(f_int(1, d) for d in dims)
    body += f_int(2, 1)
    body += f_bytes(8, name)
    body += f_bytes(9, struct.pack("<%df" % len(values), *values))
    return body


def attr_ints(name, ints):
    return f_bytes(1, name) + b"".join(f_int(8, i) for i in ints) + f_int(20, 7)


def attr_int(name, i):
    return f_bytes(1, name) + f_int(3, i) + f_int(20, 2)


def node(op, inputs, outputs, attrs=()):
    body = b"".join(f_bytes(1, i) for i in inputs)
    body += b"".join(f_bytes(2, o) for o in outputs)
    body += f_bytes(3, outputs[0] + "_node")
    body += f_bytes(4, op)
    body += b"".join(f_bytes(5, a) for a in attrs)
    return body


def value_info(name, dims):
    shape = b"".join(
        f_bytes(1, f_bytes(2, d) if isinstance(d, str) else f_int(1, d)) for d in dims
    )
    tensor_type = f_int(1, 1) + f_bytes(2, shape)
    return f_bytes(1, name) + f_bytes(2, f_bytes(1, tensor_type))


def main():
    out, channels = sys.argv[1], int(sys.argv[2])
    layout = sys.argv[3] if len(sys.argv) > 3 else "nchw"
    weights = [((i * 37) % 17 - 8) / 40.0 for i in range(channels * 3 * 3 * 3)]
    bias = [((c * 11) % 7 - 3) / 20.0 for c in range(channels)]
    nodes = []
    x = "input"
    if layout == "nhwc":
        nodes.append(node("Transpose", ["input"], ["input_nchw"], [attr_ints("perm", [0, 3, 1, 2])]))
        x = "input_nchw"
    nodes.append(
        node(
            "Conv",
            [x, "w", "b"],
            ["conv"],
            [attr_ints("kernel_shape", [3, 3]), attr_ints("strides", [42, 42]), attr_int("group", 1)],
        )
    )
    nodes.append(node("Relu", ["conv"], ["mixed10"]))
    nodes.append(node("GlobalAveragePool", ["mixed10"], ["gap"]))
    nodes.append(node("Flatten", ["gap"], ["avg_pool"], [attr_int("axis", 1)]))
    in_dims = ["n", 299, 299, 3] if layout == "nhwc" else ["n", 3, 299, 299]
    graph = b"".join(f_bytes(1, n) for n in nodes)
    graph += f_bytes(2, "tiny")
    graph += f_bytes(5, tensor("w", [channels, 3, 3, 3], weights))
    graph += f_bytes(5, tensor("b", [channels], bias))
    graph += f_bytes(11, value_info("input", in_dims))
    graph += f_bytes(12, value_info("avg_pool", ["n", channels]))
    graph += f_bytes(12, value_info("mixed10", ["n", channels, 8, 8]))
    model = f_int(1, 8) + f_bytes(2, "fixture") + f_bytes(7, graph)
    model += f_bytes(8, f_bytes(1, "") + f_int(2, 13))
    with open(out, "wb") as fh:
        fh.write(model)


if __name__ == "__main__":
    main()
