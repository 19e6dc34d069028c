import struct
import sys

import numpy as np

SIZE = 299


def send(out, tag, *fields, payload=b""):
    out.write(tag + struct.pack("<%dI" % len(fields), *fields) + payload)
    out.flush()


def fail(out, msg):
    data = msg.encode("utf-8", "replace")
    send(out, b"VSER", len(data), payload=data)


def read_exact(inp, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = inp.read(n - len(buf))
        if not chunk:
            raise EOFError
        buf.extend(chunk)
    return bytes(buf)


def main():
    model, pooled_name, conv_name, layout = sys.argv[1:5]
    inp, out = sys.stdin.buffer, sys.stdout.buffer
    try:
        import cv2
    except ImportError as e:
        fail(out, "cv2 is not importable: %s" % e)
        return
    try:
        net = cv2.dnn.readNetFromONNX(model)
    except cv2.error as e:
        fail(out, "cannot load %s: %s" % (model, str(e).strip()))
        return
    names = list(net.getUnconnectedOutLayersNames())
    for want in (pooled_name, conv_name):
        if want not in names:
            fail(out, "model has no output named %r (outputs: %s)" % (want, ", ".join(names)))
            return

    def forward(batch, nchw):
        x = batch.transpose(0, 3, 1, 2) if nchw else batch
        net.setInput(np.ascontiguousarray(x, dtype=np.float32))
        pooled, conv = net.forward([pooled_name, conv_name])
        return pooled.reshape(pooled.shape[0], -1), conv

    probe = np.zeros((1, SIZE, SIZE, 3), np.float32)
    nchw = layout == "nchw"
    try:
        pooled, conv = forward(probe, nchw)
    except cv2.error as e:
        fail(out, "model rejects a 299x299x3 %s input: %s" % (layout, str(e).strip()))
        return
    dim = pooled.shape[1]
    if conv.ndim != 4:
        fail(out, "output %r has shape %s, expected a 4-d grid" % (conv_name, conv.shape))
        return
    if conv.shape[1] == dim and conv.shape[3] != dim:
        channels_first = True
    elif conv.shape[3] == dim and conv.shape[1] != dim:
        channels_first = False
    else:
        channels_first = nchw
    if channels_first:
        _, c, h, w = conv.shape
    else:
        _, h, w, c = conv.shape
    send(out, b"VSOK", dim, h, w, c)

    while True:
        try:
            tag, n, want_conv = struct.unpack("<4sII", read_exact(inp, 12))
        except EOFError:
            return
        if tag != b"VSRQ" or n == 0:
            return
        raw = read_exact(inp, n * SIZE * SIZE * 3 * 4)
        batch = np.frombuffer(raw, dtype="<f4").reshape(n, SIZE, SIZE, 3)
        try:
            pooled, conv = forward(batch, nchw)
        except cv2.error as e:
            fail(out, str(e).strip())
            return
        payload = pooled.astype("<f4").tobytes()
        if want_conv:
            if channels_first:
                conv = conv.transpose(0, 2, 3, 1)
            payload += np.ascontiguousarray(conv).astype("<f4").tobytes()
        send(out, b"VSRS", n, payload=payload)


if __name__ == "__main__":
    main()
