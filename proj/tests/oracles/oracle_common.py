"""Helpers shared by the oracle scripts: an independent MVW1 writer/reader and
the name mapping from the Hugging Face MobileViTV2 port to leafvit names."""

import re
import struct
import zlib

import numpy as np

MAGIC = b"MVW1"


def mvw_bytes(tensors):
    """tensors: list of (name, np.ndarray). Values are written as float32."""
    body = bytearray()
    body += struct.pack("<II", 1, len(tensors))
    for name, arr in tensors:
        arr = np.asarray(arr, dtype="<f4").copy(order="C")
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<BB", 0, arr.ndim)
        body += struct.pack("<%dI" % arr.ndim, *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    return MAGIC + bytes(body) + struct.pack("<I", crc)


def read_mvw(data):
    assert data[:4] == MAGIC
    version, count = struct.unpack_from("<II", data, 4)
    off = 12
    out = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + n].decode("utf-8")
        off += n
        dtype, rank = struct.unpack_from("<BB", data, off)
        off += 2
        dims = struct.unpack_from("<%dI" % rank, data, off)
        off += 4 * rank
        count_el = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=count_el, offset=off).reshape(dims)
        off += 4 * count_el
        out.append((name, arr))
    (stored,) = struct.unpack_from("<I", data, off)
    return version, out, stored, zlib.crc32(data[4:off]) & 0xFFFFFFFF


def is_buffer(name):
    return name.endswith(".running_mean") or name.endswith(".running_var")


def shape_str(shape):
    return "[" + ", ".join(str(d) for d in shape) + "]"


def listing(data):
    """Text listing in the format printed by `leafvit inspect`."""
    version, tensors, stored, computed = read_mvw(data)
    name_w = max([4] + [len(n) for n, _ in tensors])
    shape_w = max([5] + [len(shape_str(a.shape)) for _, a in tensors])
    lines = ["MVW1 version %d, %d tensors, %d bytes" % (version, len(tensors), len(data))]
    lines.append("name".ljust(name_w) + "  " + "shape".ljust(shape_w) + "  " + "count".rjust(10))
    params = buffers = 0
    for name, arr in tensors:
        row = name.ljust(name_w) + "  " + shape_str(arr.shape).ljust(shape_w) + "  " + str(arr.size).rjust(10)
        if is_buffer(name):
            row += "  (buffer)"
            buffers += arr.size
        else:
            params += arr.size
        lines.append(row)
    lines.append("total parameters: %d" % params)
    lines.append("total buffer values: %d" % buffers)
    status = "ok" if stored == computed else "MISMATCH"
    lines.append("crc32: stored 0x%08x, computed 0x%08x (%s)" % (stored, computed, status))
    return "\n".join(lines) + "\n"


# ---- Hugging Face -> leafvit names ------------------------------------------------------

_CONV = {"convolution.weight": "conv.weight", "normalization.weight": "bn.weight",
         "normalization.bias": "bn.bias", "normalization.running_mean": "bn.running_mean",
         "normalization.running_var": "bn.running_var"}
_BOTTLENECK = {"expand_1x1": "conv1_1x1", "conv_3x3": "conv2_kxk", "reduce_1x1": "conv3_1x1"}


def _conv_layer(rest):
    return _CONV.get(rest)


def map_bottleneck(key, prefix):
    """key relative to an InvertedResidual module."""
    m = re.fullmatch(r"(expand_1x1|conv_3x3|reduce_1x1)\.(.+)", key)
    if not m or _conv_layer(m.group(2)) is None:
        return None
    return [(prefix + "." + _BOTTLENECK[m.group(1)] + "." + _conv_layer(m.group(2)), None)]


def map_mv_block(key, value, prefix):
    """key relative to a MobileViTV2Layer without its downsampling layer.
    Returns [(name, array)] with dense weights transposed to [in, out]."""
    v = value
    m = re.fullmatch(r"conv_kxk\.(.+)", key)
    if m:
        return [(prefix + ".conv_kxk." + _conv_layer(m.group(1)), v)]
    if key == "conv_1x1.convolution.weight":
        return [(prefix + ".conv_1x1.weight", v)]
    m = re.fullmatch(r"conv_projection\.(.+)", key)
    if m:
        return [(prefix + ".conv_proj." + _conv_layer(m.group(1)), v)]
    m = re.fullmatch(r"layernorm\.(weight|bias)", key)
    if m:
        return [(prefix + ".norm." + m.group(1), v)]
    m = re.fullmatch(r"transformer\.layer\.(\d+)\.(.+)", key)
    if not m:
        return None
    t = prefix + ".transformer." + m.group(1)
    rest = m.group(2)
    m2 = re.fullmatch(r"layernorm_(before|after)\.(weight|bias)", rest)
    if m2:
        return [(t + (".norm1." if m2.group(1) == "before" else ".norm2.") + m2.group(2), v)]
    if rest == "attention.qkv_proj.convolution.weight":
        w = v[:, :, 0, 0]
        d = (w.shape[0] - 1) // 2
        return [(t + ".attn.input.weight", w[0:1].T), (t + ".attn.key.weight", w[1:1 + d].T),
                (t + ".attn.value.weight", w[1 + d:].T)]
    if rest == "attention.qkv_proj.convolution.bias":
        d = (v.shape[0] - 1) // 2
        return [(t + ".attn.input.bias", v[0:1]), (t + ".attn.key.bias", v[1:1 + d]),
                (t + ".attn.value.bias", v[1 + d:])]
    m2 = re.fullmatch(r"attention\.out_proj\.convolution\.(weight|bias)", rest)
    if m2:
        return [(t + ".attn.out_proj." + m2.group(1), v[:, :, 0, 0].T if v.ndim == 4 else v)]
    m2 = re.fullmatch(r"ffn\.conv(1|2)\.convolution\.(weight|bias)", rest)
    if m2:
        return [(t + ".mlp.fc" + m2.group(1) + "." + m2.group(2), v[:, :, 0, 0].T if v.ndim == 4 else v)]
    return None


def hf_model_to_leafvit(state_dict):
    """Full MobileViTV2ForImageClassification state dict -> ordered [(name, array)]."""
    out = []
    for key, t in state_dict.items():
        if key.endswith("num_batches_tracked"):
            continue
        v = t.detach().cpu().numpy()
        m = re.fullmatch(r"mobilevitv2\.conv_stem\.(.+)", key)
        if m:
            out.append(("stem." + _conv_layer(m.group(1)), v))
            continue
        m = re.fullmatch(r"mobilevitv2\.encoder\.layer\.([01])\.layer\.(\d+)\.(.+)", key)
        if m:
            mapped = map_bottleneck(m.group(3), "stages.%s.%s" % (m.group(1), m.group(2)))
            out.append((mapped[0][0], v))
            continue
        m = re.fullmatch(r"mobilevitv2\.encoder\.layer\.([234])\.downsampling_layer\.(.+)", key)
        if m:
            mapped = map_bottleneck(m.group(2), "stages.%s.0" % m.group(1))
            out.append((mapped[0][0], v))
            continue
        m = re.fullmatch(r"mobilevitv2\.encoder\.layer\.([234])\.(.+)", key)
        if m:
            mapped = map_mv_block(m.group(2), v, "stages.%s.1" % m.group(1))
            if mapped is None:
                raise KeyError(key)
            out.extend(mapped)
            continue
        if key == "classifier.weight":
            out.append(("head.fc.weight", v.T))
            continue
        if key == "classifier.bias":
            out.append(("head.fc.bias", v))
            continue
        raise KeyError(key)
    return out


def randomize_norm_stats(module, rng):
    """Non-trivial affine and running statistics so eval-mode checks exercise them."""
    import torch

    for m in module.modules():
        if isinstance(m, (torch.nn.BatchNorm2d, torch.nn.GroupNorm)):
            with torch.no_grad():
                m.weight.copy_(torch.from_numpy(rng.uniform(0.5, 1.5, m.weight.shape)))
                m.bias.copy_(torch.from_numpy(rng.normal(0, 0.2, m.bias.shape)))
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.copy_(torch.from_numpy(rng.normal(0, 0.2, m.running_mean.shape)))
                    m.running_var.copy_(torch.from_numpy(rng.uniform(0.5, 1.5, m.running_var.shape)))


def pad_and_crop(layer_cls, torch):
    """The port drops the last row/column of maps not divisible by the patch
    size; leafvit zero-pads them and crops after folding. Patch the port to
    the padding rule so the 7x7 final stage is comparable."""
    F = torch.nn.functional

    def unfolding(self, feature_map):
        b, c, h, w = feature_map.shape
        ph, pw = self.patch_height, self.patch_width
        padded = F.pad(feature_map, (0, (-w) % pw, 0, (-h) % ph))
        patches = F.unfold(padded, kernel_size=(ph, pw), stride=(ph, pw))
        return patches.reshape(b, c, ph * pw, -1), (h, w)

    def folding(self, patches, output_size):
        b, d, p, n = patches.shape
        h, w = output_size
        ph, pw = self.patch_height, self.patch_width
        full = (h + (-h) % ph, w + (-w) % pw)
        fm = F.fold(patches.reshape(b, d * p, n), output_size=full, kernel_size=(ph, pw), stride=(ph, pw))
        return fm[:, :, :h, :w]

    layer_cls.unfolding = unfolding
    layer_cls.folding = folding
