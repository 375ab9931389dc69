"""Synthetic data: nPrint-like ternary multiview datasets and PCAP fixtures.

``make_shared_private`` mimics raw bit views: each flow occupies a random
number of packet slots (the rest is -1 padding), every present slot repeats
noisy codewords of the latents visible in that view, and the remaining bits
are session-level nuisance and per-packet random bits. The label combines a
shared latent (seen by all views) with a private latent seen by one view.
"""
import struct

import numpy as np

from .pcap import write_pcap
from .views import Layer, MultiviewDataset, ViewMatrix

_LAYERS = (Layer.LINK, Layer.NETWORK, Layer.TRANSPORT, Layer.APPLICATION)


def _codebook(rng, n_values, bits):
    """Distinct random binary codewords, maximally spread when possible."""
    while True:
        book = rng.integers(0, 2, size=(n_values, bits))
        if n_values == 1:
            return book
        d = (book[:, None, :] != book[None, :, :]).sum(-1)
        if d[np.triu_indices(n_values, 1)].min() >= max(1, bits // 3):
            return book


def _ternary_views(rng, latents_per_view, n, slots, code_bits, session_bits, random_bits,
                   flip, min_len=1):
    """Build one matrix per view from ``[(values, n_values), ...]`` latent lists."""
    lengths = rng.integers(min_len, slots + 1, size=n)
    present = np.arange(slots)[None, :] < lengths[:, None]  # n x slots
    views = []
    for latents in latents_per_view:
        blocks = []
        for values, n_values in latents:
            book = _codebook(rng, n_values, code_bits)
            blocks.append(np.repeat(book[values][:, None, :], slots, axis=1))
        session = rng.integers(0, 2, size=(n, 1, session_bits))
        blocks.append(np.repeat(session, slots, axis=1))
        blocks.append(rng.integers(0, 2, size=(n, slots, random_bits)))
        bits = np.concatenate(blocks, axis=2).astype(np.float32)
        n_code = sum(code_bits for _ in latents)
        flips = rng.random((n, slots, n_code)) < flip
        bits[:, :, :n_code] = np.where(flips, 1.0 - bits[:, :, :n_code], bits[:, :, :n_code])
        bits[~present] = -1.0
        views.append(bits.reshape(n, -1))
    return views


def make_shared_private(n=2000, n_views=4, n_shared=2, n_private=2, private_view=0, seed=0,
                        slots=4, code_bits=6, session_bits=8, random_bits=12, flip=0.15):
    """Label ``y = shared * n_private + private`` (``C = n_shared * n_private``).

    Every view carries the shared latent; only ``private_view`` carries the
    private one; the other views carry an irrelevant view-specific latent
    of the same size instead.
    """
    rng = np.random.default_rng(seed)
    shared = rng.integers(0, n_shared, size=n)
    private = rng.integers(0, n_private, size=n)
    y = shared * n_private + private
    latents = []
    for v in range(n_views):
        other = private if v == private_view else rng.integers(0, n_private, size=n)
        latents.append([(shared, n_shared), (other, n_private)])
    mats = _ternary_views(rng, latents, n, slots, code_bits, session_bits, random_bits, flip)
    C = n_shared * n_private
    return MultiviewDataset(
        views=[ViewMatrix(_LAYERS[i % 4], m) for i, m in enumerate(mats)],
        labels=y.astype(np.int64), class_count=C,
        label_names=[f"s{c // n_private}u{c % n_private}" for c in range(C)],
        packets_per_flow=slots, kind="synthetic",
    )


def make_imbalanced(n_major=1000, ratio=10, n_views=3, seed=0, slots=4, code_bits=4,
                    session_bits=8, random_bits=12, flip=0.3):
    """Two classes at ``ratio``:1; the label latent is noisily visible in every view."""
    rng = np.random.default_rng(seed)
    n_minor = max(1, n_major // ratio)
    y = np.concatenate([np.zeros(n_major, dtype=np.int64), np.ones(n_minor, dtype=np.int64)])
    y = y[rng.permutation(y.shape[0])]
    latents = [[(y, 2)] for _ in range(n_views)]
    mats = _ternary_views(rng, latents, y.shape[0], slots, code_bits, session_bits, random_bits,
                          flip)
    return MultiviewDataset(
        views=[ViewMatrix(_LAYERS[i % 4], m) for i, m in enumerate(mats)],
        labels=y, class_count=2, label_names=["major", "minor"], packets_per_flow=slots,
        kind="synthetic",
    )


# --- frame builders ------------------------------------------------------------

def _checksum(data):
    if len(data) % 2:
        data += b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ethernet(dst, src, ethertype, payload):
    return bytes(dst) + bytes(src) + struct.pack("!H", ethertype) + payload


def ipv4(src, dst, proto, payload, ttl=64, ident=0, tos=0, flags=2, options=b""):
    ihl = 5 + len(options) // 4
    total = ihl * 4 + len(payload)
    hdr = struct.pack("!BBHHHBBH4s4s", (4 << 4) | ihl, tos, total, ident, (flags << 13), ttl,
                      proto, 0, bytes(src), bytes(dst)) + options
    csum = _checksum(hdr)
    return hdr[:10] + struct.pack("!H", csum) + hdr[12:] + payload


def ipv6(src, dst, next_header, payload, hop_limit=64, traffic_class=0, flow_label=0):
    first = (6 << 28) | (traffic_class << 20) | flow_label
    return (struct.pack("!IHBB", first, len(payload), next_header, hop_limit)
            + bytes(src) + bytes(dst) + payload)


def tcp(sport, dport, seq=0, ack=0, flags=0x18, window=65535, options=b"", payload=b"",
        urgent=0):
    doff = 5 + len(options) // 4
    return struct.pack("!HHIIHHHH", sport, dport, seq, ack, (doff << 12) | flags, window, 0,
                       urgent) + options + payload


def udp(sport, dport, payload=b""):
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


_CLASS_PROFILES = {
    # name: (transport, server port, ttl, window, payload length range)
    "web": ("tcp", 443, 64, 65535, (40, 60)),
    "chat": ("tcp", 5222, 128, 8192, (8, 20)),
    "dns": ("udp", 53, 64, 0, (20, 40)),
}


def write_pcap_fixtures(out_dir, flows_per_class=12, packets_per_flow=4, seed=0,
                        classes=("web", "chat", "dns")):
    """Write one capture per class plus a ``manifest.csv``; returns the manifest path.

    Each class has its own transport, port, TTL, window and payload sizes, so
    the flows are learnable from L3/L4 headers.
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = ["path,label_name"]
    t = 1_600_000_000.0
    for ci, name in enumerate(classes):
        proto, port, ttl, window, (lo, hi) = _CLASS_PROFILES[name]
        frames = []
        for f in range(flows_per_class):
            client = bytes([10, ci, f // 250, f % 250 + 1])
            server = bytes([192, 168, ci, 1])
            cport = int(rng.integers(20000, 60000))
            mac_c = bytes([2, 0, 0, ci, 0, f % 256])
            mac_s = bytes([2, 0, 0, ci, 1, 1])
            seq_c, seq_s = (int(x) for x in rng.integers(0, 2**31, size=2))
            n_pk = int(rng.integers(2, packets_per_flow + 2))
            for k in range(n_pk):
                outbound = k % 2 == 0
                size = int(rng.integers(lo, hi + 1))
                body = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
                sport, dport = (cport, port) if outbound else (port, cport)
                if proto == "tcp":
                    # timestamp option on the first segment only
                    opts = b"\x01\x01\x08\x0a" + struct.pack("!II", k, 0) if k == 0 else b""
                    seg = tcp(sport, dport, seq=seq_c if outbound else seq_s,
                              ack=seq_s if outbound else seq_c, window=window, payload=body,
                              options=opts)
                    pnum = 6
                else:
                    seg = udp(sport, dport, body)
                    pnum = 17
                src, dst = (client, server) if outbound else (server, client)
                ip = ipv4(src, dst, pnum, seg, ttl=ttl, ident=int(rng.integers(0, 65536)))
                frame = ethernet(mac_s if outbound else mac_c, mac_c if outbound else mac_s,
                                 0x0800, ip)
                t += float(rng.uniform(0.001, 0.05))
                frames.append((round(t, 6), frame))
        fname = f"{name}.pcap"
        write_pcap(out / fname, frames)
        rows.append(f"{fname},{name}")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest
