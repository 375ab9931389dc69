"""Fixed-width per-layer bit matrices (nPrint-style) and their on-disk format.

Every present header bit is encoded as 0.0/1.0 in big-endian order; absent
fields, absent layers and padding packets take the fill value (-1.0 by
default). Each protocol layer owns a fixed set of byte-aligned bands so that
every field keeps a fixed offset regardless of which protocol a packet uses.
"""
import csv
import json
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import kernels
from .errors import EmptyDataset, FormatVersionMismatch, NoEnabledLayers, UnknownField, UnlabeledFlow
from .pcap import IPv4Header, IPv6Header, TCPHeader, UDPHeader


class Layer(IntEnum):
    LINK = 0
    NETWORK = 1
    TRANSPORT = 2
    APPLICATION = 3

    @property
    def short(self):
        return ("L2", "L3", "L4", "L7")[self]

    @classmethod
    def parse(cls, token):
        token = str(token).strip().upper()
        for layer in cls:
            if token in (layer.name, layer.short):
                return layer
        raise ValueError(f"unknown layer {token!r} (use L2, L3, L4, L7 or LINK/NETWORK/...)")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    width: int
    offset: int  # bit offset inside one packet slot


@dataclass(frozen=True)
class Band:
    name: str
    byte_offset: int
    nbytes: int


@dataclass(frozen=True)
class LayerSchema:
    layer: Layer
    fields: tuple
    bands: tuple

    @property
    def total_bits_per_packet(self):
        return sum(f.width for f in self.fields)

    def field(self, name):
        for f in self.fields:
            if f.name == name:
                return f
        raise UnknownField(f"{self.layer.name} has no field {name!r}")

    def d_f(self, packets_per_flow):
        return packets_per_flow * self.total_bits_per_packet

    def to_json(self):
        return {
            "layer": self.layer.name,
            "layer_id": int(self.layer),
            "total_bits_per_packet": self.total_bits_per_packet,
            "bands": [{"name": b.name, "byte_offset": b.byte_offset, "nbytes": b.nbytes}
                      for b in self.bands],
            "fields": [{"name": f.name, "width": f.width, "offset": f.offset} for f in self.fields],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(Layer[obj["layer"]],
                   tuple(FieldSpec(f["name"], f["width"], f["offset"]) for f in obj["fields"]),
                   tuple(Band(b["name"], b["byte_offset"], b["nbytes"]) for b in obj["bands"]))


_ETH = [("eth_dst", 48), ("eth_src", 48), ("eth_type", 16)]
_IPV4 = [("ipv4_version", 4), ("ipv4_ihl", 4), ("ipv4_tos", 8), ("ipv4_total_length", 16),
         ("ipv4_id", 16), ("ipv4_flags", 3), ("ipv4_frag_offset", 13), ("ipv4_ttl", 8),
         ("ipv4_protocol", 8), ("ipv4_checksum", 16), ("ipv4_src", 32), ("ipv4_dst", 32)]
_IPV6 = [("ipv6_version", 4), ("ipv6_traffic_class", 8), ("ipv6_flow_label", 20),
         ("ipv6_payload_length", 16), ("ipv6_next_header", 8), ("ipv6_hop_limit", 8),
         ("ipv6_src", 128), ("ipv6_dst", 128)]
_TCP = ([("tcp_sport", 16), ("tcp_dport", 16), ("tcp_seq", 32), ("tcp_ack", 32),
         ("tcp_doff", 4), ("tcp_reserved", 3), ("tcp_flags", 9), ("tcp_window", 16),
         ("tcp_checksum", 16), ("tcp_urgent", 16)]
        + [(f"tcp_opt_{i}", 8) for i in range(40)])
_UDP = [("udp_sport", 16), ("udp_dport", 16), ("udp_length", 16), ("udp_checksum", 16)]

PORT_FIELDS = ((Layer.TRANSPORT, "tcp_sport"), (Layer.TRANSPORT, "tcp_dport"),
               (Layer.TRANSPORT, "udp_sport"), (Layer.TRANSPORT, "udp_dport"))

DEFAULT_MASK_FIELDS = (
    (Layer.LINK, "eth_dst"), (Layer.LINK, "eth_src"),
    (Layer.NETWORK, "ipv4_id"), (Layer.NETWORK, "ipv4_checksum"),
    (Layer.NETWORK, "ipv4_src"), (Layer.NETWORK, "ipv4_dst"),
    (Layer.NETWORK, "ipv6_src"), (Layer.NETWORK, "ipv6_dst"),
    (Layer.TRANSPORT, "tcp_seq"), (Layer.TRANSPORT, "tcp_ack"),
    (Layer.TRANSPORT, "tcp_checksum"), (Layer.TRANSPORT, "udp_checksum"),
)


def _make_schema(layer, bands):
    fields, band_objs = [], []
    bit = 0
    for band_name, spec in bands:
        start = bit
        for name, width in spec:
            fields.append(FieldSpec(name, width, bit))
            bit += width
        assert (bit - start) % 8 == 0
        band_objs.append(Band(band_name, start // 8, (bit - start) // 8))
    return LayerSchema(layer, tuple(fields), tuple(band_objs))


def default_schemas(packets_per_flow=10, payload_bytes=64):
    """Schemas for the four layers, in LINK, NETWORK, TRANSPORT, APPLICATION order.

    The application schema has zero width when ``payload_bytes`` is 0;
    :func:`build_views` drops such layers.
    """
    if packets_per_flow < 1:
        raise ValueError("packets_per_flow must be >= 1")
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    return [
        _make_schema(Layer.LINK, [("eth", _ETH)]),
        _make_schema(Layer.NETWORK, [("ipv4", _IPV4), ("ipv6", _IPV6)]),
        _make_schema(Layer.TRANSPORT, [("tcp", _TCP), ("udp", _UDP)]),
        _make_schema(Layer.APPLICATION,
                     [("payload", [(f"payload_{i}", 8) for i in range(payload_bytes)])]),
    ]


def _band_bytes(band, pkt):
    """Header bytes feeding ``band`` for one packet, or None when absent."""
    name = band.name
    if name == "eth":
        return None if pkt.link is None else pkt.link.raw
    if name == "ipv4":
        return pkt.network.raw[:20] if isinstance(pkt.network, IPv4Header) else None
    if name == "ipv6":
        return pkt.network.raw if isinstance(pkt.network, IPv6Header) else None
    if name == "tcp":
        return pkt.transport.raw if isinstance(pkt.transport, TCPHeader) else None
    if name == "udp":
        return pkt.transport.raw if isinstance(pkt.transport, UDPHeader) else None
    if name == "payload":
        return pkt.payload
    raise KeyError(name)


def _fill_buffers(flows, schema, packets_per_flow):
    nbytes = schema.total_bits_per_packet // 8
    rows = len(flows) * packets_per_flow
    buf = np.zeros((rows, nbytes), dtype=np.uint8)
    valid = np.zeros((rows, nbytes), dtype=bool)
    for n, flow in enumerate(flows):
        for p, pkt in enumerate(flow.packets[:packets_per_flow]):
            r = n * packets_per_flow + p
            for band in schema.bands:
                raw = _band_bytes(band, pkt)
                if not raw:
                    continue
                raw = raw[:band.nbytes]
                lo = band.byte_offset
                buf[r, lo:lo + len(raw)] = np.frombuffer(raw, dtype=np.uint8)
                valid[r, lo:lo + len(raw)] = True
    return buf, valid


def encode_flows(flows, schema, packets_per_flow, fill_value=-1.0):
    """Encode many flows at once; returns a float32 ``(len(flows), d_f)`` matrix."""
    d_f = schema.d_f(packets_per_flow)
    if not flows or d_f == 0:
        return np.zeros((len(flows), d_f), dtype=np.float32)
    buf, valid = _fill_buffers(flows, schema, packets_per_flow)
    bits = kernels.ternary_bits(buf, valid, fill_value)
    return bits.reshape(len(flows), d_f)


def encode_flow(flow, schema, packets_per_flow, fill_value=-1.0):
    return encode_flows([flow], schema, packets_per_flow, fill_value)[0]


@dataclass(frozen=True)
class MaskSpec:
    masked_fields: frozenset = frozenset()
    fill_value: float = -1.0

    @classmethod
    def default(cls, mask_ports=False, extra=(), fill_value=-1.0):
        fields = set(DEFAULT_MASK_FIELDS)
        if mask_ports:
            fields.update(PORT_FIELDS)
        fields.update(extra)
        return cls(frozenset(fields), fill_value)

    def for_layer(self, layer):
        return sorted(name for lid, name in self.masked_fields if lid == layer)

    def validate(self, schemas):
        by_layer = {s.layer: s for s in schemas}
        for layer, name in self.masked_fields:
            if layer not in by_layer:
                raise UnknownField(f"mask references layer {Layer(layer).name} with no schema")
            by_layer[layer].field(name)


def parse_mask_tokens(tokens):
    """``["L3:ipv4_ttl", "NETWORK:ipv4_src"]`` -> set of (Layer, field)."""
    out = set()
    for tok in tokens:
        tok = tok.strip()
        if not tok:
            continue
        if ":" not in tok:
            raise UnknownField(f"mask entry {tok!r} must look like LAYER:field")
        layer, name = tok.split(":", 1)
        out.add((Layer.parse(layer), name.strip()))
    return out


@dataclass(frozen=True)
class ViewMatrix:
    layer: Layer
    data: np.ndarray  # float32, (N, d_f)

    @property
    def d_f(self):
        return self.data.shape[1]

    @property
    def n(self):
        return self.data.shape[0]


def mask_positions(schema, names, packets_per_flow):
    """Column indices covered by the named fields in every packet slot."""
    per_packet = []
    for name in names:
        f = schema.field(name)
        per_packet.extend(range(f.offset, f.offset + f.width))
    per_packet = np.asarray(sorted(set(per_packet)), dtype=np.int64)
    T = schema.total_bits_per_packet
    return (np.arange(packets_per_flow)[:, None] * T + per_packet[None, :]).ravel()


def apply_mask(view, mask, schema):
    names = mask.for_layer(view.layer)
    if view.layer != schema.layer:
        raise ValueError("view and schema describe different layers")
    T = schema.total_bits_per_packet
    if not names or T == 0:
        return view
    cols = mask_positions(schema, names, view.d_f // T)
    data = view.data.copy()
    data[:, cols] = mask.fill_value
    return ViewMatrix(view.layer, data)


@dataclass(frozen=True)
class ViewConfig:
    layers: tuple = (Layer.LINK, Layer.NETWORK, Layer.TRANSPORT, Layer.APPLICATION)
    packets_per_flow: int = 10
    payload_bytes: int = 64
    mask: MaskSpec = field(default_factory=MaskSpec.default)


@dataclass
class MultiviewDataset:
    views: list
    labels: np.ndarray
    class_count: int
    flow_index: list = field(default_factory=list)
    label_names: list = field(default_factory=list)
    schemas: list = field(default_factory=list)
    packets_per_flow: int = 0
    fill_value: float = -1.0
    masked_fields: list = field(default_factory=list)
    kind: str = "raw"

    @property
    def n(self):
        return len(self.labels)

    @property
    def m(self):
        return len(self.views)

    @property
    def input_dims(self):
        return [v.d_f for v in self.views]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self,
                       views=[ViewMatrix(v.layer, v.data[idx]) for v in self.views],
                       labels=self.labels[idx],
                       flow_index=[self.flow_index[i] for i in idx] if self.flow_index else [])


def build_views(flows, config=None, class_count=None, label_names=None):
    config = config or ViewConfig()
    if not config.layers:
        raise NoEnabledLayers("no layers enabled")
    if not flows:
        raise EmptyDataset("no flows to encode")
    unlabeled = [str(f.key) for f in flows if f.label is None]
    if unlabeled:
        raise UnlabeledFlow(f"{len(unlabeled)} flows have no label (first: {unlabeled[0]})")
    schemas = {s.layer: s for s in default_schemas(config.packets_per_flow, config.payload_bytes)}
    config.mask.validate(list(schemas.values()))
    enabled = [schemas[Layer(l)] for l in sorted(set(config.layers))]
    enabled = [s for s in enabled if s.total_bits_per_packet > 0]
    if not enabled:
        raise NoEnabledLayers("every enabled layer has zero width")
    views = []
    for schema in enabled:
        data = encode_flows(flows, schema, config.packets_per_flow, config.mask.fill_value)
        views.append(apply_mask(ViewMatrix(schema.layer, data), config.mask, schema))
    labels = np.asarray([f.label for f in flows], dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1
    return MultiviewDataset(
        views=views, labels=labels, class_count=class_count,
        flow_index=[f"{f.source_file}|{f.key}" for f in flows],
        label_names=list(label_names) if label_names else [str(i) for i in range(class_count)],
        schemas=enabled, packets_per_flow=config.packets_per_flow,
        fill_value=config.mask.fill_value,
        masked_fields=sorted(f"{Layer(l).short}:{n}" for l, n in config.mask.masked_fields),
    )


# --- on-disk format ------------------------------------------------------------

VIEW_MAGIC = b"PACCVIEW"
VIEW_VERSION = 1
_HEADER = struct.Struct("<8sIQQI")  # magic, version, N, d_f, layer_id


def write_matrix(path, data, layer_id):
    data = np.ascontiguousarray(data, dtype="<f4")
    n, d = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VIEW_MAGIC, VIEW_VERSION, n, d, int(layer_id)))
        fh.write(data.tobytes())


def read_matrix(path):
    """Return ``(layer_id, float32 matrix)`` from a PACCVIEW file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatVersionMismatch(f"{path}: file too short for a PACCVIEW header")
    magic, version, n, d, layer_id = _HEADER.unpack_from(raw)
    if magic != VIEW_MAGIC:
        raise FormatVersionMismatch(f"{path}: bad magic {magic!r}")
    if version != VIEW_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {VIEW_VERSION}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * n * d:
        raise FormatVersionMismatch(f"{path}: body holds {len(body)} bytes, header implies {4 * n * d}")
    return layer_id, np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float32)


def view_filename(layer):
    return f"view_{Layer(layer).short}.bin"


def export_views(ds, out_dir, extra_meta=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    schemas = {s.layer: s for s in ds.schemas}
    for v in ds.views:
        fname = view_filename(v.layer)
        write_matrix(out / fname, v.data, v.layer)
        entry = {"layer": v.layer.name, "layer_id": int(v.layer), "file": fname, "d_f": v.d_f}
        if v.layer in schemas:
            entry["schema"] = schemas[v.layer].to_json()
        entries.append(entry)
    meta = {
        "format_version": VIEW_VERSION,
        "kind": ds.kind,
        "packets_per_flow": ds.packets_per_flow,
        "fill_value": ds.fill_value,
        "class_count": ds.class_count,
        "label_names": list(ds.label_names),
        "masked_fields": list(ds.masked_fields),
        "views": entries,
    }
    if extra_meta:
        meta.update(extra_meta)
    (out / "schema.json").write_text(json.dumps(meta, indent=2) + "\n")
    with (out / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "label", "label_name", "flow"])
        for i, y in enumerate(ds.labels):
            name = ds.label_names[y] if y < len(ds.label_names) else str(y)
            w.writerow([i, int(y), name, ds.flow_index[i] if ds.flow_index else ""])
    return out


def import_views(in_dir):
    src = Path(in_dir)
    meta = json.loads((src / "schema.json").read_text())
    if meta.get("format_version") != VIEW_VERSION:
        raise FormatVersionMismatch(f"{src}: schema.json format_version "
                                    f"{meta.get('format_version')!r}, expected {VIEW_VERSION}")
    views, schemas = [], []
    for entry in meta["views"]:
        layer_id, data = read_matrix(src / entry["file"])
        layer = Layer(layer_id)
        if layer.name != entry["layer"]:
            raise FormatVersionMismatch(f"{entry['file']}: header layer {layer.name} "
                                        f"disagrees with schema.json {entry['layer']}")
        views.append(ViewMatrix(layer, data))
        if "schema" in entry:
            schemas.append(LayerSchema.from_json(entry["schema"]))
    labels, flows = [], []
    with (src / "labels.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(int(row["label"]))
            flows.append(row["flow"])
    labels = np.asarray(labels, dtype=np.int64)
    for v in views:
        if v.n != len(labels):
            raise FormatVersionMismatch(f"{src}: view {v.layer.name} has {v.n} rows, "
                                        f"labels.csv has {len(labels)}")
    return MultiviewDataset(
        views=views, labels=labels, class_count=int(meta["class_count"]),
        flow_index=flows if any(flows) else [], label_names=list(meta["label_names"]),
        schemas=schemas, packets_per_flow=int(meta["packets_per_flow"]),
        fill_value=float(meta["fill_value"]), masked_fields=list(meta["masked_fields"]),
        kind=meta.get("kind", "raw"),
    )
