"""Classic PCAP reading, Ethernet/IP/TCP/UDP header parsing and flow assembly."""
import csv
import ipaddress
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

from .errors import BadMagic, NoNetworkLayer, PaccInputError, Truncated, UnsupportedLinkType

logger = logging.getLogger(__name__)

MAGIC_LE = 0xA1B2C3D4
MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = 0x8100
PROTO_TCP = 6
PROTO_UDP = 17


@dataclass(frozen=True)
class RawPacket:
    ts_sec: int
    ts_usec: int
    captured_length: int
    original_length: int
    link_bytes: bytes

    @property
    def timestamp(self):
        return self.ts_sec + self.ts_usec * 1e-6


@dataclass(frozen=True)
class EthernetHeader:
    dst: bytes
    src: bytes
    ethertype: int
    vlan_tci: Optional[int]
    raw: bytes  # dst | src | ethertype (14 bytes; VLAN tag removed)


@dataclass(frozen=True)
class IPv4Header:
    version: int
    ihl: int
    tos: int
    total_length: int
    identification: int
    flags: int
    fragment_offset: int
    ttl: int
    protocol: int
    checksum: int
    src: int
    dst: int
    options: bytes
    raw: bytes

    @property
    def next_protocol(self):
        return self.protocol

    @property
    def src_ip(self):
        return str(ipaddress.IPv4Address(self.src))

    @property
    def dst_ip(self):
        return str(ipaddress.IPv4Address(self.dst))


@dataclass(frozen=True)
class IPv6Header:
    version: int
    traffic_class: int
    flow_label: int
    payload_length: int
    next_header: int
    hop_limit: int
    src: int
    dst: int
    raw: bytes

    @property
    def next_protocol(self):
        return self.next_header

    @property
    def src_ip(self):
        return str(ipaddress.IPv6Address(self.src))

    @property
    def dst_ip(self):
        return str(ipaddress.IPv6Address(self.dst))


@dataclass(frozen=True)
class TCPHeader:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    data_offset: int
    reserved: int
    flags: int  # 9 bits, NS..FIN
    window: int
    checksum: int
    urgent: int
    options: bytes
    raw: bytes


@dataclass(frozen=True)
class UDPHeader:
    src_port: int
    dst_port: int
    length: int
    checksum: int
    raw: bytes


@dataclass(frozen=True)
class PacketHeaders:
    timestamp: float
    link: Optional[EthernetHeader] = None
    network: Optional[object] = None  # IPv4Header | IPv6Header
    transport: Optional[object] = None  # TCPHeader | UDPHeader
    payload: bytes = b""
    malformed: Optional[str] = None

    @property
    def layer_presence(self):
        return {
            "link": self.link is not None,
            "network": self.network is not None,
            "transport": self.transport is not None,
            "application": len(self.payload) > 0,
        }

    @property
    def protocol(self):
        return None if self.network is None else self.network.next_protocol


# --- reading -------------------------------------------------------------------

def read_pcap(path):
    """Return every record of a classic PCAP file, in file order."""
    data = Path(path).read_bytes()
    if len(data) < 24:
        raise Truncated(f"{path}: global header needs 24 bytes, file has {len(data)}")
    (magic,) = struct.unpack("<I", data[:4])
    if magic == MAGIC_LE:
        endian = "<"
    elif magic == MAGIC_SWAPPED:
        endian = ">"
    else:
        raise BadMagic(f"{path}: unsupported capture magic 0x{magic:08x}")
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", data[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"{path}: link type {linktype} (only Ethernet=1 is supported)")

    rec = struct.Struct(endian + "IIII")
    packets = []
    pos = 24
    while pos < len(data):
        if pos + 16 > len(data):
            raise Truncated(f"{path}: record header at offset {pos} is incomplete")
        ts_sec, ts_usec, incl_len, orig_len = rec.unpack_from(data, pos)
        pos += 16
        if pos + incl_len > len(data):
            raise Truncated(f"{path}: record at offset {pos - 16} declares {incl_len} bytes, "
                            f"{len(data) - pos} available")
        packets.append(RawPacket(ts_sec, ts_usec, incl_len, orig_len, data[pos:pos + incl_len]))
        pos += incl_len
    return packets


def write_pcap(path, packets, big_endian=False, snaplen=65535):
    """Write ``(timestamp_seconds, frame_bytes)`` pairs as a classic PCAP file."""
    endian = ">" if big_endian else "<"
    out = [struct.pack(endian + "IHHiIII", MAGIC_LE, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    for ts, frame in packets:
        sec = int(ts)
        usec = int(round((ts - sec) * 1e6))
        out.append(struct.pack(endian + "IIII", sec, usec, len(frame), len(frame)))
        out.append(bytes(frame))
    Path(path).write_bytes(b"".join(out))


# --- parsing -------------------------------------------------------------------

def _parse_ipv4(b):
    if len(b) < 20:
        return None, f"IPv4 header needs 20 bytes, have {len(b)}"
    vihl = b[0]
    ihl = vihl & 0x0F
    hlen = ihl * 4
    if ihl < 5 or hlen > len(b):
        return None, f"IPv4 IHL={ihl} exceeds available {len(b)} bytes"
    tos, total, ident, ff, ttl, proto, csum, src, dst = struct.unpack("!BHHHBBHII", b[1:20])
    hdr = IPv4Header(vihl >> 4, ihl, tos, total, ident, ff >> 13, ff & 0x1FFF, ttl, proto,
                     csum, src, dst, bytes(b[20:hlen]), bytes(b[:hlen]))
    return hdr, None


def _parse_ipv6(b):
    if len(b) < 40:
        return None, f"IPv6 header needs 40 bytes, have {len(b)}"
    (vtf,) = struct.unpack("!I", b[:4])
    plen, nh, hop = struct.unpack("!HBB", b[4:8])
    src = int.from_bytes(b[8:24], "big")
    dst = int.from_bytes(b[24:40], "big")
    hdr = IPv6Header(vtf >> 28, (vtf >> 20) & 0xFF, vtf & 0xFFFFF, plen, nh, hop, src, dst,
                     bytes(b[:40]))
    return hdr, None


def _parse_tcp(b):
    if len(b) < 20:
        return None, f"TCP header needs 20 bytes, have {len(b)}"
    sport, dport, seq, ack, off_flags, win, csum, urg = struct.unpack("!HHIIHHHH", b[:20])
    doff = off_flags >> 12
    hlen = doff * 4
    if doff < 5 or hlen > len(b):
        return None, f"TCP data offset {doff} exceeds available {len(b)} bytes"
    hdr = TCPHeader(sport, dport, seq, ack, doff, (off_flags >> 9) & 0x7, off_flags & 0x1FF,
                    win, csum, urg, bytes(b[20:hlen]), bytes(b[:hlen]))
    return hdr, None


def _parse_udp(b):
    if len(b) < 8:
        return None, f"UDP header needs 8 bytes, have {len(b)}"
    sport, dport, length, csum = struct.unpack("!HHHH", b[:8])
    return UDPHeader(sport, dport, length, csum, bytes(b[:8])), None


def parse_packet(pkt):
    """Decode an Ethernet frame as deep as the headers allow.

    Never raises on bad bytes: a header that does not fit leaves that layer
    (and everything below it) absent, routes the remaining bytes to
    ``payload`` and records the reason in ``malformed``.
    """
    b = pkt.link_bytes
    ts = pkt.timestamp
    if len(b) < 14:
        return PacketHeaders(ts, payload=bytes(b), malformed="Ethernet header needs 14 bytes")
    ethertype = struct.unpack("!H", b[12:14])[0]
    vlan = None
    rest = 14
    if ethertype == ETH_VLAN:
        if len(b) < 18:
            return PacketHeaders(ts, payload=bytes(b), malformed="truncated VLAN tag")
        vlan, ethertype = struct.unpack("!HH", b[14:18])
        rest = 18
    link = EthernetHeader(bytes(b[0:6]), bytes(b[6:12]), ethertype, vlan,
                          bytes(b[0:12]) + struct.pack("!H", ethertype))
    body = b[rest:]

    if ethertype == ETH_IPV4:
        net, err = _parse_ipv4(body)
        if net is not None:
            end = net.total_length if net.ihl * 4 <= net.total_length <= len(body) else len(body)
            body = body[net.ihl * 4:end]
    elif ethertype == ETH_IPV6:
        net, err = _parse_ipv6(body)
        if net is not None:
            end = 40 + net.payload_length
            body = body[40:end] if end <= len(body) else body[40:]
    else:
        return PacketHeaders(ts, link=link, payload=bytes(body))
    if net is None:
        return PacketHeaders(ts, link=link, payload=bytes(body), malformed=err)

    proto = net.next_protocol
    if proto == PROTO_TCP:
        tr, err = _parse_tcp(body)
        hlen = None if tr is None else tr.data_offset * 4
    elif proto == PROTO_UDP:
        tr, err = _parse_udp(body)
        hlen = 8
    else:
        return PacketHeaders(ts, link=link, network=net, payload=bytes(body))
    if tr is None:
        return PacketHeaders(ts, link=link, network=net, payload=bytes(body), malformed=err)
    return PacketHeaders(ts, link=link, network=net, transport=tr, payload=bytes(body[hlen:]))


# --- flows ---------------------------------------------------------------------

def _ip_sort_key(ip):
    addr = ipaddress.ip_address(ip)
    return addr.version, int(addr)


class FlowKey(NamedTuple):
    """Canonical bidirectional 5-tuple: the smaller endpoint comes first."""
    ip_a: str
    port_a: int
    ip_b: str
    port_b: int
    protocol: int

    @classmethod
    def canonical(cls, src_ip, src_port, dst_ip, dst_port, protocol):
        a = (_ip_sort_key(src_ip), src_port, src_ip)
        b = (_ip_sort_key(dst_ip), dst_port, dst_ip)
        if b < a:
            a, b = b, a
        return cls(a[2], a[1], b[2], b[1], protocol)

    def sort_key(self):
        return (_ip_sort_key(self.ip_a), self.port_a, _ip_sort_key(self.ip_b), self.port_b,
                self.protocol)

    def __str__(self):
        return f"{self.ip_a}:{self.port_a}<->{self.ip_b}:{self.port_b}/{self.protocol}"


def flow_key(h):
    if h.network is None:
        raise NoNetworkLayer("packet has no IPv4/IPv6 layer")
    sport = dport = 0
    if h.transport is not None:
        sport, dport = h.transport.src_port, h.transport.dst_port
    return FlowKey.canonical(h.network.src_ip, sport, h.network.dst_ip, dport,
                             h.network.next_protocol)


@dataclass(frozen=True)
class FlowRecord:
    key: FlowKey
    packets: tuple
    label: Optional[int] = None
    source_file: str = ""

    def __len__(self):
        return len(self.packets)


def assemble_flows(packets, manifest=None, source_file="", idle_timeout=None):
    """Group parsed packets into bidirectional flows.

    ``manifest`` maps a :class:`FlowKey` or a source-file string to a class
    index; the key takes precedence. Packets without a network layer are
    dropped. With ``idle_timeout`` (seconds) a gap larger than the timeout
    starts a new flow for the same key.
    """
    manifest = manifest or {}
    groups = {}
    last_seen = {}
    closed = []
    for h in packets:
        if h.network is None:
            continue
        key = flow_key(h)
        if idle_timeout is not None and key in groups and h.timestamp - last_seen[key] > idle_timeout:
            closed.append((key, groups.pop(key)))
        groups.setdefault(key, []).append(h)
        last_seen[key] = max(last_seen.get(key, h.timestamp), h.timestamp)
    closed.extend(groups.items())

    label_default = manifest.get(source_file)
    flows = []
    for key, pkts in closed:
        pkts = sorted(pkts, key=lambda p: p.timestamp)  # stable: ties keep arrival order
        label = manifest.get(key, label_default)
        flows.append(FlowRecord(key, tuple(pkts), label, source_file))
    flows.sort(key=lambda f: (f.packets[0].timestamp, f.key.sort_key()))
    return flows


# --- manifests -----------------------------------------------------------------

def load_manifest(path):
    """Read a ``path,label_name`` CSV.

    Returns ``(entries, label_names)`` where entries are ``(path, index)``
    pairs and label indices follow first appearance.
    """
    path = Path(path)
    if not path.exists():
        raise PaccInputError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label_name"} <= set(reader.fieldnames):
            raise PaccInputError(f"{path}: manifest header must be 'path,label_name'")
        names = {}
        entries = []
        for row in reader:
            name = row["label_name"].strip()
            idx = names.setdefault(name, len(names))
            entries.append((row["path"].strip(), idx))
    return entries, list(names)


def ingest(pcap_dir, manifest_path, idle_timeout=None):
    """Read every capture listed in the manifest and return labeled flows.

    Files are treated independently; flows never span two captures.
    """
    entries, label_names = load_manifest(manifest_path)
    pcap_dir = Path(pcap_dir)
    flows = []
    for rel, label in entries:
        fpath = Path(rel) if Path(rel).is_absolute() else pcap_dir / rel
        if not fpath.exists():
            raise PaccInputError(f"capture listed in manifest not found: {fpath}")
        headers = [parse_packet(p) for p in read_pcap(fpath)]
        bad = sum(h.malformed is not None for h in headers)
        if bad:
            logger.warning("%s: %d malformed packets kept at their deepest parsed layer", rel, bad)
        flows.extend(assemble_flows(headers, {rel: label}, source_file=rel,
                                    idle_timeout=idle_timeout))
    return flows, label_names
