//! Capture ingestion: read pcap/pcapng files, filter extraneous protocols,
//! anonymize addresses, and group packets into bidirectional 5-tuple flows in
//! arrival order.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::hash::{mix64, splitmix64};

mod build;
mod decode;
mod pcap;
mod pcapng;

pub use build::{build_tcp_frame, build_udp_frame, PacketSpec, TcpOptionsSpec};
pub use decode::{
    decode_packet, DecodedPacket, Ipv4Info, TcpFlag, TcpInfo, TcpOptions, Transport, UdpInfo,
};
pub use pcap::{PcapFormat, PcapWriter};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("not a pcap or pcapng file (unrecognized magic)")]
    UnsupportedMagic,
    #[error("truncated record: header claims more bytes than remain")]
    TruncatedRecord,
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
    #[error("malformed pcapng block: {0}")]
    BadBlock(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Capture-time instant with nanosecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Timestamp {
    pub secs: u64,
    pub nanos: u32,
}

impl Timestamp {
    pub fn new(secs: u64, nanos: u32) -> Self {
        Timestamp {
            secs: secs + (nanos / 1_000_000_000) as u64,
            nanos: nanos % 1_000_000_000,
        }
    }

    pub fn from_seconds(s: f64) -> Self {
        let secs = s.floor().max(0.0) as u64;
        let nanos = ((s - secs as f64) * 1e9).round() as u32;
        Timestamp::new(secs, nanos)
    }

    /// Seconds elapsed since `earlier`; computed on integer differences so
    /// nanosecond resolution survives large epoch values.
    pub fn seconds_since(&self, earlier: Timestamp) -> f64 {
        let ds = self.secs as i64 - earlier.secs as i64;
        let dn = self.nanos as i64 - earlier.nanos as i64;
        ds as f64 + dn as f64 * 1e-9
    }
}

/// Link-layer framing of a capture record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    /// DLT 1
    Ethernet,
    /// DLT 101: packet begins at the IPv4 header.
    RawIpv4,
    /// DLT 113: Linux cooked capture (16-byte pseudo-header).
    LinuxSll,
}

impl LinkType {
    pub fn from_dlt(dlt: u32) -> Result<Self, CaptureError> {
        match dlt {
            1 => Ok(LinkType::Ethernet),
            101 => Ok(LinkType::RawIpv4),
            113 => Ok(LinkType::LinuxSll),
            other => Err(CaptureError::UnsupportedLinkType(other)),
        }
    }

    pub fn dlt(self) -> u32 {
        match self {
            LinkType::Ethernet => 1,
            LinkType::RawIpv4 => 101,
            LinkType::LinuxSll => 113,
        }
    }
}

/// One capture record as read from file, before any decoding.
#[derive(Debug, Clone)]
pub struct RawPacket {
    pub timestamp: Timestamp,
    pub link_type: LinkType,
    pub bytes: Vec<u8>,
    pub original_length: u32,
}

impl RawPacket {
    pub fn capture_length(&self) -> u32 {
        self.bytes.len() as u32
    }
}

/// Why a packet was excluded from flow assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    /// EtherType/link payload is not IPv4 (ARP, IPv6, LLDP, ...).
    NotIpv4,
    /// IP protocol other than TCP or UDP.
    UnsupportedTransport,
    /// UDP port 67/68.
    Dhcp,
    /// UDP port 53.
    Dns,
    /// Non-first IP fragment (no transport header to parse).
    Fragment,
    /// Header inconsistencies: IHL < 5, header past capture length, bad
    /// version, short transport header.
    Malformed,
}

impl DropReason {
    pub fn label(self) -> &'static str {
        match self {
            DropReason::NotIpv4 => "not_ipv4",
            DropReason::UnsupportedTransport => "unsupported_transport",
            DropReason::Dhcp => "dhcp",
            DropReason::Dns => "dns",
            DropReason::Fragment => "fragment",
            DropReason::Malformed => "malformed",
        }
    }

    pub const ALL: [DropReason; 6] = [
        DropReason::NotIpv4,
        DropReason::UnsupportedTransport,
        DropReason::Dhcp,
        DropReason::Dns,
        DropReason::Fragment,
        DropReason::Malformed,
    ];
}

/// Keep/drop decision for a decoded packet. Decode failures arrive here as
/// `Err(reason)` already; this adds the protocol-level exclusions.
pub fn filter_protocol(pkt: &DecodedPacket) -> Option<DropReason> {
    match &pkt.transport {
        Transport::Tcp(_) => None,
        Transport::Udp(u) => {
            if u.src_port == 67 || u.src_port == 68 || u.dst_port == 67 || u.dst_port == 68 {
                Some(DropReason::Dhcp)
            } else if u.src_port == 53 || u.dst_port == 53 {
                Some(DropReason::Dns)
            } else {
                None
            }
        }
    }
}

/// Keyed format-preserving permutation of the IPv4 address space: a 4-round
/// Feistel network over 16-bit halves. Bijective per salt, so distinct
/// addresses can never collide, and anonymized headers stay structurally
/// valid IPv4.
#[derive(Debug, Clone, Copy)]
pub struct Anonymizer {
    salt: u64,
}

impl Anonymizer {
    pub fn new(salt: u64) -> Self {
        Anonymizer { salt }
    }

    pub fn anonymize(&self, addr: u32) -> u32 {
        let mut left = (addr >> 16) as u16;
        let mut right = (addr & 0xFFFF) as u16;
        for round in 0..4u64 {
            let f = splitmix64(self.salt ^ (round << 16) ^ right as u64) as u16;
            let new_right = left ^ f;
            left = right;
            right = new_right;
        }
        ((left as u32) << 16) | right as u32
    }
}

/// Canonical bidirectional 5-tuple over anonymized addresses. Both directions
/// of a connection map to the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub ip_a: u32,
    pub port_a: u16,
    pub ip_b: u32,
    pub port_b: u16,
    pub protocol: u8,
}

impl FlowKey {
    pub fn canonical(src: u32, src_port: u16, dst: u32, dst_port: u16, protocol: u8) -> Self {
        if (src, src_port) <= (dst, dst_port) {
            FlowKey {
                ip_a: src,
                port_a: src_port,
                ip_b: dst,
                port_b: dst_port,
                protocol,
            }
        } else {
            FlowKey {
                ip_a: dst,
                port_a: dst_port,
                ip_b: src,
                port_b: src_port,
                protocol,
            }
        }
    }

    /// Stable 64-bit identifier, reproducible across runs with one salt.
    pub fn stable_id(&self) -> u64 {
        mix64(&[
            self.ip_a as u64,
            self.port_a as u64,
            self.ip_b as u64,
            self.port_b as u64,
            self.protocol as u64,
        ])
    }
}

/// A packet inside an assembled flow.
#[derive(Debug, Clone)]
pub struct FlowPacket {
    pub decoded: DecodedPacket,
    /// True iff the packet's sender is the flow initiator.
    pub from_initiator: bool,
}

/// All packets sharing one canonical 5-tuple, ordered by timestamp with ties
/// broken by capture-file order.
#[derive(Debug, Clone)]
pub struct Flow {
    pub key: FlowKey,
    /// Anonymized (address, port) of the first observed packet's sender.
    pub initiator: (u32, u16),
    pub packets: Vec<FlowPacket>,
}

/// Ingestion counters, reported alongside every extraction.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct IngestReport {
    pub packets_read: u64,
    pub packets_kept: u64,
    pub dropped: Vec<(String, u64)>,
    pub flows: u64,
}

impl IngestReport {
    fn from_counts(read: u64, kept: u64, drops: &HashMap<DropReason, u64>, flows: u64) -> Self {
        let mut dropped = Vec::new();
        for r in DropReason::ALL {
            let n = drops.get(&r).copied().unwrap_or(0);
            if n > 0 {
                dropped.push((r.label().to_string(), n));
            }
        }
        IngestReport {
            packets_read: read,
            packets_kept: kept,
            dropped,
            flows,
        }
    }
}

impl std::hash::Hash for DropReason {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        (*self as u8).hash(state);
    }
}

/// Groups decoded packets into flows. Packets must already be filtered and
/// anonymized; per-flow order follows timestamps with file-order ties.
pub fn assemble_flows(packets: Vec<DecodedPacket>) -> Vec<Flow> {
    let mut index: HashMap<FlowKey, usize> = HashMap::new();
    let mut flows: Vec<Flow> = Vec::new();
    for pkt in packets {
        let key = FlowKey::canonical(
            pkt.ip.src,
            pkt.src_port(),
            pkt.ip.dst,
            pkt.dst_port(),
            pkt.ip.protocol,
        );
        let slot = *index.entry(key).or_insert_with(|| {
            flows.push(Flow {
                key,
                initiator: (pkt.ip.src, pkt.src_port()),
                packets: Vec::new(),
            });
            flows.len() - 1
        });
        let flow = &mut flows[slot];
        let from_initiator = (pkt.ip.src, pkt.src_port()) == flow.initiator;
        flow.packets.push(FlowPacket {
            decoded: pkt,
            from_initiator,
        });
    }
    for flow in &mut flows {
        // Stable: equal timestamps keep capture-file order.
        flow.packets.sort_by_key(|p| p.decoded.timestamp);
        if let Some(first) = flow.packets.first() {
            let sender = (first.decoded.ip.src, first.decoded.src_port());
            if sender != flow.initiator {
                flow.initiator = sender;
                for p in &mut flow.packets {
                    p.from_initiator = (p.decoded.ip.src, p.decoded.src_port()) == flow.initiator;
                }
            }
        }
    }
    flows
}

/// Options for end-to-end file ingestion.
#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Salt for the address anonymizer.
    pub salt: u64,
    /// Stop reading after this many capture records.
    pub limit: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            salt: 0xF10E_5E11,
            limit: None,
        }
    }
}

/// Reads capture records from a pcap or pcapng file.
pub fn read_capture(
    path: &Path,
    limit: Option<usize>,
) -> Result<Vec<RawPacket>, CaptureError> {
    let bytes = std::fs::read(path)?;
    read_capture_bytes(&bytes, limit)
}

pub fn read_capture_bytes(
    bytes: &[u8],
    limit: Option<usize>,
) -> Result<Vec<RawPacket>, CaptureError> {
    if bytes.len() < 4 {
        return Err(CaptureError::UnsupportedMagic);
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let mut packets = if magic == [0x0A, 0x0D, 0x0D, 0x0A] {
        pcapng::read(bytes)?
    } else {
        pcap::read(bytes)?
    };
    if let Some(n) = limit {
        packets.truncate(n);
    }
    Ok(packets)
}

/// Full ingestion of already-read records: decode, filter, anonymize,
/// assemble. Deterministic given the record order and salt.
pub fn ingest_packets(
    records: &[RawPacket],
    opts: &IngestOptions,
) -> (Vec<Flow>, IngestReport) {
    let anon = Anonymizer::new(opts.salt);
    let mut drops: HashMap<DropReason, u64> = HashMap::new();
    let mut kept = Vec::new();
    for raw in records {
        match decode_packet(raw) {
            Ok(mut decoded) => match filter_protocol(&decoded) {
                None => {
                    decoded.anonymize(&anon);
                    kept.push(decoded);
                }
                Some(reason) => *drops.entry(reason).or_default() += 1,
            },
            Err(reason) => *drops.entry(reason).or_default() += 1,
        }
    }
    let kept_n = kept.len() as u64;
    let flows = assemble_flows(kept);
    let report = IngestReport::from_counts(records.len() as u64, kept_n, &drops, flows.len() as u64);
    (flows, report)
}

/// Reads and ingests one capture file.
pub fn ingest_file(path: &Path, opts: &IngestOptions) -> Result<(Vec<Flow>, IngestReport), CaptureError> {
    let records = read_capture(path, opts.limit)?;
    Ok(ingest_packets(&records, opts))
}

#[cfg(test)]
pub(crate) mod test_support;
