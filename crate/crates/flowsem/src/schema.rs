//! The FSU catalog: which fields are extracted from each packet, how raw
//! values are normalized into `[0, 1]`, and which fields the model is allowed
//! to see.
//!
//! Every catalog entry carries a predictability class. Generalizable fields
//! carry stable protocol-governed patterns and are the model's inputs and
//! reconstruction targets. Random fields (checksums, cryptographic ids,
//! sender clocks) are unlearnable by protocol design. Non-generalizable
//! fields (addresses, raw ports) are dataset identifiers. Only the
//! generalizable set reaches the model by default; the other two classes stay
//! in the catalog so extraction is complete and ablations can re-admit them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{DecodedPacket, TcpFlag, Timestamp, Transport};
use crate::hash::sha256;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("duplicate descriptor name {0:?}")]
    DuplicateName(String),
    #[error("descriptor {name:?}: bit range {bit_offset}+{bit_width} exceeds {header:?} header length")]
    BitRangeOutOfHeader {
        name: String,
        header: Source,
        bit_offset: u32,
        bit_width: u32,
    },
    #[error("descriptor {name:?}: affine bounds require lo < hi (got {lo}..{hi})")]
    BadAffineBounds { name: String, lo: f64, hi: f64 },
    #[error("descriptor {name:?}: log1p_scaled requires positive scale and cap")]
    BadLogParams { name: String },
    #[error("schema file: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema file: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Where a field's bytes live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    FrameMetadata,
    IpHeader,
    TcpHeader,
    UdpHeader,
}

/// Predictability class, the filtering axis of the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictability {
    Generalizable,
    Random,
    NonGeneralizable,
}

/// How a raw value is obtained from a decoded packet: either a literal bit
/// range inside the declared header, or a named derived rule evaluated over
/// the decode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// `bit_offset` counts from the most significant bit of the byte at
    /// `byte_offset` within the source header.
    Bits {
        byte_offset: u32,
        bit_offset: u32,
        bit_width: u32,
    },
    Derived(DerivedRule),
}

/// Values computed from the decode rather than read as a bit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedRule {
    TimeDelta,
    TimeRelative,
    FrameLen,
    Direction,
    IpHdrLenBytes,
    TcpHdrLenBytes,
    TcpPayloadLen,
    UdpPayloadLen,
    OptMssPresent,
    OptMss,
    OptWscalePresent,
    OptWscale,
    OptSackPerm,
    OptTsPresent,
    OptTsVal,
    OptTsEcr,
    OptCount,
    SrcPortWellKnown,
    DstPortWellKnown,
    SrcPortRegistered,
    DstPortRegistered,
    IsTcp,
    IsUdp,
    HdrBytesTotal,
    IsPureAck,
}

/// Type-specific normalization into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormRule {
    /// `(raw - lo) / (hi - lo)`, clamped.
    AffineBounded { lo: f64, hi: f64 },
    /// `ln(1 + raw/scale) / ln(1 + cap/scale)`, clamped; for heavy-tailed
    /// quantities like inter-arrival times and byte lengths.
    Log1pScaled { scale: f64, cap: f64 },
    Binary,
    Identity,
}

impl NormRule {
    /// Normalizes a raw value. Out-of-domain inputs clamp and report
    /// `clamped = true` so callers can count them.
    pub fn apply(&self, raw: f64) -> (f32, bool) {
        match *self {
            NormRule::AffineBounded { lo, hi } => {
                let v = (raw - lo) / (hi - lo);
                clamp01(v, raw < lo || raw > hi)
            }
            NormRule::Log1pScaled { scale, cap } => {
                let clamped = raw < 0.0 || raw > cap;
                let r = raw.clamp(0.0, cap);
                let v = (1.0 + r / scale).ln() / (1.0 + cap / scale).ln();
                clamp01(v, clamped)
            }
            NormRule::Binary => {
                if raw == 0.0 {
                    (0.0, false)
                } else {
                    (1.0, raw != 1.0)
                }
            }
            NormRule::Identity => clamp01(raw, !(0.0..=1.0).contains(&raw)),
        }
    }
}

fn clamp01(v: f64, clamped: bool) -> (f32, bool) {
    (v.clamp(0.0, 1.0) as f32, clamped)
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsuDescriptor {
    pub name: String,
    pub source: Source,
    pub extraction: Extraction,
    pub predictability: Predictability,
    pub norm: NormRule,
    /// Raw value used when the field is absent on a packet (e.g. TCP fields
    /// on a UDP packet).
    pub default_value: f64,
}

/// The ordered FSU catalog. The model-facing index set enumerates exactly
/// the generalizable descriptors, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsuSchema {
    pub version: u32,
    pub descriptors: Vec<FsuDescriptor>,
}

/// Which predictability classes are projected into model tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSet {
    /// The default: generalizable fields only.
    Generalizable,
    /// Generalizable plus random fields; the filtering-off ablation.
    GeneralizableAndRandom,
}

impl FsuSchema {
    /// Number of generalizable descriptors (the model's `N`).
    pub fn n_generalizable(&self) -> usize {
        self.indices(ColumnSet::Generalizable).len()
    }

    pub fn n_total(&self) -> usize {
        self.descriptors.len()
    }

    /// Catalog indices selected by `set`, in catalog order.
    pub fn indices(&self, set: ColumnSet) -> Vec<usize> {
        self.descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| match set {
                ColumnSet::Generalizable => d.predictability == Predictability::Generalizable,
                ColumnSet::GeneralizableAndRandom => {
                    d.predictability != Predictability::NonGeneralizable
                }
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Names of the columns selected by `set`, in catalog order.
    pub fn column_names(&self, set: ColumnSet) -> Vec<&str> {
        self.indices(set)
            .into_iter()
            .map(|i| self.descriptors[i].name.as_str())
            .collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<&FsuDescriptor> {
        self.descriptors.iter().find(|d| d.name == name)
    }

    /// Position of `name` within the projected column list, if selected.
    pub fn column_index(&self, set: ColumnSet, name: &str) -> Option<usize> {
        self.column_names(set).iter().position(|n| *n == name)
    }

    /// Structural checks: unique names, bit ranges inside the declared
    /// header, sane normalization parameters.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = std::collections::HashSet::new();
        for d in &self.descriptors {
            if !seen.insert(d.name.as_str()) {
                return Err(SchemaError::DuplicateName(d.name.clone()));
            }
            if let Extraction::Bits {
                byte_offset,
                bit_offset,
                bit_width,
            } = d.extraction
            {
                // Base header lengths; options are reached via derived rules.
                let header_bits = match d.source {
                    Source::IpHeader | Source::TcpHeader => 20 * 8,
                    Source::UdpHeader => 8 * 8,
                    Source::FrameMetadata => 0,
                };
                let end = byte_offset * 8 + bit_offset + bit_width;
                if header_bits == 0 || end > header_bits || bit_width == 0 || bit_width > 32 {
                    return Err(SchemaError::BitRangeOutOfHeader {
                        name: d.name.clone(),
                        header: d.source,
                        bit_offset,
                        bit_width,
                    });
                }
            }
            match d.norm {
                NormRule::AffineBounded { lo, hi } if lo >= hi => {
                    return Err(SchemaError::BadAffineBounds {
                        name: d.name.clone(),
                        lo,
                        hi,
                    })
                }
                NormRule::Log1pScaled { scale, cap } if scale <= 0.0 || cap <= 0.0 => {
                    return Err(SchemaError::BadLogParams {
                        name: d.name.clone(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical TOML serialization; recorded into every
    /// dataset and checkpoint so artifacts can refuse mismatched schemas.
    pub fn digest(&self) -> [u8; 32] {
        let text = self.to_toml();
        sha256(text.as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, SchemaError> {
        let schema: FsuSchema = toml::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for FsuSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "schema v{}: {} descriptors ({} generalizable)",
            self.version,
            self.n_total(),
            self.n_generalizable()
        )
    }
}

// ---------------------------------------------------------------------------
// Default catalog
// ---------------------------------------------------------------------------

const LEN_NORM: NormRule = NormRule::Log1pScaled {
    scale: 64.0,
    cap: 65535.0,
};
const DELTA_NORM: NormRule = NormRule::Log1pScaled {
    scale: 1e-3,
    cap: 60.0,
};
const RELATIVE_NORM: NormRule = NormRule::Log1pScaled {
    scale: 1e-3,
    cap: 600.0,
};

fn affine(lo: f64, hi: f64) -> NormRule {
    NormRule::AffineBounded { lo, hi }
}

fn bits(byte_offset: u32, bit_offset: u32, bit_width: u32) -> Extraction {
    Extraction::Bits {
        byte_offset,
        bit_offset,
        bit_width,
    }
}

/// The documented default catalog: 41 generalizable FSUs, 8 random, 4
/// non-generalizable. Overridable from a schema file for experiments.
pub fn default_schema() -> FsuSchema {
    use DerivedRule::*;
    use Predictability::{Generalizable as G, NonGeneralizable as N, Random as R};
    use Source::*;

    let mut d = Vec::new();
    let mut push = |name: &str,
                    source: Source,
                    extraction: Extraction,
                    predictability: Predictability,
                    norm: NormRule| {
        d.push(FsuDescriptor {
            name: name.to_string(),
            source,
            extraction,
            predictability,
            norm,
            default_value: 0.0,
        });
    };

    // Frame metadata and derived indicators.
    push("frame.time_delta", FrameMetadata, Extraction::Derived(TimeDelta), G, DELTA_NORM);
    push("frame.len", FrameMetadata, Extraction::Derived(FrameLen), G, LEN_NORM);
    push("direction", FrameMetadata, Extraction::Derived(Direction), G, NormRule::Binary);

    // IPv4 header.
    push("ip.hdr_len", IpHeader, Extraction::Derived(IpHdrLenBytes), G, affine(0.0, 60.0));
    push("ip.dsfield", IpHeader, bits(1, 0, 8), G, affine(0.0, 255.0));
    push("ip.len", IpHeader, bits(2, 0, 16), G, LEN_NORM);
    push("ip.flags.df", IpHeader, bits(6, 1, 1), G, NormRule::Binary);
    push("ip.flags.mf", IpHeader, bits(6, 2, 1), G, NormRule::Binary);
    push("ip.frag_offset", IpHeader, bits(6, 3, 13), G, affine(0.0, 8191.0));
    push("ip.ttl", IpHeader, bits(8, 0, 8), G, affine(0.0, 255.0));
    push("ip.proto", IpHeader, bits(9, 0, 8), G, affine(0.0, 255.0));

    // TCP header and options.
    push("tcp.hdr_len", TcpHeader, Extraction::Derived(TcpHdrLenBytes), G, affine(0.0, 60.0));
    push("tcp.flags.fin", TcpHeader, bits(13, 7, 1), G, NormRule::Binary);
    push("tcp.flags.syn", TcpHeader, bits(13, 6, 1), G, NormRule::Binary);
    push("tcp.flags.rst", TcpHeader, bits(13, 5, 1), G, NormRule::Binary);
    push("tcp.flags.psh", TcpHeader, bits(13, 4, 1), G, NormRule::Binary);
    push("tcp.flags.ack", TcpHeader, bits(13, 3, 1), G, NormRule::Binary);
    push("tcp.flags.urg", TcpHeader, bits(13, 2, 1), G, NormRule::Binary);
    push("tcp.flags.ece", TcpHeader, bits(13, 1, 1), G, NormRule::Binary);
    push("tcp.flags.cwr", TcpHeader, bits(13, 0, 1), G, NormRule::Binary);
    push("tcp.window_size", TcpHeader, bits(14, 0, 16), G, affine(0.0, 65535.0));
    push("tcp.urgent_pointer", TcpHeader, bits(18, 0, 16), G, affine(0.0, 65535.0));
    push("tcp.payload_len", TcpHeader, Extraction::Derived(TcpPayloadLen), G, LEN_NORM);
    push("tcp.opt.mss_present", TcpHeader, Extraction::Derived(OptMssPresent), G, NormRule::Binary);
    push("tcp.opt.mss", TcpHeader, Extraction::Derived(OptMss), G, affine(0.0, 65535.0));
    push("tcp.opt.wscale_present", TcpHeader, Extraction::Derived(OptWscalePresent), G, NormRule::Binary);
    push("tcp.opt.wscale", TcpHeader, Extraction::Derived(OptWscale), G, affine(0.0, 14.0));
    push("tcp.opt.sack_perm", TcpHeader, Extraction::Derived(OptSackPerm), G, NormRule::Binary);
    push("tcp.opt.ts_present", TcpHeader, Extraction::Derived(OptTsPresent), G, NormRule::Binary);
    push("tcp.opt.count", TcpHeader, Extraction::Derived(OptCount), G, affine(0.0, 16.0));

    // UDP header.
    push("udp.length", UdpHeader, bits(4, 0, 16), G, LEN_NORM);
    push("udp.payload_len", UdpHeader, Extraction::Derived(UdpPayloadLen), G, LEN_NORM);

    // Coarse port indicators; raw ports themselves are dataset identifiers.
    push("port.src_wellknown", FrameMetadata, Extraction::Derived(SrcPortWellKnown), G, NormRule::Binary);
    push("port.dst_wellknown", FrameMetadata, Extraction::Derived(DstPortWellKnown), G, NormRule::Binary);
    push("port.src_registered", FrameMetadata, Extraction::Derived(SrcPortRegistered), G, NormRule::Binary);
    push("port.dst_registered", FrameMetadata, Extraction::Derived(DstPortRegistered), G, NormRule::Binary);
    push("is_tcp", FrameMetadata, Extraction::Derived(IsTcp), G, NormRule::Binary);
    push("is_udp", FrameMetadata, Extraction::Derived(IsUdp), G, NormRule::Binary);
    push("frame.time_relative", FrameMetadata, Extraction::Derived(TimeRelative), G, RELATIVE_NORM);
    push("pkt.hdr_bytes_total", FrameMetadata, Extraction::Derived(HdrBytesTotal), G, affine(0.0, 120.0));
    push("pkt.is_pure_ack", FrameMetadata, Extraction::Derived(IsPureAck), G, NormRule::Binary);

    // Random fields: unlearnable by protocol design; never model inputs or
    // reconstruction targets unless an ablation re-admits them.
    push("ip.id", IpHeader, bits(4, 0, 16), R, affine(0.0, 65535.0));
    push("ip.checksum", IpHeader, bits(10, 0, 16), R, affine(0.0, 65535.0));
    push("tcp.seq_raw", TcpHeader, bits(4, 0, 32), R, affine(0.0, 4294967295.0));
    push("tcp.ack_raw", TcpHeader, bits(8, 0, 32), R, affine(0.0, 4294967295.0));
    push("tcp.checksum", TcpHeader, bits(16, 0, 16), R, affine(0.0, 65535.0));
    push("udp.checksum", UdpHeader, bits(6, 0, 16), R, affine(0.0, 65535.0));
    push("tcp.opt.tsval", TcpHeader, Extraction::Derived(OptTsVal), R, affine(0.0, 4294967295.0));
    push("tcp.opt.tsecr", TcpHeader, Extraction::Derived(OptTsEcr), R, affine(0.0, 4294967295.0));

    // Dataset identifiers; excluded to avoid memorizing endpoints.
    push("ip.src", IpHeader, bits(12, 0, 32), N, affine(0.0, 4294967295.0));
    push("ip.dst", IpHeader, bits(16, 0, 32), N, affine(0.0, 4294967295.0));
    push("tcp.srcport_raw", TcpHeader, bits(0, 0, 16), N, affine(0.0, 65535.0));
    push("tcp.dstport_raw", TcpHeader, bits(2, 0, 16), N, affine(0.0, 65535.0));

    let schema = FsuSchema {
        version: 1,
        descriptors: d,
    };
    debug_assert!(schema.validate().is_ok());
    schema
}

// ---------------------------------------------------------------------------
// Packet -> raw FSU vector
// ---------------------------------------------------------------------------

/// Per-packet context that cannot be read from the packet alone.
#[derive(Debug, Clone, Copy)]
pub struct ParseContext {
    /// True iff the packet travels in the flow initiator's direction.
    pub from_initiator: bool,
    /// Timestamp of the previous packet in the same flow, if any.
    pub prev_timestamp: Option<Timestamp>,
    /// Timestamp of the flow's first packet.
    pub first_timestamp: Timestamp,
}

/// Raw extraction result: one `(value, present)` pair per catalog entry.
#[derive(Debug, Clone)]
pub struct RawFsuVector {
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

/// Extracts every catalog entry from a decoded packet. Absent fields yield
/// their default value with `present = false`.
pub fn parse_packet(pkt: &DecodedPacket, ctx: &ParseContext, schema: &FsuSchema) -> RawFsuVector {
    let n = schema.descriptors.len();
    let mut values = Vec::with_capacity(n);
    let mut present = Vec::with_capacity(n);
    for d in &schema.descriptors {
        let (v, p) = extract_one(pkt, ctx, d);
        values.push(if p { v } else { d.default_value });
        present.push(p);
    }
    RawFsuVector { values, present }
}

/// Normalizes a raw vector and projects it onto the columns selected by
/// `set`, in catalog order. Returns the vector and how many values clamped.
pub fn normalize_and_project(
    raw: &RawFsuVector,
    schema: &FsuSchema,
    set: ColumnSet,
) -> (Vec<f32>, usize) {
    let mut out = Vec::new();
    let mut clamps = 0;
    for idx in schema.indices(set) {
        let (v, clamped) = schema.descriptors[idx].norm.apply(raw.values[idx]);
        if clamped {
            clamps += 1;
        }
        out.push(v);
    }
    (out, clamps)
}

fn extract_one(pkt: &DecodedPacket, ctx: &ParseContext, d: &FsuDescriptor) -> (f64, bool) {
    match d.extraction {
        Extraction::Bits {
            byte_offset,
            bit_offset,
            bit_width,
        } => {
            let header: Option<&[u8]> = match d.source {
                Source::IpHeader => Some(pkt.ip_header()),
                Source::TcpHeader => pkt.tcp_header(),
                Source::UdpHeader => pkt.udp_header(),
                Source::FrameMetadata => None,
            };
            match header {
                Some(h) => match read_bits(h, byte_offset, bit_offset, bit_width) {
                    Some(v) => (v as f64, true),
                    None => (0.0, false),
                },
                None => (0.0, false),
            }
        }
        Extraction::Derived(rule) => derived_value(pkt, ctx, rule),
    }
}

/// Reads `width` bits starting `bit_offset` bits past the MSB of
/// `header[byte_offset]`, big-endian as on the wire.
fn read_bits(header: &[u8], byte_offset: u32, bit_offset: u32, width: u32) -> Option<u64> {
    let start = byte_offset as usize * 8 + bit_offset as usize;
    let end = start + width as usize;
    if end > header.len() * 8 {
        return None;
    }
    let mut acc: u64 = 0;
    for bit in start..end {
        let byte = header[bit / 8];
        let b = (byte >> (7 - (bit % 8))) & 1;
        acc = (acc << 1) | b as u64;
    }
    Some(acc)
}

fn derived_value(pkt: &DecodedPacket, ctx: &ParseContext, rule: DerivedRule) -> (f64, bool) {
    use DerivedRule::*;
    let tcp = pkt.tcp();
    let udp = pkt.udp();
    match rule {
        TimeDelta => {
            let delta = ctx
                .prev_timestamp
                .map(|prev| pkt.timestamp.seconds_since(prev).max(0.0))
                .unwrap_or(0.0);
            (delta, true)
        }
        TimeRelative => (
            pkt.timestamp.seconds_since(ctx.first_timestamp).max(0.0),
            true,
        ),
        FrameLen => (pkt.frame_len as f64, true),
        Direction => (ctx.from_initiator as u8 as f64, true),
        IpHdrLenBytes => (pkt.ip.header_len as f64, true),
        TcpHdrLenBytes => opt(tcp.map(|t| t.header_len as f64)),
        TcpPayloadLen => opt(tcp.map(|t| t.payload_len as f64)),
        UdpPayloadLen => opt(udp.map(|u| u.payload_len as f64)),
        OptMssPresent => opt(tcp.map(|t| t.options.mss.is_some() as u8 as f64)),
        OptMss => opt(tcp.and_then(|t| t.options.mss).map(|v| v as f64)),
        OptWscalePresent => opt(tcp.map(|t| t.options.wscale.is_some() as u8 as f64)),
        OptWscale => opt(tcp.and_then(|t| t.options.wscale).map(|v| v as f64)),
        OptSackPerm => opt(tcp.map(|t| t.options.sack_permitted as u8 as f64)),
        OptTsPresent => opt(tcp.map(|t| t.options.timestamps.is_some() as u8 as f64)),
        OptTsVal => opt(tcp.and_then(|t| t.options.timestamps).map(|(v, _)| v as f64)),
        OptTsEcr => opt(tcp.and_then(|t| t.options.timestamps).map(|(_, e)| e as f64)),
        OptCount => opt(tcp.map(|t| t.options.count as f64)),
        SrcPortWellKnown => (((pkt.src_port()) < 1024) as u8 as f64, true),
        DstPortWellKnown => (((pkt.dst_port()) < 1024) as u8 as f64, true),
        SrcPortRegistered => {
            let p = pkt.src_port();
            (((1024..49152).contains(&p)) as u8 as f64, true)
        }
        DstPortRegistered => {
            let p = pkt.dst_port();
            (((1024..49152).contains(&p)) as u8 as f64, true)
        }
        IsTcp => (matches!(pkt.transport, Transport::Tcp(_)) as u8 as f64, true),
        IsUdp => (matches!(pkt.transport, Transport::Udp(_)) as u8 as f64, true),
        HdrBytesTotal => {
            let l4 = match &pkt.transport {
                Transport::Tcp(t) => t.header_len as u32,
                Transport::Udp(_) => 8,
            };
            ((pkt.ip.header_len as u32 + l4) as f64, true)
        }
        IsPureAck => {
            let v = tcp.map(|t| {
                t.flag(TcpFlag::Ack)
                    && !t.flag(TcpFlag::Syn)
                    && !t.flag(TcpFlag::Fin)
                    && !t.flag(TcpFlag::Rst)
                    && !t.flag(TcpFlag::Psh)
                    && !t.flag(TcpFlag::Urg)
                    && t.payload_len == 0
            });
            opt(v.map(|b| b as u8 as f64))
        }
    }
}

fn opt(v: Option<f64>) -> (f64, bool) {
    match v {
        Some(v) => (v, true),
        None => (0.0, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::test_support::{tcp_packet, udp_packet};
    use crate::capture::PacketSpec;

    fn ctx() -> ParseContext {
        ParseContext {
            from_initiator: true,
            prev_timestamp: None,
            first_timestamp: Timestamp::default(),
        }
    }

    #[test]
    fn default_catalog_counts() {
        let s = default_schema();
        assert_eq!(s.n_generalizable(), 41);
        assert_eq!(s.n_total(), 53);
        s.validate().unwrap();

        let random: Vec<_> = s
            .descriptors
            .iter()
            .filter(|d| d.predictability == Predictability::Random)
            .map(|d| d.name.as_str())
            .collect();
        assert!(random.contains(&"ip.id"));
        assert_eq!(random.len(), 8);

        let non_gen: Vec<_> = s
            .descriptors
            .iter()
            .filter(|d| d.predictability == Predictability::NonGeneralizable)
            .map(|d| d.name.as_str())
            .collect();
        assert!(non_gen.contains(&"ip.src"));
        assert_eq!(non_gen.len(), 4);
    }

    #[test]
    fn ttl_extracted_from_header_byte() {
        let schema = default_schema();
        let pkt = tcp_packet(&PacketSpec {
            ttl: 0x40,
            ..PacketSpec::default()
        });
        let raw = parse_packet(&pkt, &ctx(), &schema);
        let idx = schema
            .descriptors
            .iter()
            .position(|d| d.name == "ip.ttl")
            .unwrap();
        assert_eq!(raw.values[idx], 64.0);
        assert!(raw.present[idx]);
    }

    #[test]
    fn udp_packet_has_absent_tcp_fields() {
        let schema = default_schema();
        let pkt = udp_packet(&PacketSpec::default());
        let raw = parse_packet(&pkt, &ctx(), &schema);
        let idx = schema
            .descriptors
            .iter()
            .position(|d| d.name == "tcp.flags.syn")
            .unwrap();
        assert_eq!(raw.values[idx], 0.0);
        assert!(!raw.present[idx]);
    }

    #[test]
    fn syn_ack_flag_bits_decode() {
        let schema = default_schema();
        let pkt = tcp_packet(&PacketSpec {
            tcp_flags: 0x12, // SYN|ACK
            ..PacketSpec::default()
        });
        let raw = parse_packet(&pkt, &ctx(), &schema);
        let get = |name: &str| {
            let i = schema.descriptors.iter().position(|d| d.name == name).unwrap();
            raw.values[i]
        };
        assert_eq!(get("tcp.flags.syn"), 1.0);
        assert_eq!(get("tcp.flags.ack"), 1.0);
        for f in ["fin", "rst", "psh", "urg", "ece", "cwr"] {
            assert_eq!(get(&format!("tcp.flags.{f}")), 0.0, "{f}");
        }
    }

    #[test]
    fn normalization_examples() {
        let (v, c) = NormRule::AffineBounded { lo: 0.0, hi: 255.0 }.apply(64.0);
        assert!((v - 64.0 / 255.0).abs() < 1e-7);
        assert!(!c);
        assert!((v - 0.25098).abs() < 1e-4);

        assert_eq!(NormRule::Binary.apply(1.0), (1.0, false));
        assert_eq!(DELTA_NORM.apply(0.0), (0.0, false));

        // Out-of-domain clamps are flagged.
        let (v, c) = NormRule::AffineBounded { lo: 0.0, hi: 255.0 }.apply(300.0);
        assert_eq!(v, 1.0);
        assert!(c);
    }

    #[test]
    fn norm_rules_are_monotone_and_bounded() {
        let rules = [
            NormRule::AffineBounded { lo: 0.0, hi: 255.0 },
            DELTA_NORM,
            LEN_NORM,
        ];
        for rule in rules {
            let mut prev = -1.0f32;
            let cap = match rule {
                NormRule::AffineBounded { hi, .. } => hi,
                NormRule::Log1pScaled { cap, .. } => cap,
                _ => 1.0,
            };
            for i in 0..=100 {
                let raw = cap * i as f64 / 100.0;
                let (v, _) = rule.apply(raw);
                assert!((0.0..=1.0).contains(&v));
                assert!(v > prev || (i == 0 && v == 0.0), "{rule:?} not increasing at {raw}");
                prev = v;
            }
        }
    }

    #[test]
    fn projection_drops_random_and_nongen() {
        let schema = default_schema();
        let pkt = tcp_packet(&PacketSpec::default());
        let raw = parse_packet(&pkt, &ctx(), &schema);
        let (v, _) = normalize_and_project(&raw, &schema, ColumnSet::Generalizable);
        assert_eq!(v.len(), 41);

        // Permuting only the random descriptors' values leaves the
        // generalizable projection unchanged.
        let mut permuted = raw.clone();
        let rand_idx: Vec<_> = schema
            .descriptors
            .iter()
            .enumerate()
            .filter(|(_, d)| d.predictability != Predictability::Generalizable)
            .map(|(i, _)| i)
            .collect();
        for w in rand_idx.windows(2) {
            permuted.values.swap(w[0], w[1]);
        }
        let (v2, _) = normalize_and_project(&permuted, &schema, ColumnSet::Generalizable);
        assert_eq!(v, v2);
    }

    #[test]
    fn toml_round_trip_preserves_digest() {
        let s = default_schema();
        let text = s.to_toml();
        let back = FsuSchema::from_toml(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.digest(), back.digest());
    }

    #[test]
    fn shipped_schema_file_matches_builtin() {
        let shipped = FsuSchema::from_toml(include_str!("../schemas/default.toml")).unwrap();
        assert_eq!(shipped, default_schema());
        assert_eq!(shipped.digest(), default_schema().digest());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = default_schema();
        let dup = s.descriptors[0].clone();
        s.descriptors.push(dup);
        assert!(matches!(s.validate(), Err(SchemaError::DuplicateName(_))));
    }
}
