//! Link-layer decapsulation and IPv4/TCP/UDP header decoding.
//!
//! Decoding is strict about structure (IHL bounds, header-within-capture)
//! and tolerant about content: unparseable packets are dropped with a
//! counted reason, never a hard error.

use super::{Anonymizer, DropReason, LinkType, RawPacket, Timestamp};

/// IPv4 facts needed beyond the raw header bytes.
#[derive(Debug, Clone, Copy)]
pub struct Ipv4Info {
    pub header_len: u8,
    pub total_len: u16,
    pub protocol: u8,
    pub src: u32,
    pub dst: u32,
}

/// Parsed TCP options relevant to the catalog.
#[derive(Debug, Clone, Copy, Default)]
pub struct TcpOptions {
    pub mss: Option<u16>,
    pub wscale: Option<u8>,
    pub sack_permitted: bool,
    pub timestamps: Option<(u32, u32)>,
    /// Number of non-padding option entries.
    pub count: u8,
}

#[derive(Debug, Clone, Copy)]
pub struct TcpInfo {
    pub src_port: u16,
    pub dst_port: u16,
    pub header_len: u8,
    pub flags: u8,
    pub payload_len: u16,
    pub options: TcpOptions,
}

/// TCP flag bits, as laid out in header byte 13.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpFlag {
    Cwr = 0x80,
    Ece = 0x40,
    Urg = 0x20,
    Ack = 0x10,
    Psh = 0x08,
    Rst = 0x04,
    Syn = 0x02,
    Fin = 0x01,
}

impl TcpInfo {
    pub fn flag(&self, f: TcpFlag) -> bool {
        self.flags & (f as u8) != 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UdpInfo {
    pub src_port: u16,
    pub dst_port: u16,
    pub length: u16,
    pub payload_len: u16,
}

#[derive(Debug, Clone)]
pub enum Transport {
    Tcp(TcpInfo),
    Udp(UdpInfo),
}

/// A fully decoded in-scope packet. Header bytes are kept verbatim so the
/// catalog's bit-range locators can read them directly.
#[derive(Debug, Clone)]
pub struct DecodedPacket {
    pub timestamp: Timestamp,
    /// On-wire frame length (original, not capture, length).
    pub frame_len: u32,
    pub ip: Ipv4Info,
    pub transport: Transport,
    ip_header_bytes: Vec<u8>,
    l4_header_bytes: Vec<u8>,
}

impl DecodedPacket {
    pub fn ip_header(&self) -> &[u8] {
        &self.ip_header_bytes
    }

    pub fn tcp_header(&self) -> Option<&[u8]> {
        match self.transport {
            Transport::Tcp(_) => Some(&self.l4_header_bytes),
            Transport::Udp(_) => None,
        }
    }

    pub fn udp_header(&self) -> Option<&[u8]> {
        match self.transport {
            Transport::Udp(_) => Some(&self.l4_header_bytes),
            Transport::Tcp(_) => None,
        }
    }

    pub fn tcp(&self) -> Option<&TcpInfo> {
        match &self.transport {
            Transport::Tcp(t) => Some(t),
            Transport::Udp(_) => None,
        }
    }

    pub fn udp(&self) -> Option<&UdpInfo> {
        match &self.transport {
            Transport::Udp(u) => Some(u),
            Transport::Tcp(_) => None,
        }
    }

    pub fn src_port(&self) -> u16 {
        match &self.transport {
            Transport::Tcp(t) => t.src_port,
            Transport::Udp(u) => u.src_port,
        }
    }

    pub fn dst_port(&self) -> u16 {
        match &self.transport {
            Transport::Tcp(t) => t.dst_port,
            Transport::Udp(u) => u.dst_port,
        }
    }

    /// Rewrites source and destination addresses in place, both in the
    /// decoded facts and the stored header bytes. The IP checksum is left
    /// as captured; it is a random-class field and never a model input.
    pub fn anonymize(&mut self, anon: &Anonymizer) {
        self.ip.src = anon.anonymize(self.ip.src);
        self.ip.dst = anon.anonymize(self.ip.dst);
        self.ip_header_bytes[12..16].copy_from_slice(&self.ip.src.to_be_bytes());
        self.ip_header_bytes[16..20].copy_from_slice(&self.ip.dst.to_be_bytes());
    }
}

/// Decodes one capture record down to its transport header, or reports why
/// it is out of scope.
pub fn decode_packet(raw: &RawPacket) -> Result<DecodedPacket, DropReason> {
    let ip_bytes = strip_link(raw)?;
    decode_ipv4(raw, ip_bytes)
}

/// Removes link framing, returning the network-layer bytes. Single 802.1Q
/// VLAN tags are stripped; any other ethertype is out of scope.
fn strip_link(raw: &RawPacket) -> Result<&[u8], DropReason> {
    let b = &raw.bytes[..];
    match raw.link_type {
        LinkType::Ethernet => {
            if b.len() < 14 {
                return Err(DropReason::Malformed);
            }
            let mut ethertype = u16::from_be_bytes([b[12], b[13]]);
            let mut offset = 14;
            if ethertype == 0x8100 {
                if b.len() < 18 {
                    return Err(DropReason::Malformed);
                }
                ethertype = u16::from_be_bytes([b[16], b[17]]);
                offset = 18;
            }
            if ethertype != 0x0800 {
                return Err(DropReason::NotIpv4);
            }
            Ok(&b[offset..])
        }
        LinkType::RawIpv4 => Ok(b),
        LinkType::LinuxSll => {
            if b.len() < 16 {
                return Err(DropReason::Malformed);
            }
            let ethertype = u16::from_be_bytes([b[14], b[15]]);
            if ethertype != 0x0800 {
                return Err(DropReason::NotIpv4);
            }
            Ok(&b[16..])
        }
    }
}

fn decode_ipv4(raw: &RawPacket, b: &[u8]) -> Result<DecodedPacket, DropReason> {
    if b.is_empty() {
        return Err(DropReason::Malformed);
    }
    let version = b[0] >> 4;
    if version == 6 {
        return Err(DropReason::NotIpv4);
    }
    if version != 4 {
        return Err(DropReason::Malformed);
    }
    let ihl = (b[0] & 0x0F) as usize;
    if ihl < 5 {
        return Err(DropReason::Malformed);
    }
    let header_len = ihl * 4;
    if b.len() < header_len || b.len() < 20 {
        return Err(DropReason::Malformed);
    }
    let total_len = u16::from_be_bytes([b[2], b[3]]);
    // Non-first fragments carry no transport header; defragmentation is out
    // of scope, so they are dropped with a counted reason.
    let frag_offset = u16::from_be_bytes([b[6], b[7]]) & 0x1FFF;
    if frag_offset != 0 {
        return Err(DropReason::Fragment);
    }
    let protocol = b[9];
    let src = u32::from_be_bytes([b[12], b[13], b[14], b[15]]);
    let dst = u32::from_be_bytes([b[16], b[17], b[18], b[19]]);

    let ip = Ipv4Info {
        header_len: header_len as u8,
        total_len,
        protocol,
        src,
        dst,
    };
    let l4 = &b[header_len..];
    // Length reported by the IP header, bounded below by zero.
    let ip_payload_len = (total_len as usize).saturating_sub(header_len);

    let (transport, l4_header_bytes) = match protocol {
        6 => {
            if l4.len() < 20 {
                return Err(DropReason::Malformed);
            }
            let data_offset = (l4[12] >> 4) as usize;
            let tcp_header_len = data_offset * 4;
            if data_offset < 5 || l4.len() < tcp_header_len {
                return Err(DropReason::Malformed);
            }
            let options = parse_tcp_options(&l4[20..tcp_header_len]);
            let payload_len = ip_payload_len.saturating_sub(tcp_header_len) as u16;
            let info = TcpInfo {
                src_port: u16::from_be_bytes([l4[0], l4[1]]),
                dst_port: u16::from_be_bytes([l4[2], l4[3]]),
                header_len: tcp_header_len as u8,
                flags: l4[13],
                payload_len,
                options,
            };
            (Transport::Tcp(info), l4[..tcp_header_len].to_vec())
        }
        17 => {
            if l4.len() < 8 {
                return Err(DropReason::Malformed);
            }
            let length = u16::from_be_bytes([l4[4], l4[5]]);
            let info = UdpInfo {
                src_port: u16::from_be_bytes([l4[0], l4[1]]),
                dst_port: u16::from_be_bytes([l4[2], l4[3]]),
                length,
                payload_len: length.saturating_sub(8),
            };
            (Transport::Udp(info), l4[..8].to_vec())
        }
        _ => return Err(DropReason::UnsupportedTransport),
    };

    Ok(DecodedPacket {
        timestamp: raw.timestamp,
        frame_len: raw.original_length,
        ip,
        transport,
        ip_header_bytes: b[..header_len].to_vec(),
        l4_header_bytes,
    })
}

fn parse_tcp_options(mut opts: &[u8]) -> TcpOptions {
    let mut out = TcpOptions::default();
    while !opts.is_empty() {
        match opts[0] {
            0 => break, // end of options list
            1 => {
                opts = &opts[1..]; // NOP padding, not counted
            }
            kind => {
                if opts.len() < 2 {
                    break;
                }
                let len = opts[1] as usize;
                if len < 2 || len > opts.len() {
                    break;
                }
                let body = &opts[2..len];
                match kind {
                    2 if body.len() == 2 => out.mss = Some(u16::from_be_bytes([body[0], body[1]])),
                    3 if body.len() == 1 => out.wscale = Some(body[0]),
                    4 => out.sack_permitted = true,
                    8 if body.len() == 8 => {
                        let tsval = u32::from_be_bytes([body[0], body[1], body[2], body[3]]);
                        let tsecr = u32::from_be_bytes([body[4], body[5], body[6], body[7]]);
                        out.timestamps = Some((tsval, tsecr));
                    }
                    _ => {}
                }
                out.count += 1;
                opts = &opts[len..];
            }
        }
    }
    out
}
