//! Packet assembly: builds valid Ethernet/IPv4/TCP|UDP frames from field
//! values. Used by the synthetic corpus generator and by test fixtures.

use super::Timestamp;

/// TCP options to include, in fixed order: MSS, window scale, SACK-permitted,
/// timestamps, then NOP padding to a 4-byte boundary.
#[derive(Debug, Clone, Copy, Default)]
pub struct TcpOptionsSpec {
    pub mss: Option<u16>,
    pub wscale: Option<u8>,
    pub sack_permitted: bool,
    pub timestamps: Option<(u32, u32)>,
}

/// Field values for one synthesized packet.
#[derive(Debug, Clone)]
pub struct PacketSpec {
    pub ts: Timestamp,
    pub src_ip: u32,
    pub dst_ip: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub ttl: u8,
    pub dsfield: u8,
    pub ip_id: u16,
    pub dont_fragment: bool,
    pub more_fragments: bool,
    pub frag_offset: u16,
    pub tcp_flags: u8,
    pub seq: u32,
    pub ack: u32,
    pub window: u16,
    pub urgent: u16,
    pub options: TcpOptionsSpec,
    pub payload_len: usize,
    pub payload_byte: u8,
}

impl Default for PacketSpec {
    fn default() -> Self {
        PacketSpec {
            ts: Timestamp::default(),
            src_ip: u32::from_be_bytes([10, 0, 0, 1]),
            dst_ip: u32::from_be_bytes([192, 168, 1, 20]),
            src_port: 51514,
            dst_port: 443,
            ttl: 64,
            dsfield: 0,
            ip_id: 0,
            dont_fragment: true,
            more_fragments: false,
            frag_offset: 0,
            tcp_flags: 0x10, // ACK
            seq: 1,
            ack: 1,
            window: 65535,
            urgent: 0,
            options: TcpOptionsSpec::default(),
            payload_len: 0,
            payload_byte: 0xAB,
        }
    }
}

/// Assembles a full Ethernet frame carrying IPv4/TCP.
pub fn build_tcp_frame(spec: &PacketSpec) -> Vec<u8> {
    let options = encode_tcp_options(&spec.options);
    let tcp_header_len = 20 + options.len();
    let mut tcp = Vec::with_capacity(tcp_header_len + spec.payload_len);
    tcp.extend_from_slice(&spec.src_port.to_be_bytes());
    tcp.extend_from_slice(&spec.dst_port.to_be_bytes());
    tcp.extend_from_slice(&spec.seq.to_be_bytes());
    tcp.extend_from_slice(&spec.ack.to_be_bytes());
    tcp.push(((tcp_header_len / 4) as u8) << 4);
    tcp.push(spec.tcp_flags);
    tcp.extend_from_slice(&spec.window.to_be_bytes());
    tcp.extend_from_slice(&[0, 0]); // checksum placeholder
    tcp.extend_from_slice(&spec.urgent.to_be_bytes());
    tcp.extend_from_slice(&options);
    tcp.extend(std::iter::repeat(spec.payload_byte).take(spec.payload_len));

    let checksum = l4_checksum(spec.src_ip, spec.dst_ip, 6, &tcp);
    tcp[16..18].copy_from_slice(&checksum.to_be_bytes());

    wrap_ipv4(spec, 6, tcp)
}

/// Assembles a full Ethernet frame carrying IPv4/UDP.
pub fn build_udp_frame(spec: &PacketSpec) -> Vec<u8> {
    let udp_len = 8 + spec.payload_len;
    let mut udp = Vec::with_capacity(udp_len);
    udp.extend_from_slice(&spec.src_port.to_be_bytes());
    udp.extend_from_slice(&spec.dst_port.to_be_bytes());
    udp.extend_from_slice(&(udp_len as u16).to_be_bytes());
    udp.extend_from_slice(&[0, 0]); // checksum placeholder
    udp.extend(std::iter::repeat(spec.payload_byte).take(spec.payload_len));

    let checksum = l4_checksum(spec.src_ip, spec.dst_ip, 17, &udp);
    udp[6..8].copy_from_slice(&checksum.to_be_bytes());

    wrap_ipv4(spec, 17, udp)
}

fn wrap_ipv4(spec: &PacketSpec, protocol: u8, l4: Vec<u8>) -> Vec<u8> {
    let total_len = 20 + l4.len();
    let mut ip = Vec::with_capacity(total_len);
    ip.push(0x45); // version 4, IHL 5
    ip.push(spec.dsfield);
    ip.extend_from_slice(&(total_len as u16).to_be_bytes());
    ip.extend_from_slice(&spec.ip_id.to_be_bytes());
    let flags_frag = ((spec.dont_fragment as u16) << 14)
        | ((spec.more_fragments as u16) << 13)
        | (spec.frag_offset & 0x1FFF);
    ip.extend_from_slice(&flags_frag.to_be_bytes());
    ip.push(spec.ttl);
    ip.push(protocol);
    ip.extend_from_slice(&[0, 0]); // checksum placeholder
    ip.extend_from_slice(&spec.src_ip.to_be_bytes());
    ip.extend_from_slice(&spec.dst_ip.to_be_bytes());
    let checksum = ones_complement_sum(&ip);
    ip[10..12].copy_from_slice(&(!checksum).to_be_bytes());
    ip.extend_from_slice(&l4);

    let mut frame = Vec::with_capacity(14 + ip.len());
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]); // dst MAC
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]); // src MAC
    frame.extend_from_slice(&0x0800u16.to_be_bytes());
    frame.extend_from_slice(&ip);
    frame
}

fn encode_tcp_options(spec: &TcpOptionsSpec) -> Vec<u8> {
    let mut out = Vec::new();
    if let Some(mss) = spec.mss {
        out.extend_from_slice(&[2, 4]);
        out.extend_from_slice(&mss.to_be_bytes());
    }
    if let Some(ws) = spec.wscale {
        out.extend_from_slice(&[3, 3, ws]);
    }
    if spec.sack_permitted {
        out.extend_from_slice(&[4, 2]);
    }
    if let Some((tsval, tsecr)) = spec.timestamps {
        out.extend_from_slice(&[8, 10]);
        out.extend_from_slice(&tsval.to_be_bytes());
        out.extend_from_slice(&tsecr.to_be_bytes());
    }
    while out.len() % 4 != 0 {
        out.push(1); // NOP
    }
    out
}

fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum = 0u32;
    let mut i = 0;
    while i + 1 < bytes.len() {
        sum += u32::from(u16::from_be_bytes([bytes[i], bytes[i + 1]]));
        i += 2;
    }
    if i < bytes.len() {
        sum += u32::from(u16::from_be_bytes([bytes[i], 0]));
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

fn l4_checksum(src: u32, dst: u32, protocol: u8, segment: &[u8]) -> u16 {
    let mut pseudo = Vec::with_capacity(12 + segment.len());
    pseudo.extend_from_slice(&src.to_be_bytes());
    pseudo.extend_from_slice(&dst.to_be_bytes());
    pseudo.push(0);
    pseudo.push(protocol);
    pseudo.extend_from_slice(&(segment.len() as u16).to_be_bytes());
    pseudo.extend_from_slice(segment);
    let sum = !ones_complement_sum(&pseudo);
    if sum == 0 {
        0xFFFF
    } else {
        sum
    }
}
