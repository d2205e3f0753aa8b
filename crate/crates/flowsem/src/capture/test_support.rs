//! Shared helpers for unit tests: decoded packets built from field specs.

use super::{build_tcp_frame, build_udp_frame, decode_packet, DecodedPacket, LinkType, PacketSpec, RawPacket};

pub(crate) fn raw_from_frame(ts: super::Timestamp, frame: Vec<u8>) -> RawPacket {
    let len = frame.len() as u32;
    RawPacket {
        timestamp: ts,
        link_type: LinkType::Ethernet,
        bytes: frame,
        original_length: len,
    }
}

pub(crate) fn tcp_packet(spec: &PacketSpec) -> DecodedPacket {
    let raw = raw_from_frame(spec.ts, build_tcp_frame(spec));
    decode_packet(&raw).expect("spec packet decodes")
}

pub(crate) fn udp_packet(spec: &PacketSpec) -> DecodedPacket {
    let raw = raw_from_frame(spec.ts, build_udp_frame(spec));
    decode_packet(&raw).expect("spec packet decodes")
}
