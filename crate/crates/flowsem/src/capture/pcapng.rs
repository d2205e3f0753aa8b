//! pcapng reading: Section Header, Interface Description, and Enhanced
//! Packet blocks. Every other block type is skipped.

use super::{CaptureError, LinkType, RawPacket, Timestamp};

const SHB_TYPE: u32 = 0x0A0D_0D0A;
const IDB_TYPE: u32 = 0x0000_0001;
const EPB_TYPE: u32 = 0x0000_0006;
const BYTE_ORDER_MAGIC: u32 = 0x1A2B_3C4D;

#[derive(Clone, Copy)]
struct Interface {
    link_type: LinkType,
    /// Timestamp units per second.
    ticks_per_sec: u64,
}

pub(super) fn read(bytes: &[u8]) -> Result<Vec<RawPacket>, CaptureError> {
    let mut pos = 0usize;
    let mut big_endian = false;
    let mut interfaces: Vec<Interface> = Vec::new();
    let mut packets = Vec::new();

    while pos < bytes.len() {
        if bytes.len() - pos < 12 {
            return Err(CaptureError::TruncatedRecord);
        }
        let raw_type = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        let raw_type_be = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap());

        if raw_type == SHB_TYPE || raw_type_be == SHB_TYPE {
            // A new section declares its own byte order.
            if bytes.len() - pos < 16 {
                return Err(CaptureError::TruncatedRecord);
            }
            let bom_le = u32::from_le_bytes(bytes[pos + 8..pos + 12].try_into().unwrap());
            let bom_be = u32::from_be_bytes(bytes[pos + 8..pos + 12].try_into().unwrap());
            big_endian = match (bom_le, bom_be) {
                (BYTE_ORDER_MAGIC, _) => false,
                (_, BYTE_ORDER_MAGIC) => true,
                _ => return Err(CaptureError::BadBlock("bad byte-order magic")),
            };
            interfaces.clear();
        }

        let block_type = read_u32(bytes, pos, big_endian);
        let total_len = read_u32(bytes, pos + 4, big_endian) as usize;
        if total_len < 12 || total_len % 4 != 0 || pos + total_len > bytes.len() {
            return Err(CaptureError::TruncatedRecord);
        }
        let body = &bytes[pos + 8..pos + total_len - 4];

        match block_type {
            SHB_TYPE => {}
            IDB_TYPE => {
                if body.len() < 8 {
                    return Err(CaptureError::BadBlock("short interface description"));
                }
                let dlt = if big_endian {
                    u16::from_be_bytes([body[0], body[1]])
                } else {
                    u16::from_le_bytes([body[0], body[1]])
                } as u32;
                let link_type = LinkType::from_dlt(dlt)?;
                let ticks = tsresol_ticks(&body[8..], big_endian);
                interfaces.push(Interface {
                    link_type,
                    ticks_per_sec: ticks,
                });
            }
            EPB_TYPE => {
                if body.len() < 20 {
                    return Err(CaptureError::BadBlock("short enhanced packet block"));
                }
                let if_id = read_u32(body, 0, big_endian) as usize;
                let iface = interfaces
                    .get(if_id)
                    .copied()
                    .ok_or(CaptureError::BadBlock("packet references unknown interface"))?;
                let ts_high = read_u32(body, 4, big_endian) as u64;
                let ts_low = read_u32(body, 8, big_endian) as u64;
                let caplen = read_u32(body, 12, big_endian) as usize;
                let orig_len = read_u32(body, 16, big_endian);
                if body.len() < 20 + caplen {
                    return Err(CaptureError::TruncatedRecord);
                }
                let units = (ts_high << 32) | ts_low;
                let secs = units / iface.ticks_per_sec;
                let rem = units % iface.ticks_per_sec;
                let nanos = (rem as u128 * 1_000_000_000 / iface.ticks_per_sec as u128) as u32;
                packets.push(RawPacket {
                    timestamp: Timestamp::new(secs, nanos),
                    link_type: iface.link_type,
                    bytes: body[20..20 + caplen].to_vec(),
                    original_length: orig_len,
                });
            }
            _ => {} // statistics, name resolution, etc.
        }
        pos += total_len;
    }
    Ok(packets)
}

fn read_u32(bytes: &[u8], pos: usize, big_endian: bool) -> u32 {
    let arr: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
    if big_endian {
        u32::from_be_bytes(arr)
    } else {
        u32::from_le_bytes(arr)
    }
}

/// Walks IDB options for if_tsresol (code 9). Default resolution is 1 µs.
fn tsresol_ticks(mut opts: &[u8], big_endian: bool) -> u64 {
    while opts.len() >= 4 {
        let code = if big_endian {
            u16::from_be_bytes([opts[0], opts[1]])
        } else {
            u16::from_le_bytes([opts[0], opts[1]])
        };
        let len = if big_endian {
            u16::from_be_bytes([opts[2], opts[3]])
        } else {
            u16::from_le_bytes([opts[2], opts[3]])
        } as usize;
        if code == 0 {
            break;
        }
        if opts.len() < 4 + len {
            break;
        }
        if code == 9 && len == 1 {
            let v = opts[4];
            return if v & 0x80 == 0 {
                10u64.saturating_pow((v & 0x7F) as u32)
            } else {
                2u64.saturating_pow((v & 0x7F) as u32)
            };
        }
        let padded = (len + 3) & !3;
        opts = &opts[4 + padded..];
    }
    1_000_000
}

/// Minimal pcapng writer used by fixtures: one section, one interface,
/// enhanced packet blocks, microsecond resolution, little-endian.
pub fn write_minimal(link_type: LinkType, packets: &[(Timestamp, &[u8], u32)]) -> Vec<u8> {
    let mut out = Vec::new();
    // SHB
    let shb_body: Vec<u8> = [
        BYTE_ORDER_MAGIC.to_le_bytes().to_vec(),
        1u16.to_le_bytes().to_vec(),
        0u16.to_le_bytes().to_vec(),
        (-1i64).to_le_bytes().to_vec(),
    ]
    .concat();
    push_block(&mut out, SHB_TYPE, &shb_body);
    // IDB
    let idb_body: Vec<u8> = [
        (link_type.dlt() as u16).to_le_bytes().to_vec(),
        0u16.to_le_bytes().to_vec(),
        65535u32.to_le_bytes().to_vec(),
    ]
    .concat();
    push_block(&mut out, IDB_TYPE, &idb_body);
    for (ts, bytes, orig_len) in packets {
        let units = ts.secs * 1_000_000 + (ts.nanos / 1000) as u64;
        let mut body = Vec::new();
        body.extend_from_slice(&0u32.to_le_bytes());
        body.extend_from_slice(&((units >> 32) as u32).to_le_bytes());
        body.extend_from_slice(&(units as u32).to_le_bytes());
        body.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        body.extend_from_slice(&orig_len.to_le_bytes());
        body.extend_from_slice(bytes);
        while body.len() % 4 != 0 {
            body.push(0);
        }
        push_block(&mut out, EPB_TYPE, &body);
    }
    out
}

fn push_block(out: &mut Vec<u8>, block_type: u32, body: &[u8]) {
    let total = 12 + body.len();
    out.extend_from_slice(&block_type.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(&(total as u32).to_le_bytes());
}
