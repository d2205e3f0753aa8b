//! Classic pcap reading and writing, both endiannesses, micro- and
//! nanosecond timestamp variants.

use super::{CaptureError, LinkType, RawPacket, Timestamp};

const MAGIC_MICRO: u32 = 0xA1B2_C3D4;
const MAGIC_NANO: u32 = 0xA1B2_3C4D;

/// On-disk flavor of a classic pcap file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapFormat {
    pub big_endian: bool,
    pub nanosecond: bool,
}

impl Default for PcapFormat {
    fn default() -> Self {
        PcapFormat {
            big_endian: false,
            nanosecond: true,
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CaptureError> {
        if self.remaining() < n {
            return Err(CaptureError::TruncatedRecord);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CaptureError> {
        let b = self.take(4)?;
        let arr = [b[0], b[1], b[2], b[3]];
        Ok(if self.big_endian {
            u32::from_be_bytes(arr)
        } else {
            u32::from_le_bytes(arr)
        })
    }
}

pub(super) fn read(bytes: &[u8]) -> Result<Vec<RawPacket>, CaptureError> {
    if bytes.len() < 24 {
        return Err(CaptureError::UnsupportedMagic);
    }
    let le_magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be_magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (big_endian, nanosecond) = match (le_magic, be_magic) {
        (MAGIC_MICRO, _) => (false, false),
        (MAGIC_NANO, _) => (false, true),
        (_, MAGIC_MICRO) => (true, false),
        (_, MAGIC_NANO) => (true, true),
        _ => return Err(CaptureError::UnsupportedMagic),
    };
    let mut cur = Cursor {
        data: bytes,
        pos: 4,
        big_endian,
    };
    cur.take(2)?; // version major
    cur.take(2)?; // version minor
    cur.take(8)?; // thiszone + sigfigs
    cur.u32()?; // snaplen
    let link_type = LinkType::from_dlt(cur.u32()?)?;

    let mut packets = Vec::new();
    while cur.remaining() > 0 {
        if cur.remaining() < 16 {
            return Err(CaptureError::TruncatedRecord);
        }
        let ts_sec = cur.u32()? as u64;
        let ts_frac = cur.u32()?;
        let incl_len = cur.u32()? as usize;
        let orig_len = cur.u32()?;
        let data = cur.take(incl_len)?;
        let nanos = if nanosecond { ts_frac } else { ts_frac * 1000 };
        packets.push(RawPacket {
            timestamp: Timestamp::new(ts_sec, nanos),
            link_type,
            bytes: data.to_vec(),
            original_length: orig_len,
        });
    }
    Ok(packets)
}

/// Streaming classic-pcap writer.
pub struct PcapWriter<W: std::io::Write> {
    out: W,
    format: PcapFormat,
}

impl<W: std::io::Write> PcapWriter<W> {
    pub fn new(mut out: W, link_type: LinkType, format: PcapFormat) -> std::io::Result<Self> {
        let magic: u32 = if format.nanosecond { MAGIC_NANO } else { MAGIC_MICRO };
        let mut header = Vec::with_capacity(24);
        push_u32(&mut header, magic, format.big_endian);
        push_u16(&mut header, 2, format.big_endian); // version 2.4
        push_u16(&mut header, 4, format.big_endian);
        push_u32(&mut header, 0, format.big_endian); // thiszone
        push_u32(&mut header, 0, format.big_endian); // sigfigs
        push_u32(&mut header, 65535, format.big_endian); // snaplen
        push_u32(&mut header, link_type.dlt(), format.big_endian);
        out.write_all(&header)?;
        Ok(PcapWriter { out, format })
    }

    pub fn write_packet(&mut self, ts: Timestamp, bytes: &[u8], original_length: u32) -> std::io::Result<()> {
        let frac = if self.format.nanosecond {
            ts.nanos
        } else {
            ts.nanos / 1000
        };
        let mut rec = Vec::with_capacity(16 + bytes.len());
        push_u32(&mut rec, ts.secs as u32, self.format.big_endian);
        push_u32(&mut rec, frac, self.format.big_endian);
        push_u32(&mut rec, bytes.len() as u32, self.format.big_endian);
        push_u32(&mut rec, original_length, self.format.big_endian);
        self.out.write_all(&rec)?;
        self.out.write_all(bytes)
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn push_u32(buf: &mut Vec<u8>, v: u32, big_endian: bool) {
    if big_endian {
        buf.extend_from_slice(&v.to_be_bytes());
    } else {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_u16(buf: &mut Vec<u8>, v: u16, big_endian: bool) {
    if big_endian {
        buf.extend_from_slice(&v.to_be_bytes());
    } else {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}
