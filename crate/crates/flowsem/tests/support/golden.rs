//! The golden packet corpus: frames assembled byte by byte from known field
//! values, with the classic-pcap container also written by hand. Nothing
//! here reuses the library's packet builder or pcap writer, so a shared bug
//! cannot hide.

/// One hand-assembled packet and the raw values the parser must recover.
pub struct GoldenPacket {
    pub label: &'static str,
    pub ts_secs: u32,
    pub ts_nanos: u32,
    pub bytes: Vec<u8>,
    /// (descriptor name, expected raw value) assertions.
    pub values: Vec<(String, f64)>,
}

struct FrameSpec {
    label: &'static str,
    ts_secs: u32,
    ts_nanos: u32,
    src_ip: [u8; 4],
    dst_ip: [u8; 4],
    dsfield: u8,
    ip_id: u16,
    df: bool,
    mf: bool,
    ttl: u8,
    ip_checksum: u16,
    transport: L4,
}

enum L4 {
    Tcp {
        src_port: u16,
        dst_port: u16,
        seq: u32,
        ack: u32,
        flags: u8,
        window: u16,
        checksum: u16,
        urgent: u16,
        options: Vec<u8>,
        payload_len: usize,
    },
    Udp {
        src_port: u16,
        dst_port: u16,
        checksum: u16,
        payload_len: usize,
    },
}

fn be16(v: u16) -> [u8; 2] {
    v.to_be_bytes()
}

fn be32(v: u32) -> [u8; 4] {
    v.to_be_bytes()
}

/// Assembles the Ethernet frame and the expected-values table.
fn assemble(spec: FrameSpec) -> GoldenPacket {
    let mut values: Vec<(String, f64)> = Vec::new();
    let mut want = |name: &str, v: f64| values.push((name.to_string(), v));

    let (l4_bytes, l4_proto) = match &spec.transport {
        L4::Tcp {
            src_port,
            dst_port,
            seq,
            ack,
            flags,
            window,
            checksum,
            urgent,
            options,
            payload_len,
        } => {
            assert!(options.len() % 4 == 0, "options must be padded by hand");
            let header_len = 20 + options.len();
            let mut b = Vec::new();
            b.extend_from_slice(&be16(*src_port));
            b.extend_from_slice(&be16(*dst_port));
            b.extend_from_slice(&be32(*seq));
            b.extend_from_slice(&be32(*ack));
            b.push(((header_len / 4) as u8) << 4);
            b.push(*flags);
            b.extend_from_slice(&be16(*window));
            b.extend_from_slice(&be16(*checksum));
            b.extend_from_slice(&be16(*urgent));
            b.extend_from_slice(options);
            b.extend(std::iter::repeat(0x5A).take(*payload_len));

            want("tcp.srcport_raw", *src_port as f64);
            want("tcp.dstport_raw", *dst_port as f64);
            want("tcp.seq_raw", *seq as f64);
            want("tcp.ack_raw", *ack as f64);
            want("tcp.hdr_len", header_len as f64);
            want("tcp.checksum", *checksum as f64);
            want("tcp.window_size", *window as f64);
            want("tcp.urgent_pointer", *urgent as f64);
            want("tcp.payload_len", *payload_len as f64);
            for (bit, name) in [
                (0x01u8, "tcp.flags.fin"),
                (0x02, "tcp.flags.syn"),
                (0x04, "tcp.flags.rst"),
                (0x08, "tcp.flags.psh"),
                (0x10, "tcp.flags.ack"),
                (0x20, "tcp.flags.urg"),
                (0x40, "tcp.flags.ece"),
                (0x80, "tcp.flags.cwr"),
            ] {
                want(name, (flags & bit != 0) as u8 as f64);
            }
            want("is_tcp", 1.0);
            want("is_udp", 0.0);
            want("udp.length", 0.0);
            let pure_ack = *flags == 0x10 && *payload_len == 0;
            want("pkt.is_pure_ack", pure_ack as u8 as f64);
            want("port.src_wellknown", (*src_port < 1024) as u8 as f64);
            want("port.dst_wellknown", (*dst_port < 1024) as u8 as f64);
            want(
                "port.src_registered",
                (1024..49152).contains(src_port) as u8 as f64,
            );
            want(
                "port.dst_registered",
                (1024..49152).contains(dst_port) as u8 as f64,
            );
            want("pkt.hdr_bytes_total", (20 + header_len) as f64);
            (b, 6u8)
        }
        L4::Udp {
            src_port,
            dst_port,
            checksum,
            payload_len,
        } => {
            let length = 8 + payload_len;
            let mut b = Vec::new();
            b.extend_from_slice(&be16(*src_port));
            b.extend_from_slice(&be16(*dst_port));
            b.extend_from_slice(&be16(length as u16));
            b.extend_from_slice(&be16(*checksum));
            b.extend(std::iter::repeat(0xA5).take(*payload_len));

            want("udp.length", length as f64);
            want("udp.payload_len", *payload_len as f64);
            want("udp.checksum", *checksum as f64);
            want("is_tcp", 0.0);
            want("is_udp", 1.0);
            want("tcp.hdr_len", 0.0);
            want("tcp.flags.syn", 0.0);
            want("pkt.is_pure_ack", 0.0);
            want("pkt.hdr_bytes_total", 28.0);
            (b, 17u8)
        }
    };

    let total_len = 20 + l4_bytes.len();
    let mut ip = Vec::new();
    ip.push(0x45);
    ip.push(spec.dsfield);
    ip.extend_from_slice(&be16(total_len as u16));
    ip.extend_from_slice(&be16(spec.ip_id));
    let flags_frag: u16 = ((spec.df as u16) << 14) | ((spec.mf as u16) << 13);
    ip.extend_from_slice(&be16(flags_frag));
    ip.push(spec.ttl);
    ip.push(l4_proto);
    ip.extend_from_slice(&be16(spec.ip_checksum));
    ip.extend_from_slice(&spec.src_ip);
    ip.extend_from_slice(&spec.dst_ip);
    ip.extend_from_slice(&l4_bytes);

    want("ip.hdr_len", 20.0);
    want("ip.dsfield", spec.dsfield as f64);
    want("ip.len", total_len as f64);
    want("ip.id", spec.ip_id as f64);
    want("ip.flags.df", spec.df as u8 as f64);
    want("ip.flags.mf", spec.mf as u8 as f64);
    want("ip.frag_offset", 0.0);
    want("ip.ttl", spec.ttl as f64);
    want("ip.proto", l4_proto as f64);
    want("ip.checksum", spec.ip_checksum as f64);
    want("ip.src", u32::from_be_bytes(spec.src_ip) as f64);
    want("ip.dst", u32::from_be_bytes(spec.dst_ip) as f64);
    want("direction", 1.0);
    want("frame.time_delta", 0.0);
    want("frame.time_relative", 0.0);

    let mut frame = Vec::new();
    frame.extend_from_slice(&[0x00, 0x11, 0x22, 0x33, 0x44, 0x55]);
    frame.extend_from_slice(&[0x66, 0x77, 0x88, 0x99, 0xAA, 0xBB]);
    frame.extend_from_slice(&be16(0x0800));
    frame.extend_from_slice(&ip);
    want("frame.len", frame.len() as f64);

    GoldenPacket {
        label: spec.label,
        ts_secs: spec.ts_secs,
        ts_nanos: spec.ts_nanos,
        bytes: frame,
        values,
    }
}

fn base_tcp(label: &'static str, flags: u8) -> FrameSpec {
    FrameSpec {
        label,
        ts_secs: 1_700_000_000,
        ts_nanos: 123_456_000,
        src_ip: [192, 0, 2, 10],
        dst_ip: [198, 51, 100, 20],
        dsfield: 0,
        ip_id: 0x1234,
        df: true,
        mf: false,
        ttl: 64,
        ip_checksum: 0xBEEF,
        transport: L4::Tcp {
            src_port: 51514,
            dst_port: 443,
            seq: 0x01020304,
            ack: 0x0A0B0C0D,
            flags,
            window: 64240,
            checksum: 0xCAFE,
            urgent: 0,
            options: vec![],
            payload_len: 0,
        },
    }
}

/// At least twenty packets covering every TCP flag, the tracked options,
/// first fragments, header extremes, and UDP.
pub fn corpus() -> Vec<GoldenPacket> {
    let mut out = Vec::new();

    // Every single-flag TCP packet.
    for (label, flags) in [
        ("tcp fin", 0x01u8),
        ("tcp syn", 0x02),
        ("tcp rst", 0x04),
        ("tcp psh+ack", 0x18),
        ("tcp pure ack", 0x10),
        ("tcp urg+ack", 0x30),
        ("tcp ece+cwr", 0xC0),
        ("tcp all flags", 0xFF),
    ] {
        let mut spec = base_tcp(label, flags);
        if flags == 0x30 {
            if let L4::Tcp { urgent, payload_len, .. } = &mut spec.transport {
                *urgent = 5;
                *payload_len = 9;
            }
        }
        if flags == 0x18 {
            if let L4::Tcp { payload_len, .. } = &mut spec.transport {
                *payload_len = 100;
            }
        }
        out.push(assemble(spec));
    }

    // Option coverage: MSS, window scale, SACK-permitted, timestamps,
    // combined SYN options with NOP padding, and an exotic option that only
    // bumps the count.
    let with_options = |label: &'static str, options: Vec<u8>| {
        let mut spec = base_tcp(label, 0x02);
        if let L4::Tcp { options: o, .. } = &mut spec.transport {
            *o = options;
        }
        spec
    };
    let mut p = assemble(with_options("tcp mss", vec![2, 4, 0x05, 0xB4]));
    p.values.push(("tcp.opt.mss_present".into(), 1.0));
    p.values.push(("tcp.opt.mss".into(), 1460.0));
    p.values.push(("tcp.opt.count".into(), 1.0));
    p.values.push(("tcp.opt.wscale_present".into(), 0.0));
    out.push(p);

    let mut p = assemble(with_options("tcp wscale", vec![3, 3, 7, 1]));
    p.values.push(("tcp.opt.wscale_present".into(), 1.0));
    p.values.push(("tcp.opt.wscale".into(), 7.0));
    p.values.push(("tcp.opt.count".into(), 1.0));
    out.push(p);

    let mut p = assemble(with_options("tcp sack-permitted", vec![4, 2, 1, 1]));
    p.values.push(("tcp.opt.sack_perm".into(), 1.0));
    p.values.push(("tcp.opt.count".into(), 1.0));
    out.push(p);

    let mut p = assemble(with_options(
        "tcp timestamps",
        vec![8, 10, 0xDE, 0xAD, 0xBE, 0xEF, 0x01, 0x02, 0x03, 0x04, 1, 1],
    ));
    p.values.push(("tcp.opt.ts_present".into(), 1.0));
    p.values.push(("tcp.opt.tsval".into(), 0xDEADBEEFu32 as f64));
    p.values.push(("tcp.opt.tsecr".into(), 0x01020304u32 as f64));
    p.values.push(("tcp.opt.count".into(), 1.0));
    out.push(p);

    let mut p = assemble(with_options(
        "tcp syn option suite",
        vec![
            2, 4, 0x23, 0x28, // MSS 9000
            4, 2, // SACK permitted
            8, 10, 0, 0, 0, 1, 0, 0, 0, 0, // timestamps 1, 0
            1, // NOP
            3, 3, 9, // window scale 9
        ],
    ));
    for (name, v) in [
        ("tcp.opt.mss_present", 1.0),
        ("tcp.opt.mss", 9000.0),
        ("tcp.opt.sack_perm", 1.0),
        ("tcp.opt.ts_present", 1.0),
        ("tcp.opt.tsval", 1.0),
        ("tcp.opt.tsecr", 0.0),
        ("tcp.opt.wscale_present", 1.0),
        ("tcp.opt.wscale", 9.0),
        ("tcp.opt.count", 4.0),
    ] {
        p.values.push((name.into(), v));
    }
    out.push(p);

    let mut p = assemble(with_options("tcp unknown option", vec![254, 4, 0xAA, 0xBB]));
    p.values.push(("tcp.opt.count".into(), 1.0));
    p.values.push(("tcp.opt.mss_present".into(), 0.0));
    out.push(p);

    // Header extremes and fragments.
    let mut spec = base_tcp("tcp first fragment", 0x10);
    spec.mf = true;
    spec.df = false;
    out.push(assemble(spec));

    let mut spec = base_tcp("tcp ttl 1", 0x10);
    spec.ttl = 1;
    out.push(assemble(spec));

    let mut spec = base_tcp("tcp ttl 255 dscp ef", 0x10);
    spec.ttl = 255;
    spec.dsfield = 0xB8;
    out.push(assemble(spec));

    let mut spec = base_tcp("tcp zero window", 0x10);
    if let L4::Tcp { window, .. } = &mut spec.transport {
        *window = 0;
    }
    out.push(assemble(spec));

    let mut spec = base_tcp("tcp max window wellknown src", 0x10);
    if let L4::Tcp {
        window, src_port, ..
    } = &mut spec.transport
    {
        *window = 65535;
        *src_port = 80;
    }
    out.push(assemble(spec));

    // UDP variants.
    out.push(assemble(FrameSpec {
        label: "udp basic",
        ts_secs: 1_700_000_100,
        ts_nanos: 0,
        src_ip: [10, 1, 2, 3],
        dst_ip: [10, 4, 5, 6],
        dsfield: 0x20,
        ip_id: 7,
        df: false,
        mf: false,
        ttl: 128,
        ip_checksum: 0x1111,
        transport: L4::Udp {
            src_port: 5000,
            dst_port: 4433,
            checksum: 0x9999,
            payload_len: 200,
        },
    }));
    out.push(assemble(FrameSpec {
        label: "udp empty zero checksum",
        ts_secs: 1_700_000_101,
        ts_nanos: 999_999_000,
        src_ip: [172, 16, 0, 1],
        dst_ip: [172, 16, 0, 2],
        dsfield: 0,
        ip_id: 0xFFFF,
        df: true,
        mf: false,
        ttl: 32,
        ip_checksum: 0,
        transport: L4::Udp {
            src_port: 60000,
            dst_port: 1024,
            checksum: 0,
            payload_len: 0,
        },
    }));

    assert!(out.len() >= 20);
    out
}

/// A classic pcap container written by hand (24-byte global header plus
/// 16-byte record headers), in the requested endianness and resolution.
pub fn to_pcap(corpus: &[GoldenPacket], big_endian: bool, nanosecond: bool) -> Vec<u8> {
    let w32 = |buf: &mut Vec<u8>, v: u32| {
        if big_endian {
            buf.extend_from_slice(&v.to_be_bytes());
        } else {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    let w16 = |buf: &mut Vec<u8>, v: u16| {
        if big_endian {
            buf.extend_from_slice(&v.to_be_bytes());
        } else {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    let mut out = Vec::new();
    w32(&mut out, if nanosecond { 0xA1B2_3C4D } else { 0xA1B2_C3D4 });
    w16(&mut out, 2);
    w16(&mut out, 4);
    w32(&mut out, 0);
    w32(&mut out, 0);
    w32(&mut out, 65535);
    w32(&mut out, 1); // Ethernet
    for p in corpus {
        w32(&mut out, p.ts_secs);
        w32(
            &mut out,
            if nanosecond {
                p.ts_nanos
            } else {
                p.ts_nanos / 1000
            },
        );
        w32(&mut out, p.bytes.len() as u32);
        w32(&mut out, p.bytes.len() as u32);
        out.extend_from_slice(&p.bytes);
    }
    out
}

/// A non-first fragment must be dropped, not misparsed as a transport
/// header.
pub fn non_first_fragment() -> Vec<u8> {
    let payload = vec![0x77u8; 32];
    let total_len = 20 + payload.len();
    let mut ip = Vec::new();
    ip.push(0x45);
    ip.push(0);
    ip.extend_from_slice(&be16(total_len as u16));
    ip.extend_from_slice(&be16(0x4242));
    ip.extend_from_slice(&be16(0x2000 | 185)); // MF set, offset 185 (x8 bytes)
    ip.push(64);
    ip.push(6);
    ip.extend_from_slice(&be16(0));
    ip.extend_from_slice(&[192, 0, 2, 1]);
    ip.extend_from_slice(&[192, 0, 2, 2]);
    ip.extend_from_slice(&payload);
    let mut frame = Vec::new();
    frame.extend_from_slice(&[0; 12]);
    frame.extend_from_slice(&be16(0x0800));
    frame.extend_from_slice(&ip);
    frame
}
