//! Classic libpcap reader and writer.
//!
//! Only the original file format is handled: a 24-byte global header followed
//! by records with 16-byte headers. Both byte orders are accepted, as is the
//! nanosecond-resolution magic. pcapng is not supported.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{LinkType, RawPacket};
use crate::error::{Error, Result};

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const VERSION_MAJOR: u16 = 2;
const VERSION_MINOR: u16 = 4;
const DEFAULT_SNAPLEN: u32 = 262_144;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            ByteOrder::Little => u32::from_le_bytes(a),
            ByteOrder::Big => u32::from_be_bytes(a),
        }
    }

    fn put_u32(self, out: &mut Vec<u8>, v: u32) {
        match self {
            ByteOrder::Little => out.extend_from_slice(&v.to_le_bytes()),
            ByteOrder::Big => out.extend_from_slice(&v.to_be_bytes()),
        }
    }

    fn put_u16(self, out: &mut Vec<u8>, v: u16) {
        match self {
            ByteOrder::Little => out.extend_from_slice(&v.to_le_bytes()),
            ByteOrder::Big => out.extend_from_slice(&v.to_be_bytes()),
        }
    }
}

pub fn load_pcap(path: impl AsRef<Path>) -> Result<Vec<RawPacket>> {
    let data = fs::read(path)?;
    parse_pcap(&data)
}

pub fn parse_pcap(data: &[u8]) -> Result<Vec<RawPacket>> {
    if data.len() < GLOBAL_HEADER_LEN {
        return Err(Error::Format(format!(
            "global header needs {GLOBAL_HEADER_LEN} bytes, file has {}",
            data.len()
        )));
    }
    let raw_magic = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    let (order, nanos) = match raw_magic {
        MAGIC_MICROS => (ByteOrder::Little, false),
        MAGIC_NANOS => (ByteOrder::Little, true),
        m if m == MAGIC_MICROS.swap_bytes() => (ByteOrder::Big, false),
        m if m == MAGIC_NANOS.swap_bytes() => (ByteOrder::Big, true),
        m => return Err(Error::Format(format!("bad magic number {m:#010x}"))),
    };
    let network = order.u32(&data[20..24]);
    let link_type = LinkType::from_dlt(network);

    let mut packets = Vec::new();
    let mut offset = GLOBAL_HEADER_LEN;
    let mut index = 0;
    while offset < data.len() {
        let rest = &data[offset..];
        if rest.len() < RECORD_HEADER_LEN {
            return Err(Error::TruncatedRecord {
                index,
                detail: format!("record header needs 16 bytes, {} left", rest.len()),
            });
        }
        let ts_sec = order.u32(&rest[0..4]) as u64;
        let ts_frac = order.u32(&rest[4..8]) as u64;
        let incl_len = order.u32(&rest[8..12]) as usize;
        let body = &rest[RECORD_HEADER_LEN..];
        if body.len() < incl_len {
            return Err(Error::TruncatedRecord {
                index,
                detail: format!("declared {incl_len} captured bytes, {} left", body.len()),
            });
        }
        let micros = if nanos { ts_frac / 1000 } else { ts_frac };
        packets.push(RawPacket {
            bytes: body[..incl_len].to_vec(),
            capture_ts: ts_sec * 1_000_000 + micros,
            link_type,
            truth_label: None,
        });
        offset += RECORD_HEADER_LEN + incl_len;
        index += 1;
    }
    Ok(packets)
}

/// Serializes packets as a microsecond-resolution pcap in the given byte order.
///
/// All packets must share one link type; the first packet's type is used for
/// the global header (ethernet for an empty capture).
pub fn encode_pcap(packets: &[RawPacket], order: ByteOrder) -> Result<Vec<u8>> {
    let link_type = packets.first().map_or(LinkType::Ethernet, |p| p.link_type);
    if let Some(i) = packets.iter().position(|p| p.link_type != link_type) {
        return Err(Error::invalid(format!(
            "packet {i} has link type {:?}, capture is {:?}",
            packets[i].link_type, link_type
        )));
    }
    let mut out = Vec::with_capacity(
        GLOBAL_HEADER_LEN + packets.iter().map(|p| p.bytes.len() + 16).sum::<usize>(),
    );
    order.put_u32(&mut out, MAGIC_MICROS);
    order.put_u16(&mut out, VERSION_MAJOR);
    order.put_u16(&mut out, VERSION_MINOR);
    order.put_u32(&mut out, 0); // thiszone
    order.put_u32(&mut out, 0); // sigfigs
    order.put_u32(&mut out, DEFAULT_SNAPLEN);
    order.put_u32(&mut out, link_type.dlt());
    for p in packets {
        let len = u32::try_from(p.bytes.len())
            .map_err(|_| Error::invalid("packet larger than 4 GiB"))?;
        order.put_u32(&mut out, (p.capture_ts / 1_000_000) as u32);
        order.put_u32(&mut out, (p.capture_ts % 1_000_000) as u32);
        order.put_u32(&mut out, len);
        order.put_u32(&mut out, len);
        out.extend_from_slice(&p.bytes);
    }
    Ok(out)
}

pub fn write_pcap(path: impl AsRef<Path>, packets: &[RawPacket]) -> Result<()> {
    let bytes = encode_pcap(packets, ByteOrder::Little)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
