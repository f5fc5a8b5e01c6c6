//! Minimal dissectors for the known lower layers: Ethernet (with 802.1Q
//! tags), PPP, IPv4, IPv6 and TCP/UDP. Anything else is only usable at the
//! link layer.

use super::{HeaderSlice, LinkType, OsiLayer, RawPacket};
use crate::error::{Error, Result};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

const ETH_HEADER_LEN: usize = 14;
const IPV4_MIN_HEADER_LEN: usize = 20;
const IPV6_HEADER_LEN: usize = 40;
const UDP_HEADER_LEN: usize = 8;
const TCP_MIN_HEADER_LEN: usize = 20;

fn need(layer: &'static str, needed: usize, available: usize) -> Result<()> {
    if available < needed {
        Err(Error::Strip {
            layer,
            needed,
            available,
        })
    } else {
        Ok(())
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

/// Returns the network-layer bytes carried by the frame.
fn network_payload(p: &RawPacket) -> Result<&[u8]> {
    let b = p.bytes.as_slice();
    match p.link_type {
        LinkType::Ethernet => {
            need("ethernet", ETH_HEADER_LEN, b.len())?;
            let mut off = 12;
            let mut ethertype = be16(&b[off..]);
            while ethertype == ETHERTYPE_VLAN || ethertype == ETHERTYPE_QINQ {
                off += 4;
                need("802.1q", off + 2, b.len())?;
                ethertype = be16(&b[off..]);
            }
            match ethertype {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => Ok(&b[off + 2..]),
                other => Err(Error::Unsupported(format!("ethertype {other:#06x}"))),
            }
        }
        LinkType::Ppp => {
            // Optional HDLC address/control bytes precede the protocol field.
            let start = if b.starts_with(&[0xff, 0x03]) { 2 } else { 0 };
            need("ppp", start + 2, b.len())?;
            match be16(&b[start..]) {
                0x0021 | 0x0057 => Ok(&b[start + 2..]),
                other => Err(Error::Unsupported(format!("ppp protocol {other:#06x}"))),
            }
        }
        LinkType::Raw => match b.first().map(|v| v >> 4) {
            Some(4) | Some(6) => Ok(b),
            _ => Err(Error::Unsupported("raw frame is not IP".into())),
        },
        LinkType::Ieee80211 => Err(Error::Unsupported(
            "802.11 frames can only be analysed at the link layer".into(),
        )),
    }
}

/// Splits an IP packet into (transport protocol number, transport bytes).
/// Trailing link-layer padding beyond the IP length fields is dropped.
fn transport_payload(ip: &[u8]) -> Result<(u8, &[u8])> {
    need("ip", 1, ip.len())?;
    match ip[0] >> 4 {
        4 => {
            need("ipv4", IPV4_MIN_HEADER_LEN, ip.len())?;
            let ihl = (ip[0] & 0x0f) as usize * 4;
            if ihl < IPV4_MIN_HEADER_LEN {
                return Err(Error::invalid(format!("ipv4 IHL of {ihl} bytes")));
            }
            need("ipv4", ihl, ip.len())?;
            let total = be16(&ip[2..]) as usize;
            let end = if total >= ihl && total <= ip.len() {
                total
            } else {
                ip.len()
            };
            Ok((ip[9], &ip[ihl..end]))
        }
        6 => {
            need("ipv6", IPV6_HEADER_LEN, ip.len())?;
            let payload_len = be16(&ip[4..]) as usize;
            let end = if payload_len > 0 && IPV6_HEADER_LEN + payload_len <= ip.len() {
                IPV6_HEADER_LEN + payload_len
            } else {
                ip.len()
            };
            let mut next = ip[6];
            let mut off = IPV6_HEADER_LEN;
            // hop-by-hop, routing, destination options
            while matches!(next, 0 | 43 | 60) {
                need("ipv6 extension", off + 2, end)?;
                let len = (ip[off + 1] as usize + 1) * 8;
                need("ipv6 extension", off + len, end)?;
                next = ip[off];
                off += len;
            }
            Ok((next, &ip[off..end]))
        }
        v => Err(Error::Unsupported(format!("ip version {v}"))),
    }
}

fn application_payload(proto: u8, seg: &[u8]) -> Result<&[u8]> {
    match proto {
        IPPROTO_TCP => {
            need("tcp", TCP_MIN_HEADER_LEN, seg.len())?;
            let off = (seg[12] >> 4) as usize * 4;
            if off < TCP_MIN_HEADER_LEN {
                return Err(Error::invalid(format!("tcp data offset of {off} bytes")));
            }
            need("tcp", off, seg.len())?;
            Ok(&seg[off..])
        }
        IPPROTO_UDP => {
            need("udp", UDP_HEADER_LEN, seg.len())?;
            Ok(&seg[UDP_HEADER_LEN..])
        }
        other => Err(Error::Unsupported(format!(
            "ip protocol {other} carries no application layer"
        ))),
    }
}

/// Removes every header below `target` and returns the bytes starting at the
/// first byte of the target layer.
pub fn strip_lower_layers(p: &RawPacket, target: OsiLayer) -> Result<Vec<u8>> {
    if target == OsiLayer::Link {
        return Ok(p.bytes.clone());
    }
    let net = network_payload(p)?;
    let (proto, seg) = transport_payload(net)?;
    match target {
        OsiLayer::Transport => Ok(seg.to_vec()),
        OsiLayer::Application => application_payload(proto, seg).map(<[u8]>::to_vec),
        OsiLayer::Link => unreachable!(),
    }
}

/// Cuts the candidate unknown-protocol header out of a stripped payload.
/// Application-layer payloads are returned whole.
pub fn extract_header(
    payload: &[u8],
    header_len: usize,
    layer: OsiLayer,
    origin: usize,
) -> Result<HeaderSlice> {
    if payload.is_empty() {
        return Err(Error::invalid(format!("packet {origin} has an empty payload")));
    }
    let bytes = match layer {
        OsiLayer::Application => payload.to_vec(),
        OsiLayer::Link | OsiLayer::Transport => {
            if header_len == 0 {
                return Err(Error::invalid("header length must be at least 1"));
            }
            payload[..header_len.min(payload.len())].to_vec()
        }
    };
    Ok(HeaderSlice {
        declared_len: if layer == OsiLayer::Application {
            payload.len()
        } else {
            header_len
        },
        bytes,
        origin,
    })
}
