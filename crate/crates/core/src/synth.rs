//! Synthetic labeled captures built from per-class header templates.
//!
//! Each class has a template made of fixed and random segments, followed by
//! an optional random tail. Templates are wrapped in Ethernet/IPv4 (and
//! UDP or TCP for application payloads) so the captures exercise the same
//! stripping path as real traffic.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture::{apportion, build, Dataset, LinkType, OsiLayer, RawPacket, IPPROTO_TCP, IPPROTO_UDP};
use crate::error::{Error, Result};
use crate::tokenize::from_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    /// Literal bytes, hex encoded.
    Fixed(String),
    /// Literal ASCII text.
    Text(String),
    /// One of several hex-encoded alternatives.
    OneOf(Vec<String>),
    /// One of several ASCII alternatives.
    TextOneOf(Vec<String>),
    /// `n` uniformly random bytes.
    Random(usize),
    /// `len` bytes from a pool of `size` random values drawn once per class
    /// and capture. Each packet belongs to one conversation, and every pool
    /// segment of that packet uses the conversation's entry, so ports,
    /// sequence prefixes and windows stay consistent within a flow.
    Pool { len: usize, size: usize },
    /// Random lowercase word with length in `[min, max]`.
    Word { min: usize, max: usize },
    /// Random decimal digits with length in `[min, max]`.
    Digits { min: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

impl LengthRange {
    pub const ZERO: LengthRange = LengthRange { min: 0, max: 0 };

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

impl Default for LengthRange {
    fn default() -> Self {
        LengthRange::ZERO
    }
}

/// How the templated bytes are carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encapsulation {
    /// The template is the whole link-layer frame.
    Frame,
    /// Ethernet + IPv4; the template is the transport-layer header.
    Ipv4,
    /// Ethernet + IPv4 + UDP; the template is the application payload.
    Udp,
    /// Ethernet + IPv4 + TCP; the template is the application payload.
    Tcp,
}

impl Encapsulation {
    pub fn layer(self) -> OsiLayer {
        match self {
            Encapsulation::Frame => OsiLayer::Link,
            Encapsulation::Ipv4 => OsiLayer::Transport,
            Encapsulation::Udp | Encapsulation::Tcp => OsiLayer::Application,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    pub support: usize,
    pub template: Vec<Segment>,
    /// IP protocol number for `ipv4` encapsulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip_protocol: Option<u8>,
    /// Destination port for `udp`/`tcp` encapsulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    /// Random bytes appended after the template.
    #[serde(default)]
    pub tail: LengthRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub encapsulation: Encapsulation,
    pub classes: Vec<ClassSpec>,
}

const WORD_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

impl Segment {
    fn validate(&self) -> Result<()> {
        match self {
            Segment::Fixed(h) => from_hex(h).map(|_| ()),
            Segment::OneOf(alts) => {
                if alts.is_empty() {
                    return Err(Error::invalid("one_of needs at least one alternative"));
                }
                alts.iter().try_for_each(|h| from_hex(h).map(|_| ()))
            }
            Segment::TextOneOf(alts) if alts.is_empty() => {
                Err(Error::invalid("text_one_of needs at least one alternative"))
            }
            Segment::Pool { size: 0, .. } => Err(Error::invalid("pool size must be positive")),
            Segment::Word { min, max } | Segment::Digits { min, max } if min > max => {
                Err(Error::invalid("segment length range has min > max"))
            }
            _ => Ok(()),
        }
    }

    fn draw_pool(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
        match self {
            Segment::Pool { len, size } => (0..*size).map(|_| (0..*len).map(|_| rng.gen()).collect()).collect(),
            _ => Vec::new(),
        }
    }

    fn render(&self, pool: &[Vec<u8>], flow: usize, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
        match self {
            Segment::Pool { .. } => out.extend_from_slice(&pool[flow % pool.len()]),
            Segment::Fixed(h) => out.extend(from_hex(h).expect("validated")),
            Segment::Text(t) => out.extend_from_slice(t.as_bytes()),
            Segment::OneOf(alts) => out.extend(from_hex(alts.choose(rng).unwrap()).expect("validated")),
            Segment::TextOneOf(alts) => out.extend_from_slice(alts.choose(rng).unwrap().as_bytes()),
            Segment::Random(n) => out.extend((0..*n).map(|_| rng.gen::<u8>())),
            Segment::Word { min, max } => {
                let n = rng.gen_range(*min..=*max);
                out.extend((0..n).map(|_| *WORD_CHARS.choose(rng).unwrap()));
            }
            Segment::Digits { min, max } => {
                let n = rng.gen_range(*min..=*max);
                out.extend((0..n).map(|_| b'0' + rng.gen_range(0..10u8)));
            }
        }
    }
}

impl SyntheticSpec {
    pub fn layer(&self) -> OsiLayer {
        self.encapsulation.layer()
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.support).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synthetic spec has no classes"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.support == 0 {
                return Err(Error::invalid(format!("class '{}' has zero support", c.label)));
            }
            if c.template.is_empty() && c.tail.max == 0 {
                return Err(Error::invalid(format!("class '{}' produces empty payloads", c.label)));
            }
            if c.tail.min > c.tail.max {
                return Err(Error::invalid(format!("class '{}' tail has min > max", c.label)));
            }
            c.template.iter().try_for_each(Segment::validate)?;
            for other in &self.classes[..i] {
                if other.label == c.label {
                    return Err(Error::invalid(format!("duplicate class label '{}'", c.label)));
                }
                if other.template == c.template && other.ip_protocol == c.ip_protocol && other.port == c.port {
                    return Err(Error::invalid(format!(
                        "classes '{}' and '{}' have identical templates",
                        other.label, c.label
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rescales supports to sum to `total` (largest remainder, at least one
    /// per class).
    pub fn scaled(mut self, total: usize) -> Result<Self> {
        let supports: Vec<usize> = self.classes.iter().map(|c| c.support).collect();
        let sum: usize = supports.iter().sum();
        let quotas = if sum <= total {
            supports
        } else {
            apportion(&supports, total)?
        };
        for (c, q) in self.classes.iter_mut().zip(quotas) {
            c.support = q;
        }
        Ok(self)
    }

    fn wrap(&self, class: &ClassSpec, body: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
        match self.encapsulation {
            Encapsulation::Frame => body.to_vec(),
            Encapsulation::Ipv4 => build::eth_ipv4(class.ip_protocol.unwrap_or(253), body),
            Encapsulation::Udp => {
                let sport = rng.gen_range(1024..=65535);
                build::eth_ipv4(IPPROTO_UDP, &build::udp(sport, class.port.unwrap_or(9999), body))
            }
            Encapsulation::Tcp => {
                let sport = rng.gen_range(1024..=65535);
                let seg = build::tcp(sport, class.port.unwrap_or(9999), rng.gen(), rng.gen(), 0x18, body);
                build::eth_ipv4(IPPROTO_TCP, &seg)
            }
        }
    }

    /// Generates the labeled packets, interleaving classes in a seeded
    /// random order.
    pub fn generate(&self, seed: u64) -> Result<Vec<RawPacket>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = self
            .classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| std::iter::repeat_n(i, c.support))
            .collect();
        order.shuffle(&mut rng);
        let pools: Vec<Vec<Vec<Vec<u8>>>> = self
            .classes
            .iter()
            .map(|c| c.template.iter().map(|seg| seg.draw_pool(&mut rng)).collect())
            .collect();
        let mut packets = Vec::with_capacity(order.len());
        for (n, ci) in order.into_iter().enumerate() {
            let class = &self.classes[ci];
            let mut body = Vec::new();
            let flows = pools[ci].iter().map(Vec::len).max().unwrap_or(0).max(1);
            let flow = rng.gen_range(0..flows);
            for (seg, pool) in class.template.iter().zip(&pools[ci]) {
                seg.render(pool, flow, &mut rng, &mut body);
            }
            let tail = class.tail.sample(&mut rng);
            body.extend((0..tail).map(|_| rng.gen::<u8>()));
            if body.is_empty() {
                body.push(rng.gen());
            }
            let bytes = self.wrap(class, &body, &mut rng);
            packets.push(RawPacket {
                bytes,
                capture_ts: 1_600_000_000_000_000 + n as u64 * 1_000,
                link_type: LinkType::Ethernet,
                truth_label: Some(class.label.clone()),
            });
        }
        Ok(packets)
    }

    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        Ok(Dataset::new(self.name.clone(), self.layer(), self.generate(seed)?))
    }
}

pub mod presets {
    //! Built-in specs shaped after common link, transport and application
    //! traffic mixes, with imbalanced supports.

    use super::*;

    fn fixed(h: &str) -> Segment {
        Segment::Fixed(h.to_string())
    }
    fn text(t: &str) -> Segment {
        Segment::Text(t.to_string())
    }
    fn one_of(alts: &[&str]) -> Segment {
        Segment::OneOf(alts.iter().map(|s| s.to_string()).collect())
    }
    fn text_one_of(alts: &[&str]) -> Segment {
        Segment::TextOneOf(alts.iter().map(|s| s.to_string()).collect())
    }
    fn pool(len: usize, size: usize) -> Segment {
        Segment::Pool { len, size }
    }
    fn word(min: usize, max: usize) -> Segment {
        Segment::Word { min, max }
    }
    fn digits(min: usize, max: usize) -> Segment {
        Segment::Digits { min, max }
    }
    fn class(label: &str, support: usize, template: Vec<Segment>) -> ClassSpec {
        ClassSpec {
            label: label.to_string(),
            support,
            template,
            ip_protocol: None,
            port: None,
            tail: LengthRange::ZERO,
        }
    }
    fn tail(mut c: ClassSpec, min: usize, max: usize) -> ClassSpec {
        c.tail = LengthRange { min, max };
        c
    }
    fn proto(mut c: ClassSpec, p: u8) -> ClassSpec {
        c.ip_protocol = Some(p);
        c
    }
    fn port(mut c: ClassSpec, p: u16) -> ClassSpec {
        c.port = Some(p);
        c
    }

    pub const NAMES: &[&str] = &[
        "link",
        "transport",
        "app_text",
        "app_binary",
        "tcp_types",
        "sctp_chunks",
        "icmp_types",
        "http_methods",
        "dns_types",
    ];

    pub fn by_name(name: &str) -> Result<SyntheticSpec> {
        match name {
            "link" => link(),
            "transport" => transport(),
            "app_text" => app_text(),
            "app_binary" => app_binary(),
            "tcp_types" => tcp_types(),
            "sctp_chunks" => sctp_chunks(),
            "icmp_types" => icmp_types(),
            "http_methods" => http_methods(),
            "dns_types" => dns_types(),
            "planted_header" => Ok(planted_header()),
            other => Err(Error::invalid(format!("unknown preset '{other}'"))),
        }
    }

    /// Link-layer mix: 186 frames, PPP 14 / LLDP 8 / 802.11 86 / Ethernet 78.
    pub fn link() -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            name: "link".into(),
            encapsulation: Encapsulation::Frame,
            classes: vec![
                tail(class("ppp", 14, vec![fixed("ff03002145000054"), Segment::Random(4), fixed("4001")]), 20, 60),
                tail(
                    class(
                        "lldp",
                        8,
                        vec![fixed("0180c200000e"), Segment::Random(6), fixed("88cc020704"), Segment::Random(6)],
                    ),
                    20,
                    40,
                ),
                tail(
                    class(
                        "ieee80211",
                        86,
                        vec![one_of(&["0841", "8842", "0842"]), fixed("3a01"), Segment::Random(18), fixed("aaaa030000000800")],
                    ),
                    20,
                    80,
                ),
                tail(
                    class("ethernet", 78, vec![Segment::Random(12), fixed("08004500"), Segment::Random(4), fixed("4000")]),
                    20,
                    80,
                ),
            ],
        })
    }

    /// Transport-layer mix of five protocols (100 / 26 / 38 / 22 / 14) from
    /// a handful of conversations each. Ports, sequence numbers, windows and
    /// tags repeat within a conversation; checksums and counters do not.
    /// TCP segments are pure ACKs; SCTP packets carry one DATA chunk.
    pub fn transport() -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            name: "transport".into(),
            encapsulation: Encapsulation::Ipv4,
            classes: vec![
                tail(
                    proto(
                        class(
                            "tcp",
                            100,
                            vec![
                                pool(4, 2),
                                pool(4, 2),
                                pool(3, 2),
                                Segment::Random(1),
                                one_of(&["5010", "5018"]),
                                pool(2, 2),
                                Segment::Random(2),
                                fixed("0000"),
                            ],
                        ),
                        6,
                    ),
                    0,
                    0,
                ),
                tail(
                    proto(
                        class("udp", 26, vec![pool(4, 3), fixed("00"), Segment::Random(3), pool(6, 3)]),
                        17,
                    ),
                    8,
                    60,
                ),
                tail(
                    proto(
                        class(
                            "sctp",
                            38,
                            vec![
                                fixed("0b590b59"),
                                pool(4, 2),
                                Segment::Random(4),
                                fixed("0003"),
                                Segment::Random(2),
                                pool(3, 2),
                                Segment::Random(1),
                                pool(2, 2),
                                Segment::Random(2),
                                fixed("00000000"),
                            ],
                        ),
                        132,
                    ),
                    4,
                    32,
                ),
                tail(
                    proto(
                        class(
                            "icmp",
                            22,
                            vec![
                                one_of(&["0800", "0000"]),
                                Segment::Random(2),
                                pool(3, 2),
                                Segment::Random(1),
                                text("abcdefghijklmnopqrstuvw"),
                            ],
                        ),
                        1,
                    ),
                    0,
                    8,
                ),
                tail(proto(class("igmp", 14, vec![fixed("1600"), pool(2, 2), fixed("e0"), pool(3, 2)]), 2), 0, 4),
            ],
        })
    }

    /// Textual application protocols over TCP/UDP.
    pub fn app_text() -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            name: "app_text".into(),
            encapsulation: Encapsulation::Tcp,
            classes: vec![
                port(
                    class(
                        "http",
                        19,
                        vec![
                            text_one_of(&["GET /", "POST /", "HEAD /"]),
                            word(3, 12),
                            text(".html HTTP/1.1\r\nHost: www."),
                            word(4, 10),
                            text(".com\r\nUser-Agent: Mozilla/5.0\r\nAccept: */*\r\n\r\n"),
                        ],
                    ),
                    80,
                ),
                port(
                    class(
                        "smtp",
                        28,
                        vec![
                            text_one_of(&["MAIL FROM:<", "RCPT TO:<"]),
                            word(3, 10),
                            text("@"),
                            word(4, 9),
                            text(".org>\r\n"),
                        ],
                    ),
                    25,
                ),
                port(
                    class(
                        "ftp",
                        20,
                        vec![
                            text_one_of(&["USER ", "PASS ", "RETR ", "STOR "]),
                            word(4, 14),
                            text("\r\n"),
                        ],
                    ),
                    21,
                ),
            ],
        })
    }

    /// Binary application protocols over UDP/TCP.
    pub fn app_binary() -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            name: "app_binary".into(),
            encapsulation: Encapsulation::Udp,
            classes: vec![
                tail(
                    port(
                        class("dns", 38, vec![Segment::Random(2), one_of(&["0100", "8180"]), fixed("0001"), one_of(&["0000", "0001"]), fixed("00000000")]),
                        53,
                    ),
                    12,
                    40,
                ),
                tail(port(class("rip", 12, vec![one_of(&["01", "02"]), fixed("0200000002000000"), Segment::Random(4), fixed("00000000")]), 520), 20, 20),
                tail(port(class("tls", 20, vec![one_of(&["16", "17"]), fixed("0303"), Segment::Random(2), one_of(&["0100", "0200"])]), 443), 30, 80),
            ],
        })
    }

    fn tcp_flags_class(label: &str, support: usize, flags: &str) -> ClassSpec {
        tail(
            proto(
                class(
                    label,
                    support,
                    vec![Segment::Random(2), fixed("0050"), Segment::Random(8), fixed(flags), one_of(&["faf0", "ffff"]), Segment::Random(2), fixed("0000")],
                ),
                6,
            ),
            0,
            24,
        )
    }

    /// TCP message types by flag combination, scaled to 200 packets.
    pub fn tcp_types() -> Result<SyntheticSpec> {
        SyntheticSpec {
            name: "tcp_types".into(),
            encapsulation: Encapsulation::Ipv4,
            classes: vec![
                tcp_flags_class("ack", 3357, "5010"),
                tcp_flags_class("psh_ack", 348, "5018"),
                tcp_flags_class("syn", 315, "a002"),
                tcp_flags_class("syn_ack", 288, "a012"),
                tcp_flags_class("rst", 2, "5004"),
                tcp_flags_class("rst_ack", 3, "5014"),
                tcp_flags_class("fin_ack", 157, "5011"),
            ],
        }
        .scaled(200)
    }

    /// SCTP chunk types, scaled to 200 packets.
    pub fn sctp_chunks() -> Result<SyntheticSpec> {
        let chunks: &[(&str, usize, &str)] = &[
            ("init", 2, "01"),
            ("init_ack", 2, "02"),
            ("cookie_echo", 2, "0a"),
            ("cookie_ack", 2, "0b"),
            ("data", 120, "00"),
            ("sack_data", 1, "0300"),
            ("sack", 108, "03"),
            ("shutdown", 3, "07"),
            ("shutdown_ack", 2, "08"),
            ("shutdown_complete", 2, "0e"),
            ("heartbeat", 73, "04"),
            ("heartbeat_ack", 63, "05"),
            ("heartbeat_ack_data", 1, "0500"),
            ("asconf", 3, "c1"),
            ("asconf_ack", 3, "80"),
        ];
        SyntheticSpec {
            name: "sctp_chunks".into(),
            encapsulation: Encapsulation::Ipv4,
            classes: chunks
                .iter()
                .map(|&(label, support, ty)| {
                    tail(
                        proto(class(label, support, vec![fixed("0b590b59"), Segment::Random(8), fixed(ty), fixed("00")]), 132),
                        4,
                        32,
                    )
                })
                .collect(),
        }
        .scaled(200)
    }

    pub fn icmp_types() -> Result<SyntheticSpec> {
        let pattern = "6162636465666768696a6b6c6d6e6f70";
        Ok(SyntheticSpec {
            name: "icmp_types".into(),
            encapsulation: Encapsulation::Ipv4,
            classes: vec![
                proto(class("reply", 23, vec![fixed("0000"), Segment::Random(2), fixed("0001"), Segment::Random(2), fixed(pattern)]), 1),
                proto(class("request", 27, vec![fixed("0800"), Segment::Random(2), fixed("0001"), Segment::Random(2), fixed(pattern)]), 1),
                tail(proto(class("ttl_exceeded", 12, vec![fixed("0b00"), Segment::Random(2), fixed("000000004500")]), 1), 20, 40),
                tail(proto(class("unreachable", 2, vec![fixed("0303"), Segment::Random(2), fixed("000000004500")]), 1), 20, 40),
            ],
        })
    }

    pub fn http_methods() -> Result<SyntheticSpec> {
        SyntheticSpec {
            name: "http_methods".into(),
            encapsulation: Encapsulation::Tcp,
            classes: vec![
                port(
                    class(
                        "ok_200",
                        146,
                        vec![
                            text("HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: "),
                            digits(2, 5),
                            text("\r\nServer: nginx\r\n\r\n<html>"),
                            word(5, 20),
                        ],
                    ),
                    80,
                ),
                port(
                    class(
                        "get",
                        537,
                        vec![text("GET /"), word(3, 15), text(" HTTP/1.1\r\nHost: "), word(4, 10), text(".net\r\nAccept: */*\r\n\r\n")],
                    ),
                    81,
                ),
                port(
                    class(
                        "post",
                        6,
                        vec![
                            text("POST /"),
                            word(3, 10),
                            text(" HTTP/1.1\r\nHost: "),
                            word(4, 10),
                            text(".net\r\nContent-Length: "),
                            digits(1, 3),
                            text("\r\n\r\nkey="),
                            word(3, 12),
                        ],
                    ),
                    82,
                ),
            ],
        }
        .scaled(200)
    }

    pub fn dns_types() -> Result<SyntheticSpec> {
        let q = |flags: &str, an: &str| {
            vec![Segment::Random(2), fixed(flags), fixed("0001"), fixed(an), fixed("00000000")]
        };
        Ok(SyntheticSpec {
            name: "dns_types".into(),
            encapsulation: Encapsulation::Udp,
            classes: vec![
                tail(port(class("query", 36, q("0100", "0000")), 53), 12, 30),
                tail(port(class("refused", 1, q("8185", "0000")), 53), 12, 30),
                tail(port(class("no_error", 23, q("8180", "0001")), 53), 28, 60),
                tail(port(class("no_such_name", 6, q("8183", "0000")), 53), 12, 30),
            ],
        })
    }

    /// Five classes distinguished only by an 8-byte header, followed by a
    /// random tail. Pairs of classes share the first four header bytes.
    pub fn planted_header() -> SyntheticSpec {
        let headers = [
            ("a", 60, "5a5a0101c3e1a0b0"),
            ("b", 50, "5a5a0101d2f0b1c1"),
            ("c", 40, "7e7e0202c3e1c2d2"),
            ("d", 30, "7e7e0202e4a2d3e3"),
            ("e", 20, "90900303f5b3e4f4"),
        ];
        SyntheticSpec {
            name: "planted_header".into(),
            encapsulation: Encapsulation::Ipv4,
            classes: headers
                .iter()
                .map(|&(label, support, h)| tail(proto(class(label, support, vec![fixed(h)]), 253), 56, 56))
                .collect(),
        }
    }
}
