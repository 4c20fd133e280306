//! Minimal IPv4 / ICMP / TCP wire helpers for the raw-socket prober.

use std::net::Ipv4Addr;

pub const ICMP_ECHO_REPLY: u8 = 0;
pub const ICMP_ECHO_REQUEST: u8 = 8;
pub const ICMP_TIME_EXCEEDED: u8 = 11;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;

pub const TCP_SYN: u8 = 0x02;
pub const TCP_RST: u8 = 0x04;
pub const TCP_ACK: u8 = 0x10;

/// RFC 1071 ones-complement sum.
pub fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum: u32 = 0;
    let mut carry: Option<u8> = None;
    for chunk in chunks {
        for &byte in *chunk {
            match carry.take() {
                Some(hi) => sum += u32::from(u16::from_be_bytes([hi, byte])),
                None => carry = Some(byte),
            }
        }
    }
    if let Some(hi) = carry {
        sum += u32::from(u16::from_be_bytes([hi, 0]));
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn echo_request(id: u16, seq: u16) -> Vec<u8> {
    let mut pkt = vec![ICMP_ECHO_REQUEST, 0, 0, 0];
    pkt.extend_from_slice(&id.to_be_bytes());
    pkt.extend_from_slice(&seq.to_be_bytes());
    pkt.extend_from_slice(b"geoblock-probe");
    let sum = checksum(&[&pkt]);
    pkt[2..4].copy_from_slice(&sum.to_be_bytes());
    pkt
}

/// A bare SYN segment (no options) with a correct pseudo-header checksum.
pub fn tcp_syn(src: Ipv4Addr, dst: Ipv4Addr, src_port: u16, dst_port: u16, seq: u32) -> Vec<u8> {
    let mut seg = vec![0u8; 20];
    seg[0..2].copy_from_slice(&src_port.to_be_bytes());
    seg[2..4].copy_from_slice(&dst_port.to_be_bytes());
    seg[4..8].copy_from_slice(&seq.to_be_bytes());
    seg[12] = 5 << 4;
    seg[13] = TCP_SYN;
    seg[14..16].copy_from_slice(&64240u16.to_be_bytes());
    let mut pseudo = Vec::with_capacity(12);
    pseudo.extend_from_slice(&src.octets());
    pseudo.extend_from_slice(&dst.octets());
    pseudo.extend_from_slice(&[0, PROTO_TCP]);
    pseudo.extend_from_slice(&(seg.len() as u16).to_be_bytes());
    let sum = checksum(&[&pseudo, &seg]);
    seg[16..18].copy_from_slice(&sum.to_be_bytes());
    seg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4View<'a> {
    pub protocol: u8,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub payload: &'a [u8],
}

pub fn parse_ipv4(buf: &[u8]) -> Option<Ipv4View<'_>> {
    if buf.len() < 20 || buf[0] >> 4 != 4 {
        return None;
    }
    let header_len = usize::from(buf[0] & 0x0f) * 4;
    if header_len < 20 || buf.len() < header_len {
        return None;
    }
    let total = usize::from(u16::from_be_bytes([buf[2], buf[3]]));
    let end = if total >= header_len && total <= buf.len() {
        total
    } else {
        buf.len()
    };
    Some(Ipv4View {
        protocol: buf[9],
        src: Ipv4Addr::new(buf[12], buf[13], buf[14], buf[15]),
        dst: Ipv4Addr::new(buf[16], buf[17], buf[18], buf[19]),
        payload: &buf[header_len..end],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IcmpView<'a> {
    pub kind: u8,
    pub code: u8,
    /// Bytes after the 4-byte type/code/checksum header.
    pub rest: &'a [u8],
}

pub fn parse_icmp(buf: &[u8]) -> Option<IcmpView<'_>> {
    if buf.len() < 8 {
        return None;
    }
    Some(IcmpView {
        kind: buf[0],
        code: buf[1],
        rest: &buf[4..],
    })
}

impl IcmpView<'_> {
    /// Identifier and sequence of an echo reply.
    pub fn echo_ident(&self) -> Option<(u16, u16)> {
        (self.kind == ICMP_ECHO_REPLY || self.kind == ICMP_ECHO_REQUEST).then(|| {
            (
                u16::from_be_bytes([self.rest[0], self.rest[1]]),
                u16::from_be_bytes([self.rest[2], self.rest[3]]),
            )
        })
    }

    /// The quoted datagram inside a time-exceeded message.
    pub fn quoted(&self) -> Option<Ipv4View<'_>> {
        (self.kind == ICMP_TIME_EXCEEDED)
            .then(|| parse_ipv4(&self.rest[4..]))
            .flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpView {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
}

/// Parses a TCP header; quoted headers may be cut to 8 bytes, in which case
/// `ack` and `flags` read as zero.
pub fn parse_tcp(buf: &[u8]) -> Option<TcpView> {
    if buf.len() < 8 {
        return None;
    }
    let full = buf.len() >= 14;
    Some(TcpView {
        src_port: u16::from_be_bytes([buf[0], buf[1]]),
        dst_port: u16::from_be_bytes([buf[2], buf[3]]),
        seq: u32::from_be_bytes([buf[4], buf[5], buf[6], buf[7]]),
        ack: if full {
            u32::from_be_bytes([buf[8], buf[9], buf[10], buf[11]])
        } else {
            0
        },
        flags: if full { buf[13] } else { 0 },
    })
}
