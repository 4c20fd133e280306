//! Raw-socket prober for live measurements (IPv4 only).
//!
//! Needs `CAP_NET_RAW` (or root). Each probe opens its own sockets and
//! filters replies by ICMP id/sequence or TCP port/sequence, so concurrent
//! traces do not see each other's replies.

use std::io::{self, Read, Write};
use std::mem::MaybeUninit;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpStream, UdpSocket};
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::packet::{self, TCP_ACK, TCP_RST, TCP_SYN};
use super::{Payload, ProbeError, ProbeReply, ProbeSpec, ProbeTransport, ReplyKind};

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, Default)]
pub struct RawProbeTransport {
    _private: (),
}

fn is_permission(err: &io::Error) -> bool {
    err.kind() == io::ErrorKind::PermissionDenied || matches!(err.raw_os_error(), Some(1) | Some(13))
}

fn raw_socket(protocol: Protocol) -> Result<Socket, ProbeError> {
    Socket::new(Domain::IPV4, Type::RAW, Some(protocol)).map_err(|e| {
        if is_permission(&e) {
            ProbeError::Permission(e.to_string())
        } else {
            ProbeError::Io(e)
        }
    })
}

fn ipv4(addr: IpAddr) -> Result<Ipv4Addr, ProbeError> {
    match addr {
        IpAddr::V4(v4) => Ok(v4),
        IpAddr::V6(_) => Err(ProbeError::Unsupported("IPv6 destinations".into())),
    }
}

/// Source address the kernel would use towards `dst`.
fn local_ip_for(dst: Ipv4Addr) -> io::Result<Ipv4Addr> {
    let sock = UdpSocket::bind("0.0.0.0:0")?;
    sock.connect((dst, 80))?;
    match sock.local_addr()?.ip() {
        IpAddr::V4(v4) => Ok(v4),
        IpAddr::V6(_) => Err(io::Error::other("unexpected IPv6 source")),
    }
}

/// Reads one datagram, or `None` when the poll interval passes.
fn recv(sock: &Socket, buf: &mut [MaybeUninit<u8>]) -> io::Result<Option<usize>> {
    sock.set_read_timeout(Some(POLL))?;
    match sock.recv(buf) {
        Ok(n) => Ok(Some(n)),
        Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
        Err(e) => Err(e),
    }
}

fn filled(buf: &[MaybeUninit<u8>], n: usize) -> &[u8] {
    // SAFETY: the kernel initialized the first n bytes.
    unsafe { std::slice::from_raw_parts(buf.as_ptr().cast::<u8>(), n) }
}

impl RawProbeTransport {
    /// Fails with [`ProbeError::Permission`] when raw sockets are unavailable.
    pub fn new() -> Result<Self, ProbeError> {
        raw_socket(Protocol::ICMPV4)?;
        Ok(Self { _private: () })
    }

    fn icmp_probe(&self, dst: Ipv4Addr, spec: &ProbeSpec, timeout: Duration) -> Result<Option<ProbeReply>, ProbeError> {
        let sock = raw_socket(Protocol::ICMPV4)?;
        sock.set_ttl_v4(u32::from(spec.ttl))?;
        let (id, seq) = (spec.ident.flow, spec.ident.seq);
        let start = Instant::now();
        sock.send_to(
            &packet::echo_request(id, seq),
            &SockAddr::from(SocketAddr::new(dst.into(), 0)),
        )?;
        let mut buf = [MaybeUninit::<u8>::uninit(); 1500];
        while start.elapsed() < timeout {
            let Some(n) = recv(&sock, &mut buf)? else { continue };
            let Some(ip) = packet::parse_ipv4(filled(&buf, n)) else {
                continue;
            };
            let Some(icmp) = packet::parse_icmp(ip.payload) else {
                continue;
            };
            if icmp.kind == packet::ICMP_ECHO_REPLY && icmp.echo_ident() == Some((id, seq)) {
                return Ok(Some(reply(ip.src, ReplyKind::EchoReply, start)));
            }
            let Some(quoted) = icmp.quoted() else { continue };
            let matches = quoted.dst == dst
                && quoted.protocol == packet::PROTO_ICMP
                && packet::parse_icmp(quoted.payload).and_then(|q| q.echo_ident()) == Some((id, seq));
            if matches {
                return Ok(Some(reply(ip.src, ReplyKind::TtlExceeded, start)));
            }
        }
        Ok(None)
    }

    fn syn_probe(
        &self,
        dst: Ipv4Addr,
        port: u16,
        spec: &ProbeSpec,
        timeout: Duration,
    ) -> Result<Option<ProbeReply>, ProbeError> {
        let src = local_ip_for(dst)?;
        let src_port = 20_000 + (spec.ident.flow % 40_000);
        let seq = (u32::from(spec.ident.flow) << 16) | u32::from(spec.ident.seq);
        let icmp_sock = raw_socket(Protocol::ICMPV4)?;
        let tcp_sock = raw_socket(Protocol::TCP)?;
        tcp_sock.set_ttl_v4(u32::from(spec.ttl))?;
        let start = Instant::now();
        tcp_sock.send_to(
            &packet::tcp_syn(src, dst, src_port, port, seq),
            &SockAddr::from(SocketAddr::new(dst.into(), 0)),
        )?;
        let mut buf = [MaybeUninit::<u8>::uninit(); 1500];
        while start.elapsed() < timeout {
            if let Some(n) = recv(&tcp_sock, &mut buf)? {
                if let Some(ip) = packet::parse_ipv4(filled(&buf, n)) {
                    if let Some(tcp) = packet::parse_tcp(ip.payload) {
                        let ours = ip.src == dst
                            && tcp.src_port == port
                            && tcp.dst_port == src_port
                            && tcp.ack == seq.wrapping_add(1);
                        if ours && tcp.flags & TCP_RST != 0 {
                            return Ok(Some(reply(ip.src, ReplyKind::Rst, start)));
                        }
                        if ours && tcp.flags & (TCP_SYN | TCP_ACK) == TCP_SYN | TCP_ACK {
                            return Ok(Some(reply(ip.src, ReplyKind::SynAck, start)));
                        }
                    }
                }
            }
            if let Some(n) = recv(&icmp_sock, &mut buf)? {
                if let Some(src_router) = quoted_tcp_match(filled(&buf, n), dst, src_port, Some(seq)) {
                    return Ok(Some(reply(src_router, ReplyKind::TtlExceeded, start)));
                }
            }
        }
        Ok(None)
    }

    #[allow(clippy::too_many_arguments)]
    fn http_probe(
        &self,
        dst: Ipv4Addr,
        port: u16,
        host: &str,
        path: &str,
        user_agent: &str,
        spec: &ProbeSpec,
        timeout: Duration,
    ) -> Result<Option<ProbeReply>, ProbeError> {
        let icmp_sock = raw_socket(Protocol::ICMPV4)?;
        let mut stream = TcpStream::connect_timeout(&SocketAddr::new(dst.into(), port), timeout)
            .map_err(|e| ProbeError::Handshake(e.to_string()))?;
        let local_port = stream.local_addr()?.port();
        stream.set_ttl(u32::from(spec.ttl))?;
        stream.set_read_timeout(Some(POLL))?;
        let request = format!(
            "GET {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {user_agent}\r\nAccept: */*\r\nConnection: close\r\n\r\n"
        );
        let start = Instant::now();
        stream.write_all(request.as_bytes())?;
        let mut head = [0u8; 16];
        let mut buf = [MaybeUninit::<u8>::uninit(); 1500];
        while start.elapsed() < timeout {
            match stream.read(&mut head) {
                Ok(0) => return Ok(None),
                Ok(n) if head[..n].starts_with(b"HTTP/") || n < 5 && b"HTTP/".starts_with(&head[..n]) => {
                    return Ok(Some(reply(dst, ReplyKind::HttpResponse, start)));
                }
                Ok(_) => return Ok(None),
                Err(e) if e.kind() == io::ErrorKind::ConnectionReset => {
                    return Ok(Some(reply(dst, ReplyKind::Rst, start)));
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) => return Err(e.into()),
            }
            if let Some(n) = recv(&icmp_sock, &mut buf)? {
                if let Some(router) = quoted_tcp_match(filled(&buf, n), dst, local_port, None) {
                    return Ok(Some(reply(router, ReplyKind::TtlExceeded, start)));
                }
            }
        }
        Ok(None)
    }
}

/// Source of a time-exceeded message quoting our TCP segment.
fn quoted_tcp_match(datagram: &[u8], dst: Ipv4Addr, src_port: u16, seq: Option<u32>) -> Option<Ipv4Addr> {
    let ip = packet::parse_ipv4(datagram)?;
    let icmp = packet::parse_icmp(ip.payload)?;
    let quoted = icmp.quoted()?;
    if quoted.dst != dst || quoted.protocol != packet::PROTO_TCP {
        return None;
    }
    let tcp = packet::parse_tcp(quoted.payload)?;
    (tcp.src_port == src_port && seq.is_none_or(|s| s == tcp.seq)).then_some(ip.src)
}

fn reply(responder: Ipv4Addr, kind: ReplyKind, start: Instant) -> ProbeReply {
    ProbeReply {
        responder: responder.into(),
        kind,
        rtt: start.elapsed(),
    }
}

impl ProbeTransport for RawProbeTransport {
    fn probe(&self, spec: &ProbeSpec, timeout: Duration) -> Result<Option<ProbeReply>, ProbeError> {
        let dst = ipv4(spec.destination)?;
        match &spec.payload {
            Payload::EchoRequest => self.icmp_probe(dst, spec, timeout),
            Payload::Syn { port } => self.syn_probe(dst, *port, spec, timeout),
            Payload::HttpGet {
                port,
                host,
                path,
                user_agent,
            } => self.http_probe(dst, *port, host, path, user_agent, spec, timeout),
        }
    }

    fn handshake(&self, destination: IpAddr, port: u16, timeout: Duration) -> Result<(), ProbeError> {
        ipv4(destination)?;
        TcpStream::connect_timeout(&SocketAddr::new(destination, port), timeout)
            .map(drop)
            .map_err(|e| ProbeError::Handshake(e.to_string()))
    }
}
