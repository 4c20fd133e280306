//! A tiny HTTP/1.1 server on loopback with one fixed behavior per path.

use std::io::{BufRead, BufReader, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use geoblock_core::fetcher::{ResolveError, Resolver};

/// Host name the stub resolver maps to loopback.
pub const CANNED_HOST: &str = "canned.test";

pub struct CannedServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    /// Request lines and headers seen, one entry per request.
    pub seen: Arc<Mutex<Vec<Vec<String>>>>,
}

impl CannedServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (stop2, seen2) = (stop.clone(), seen.clone());
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let seen = seen2.clone();
                thread::spawn(move || serve(conn, &seen));
            }
        });
        Self { addr, stop, seen }
    }

    /// URL through the stub-resolved name.
    pub fn url(&self, path: &str) -> String {
        format!("http://{CANNED_HOST}:{}{path}", self.addr.port())
    }
}

impl Drop for CannedServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn respond(conn: &mut TcpStream, status: &str, headers: &[(&str, String)], body: &str) {
    let mut out = format!(
        "HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n",
        body.len()
    );
    for (k, v) in headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    out.push_str("\r\n");
    out.push_str(body);
    let _ = conn.write_all(out.as_bytes());
}

fn serve(mut conn: TcpStream, seen: &Mutex<Vec<Vec<String>>>) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        lines.push(line);
    }
    let path = lines
        .first()
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or("/")
        .to_string();
    let has_cookie = lines
        .iter()
        .any(|l| l.to_ascii_lowercase().starts_with("cookie:") && l.contains("session=abc"));
    seen.lock().unwrap().push(lines);
    match path.as_str() {
        "/ok" => respond(&mut conn, "200 OK", &[], "<html><body>hello</body></html>"),
        "/forbidden" => respond(&mut conn, "403 Forbidden", &[], "forbidden"),
        "/missing" => respond(&mut conn, "404 Not Found", &[], "missing"),
        "/unavailable" => respond(&mut conn, "503 Service Unavailable", &[], "busy"),
        "/error" => respond(&mut conn, "500 Internal Server Error", &[], "oops"),
        "/geo" => respond(
            &mut conn,
            "200 OK",
            &[],
            "<html><body><h1>This content is not available in your country</h1></body></html>",
        ),
        "/loop" => respond(&mut conn, "301 Moved Permanently", &[("Location", "/loop".into())], ""),
        "/hop" => respond(&mut conn, "302 Found", &[("Location", "/ok".into())], ""),
        "/set" => respond(
            &mut conn,
            "302 Found",
            &[
                ("Location", "/check".into()),
                ("Set-Cookie", "session=abc; Path=/".into()),
            ],
            "",
        ),
        "/check" if has_cookie => respond(&mut conn, "200 OK", &[], "welcome back"),
        "/check" => respond(&mut conn, "403 Forbidden", &[], "no cookie"),
        "/stall" => thread::sleep(Duration::from_secs(120)),
        "/garbage" => {
            let _ = conn.write_all(b"\x00\x01\x02 definitely not http\r\n\r\n");
        }
        _ => respond(&mut conn, "404 Not Found", &[], ""),
    }
}

/// A loopback port with nothing listening on it.
pub fn refused_port() -> u16 {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = l.local_addr().unwrap().port();
    drop(l);
    port
}

/// Maps [`CANNED_HOST`] to loopback and fails every other name.
pub struct StubResolver;

impl Resolver for StubResolver {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        if host == CANNED_HOST {
            Ok(vec![IpAddr::V4(Ipv4Addr::LOCALHOST)])
        } else {
            Err(ResolveError {
                host: host.into(),
                reason: "NXDOMAIN".into(),
            })
        }
    }
}
