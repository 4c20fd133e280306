//! Drives the `geoblock` binary over the shared simulator fixture.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

pub fn geoblock() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoblock"));
    for (key, _) in std::env::vars() {
        if key.starts_with("GEOBLOCK_") {
            cmd.env_remove(key);
        }
    }
    cmd.env("RUST_LOG", "error");
    cmd
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn geoblock")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn describe(out: &Output) -> String {
    format!(
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

/// A temp directory holding a simulator fixture, roster and URL list.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(fixture_json: &str, roster_jsonl: &str, url_list: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("fixture.json"), fixture_json).unwrap();
        fs::write(dir.path().join("roster.jsonl"), roster_jsonl).unwrap();
        fs::write(dir.path().join("urls.txt"), url_list).unwrap();
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn sim(&self) -> String {
        format!("sim:{}", self.path("fixture.json").display())
    }

    pub fn crawl(&self, vantage: &str, out: &str, runs: u32) -> Command {
        let mut cmd = geoblock();
        cmd.arg("crawl")
            .arg("--urls")
            .arg(self.path("urls.txt"))
            .arg("--vantage-file")
            .arg(self.path("roster.jsonl"))
            .args(["--vantage-id", vantage, "--runs", &runs.to_string()])
            .arg("--out")
            .arg(self.path(out))
            .arg("--transport")
            .arg(self.sim());
        cmd
    }
}

pub fn count_lines(dir: &Path) -> usize {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .map(|p| {
                    fs::read_to_string(p)
                        .unwrap_or_default()
                        .lines()
                        .filter(|l| !l.trim().is_empty())
                        .count()
                })
                .sum()
        })
        .unwrap_or(0)
}

/// Starts `cmd`, waits until at least `after` complete records exist under
/// `dir`, then kills the process with SIGKILL. Returns how many records were
/// on disk when the kill landed.
pub fn kill_midway(cmd: &mut Command, dir: &Path, after: usize, limit: Duration) -> usize {
    let mut child: Child = cmd.stdout(Stdio::null()).stderr(Stdio::null()).spawn().unwrap();
    let start = Instant::now();
    while count_lines(dir) < after {
        if let Some(status) = child.try_wait().unwrap() {
            panic!("crawl finished before it could be killed: {status}");
        }
        assert!(start.elapsed() < limit, "crawl made no progress");
        thread::sleep(Duration::from_millis(5));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    count_lines(dir)
}
