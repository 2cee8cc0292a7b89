use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use zic_core::model_io::sha256_hex;

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Provenance record written next to a command's main output as
/// `<output>.manifest`.
pub struct Manifest {
    command: String,
    config_digest: Option<String>,
    seed: Option<u64>,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<(PathBuf, String)>,
    started: u64,
}

impl Manifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_digest: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn config(&mut self, bytes: &[u8], seed: u64) {
        self.config_digest = Some(sha256_hex(bytes));
        self.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push((path.to_path_buf(), sha256_hex(bytes)));
    }

    pub fn output(&mut self, path: &Path, bytes: &[u8]) {
        self.outputs.push((path.to_path_buf(), sha256_hex(bytes)));
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        if let Some(d) = &self.config_digest {
            let _ = writeln!(s, "config_sha256 = {d}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "input = {} {h}", p.display());
        }
        for (p, h) in &self.outputs {
            let _ = writeln!(s, "output = {} {h}", p.display());
        }
        let _ = writeln!(s, "started_unix = {}", self.started);
        let _ = writeln!(s, "finished_unix = {}", unix_now());
        s
    }

    pub fn write_for(&self, output: &Path) -> std::io::Result<()> {
        std::fs::write(Self::path_for(output), self.render())
    }
}
