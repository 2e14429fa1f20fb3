use serde::Serialize;

pub const FILE_NAME: &str = "manifest.json";

/// Sidecar describing one run. Everything except `wall_clock_seconds` is a
/// function of the command line.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub seed: u64,
    pub trials: Option<usize>,
    pub jobs: Option<usize>,
    pub out: String,
    pub version: String,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
