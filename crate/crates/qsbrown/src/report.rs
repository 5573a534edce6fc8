//! JSON envelopes for everything the CLI prints.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

pub const TOOL: &str = "qsbrown";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance wrapper: tool version, model hash and seed travel with every
/// report so a run can be replayed.
#[derive(Debug, Serialize)]
pub struct Envelope<T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub spec_hash: Option<String>,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    pub result: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(command: &'static str, result: T) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            spec_hash: None,
            seed: None,
            timestamp_unix: None,
            result,
        }
    }

    pub fn spec_hash(mut self, hash: String) -> Self {
        self.spec_hash = Some(hash);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn stamped(mut self, with_timestamp: bool) -> Self {
        self.timestamp_unix = with_timestamp.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
