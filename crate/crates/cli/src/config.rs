//! Optional TOML defaults, e.g.
//!
//! ```toml
//! threads = 4
//!
//! [search]
//! k = 1000
//! query_cut = 500
//! heap_factor = 2.5
//! mode = "approximate"
//! stage1 = "10,100"
//!
//! [index]
//! k_d = 1000
//! ```

use std::path::Path;

use lsr_core::objectives::LossConfig;
use lsr_core::synth::SynthSpec;
use serde::Deserialize;

use crate::{usage, CliResult};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub search: SearchSection,
    pub index: IndexSection,
    pub bench: BenchSection,
    pub synth: Option<SynthSpec>,
    pub loss: Option<LossConfig>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub k: Option<usize>,
    pub query_cut: Option<usize>,
    pub heap_factor: Option<f64>,
    pub mode: Option<String>,
    pub stage1: Option<String>,
    pub stage1_k: Option<usize>,
    pub stage2_k_q: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub k_d: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repetitions: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}
