use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hdp_core::export::ExportError;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Output directory of one run and its `summary.json`.
pub struct Run {
    dir: PathBuf,
    command: &'static str,
    inputs: Value,
    config: Value,
    tolerances: Map<String, Value>,
    metrics: Map<String, Value>,
    outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    /// Creates the output directory. The inputs digest covers the scenario
    /// bytes and the resolved configuration.
    pub fn start(
        dir: &Path,
        command: &'static str,
        scenario: &Path,
        scenario_bytes: &[u8],
        config: &impl Serialize,
    ) -> Result<Run, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        let config = serde_json::to_value(config).map_err(|e| CliError::Config(e.to_string()))?;
        let mut hasher = Sha256::new();
        hasher.update(scenario_bytes);
        hasher.update(b"\n");
        hasher.update(config.to_string().as_bytes());
        Ok(Run {
            dir: dir.to_path_buf(),
            command,
            inputs: json!({
                "scenario": scenario.display().to_string(),
                "scenario_sha256": hex(&Sha256::digest(scenario_bytes)),
                "sha256": hex(&hasher.finalize()),
            }),
            config,
            tolerances: Map::new(),
            metrics: Map::new(),
            outputs: Vec::new(),
        })
    }

    pub fn tolerance(&mut self, key: &str, value: impl Serialize) {
        self.tolerances.insert(key.into(), json!(value));
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.into(), json!(value));
    }

    /// Writes one CSV file into the output directory.
    pub fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> Result<(), ExportError>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::output(&path, e))?;
        let mut out = BufWriter::new(file);
        write(&mut out).map_err(|e| CliError::output(&path, e))?;
        out.flush().map_err(|e| CliError::output(&path, e))?;
        log::info!("wrote {}", path.display());
        self.outputs.push(name.into());
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let path = self.dir.join("summary.json");
        let doc = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "inputs": self.inputs,
            "config": self.config,
            "tolerances": self.tolerances,
            "metrics": self.metrics,
            "outputs": self.outputs,
        });
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::output(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::output(&path, e))?;
        Ok(path)
    }
}
