//! Run manifests: a content hash over everything that determines a run's
//! outputs, stamped into the first line of every output file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub subcommand: String,
    /// Config path, or `preset:<name>`.
    pub config: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub hash: String,
}

impl RunManifest {
    /// Hashes the subcommand, the resolved scenario text, the seed, the
    /// normalized arguments and the bytes of every input file.
    pub fn new(subcommand: &str, config: &str, scenario_text: &str, seed: u64, args: &[String], inputs: &[Vec<u8>], output_dir: &Path) -> Self {
        let mut body = Vec::new();
        for part in [subcommand, scenario_text, &seed.to_string()] {
            body.extend_from_slice(part.as_bytes());
            body.push(0);
        }
        for a in args {
            body.extend_from_slice(a.as_bytes());
            body.push(0);
        }
        for input in inputs {
            body.extend_from_slice(&(input.len() as u64).to_le_bytes());
            body.extend_from_slice(input);
        }
        let mut h = Sha256::new();
        h.update(format!("manifest {}\0", body.len()).as_bytes());
        h.update(&body);
        RunManifest {
            subcommand: subcommand.to_string(),
            config: config.to_string(),
            seed,
            output_dir: output_dir.to_path_buf(),
            hash: hex::encode(h.finalize()),
        }
    }

    pub fn short_hash(&self) -> &str {
        &self.hash[..12]
    }

    pub fn header(&self) -> String {
        format!(
            "# spadtrap {} manifest={} seed={} config={}",
            self.subcommand,
            self.short_hash(),
            self.seed,
            self.config
        )
    }

    /// Creates `name` in the output directory with the manifest header
    /// already written.
    pub fn create(&self, name: &str) -> std::io::Result<(PathBuf, BufWriter<File>)> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", self.header())?;
        Ok((path, w))
    }
}
