//! Engine configuration from `key = value` lines.
//!
//! ```text
//! taxonomy_path = data/taxonomy.tsv
//! table_path = data/sim.tsv        # optional
//! corpus_path = data/corpus.jsonl
//! default_d_max = 10
//! listen_address = 127.0.0.1:8080
//! include_drafts = false
//! ```
//!
//! Relative paths resolve against the config file's directory. Blank lines
//! and `#` comments are ignored.

use std::path::{Path, PathBuf};

use crate::error::ServiceError;

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "WNTAGS_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub taxonomy_path: PathBuf,
    /// `None` computes relatedness on the fly.
    pub table_path: Option<PathBuf>,
    pub corpus_path: PathBuf,
    pub default_d_max: u32,
    pub listen_address: String,
    pub include_drafts: bool,
}

impl EngineConfig {
    pub fn new(taxonomy_path: impl Into<PathBuf>, corpus_path: impl Into<PathBuf>) -> Self {
        EngineConfig {
            taxonomy_path: taxonomy_path.into(),
            table_path: None,
            corpus_path: corpus_path.into(),
            default_d_max: wntags_core::retrieval::DEFAULT_D_MAX,
            listen_address: "127.0.0.1:8080".to_owned(),
            include_drafts: false,
        }
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ServiceError> {
        let bad = |line: usize, msg: String| ServiceError::Config(format!("line {line}: {msg}"));
        let mut taxonomy = None;
        let mut corpus = None;
        let mut config = EngineConfig::new("", "");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| bad(n + 1, format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || base.join(value);
            match key {
                "taxonomy_path" => taxonomy = Some(path()),
                "corpus_path" => corpus = Some(path()),
                "table_path" => config.table_path = (!value.is_empty()).then(path),
                "default_d_max" => {
                    config.default_d_max = value.parse().map_err(|_| {
                        bad(n + 1, format!("default_d_max must be a nonnegative integer, found {value:?}"))
                    })?
                }
                "listen_address" => config.listen_address = value.to_owned(),
                "include_drafts" => {
                    config.include_drafts = value
                        .parse()
                        .map_err(|_| bad(n + 1, format!("include_drafts must be true or false, found {value:?}")))?
                }
                other => return Err(bad(n + 1, format!("unknown key {other:?}"))),
            }
        }
        config.taxonomy_path = taxonomy.ok_or_else(|| ServiceError::Config("taxonomy_path is required".into()))?;
        config.corpus_path = corpus.ok_or_else(|| ServiceError::Config("corpus_path is required".into()))?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", path.display())))?;
        EngineConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads the file named by `WNTAGS_CONFIG`.
    pub fn from_env() -> Result<Self, ServiceError> {
        let path =
            std::env::var_os(CONFIG_ENV).ok_or_else(|| ServiceError::Config(format!("{CONFIG_ENV} is not set")))?;
        EngineConfig::load(PathBuf::from(path))
    }

    /// Checks that configured inputs exist. The corpus file may be absent
    /// (it is created on first write) but its directory must exist.
    pub fn validate(&self) -> Result<(), ServiceError> {
        let missing =
            |what: &str, p: &Path| Err(ServiceError::Config(format!("{what} {} does not exist", p.display())));
        if !self.taxonomy_path.is_file() {
            return missing("taxonomy", &self.taxonomy_path);
        }
        if let Some(table) = &self.table_path {
            if !table.is_file() {
                return missing("similarity table", table);
            }
        }
        let dir = match self.corpus_path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        if !dir.is_dir() {
            return missing("corpus directory", dir);
        }
        Ok(())
    }
}
