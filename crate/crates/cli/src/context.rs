use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use biascorpus_core::config::KeyValueConfig;
use biascorpus_core::dataset::read_csv;
use biascorpus_core::lexicon::MatchOptions;
use biascorpus_core::manifest::{manifest_path, RunManifest};
use biascorpus_core::{jsonl, Error, LabeledInstance, Lexicon};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Cli;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    /// Operational failure outside the core error types.
    Failed {
        kind: &'static str,
        message: String,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "Usage",
            CliError::Failed { kind, .. } => kind,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn failed(kind: &'static str, message: impl Into<String>) -> Self {
        CliError::Failed {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Failed { message, .. } => write!(f, "{message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Settings shared by every command.
pub struct Ctx {
    pub config: KeyValueConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub quiet: bool,
    pub verify: bool,
    lexicon_path: Option<PathBuf>,
    suffix_expansion: bool,
    lexicon: Option<Lexicon>,
}

impl Ctx {
    pub fn new(cli: &Cli) -> CliResult<Self> {
        let mut config = match &cli.config {
            Some(p) => KeyValueConfig::load(p)?,
            None => KeyValueConfig::default(),
        };
        config.overlay_env(std::env::vars());
        let seed = match cli.seed {
            Some(s) => s,
            None => match config.get("seed") {
                Some(v) => v
                    .parse()
                    .map_err(|_| CliError::Usage(format!("config key 'seed' must be an integer, got '{v}'")))?,
                None => 0,
            },
        };
        let lexicon_path = cli.lexicon.clone().or_else(|| config.get("lexicon").map(PathBuf::from));
        let suffix_expansion =
            cli.suffix_expansion || matches!(config.get("suffix_expansion"), Some("true" | "1" | "yes"));
        Ok(Ctx {
            seed,
            out: cli.out.clone(),
            quiet: cli.quiet,
            verify: cli.verify,
            lexicon_path,
            suffix_expansion,
            lexicon: None,
            config,
        })
    }

    pub fn lexicon(&mut self) -> CliResult<&Lexicon> {
        if self.lexicon.is_none() {
            let base = match &self.lexicon_path {
                Some(p) => Lexicon::load(p)?,
                None => Lexicon::bundled(),
            };
            let lex = if self.suffix_expansion {
                base.with_match_options(MatchOptions { suffix_expansion: true })?
            } else {
                base
            };
            self.lexicon = Some(lex);
        }
        Ok(self.lexicon.as_ref().expect("set above"))
    }

    /// Lexicon provenance for manifests.
    pub fn describe_lexicon(&self, manifest: &mut RunManifest) -> CliResult<()> {
        match &self.lexicon_path {
            Some(p) => manifest.add_input(p)?,
            None => {
                manifest.set("lexicon", "bundled");
            }
        }
        manifest.set("suffix_expansion", self.suffix_expansion);
        Ok(())
    }

    pub fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            // a closed pipe (`| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout().lock(), "{}", line.as_ref());
        }
    }

    /// With `--verify`, re-hashes the inputs recorded in an existing manifest.
    pub fn check_drift(&self, manifest: &Path) -> CliResult<()> {
        if !self.verify {
            return Ok(());
        }
        if !manifest.exists() {
            log::warn!("--verify: no manifest at {}, nothing to compare", manifest.display());
            return Ok(());
        }
        RunManifest::read(manifest)?.verify_inputs()?;
        Ok(())
    }

    pub fn new_manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.seed)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    Ok(jsonl::read(path)?)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    Ok(jsonl::write(path, items)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::failed("Serialize", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::failed("Io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::failed("MalformedInput", format!("{}: {e}", path.display())))
}

/// JSONL, or CSV with text and label columns when the extension is `.csv`.
pub fn load_dataset(path: &Path, lexicon: &Lexicon) -> CliResult<Vec<LabeledInstance>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let file = std::fs::File::open(path).map_err(|e| CliError::failed("Io", format!("{}: {e}", path.display())))?;
        Ok(read_csv(file, lexicon)?)
    } else {
        read_jsonl(path)
    }
}

/// Records outputs and writes the manifest beside `primary`.
pub fn finish(mut manifest: RunManifest, primary: &Path, outputs: &[&Path]) -> CliResult<PathBuf> {
    for o in outputs {
        manifest.add_output(o)?;
    }
    let path = manifest_path(primary);
    manifest.write(&path)?;
    log::debug!("manifest written to {}", path.display());
    Ok(path)
}

pub fn parse_proportions(text: &str) -> CliResult<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--proportions expects three numbers, got '{text}'")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Usage(format!(
            "--proportions expects three numbers, got '{text}'"
        ))),
    }
}
