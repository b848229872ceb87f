use std::path::PathBuf;
use std::time::Duration;

use biascorpus_core::classifiers::{
    BatchOptions, ChatCompletionClient, ChatConfig, Classifier, PromptTemplate, RemoteAdapter, RuleBaseline,
    SubprocessAdapter, DEFAULT_THRESHOLD,
};
use biascorpus_core::Lexicon;
use clap::Args;

use crate::context::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct AdapterArgs {
    /// `rule`, `subprocess:<program>`, `remote:<base-url>` or `chat:<completions-url>`.
    #[arg(long, default_value = "rule")]
    pub adapter: String,
    /// Argument passed to a subprocess adapter (repeatable).
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    pub adapter_args: Vec<String>,
    /// Model id recorded on predictions.
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 32)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 4)]
    pub in_flight: usize,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Model name sent to a chat endpoint.
    #[arg(long)]
    pub chat_model: Option<String>,
    /// Environment variable holding the chat endpoint token.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Prompt template file with one [item] placeholder.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// Bundled prompt language when no template file is given.
    #[arg(long, default_value = "nl")]
    pub language: String,
}

impl AdapterArgs {
    pub fn batch_options(&self) -> CliResult<BatchOptions> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Usage(format!(
                "--threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(BatchOptions {
            threshold: self.threshold,
            chunk_size: self.chunk_size.max(1),
            max_in_flight: self.in_flight.max(1),
            retries: self.retries,
        })
    }

    fn template(&self) -> CliResult<PromptTemplate> {
        match &self.prompt_file {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::failed("Io", format!("{}: {e}", p.display())))?;
                Ok(PromptTemplate::new(text.trim_end_matches('\n'), self.language.clone())?)
            }
            None => match self.language.as_str() {
                "nl" => Ok(PromptTemplate::dutch()),
                "en" => Ok(PromptTemplate::english()),
                other => Err(CliError::Usage(format!("--language must be nl or en, got '{other}'"))),
            },
        }
    }

    pub fn build(&self, lexicon: &Lexicon) -> CliResult<Box<dyn Classifier>> {
        let timeout = Duration::from_secs(self.timeout_secs.max(1));
        let (kind, target) = self.adapter.split_once(':').unwrap_or((self.adapter.as_str(), ""));
        let classifier: Box<dyn Classifier> = match (kind, target) {
            ("rule", "") => Box::new(RuleBaseline::new(lexicon.clone())),
            ("subprocess", prog) if !prog.is_empty() => {
                let mut a = SubprocessAdapter::new(prog, self.adapter_args.clone()).with_timeout(timeout);
                if let Some(id) = &self.model_id {
                    a = a.with_model_id(id.clone());
                }
                Box::new(a)
            }
            ("remote", url) if !url.is_empty() => {
                let mut a = RemoteAdapter::new(url, timeout);
                if let Some(id) = &self.model_id {
                    a = a.with_model_id(id.clone());
                }
                Box::new(a)
            }
            ("chat", url) if !url.is_empty() => {
                let model = self
                    .chat_model
                    .clone()
                    .ok_or_else(|| CliError::Usage("--chat-model is required for chat adapters".into()))?;
                let mut cfg = ChatConfig::new(url, model);
                cfg.token_env = self.token_env.clone();
                cfg.timeout_secs = self.timeout_secs;
                Box::new(ChatCompletionClient::new(cfg, self.template()?))
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "--adapter must be rule, subprocess:<program>, remote:<url> or chat:<url>, got '{}'",
                    self.adapter
                )))
            }
        };
        Ok(classifier)
    }
}
