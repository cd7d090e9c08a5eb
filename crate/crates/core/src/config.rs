//! Run configuration shared by the CLI and the API service.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::clustering::{EmbeddingProvider, HashedNgramEmbedder, HttpEmbedder, ThresholdRules, DEFAULT_DIMENSION};
use crate::extract::llm::{LlmExtractor, PromptConfig, DEFAULT_MODEL};
use crate::extract::qa_nli::{HeuristicNli, HeuristicQa, HttpNli, HttpQa, QaNliConfig, QaNliExtractor};
use crate::gazetteer::Gazetteer;
use crate::ingestion::{Blocklist, Ingestor, NgramIdentifier, PageFetcher};
use crate::mapping::{DiseaseSynonymTable, Mapper};
use crate::pipeline::{Clock, FixedClock, Pipeline, SystemClock};
use crate::provider::{ChatProvider, HttpChatProvider, HttpEndpoint, ReplayChat, RetryPolicy};
use crate::relevance::{ClassifierProvider, DiseaseLexicon, EntityGate, HttpClassifier, KeywordClassifier, DEFAULT_THRESHOLD};
use crate::store::Store;
use crate::translation::{EchoTranslator, HttpTranslator, TableTranslator, TranslationProvider};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot load {what} from {path}: {msg}")]
    Load { what: &'static str, path: PathBuf, msg: String },
}

fn load_err(what: &'static str, path: &Path) -> impl FnOnce(String) -> ConfigError {
    let path = path.to_path_buf();
    move |msg| ConfigError::Load { what, path, msg }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    #[default]
    QaNli,
    Llm,
}

impl FromStr for ExtractorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qa-nli" => Ok(Self::QaNli),
            "llm" => Ok(Self::Llm),
            other => Err(format!("unknown extractor {other:?} (expected qa-nli or llm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    /// Deterministic local providers; chat comes from a replay fixture if given.
    #[default]
    Offline,
    /// HTTP model endpoints.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub canonical_diseases: PathBuf,
    pub synonyms: PathBuf,
    pub pending_synonyms: PathBuf,
    pub lexicon: PathBuf,
    pub gazetteer: PathBuf,
    pub blocklist: Option<PathBuf>,
    pub rules: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            canonical_diseases: "data/canonical_diseases.txt".into(),
            synonyms: "data/disease_synonyms.csv".into(),
            pending_synonyms: "data/pending_synonyms.csv".into(),
            lexicon: "data/disease_lexicon.csv".into(),
            gazetteer: "data/gazetteer.csv".into(),
            blocklist: None,
            rules: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Environment variable holding the bearer token for model endpoints.
    pub token_env: String,
    pub classifier_url: Option<String>,
    pub translator_url: Option<String>,
    pub qa_url: Option<String>,
    pub nli_url: Option<String>,
    pub chat_url: Option<String>,
    pub embedding_url: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dimension: usize,
    /// Offline: JSON object of source text to English.
    pub translations: Option<PathBuf>,
    /// Offline: recorded chat responses.
    pub chat_replay: Option<PathBuf>,
    /// Directory overriding the bundled extraction prompts.
    pub prompt_dir: Option<PathBuf>,
    pub max_attempts: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            mode: ProviderMode::Offline,
            token_env: "EPIWATCH_MODEL_TOKEN".into(),
            classifier_url: None,
            translator_url: None,
            qa_url: None,
            nli_url: None,
            chat_url: None,
            embedding_url: None,
            chat_model: DEFAULT_MODEL.into(),
            embedding_model: "sentence-embedding".into(),
            embedding_dimension: DEFAULT_DIMENSION,
            translations: None,
            chat_replay: None,
            prompt_dir: None,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub extractor: ExtractorKind,
    pub relevance_threshold: f64,
    pub recency_window_hours: i64,
    /// Pins the pipeline clock; unset means wall time.
    pub now: Option<DateTime<Utc>>,
    pub qa_nli: QaNliConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::QaNli,
            relevance_threshold: DEFAULT_THRESHOLD,
            recency_window_hours: crate::ingestion::DEFAULT_WINDOW_HOURS,
            now: None,
            qa_nli: QaNliConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub bind: String,
    pub token_env: String,
    /// Serve without authentication. Must be set explicitly.
    pub open: bool,
    pub page_size: usize,
    pub cors_allow: Vec<String>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            token_env: "EPIWATCH_API_TOKEN".into(),
            open: false,
            page_size: crate::store::DEFAULT_PAGE_SIZE,
            cors_allow: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_dir: PathBuf,
    pub data: DataConfig,
    pub providers: ProviderConfig,
    pub pipeline: PipelineConfig,
    pub api: ApiConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store_dir: "data/store".into(),
            data: DataConfig::default(),
            providers: ProviderConfig::default(),
            pipeline: PipelineConfig::default(),
            api: ApiConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    /// Makes every relative path relative to `base`, usually the config file's directory.
    pub fn rebase(mut self, base: &Path) -> Self {
        rebase(base, &mut self.store_dir);
        let d = &mut self.data;
        for p in [&mut d.canonical_diseases, &mut d.synonyms, &mut d.pending_synonyms, &mut d.lexicon, &mut d.gazetteer] {
            rebase(base, p);
        }
        for p in [&mut d.blocklist, &mut d.rules].into_iter().flatten() {
            rebase(base, p);
        }
        let pr = &mut self.providers;
        for p in [&mut pr.translations, &mut pr.chat_replay, &mut pr.prompt_dir].into_iter().flatten() {
            rebase(base, p);
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.pipeline.relevance_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(ConfigError::Invalid(format!("relevance_threshold {t} outside [0, 1]")));
        }
        if self.pipeline.recency_window_hours <= 0 {
            return Err(ConfigError::Invalid("recency_window_hours must be positive".into()));
        }
        if self.providers.embedding_dimension == 0 {
            return Err(ConfigError::Invalid("embedding_dimension must be positive".into()));
        }
        if self.providers.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be at least 1".into()));
        }
        if self.api.page_size == 0 {
            return Err(ConfigError::Invalid("api.page_size must be positive".into()));
        }
        if self.providers.mode == ProviderMode::Http {
            let p = &self.providers;
            for (name, v) in [
                ("classifier_url", &p.classifier_url),
                ("translator_url", &p.translator_url),
                ("embedding_url", &p.embedding_url),
            ] {
                if v.is_none() {
                    return Err(ConfigError::Invalid(format!("http mode needs providers.{name}")));
                }
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> Result<ThresholdRules, ConfigError> {
        match &self.data.rules {
            Some(p) => ThresholdRules::load(p).map_err(|e| load_err("rules", p)(e.to_string())),
            None => Ok(ThresholdRules::default()),
        }
    }

    pub fn blocklist(&self) -> Result<Blocklist, ConfigError> {
        match &self.data.blocklist {
            Some(p) => Blocklist::load(p).map_err(|e| load_err("blocklist", p)(e.to_string())),
            None => Ok(Blocklist::empty()),
        }
    }

    pub fn synonym_table(&self) -> Result<DiseaseSynonymTable, ConfigError> {
        let d = &self.data;
        let table = DiseaseSynonymTable::load(&d.canonical_diseases, &d.synonyms)
            .map_err(|e| load_err("disease tables", &d.synonyms)(e.to_string()))?;
        if d.pending_synonyms.exists() {
            let f = std::fs::File::open(&d.pending_synonyms)
                .map_err(|e| load_err("pending synonyms", &d.pending_synonyms)(e.to_string()))?;
            table
                .read_pending(f)
                .map_err(|e| load_err("pending synonyms", &d.pending_synonyms)(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn gazetteer(&self) -> Result<Gazetteer, ConfigError> {
        Gazetteer::load(&self.data.gazetteer).map_err(|e| load_err("gazetteer", &self.data.gazetteer)(e.to_string()))
    }

    pub fn open_store(&self) -> Result<Store, ConfigError> {
        Store::open_dir(&self.store_dir).map_err(|e| load_err("store", &self.store_dir)(e.to_string()))
    }

    fn endpoint(&self, url: &str) -> HttpEndpoint {
        HttpEndpoint::new(url).with_token_env(&self.providers.token_env)
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.providers.max_attempts,
            ..RetryPolicy::default()
        }
    }

    fn chat(&self) -> Result<Option<Box<dyn ChatProvider>>, ConfigError> {
        let p = &self.providers;
        match (p.mode, &p.chat_url, &p.chat_replay) {
            (ProviderMode::Http, Some(url), _) => Ok(Some(Box::new(HttpChatProvider::new(self.endpoint(url))))),
            (_, _, Some(path)) => Ok(Some(Box::new(
                ReplayChat::from_file(path).map_err(|e| load_err("chat replay", path)(e.to_string()))?,
            ))),
            _ => Ok(None),
        }
    }

    pub fn embedder(&self) -> Box<dyn EmbeddingProvider> {
        let p = &self.providers;
        match (p.mode, &p.embedding_url) {
            (ProviderMode::Http, Some(url)) => Box::new(HttpEmbedder::new(
                self.endpoint(url),
                p.embedding_model.clone(),
                p.embedding_dimension,
            )),
            _ => Box::new(HashedNgramEmbedder::new(p.embedding_dimension)),
        }
    }

    pub fn clock(&self) -> Box<dyn Clock> {
        match self.pipeline.now {
            Some(t) => Box::new(FixedClock(t)),
            None => Box::new(SystemClock),
        }
    }

    /// Ingestor with the configured blocklist, clock and recency window.
    pub fn ingestor(&self, fetcher: Box<dyn PageFetcher>) -> Result<Ingestor, ConfigError> {
        Ok(Ingestor::new(self.blocklist()?, self.clock().now(), Box::new(NgramIdentifier::bundled()), fetcher)
            .with_window(chrono::Duration::hours(self.pipeline.recency_window_hours))
            .with_retry(self.retry()))
    }

    /// Assembles a pipeline for `extractor` from tables, providers and store.
    pub fn build_pipeline(&self, store: Arc<Store>, extractor: ExtractorKind) -> Result<Pipeline, ConfigError> {
        self.validate()?;
        let p = &self.providers;
        let http = p.mode == ProviderMode::Http;
        let gazetteer = self.gazetteer()?;
        let lexicon = DiseaseLexicon::load(&self.data.lexicon)
            .map_err(|e| load_err("lexicon", &self.data.lexicon)(e.to_string()))?;

        let classifier: Box<dyn ClassifierProvider> = match (http, &p.classifier_url) {
            (true, Some(url)) => Box::new(HttpClassifier::new(self.endpoint(url))),
            _ => Box::new(KeywordClassifier::default()),
        };
        let translator: Box<dyn TranslationProvider> = match (http, &p.translator_url, &p.translations) {
            (true, Some(url), _) => Box::new(HttpTranslator::new(self.endpoint(url))),
            (_, _, Some(path)) => {
                Box::new(TableTranslator::load(path).map_err(|e| load_err("translations", path)(e.to_string()))?)
            }
            _ => Box::new(EchoTranslator),
        };

        let mut qa_nli = None;
        let mut llm = None;
        match extractor {
            ExtractorKind::QaNli => {
                let ex = match (http, &p.qa_url, &p.nli_url) {
                    (true, Some(q), Some(n)) => {
                        QaNliExtractor::new(Box::new(HttpQa::new(self.endpoint(q))), Box::new(HttpNli::new(self.endpoint(n))))
                    }
                    (true, _, _) => {
                        return Err(ConfigError::Invalid("qa-nli over http needs providers.qa_url and providers.nli_url".into()))
                    }
                    _ => QaNliExtractor::new(Box::<HeuristicQa>::default(), Box::<HeuristicNli>::default()),
                };
                qa_nli = Some(ex.with_config(self.pipeline.qa_nli));
            }
            ExtractorKind::Llm => {
                let chat = self.chat()?.ok_or_else(|| {
                    ConfigError::Invalid("the llm extractor needs providers.chat_url (http) or providers.chat_replay".into())
                })?;
                let mut prompts = PromptConfig::bundled();
                prompts.model = p.chat_model.clone();
                if let Some(dir) = &p.prompt_dir {
                    prompts = prompts
                        .with_prompt_dir(dir)
                        .map_err(|e| load_err("prompts", dir)(e.to_string()))?;
                }
                llm = Some(LlmExtractor::new(chat, prompts).with_retry(self.retry()));
            }
        }

        let gazetteer = Arc::new(gazetteer);
        let mut mapper = Mapper::new(self.synonym_table()?, gazetteer.clone());
        if let Some(chat) = self.chat()? {
            mapper = mapper.with_chat(chat);
        }
        Ok(Pipeline {
            store,
            classifier,
            relevance_threshold: self.pipeline.relevance_threshold,
            translator,
            gate: EntityGate::new(lexicon, (*gazetteer).clone()),
            qa_nli,
            llm,
            mapper,
            embedder: self.embedder(),
            rules: self.rules()?,
            clock: self.clock(),
            retry: self.retry(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_parse() {
        let c = Config::default();
        c.validate().unwrap();
        let parsed: Config = toml::from_str("store_dir = \"s\"\n[pipeline]\nextractor = \"llm\"\n").unwrap();
        assert_eq!(parsed.pipeline.extractor, ExtractorKind::Llm);
        assert!(toml::from_str::<Config>("bogus = 1\n").is_err());
        let bad = Config {
            pipeline: PipelineConfig {
                relevance_threshold: 2.0,
                ..PipelineConfig::default()
            },
            ..Config::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn rebase_only_touches_relative_paths() {
        let c = Config {
            store_dir: "/abs/store".into(),
            ..Config::default()
        }
        .rebase(Path::new("/etc/epi"));
        assert_eq!(c.store_dir, PathBuf::from("/abs/store"));
        assert_eq!(c.data.gazetteer, PathBuf::from("/etc/epi/data/gazetteer.csv"));
    }

    #[test]
    fn extractor_names() {
        assert_eq!("qa-nli".parse::<ExtractorKind>().unwrap(), ExtractorKind::QaNli);
        assert!("bert".parse::<ExtractorKind>().is_err());
    }
}
