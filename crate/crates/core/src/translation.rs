//! Translation of relevant non-English articles into English.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Article, Language};
use crate::provider::{HttpEndpoint, ProviderError, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranslationError {
    #[error("translation provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no translation for language {0}")]
    UnsupportedLanguage(Language),
    #[error("translation rejected: {0}")]
    Rejected(String),
}

impl TranslationError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TranslationError::ProviderUnavailable(_))
    }
}

impl From<ProviderError> for TranslationError {
    fn from(e: ProviderError) -> Self {
        if e.is_retryable() {
            TranslationError::ProviderUnavailable(e.to_string())
        } else {
            TranslationError::Rejected(e.to_string())
        }
    }
}

pub trait TranslationProvider: Send + Sync {
    fn name(&self) -> &str;
    fn supports(&self, language: Language) -> bool;
    fn translate(&self, text: &str, source: Language) -> Result<String, ProviderError>;
}

/// Returns a copy of `article` with `translated_text` set.
///
/// English articles are passed through without calling the provider. The
/// source fields are never modified.
pub fn translate(
    article: &Article,
    provider: &dyn TranslationProvider,
    retry: &RetryPolicy,
) -> Result<Article, TranslationError> {
    let mut out = article.clone();
    if article.language == Language::En {
        out.translated_text = Some(article.text.clone());
        return Ok(out);
    }
    if !article.language.is_supported() || !provider.supports(article.language) {
        return Err(TranslationError::UnsupportedLanguage(article.language));
    }
    let text = retry.run(|| provider.translate(&article.text, article.language))?;
    out.translated_text = Some(text);
    Ok(out)
}

/// Endpoint speaking `{text, source_language} -> {text_en}`.
pub struct HttpTranslator {
    endpoint: HttpEndpoint,
}

impl HttpTranslator {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    text: &'a str,
    source_language: Language,
}

#[derive(Deserialize)]
struct TranslateReply {
    text_en: String,
}

impl TranslationProvider for HttpTranslator {
    fn name(&self) -> &str {
        "http-translator"
    }

    fn supports(&self, language: Language) -> bool {
        language.is_supported()
    }

    fn translate(&self, text: &str, source: Language) -> Result<String, ProviderError> {
        let reply: TranslateReply = self.endpoint.post_json(&TranslateRequest {
            text,
            source_language: source,
        })?;
        Ok(reply.text_en)
    }
}

/// Prefixes the source text with `[xx→en] `.
#[derive(Debug, Default)]
pub struct EchoTranslator;

impl TranslationProvider for EchoTranslator {
    fn name(&self) -> &str {
        "echo"
    }

    fn supports(&self, language: Language) -> bool {
        language.is_supported()
    }

    fn translate(&self, text: &str, source: Language) -> Result<String, ProviderError> {
        Ok(format!("[{}→en] {text}", source.code()))
    }
}

/// Looks translations up in a fixed table keyed by source text.
#[derive(Debug, Default, Clone)]
pub struct TableTranslator {
    table: BTreeMap<String, String>,
    languages: BTreeSet<Language>,
}

impl TableTranslator {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        Self {
            table,
            languages: Language::SUPPORTED.into_iter().collect(),
        }
    }

    /// Loads a JSON object mapping source text to English.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Rejected(format!("{}: {e}", path.display())))?;
        let table = serde_json::from_str(&raw).map_err(|e| ProviderError::Rejected(format!("{}: {e}", path.display())))?;
        Ok(Self::new(table))
    }
}

impl TranslationProvider for TableTranslator {
    fn name(&self) -> &str {
        "table"
    }

    fn supports(&self, language: Language) -> bool {
        self.languages.contains(&language)
    }

    fn translate(&self, text: &str, _source: Language) -> Result<String, ProviderError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| ProviderError::Rejected("no translation recorded for text".into()))
    }
}
