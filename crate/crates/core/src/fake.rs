//! Scripted and in-memory providers for tests and offline runs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::extract::qa_nli::{NliProvider, QaAnswer, QaProvider};
use crate::ingestion::PageFetcher;
use crate::provider::{ChatProvider, ChatRequest, ProviderError};

type ChatFn = dyn Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync;

/// Chat provider backed by a closure. Records every request it sees.
pub struct ScriptedChat {
    script: Box<ChatFn>,
    log: Arc<Mutex<Vec<ChatRequest>>>,
}

impl ScriptedChat {
    pub fn new(script: impl Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            log: Arc::default(),
        }
    }

    /// Answers each request with the next entry of `replies`, repeating the last.
    pub fn sequence(replies: Vec<String>) -> Self {
        let cursor = AtomicUsize::new(0);
        Self::new(move |_| {
            let i = cursor.fetch_add(1, Ordering::SeqCst);
            replies
                .get(i.min(replies.len().saturating_sub(1)))
                .cloned()
                .ok_or_else(|| ProviderError::Rejected("empty script".into()))
        })
    }

    /// Handle on the request log that stays valid after the provider is moved.
    pub fn log(&self) -> Arc<Mutex<Vec<ChatRequest>>> {
        Arc::clone(&self.log)
    }

    pub fn calls(&self) -> usize {
        self.log.lock().expect("log poisoned").len()
    }
}

impl ChatProvider for ScriptedChat {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.log.lock().expect("log poisoned").push(request.clone());
        (self.script)(request)
    }
}

/// Serves pages from memory; unknown URLs are reported as unavailable.
#[derive(Default)]
pub struct MapFetcher {
    pages: BTreeMap<String, Vec<u8>>,
    calls: Arc<AtomicUsize>,
}

impl MapFetcher {
    pub fn with(mut self, url: &str, body: impl Into<Vec<u8>>) -> Self {
        self.pages.insert(url.to_string(), body.into());
        self
    }

    pub fn calls(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }
}

impl PageFetcher for MapFetcher {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.pages
            .get(url)
            .cloned()
            .ok_or_else(|| ProviderError::Unavailable(format!("no route to {url}")))
    }
}

type QaFn = dyn Fn(&str, &str) -> Result<Option<QaAnswer>, ProviderError> + Send + Sync;

/// QA provider backed by a closure over `(question, context)`.
pub struct ScriptedQa(Box<QaFn>);

impl ScriptedQa {
    pub fn new(f: impl Fn(&str, &str) -> Result<Option<QaAnswer>, ProviderError> + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }
}

impl QaProvider for ScriptedQa {
    fn name(&self) -> &str {
        "scripted-qa"
    }

    fn answer(&self, question: &str, context: &str) -> Result<Option<QaAnswer>, ProviderError> {
        (self.0)(question, context)
    }
}

type NliFn = dyn Fn(&str, &str) -> Result<f64, ProviderError> + Send + Sync;

/// NLI provider backed by a closure over `(premise, hypothesis)`.
pub struct ScriptedNli(Box<NliFn>);

impl ScriptedNli {
    pub fn new(f: impl Fn(&str, &str) -> Result<f64, ProviderError> + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }
}

impl NliProvider for ScriptedNli {
    fn name(&self) -> &str {
        "scripted-nli"
    }

    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        (self.0)(premise, hypothesis)
    }
}
