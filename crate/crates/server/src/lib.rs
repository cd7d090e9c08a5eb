//! HTTP review service over an epiwatch store.
//!
//! Every route except `/health` needs `Authorization: Bearer <token>` unless
//! the service runs in open mode. GET responses carry a strong ETag and
//! answer `If-None-Match` with 304.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use epiwatch_core::clustering::{cosine, EmbeddingProvider, ThresholdRules};
use epiwatch_core::config::{Config, ConfigError};
use epiwatch_core::pipeline::{cluster_stored_day, Clock, ClusterReport};
use epiwatch_core::store::{Filter, PageRequest, ReviewRecord, SourceFlag, Store, StoreError};
use epiwatch_core::{Article, Cluster, ClusterId, Decision, MappedEvent, ReviewDecision};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Auth {
    Bearer(String),
    /// No authentication; only when configured explicitly.
    Open,
}

pub struct AppState {
    pub store: Arc<Store>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub rules: ThresholdRules,
    pub auth: Auth,
    pub page_size: usize,
    pub clock: Box<dyn Clock>,
    day_locks: Mutex<HashMap<NaiveDate, Arc<tokio::sync::Mutex<()>>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no API token: set {0} or enable api.open")]
    MissingToken(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

impl AppState {
    pub fn new(
        store: Arc<Store>,
        embedder: Arc<dyn EmbeddingProvider>,
        rules: ThresholdRules,
        auth: Auth,
        clock: Box<dyn Clock>,
    ) -> Self {
        Self {
            store,
            embedder,
            rules,
            auth,
            page_size: epiwatch_core::store::DEFAULT_PAGE_SIZE,
            clock,
            day_locks: Mutex::default(),
        }
    }

    /// State for `config`; the token is read from `api.token_env` through `env`.
    pub fn from_config(config: &Config, env: impl Fn(&str) -> Option<String>) -> Result<Self, ServeError> {
        let auth = match env(&config.api.token_env).filter(|t| !t.is_empty()) {
            Some(t) => Auth::Bearer(t),
            None if config.api.open => Auth::Open,
            None => return Err(ServeError::MissingToken(config.api.token_env.clone())),
        };
        let store = Arc::new(config.open_store()?);
        let mut state = Self::new(store, Arc::from(config.embedder()), config.rules()?, auth, config.clock());
        state.page_size = config.api.page_size;
        Ok(state)
    }

    fn day_lock(&self, day: NaiveDate) -> Arc<tokio::sync::Mutex<()>> {
        Arc::clone(self.day_locks.lock().unwrap().entry(day).or_default())
    }
}

// ------------------------------------------------------------------ errors

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existing: Option<Decision>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                existing: None,
            },
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { .. } => Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::AlreadyDecided { existing, .. } => {
                let mut err = Self::new(StatusCode::CONFLICT, "already_decided", e.to_string());
                err.body.existing = Some(existing);
                err
            }
            StoreError::InvalidDecision(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision", e.to_string()),
            StoreError::InvalidDomain(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_domain", e.to_string()),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_day(s: &str) -> ApiResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| ApiError::unprocessable(format!("bad date {s:?}, expected YYYY-MM-DD")))
}

/// JSON body with a strong ETag; 304 when the client already has it.
fn cached<T: Serialize>(headers: &HeaderMap, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("payloads serialize");
    let etag = format!("\"{}\"", &hex::encode(Sha256::digest(&body))[..32]);
    let hit = headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|t| t.trim() == etag || t.trim() == "*");
    let etag = HeaderValue::from_str(&etag).expect("hex etag");
    if hit {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response();
    }
    (
        StatusCode::OK,
        [(header::ETAG, etag), (header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        body,
    )
        .into_response()
}

// ---------------------------------------------------------------- payloads

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRef {
    pub id: String,
    pub url: String,
    pub domain: String,
    pub title: String,
}

impl From<&Article> for ArticleRef {
    fn from(a: &Article) -> Self {
        Self {
            id: a.id.to_string(),
            url: a.url.clone(),
            domain: a.domain.clone(),
            title: a.title.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: ClusterId,
    pub day: NaiveDate,
    pub member_count: usize,
    pub decision: Decision,
    pub representative: MappedEvent,
    pub article: Option<ArticleRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPage {
    pub items: Vec<ClusterSummary>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub event: MappedEvent,
    pub article: Article,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDetail {
    pub cluster: Cluster,
    /// False once a re-run of the day replaced this cluster.
    pub current: bool,
    pub decision: Decision,
    pub reviews: Vec<ReviewRecord>,
    pub members: Vec<Member>,
    /// Cosine similarity of member article texts, in member order.
    pub similarities: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    pub disease: Option<String>,
    pub state: Option<String>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct ReviewBody {
    pub decision: String,
    pub reviewer: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Deserialize)]
pub struct FlagBody {
    pub reason: String,
    #[serde(default = "anonymous")]
    pub reviewer: String,
}

#[derive(Debug, Deserialize)]
pub struct ConfirmBody {
    #[serde(default = "anonymous")]
    pub reviewer: String,
}

fn anonymous() -> String {
    "anonymous".into()
}

#[derive(Debug, Deserialize)]
pub struct StatsQuery {
    pub from: Option<String>,
    pub to: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct RunBody {
    pub date: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub date: NaiveDate,
    #[serde(flatten)]
    pub report: ClusterReport,
}

/// JSON extraction that reports malformed bodies as 422 in the error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> axum::extract::FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::unprocessable(e.body_text())),
        }
    }
}

// ---------------------------------------------------------------- handlers

async fn health() -> &'static str {
    "ok"
}

async fn list_day(
    State(st): State<Arc<AppState>>,
    Path(date): Path<String>,
    Query(q): Query<ListQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let day = parse_day(&date)?;
    let filter = Filter {
        day: Some(day),
        disease: q.disease.filter(|s| !s.is_empty()),
        state: q.state.filter(|s| !s.is_empty()),
    };
    let req = PageRequest::new(q.page.unwrap_or(1), q.page_size.unwrap_or(st.page_size));
    let page = st.store.list_clusters(&filter, req);
    let mut items = Vec::with_capacity(page.items.len());
    for c in &page.items {
        let representative = st.store.mapped_event(&c.representative_id)?;
        let article = st.store.article(&representative.raw.article_id).ok();
        items.push(ClusterSummary {
            id: c.id.clone(),
            day: c.day,
            member_count: c.member_ids.len(),
            decision: st.store.decision(&c.id),
            article: article.as_ref().map(ArticleRef::from),
            representative,
        });
    }
    Ok(cached(
        &headers,
        &ClusterPage {
            items,
            page: page.page,
            page_size: page.page_size,
            total: page.total,
        },
    ))
}

fn cluster_detail(st: &AppState, id: &ClusterId) -> ApiResult<ClusterDetail> {
    let cluster = st.store.cluster(id)?;
    let mut members = Vec::with_capacity(cluster.member_ids.len());
    for mid in &cluster.member_ids {
        let event = st.store.mapped_event(mid)?;
        let article = st.store.article(&event.raw.article_id)?;
        members.push(Member {
            flags: st.store.event_flags(mid),
            event,
            article,
        });
    }
    let vectors = members
        .iter()
        .map(|m| st.embedder.embed(m.article.english_text()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "provider", e.to_string()))?;
    let similarities = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| cosine(a, b)).collect())
        .collect();
    Ok(ClusterDetail {
        current: st.store.is_current(id),
        decision: st.store.decision(id),
        reviews: st.store.reviews(id),
        cluster,
        members,
        similarities,
    })
}

async fn get_cluster(State(st): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let detail = cluster_detail(&st, &ClusterId::from(id.as_str()))?;
    Ok(cached(&headers, &detail))
}

async fn review(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<ReviewBody>,
) -> ApiResult<Json<ReviewDecision>> {
    let id = ClusterId::from(id.as_str());
    st.store.cluster(&id)?;
    let decision: Decision = body.decision.parse().map_err(|e: String| {
        let mut err = ApiError::unprocessable(e);
        err.body.code = "invalid_decision";
        err
    })?;
    if body.reviewer.trim().is_empty() {
        return Err(ApiError::unprocessable("reviewer must not be empty"));
    }
    if !st.store.is_current(&id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "stale_cluster",
            format!("cluster {id} was replaced by a later run of its day"),
        ));
    }
    let saved = st.store.review(&ReviewDecision {
        cluster_id: id,
        decision,
        reviewer: body.reviewer,
        note: body.note,
        decided_at: st.clock.now(),
    })?;
    Ok(Json(saved))
}

async fn flag_source(
    State(st): State<Arc<AppState>>,
    Path(domain): Path<String>,
    Body(body): Body<FlagBody>,
) -> ApiResult<Json<SourceFlag>> {
    if body.reason.trim().is_empty() {
        return Err(ApiError::unprocessable("reason must not be empty"));
    }
    Ok(Json(st.store.flag_source(&domain, &body.reason, &body.reviewer, st.clock.now())?))
}

async fn confirm_source(
    State(st): State<Arc<AppState>>,
    Path(domain): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Json<SourceFlag>> {
    // the body is optional here
    let reviewer = if body.iter().all(u8::is_ascii_whitespace) {
        anonymous()
    } else {
        serde_json::from_slice::<ConfirmBody>(&body)
            .map_err(|e| ApiError::unprocessable(e.to_string()))?
            .reviewer
    };
    Ok(Json(st.store.confirm_source(&domain, &reviewer, st.clock.now())?))
}

async fn list_sources(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    cached(&headers, &st.store.source_flags())
}

async fn blocklist(State(st): State<Arc<AppState>>) -> Response {
    let text = st.store.export_blocklist(None).to_text();
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
}

async fn stats(State(st): State<Arc<AppState>>, Query(q): Query<StatsQuery>, headers: HeaderMap) -> ApiResult<Response> {
    let from = q.from.as_deref().filter(|s| !s.is_empty()).map(parse_day).transpose()?;
    let to = q.to.as_deref().filter(|s| !s.is_empty()).map(parse_day).transpose()?;
    Ok(cached(&headers, &st.store.stats(from, to)))
}

async fn run_day(State(st): State<Arc<AppState>>, Body(body): Body<RunBody>) -> ApiResult<Json<RunResponse>> {
    let day = parse_day(&body.date)?;
    let lock = st.day_lock(day);
    let _guard = lock.lock().await;
    let worker = Arc::clone(&st);
    let report = tokio::task::spawn_blocking(move || {
        cluster_stored_day(&worker.store, day, worker.embedder.as_ref(), &worker.rules)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "pipeline", e.to_string()))?;
    Ok(Json(RunResponse { date: day, report }))
}

async fn require_token(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Auth::Bearer(token) = &st.auth {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if !given.is_some_and(|g| constant_time_eq(g.as_bytes(), token.as_bytes())) {
            let mut resp = ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing or wrong bearer token").into_response();
            resp.headers_mut().insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
            return resp;
        }
    }
    next.run(req).await
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/days/{date}/clusters", get(list_day))
        .route("/clusters/{id}", get(get_cluster))
        .route("/clusters/{id}/review", post(review))
        .route("/sources", get(list_sources))
        .route("/sources/{domain}/flag", post(flag_source))
        .route("/sources/{domain}/confirm", post(confirm_source))
        .route("/blocklist", get(blocklist))
        .route("/stats", get(stats))
        .route("/pipeline/run", post(run_day))
        .route_layer(middleware::from_fn_with_state(Arc::clone(&state), require_token));
    Router::new().route("/health", get(health)).merge(api).with_state(state)
}

/// Adds a CORS layer for `origins`; no layer when the list is empty.
pub fn with_cors(router: Router, origins: &[String]) -> Router {
    if origins.is_empty() {
        return router;
    }
    let allowed: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    router.layer(
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(allowed))
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE, header::IF_NONE_MATCH])
            .expose_headers([header::ETAG]),
    )
}

/// Binds `config.api.bind` and serves until ctrl-c.
pub async fn serve(config: &Config) -> Result<(), ServeError> {
    let state = AppState::from_config(config, |k| std::env::var(k).ok())?;
    if state.auth == Auth::Open {
        tracing::warn!("serving without authentication (api.open)");
    }
    let app = with_cors(router(Arc::new(state)), &config.api.cors_allow);
    let listener = tokio::net::TcpListener::bind(&config.api.bind)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.api.bind.clone(),
            source,
        })?;
    tracing::info!(addr = %config.api.bind, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
