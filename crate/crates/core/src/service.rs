//! HTTP risk service over a read-only [`PooledModel`].
//!
//! | route | body | reply |
//! |---|---|---|
//! | `GET /health` | | `{status, model_version}` |
//! | `GET /model` | | the model artifact |
//! | `POST /predict` | `{profile}` | `{risk, linear_predictor, contributions, warnings}` |
//! | `POST /recommend` | `{profile, threshold}` | `{risk, threshold, recommendation}` |
//! | `POST /dca` | `{rows: [{predicted, outcome}], grid?}` | decision curve |
//!
//! Errors are `{error, fields?}`: 422 for invalid input, 503 when no model is loaded.
//! The model is loaded once at startup; there is no reload endpoint.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::cohort::{Covariates, Gender};
use crate::dca::{decision_curve, GridSpec};
use crate::pooling::PooledModel;
use crate::risk::{predict_risk, round_risk, Contribution, ProfileInput, ReferenceProfile};

#[derive(Debug, Clone, Default)]
pub struct AppState {
    model: Option<Arc<PooledModel>>,
}

impl AppState {
    pub fn new(model: Option<PooledModel>) -> Self {
        Self {
            model: model.map(Arc::new),
        }
    }

    /// Loads `path`, or the shipped model when no path is given. A file that
    /// cannot be loaded leaves the service without a model.
    pub fn from_path(path: Option<&std::path::Path>) -> Self {
        match path {
            None => Self::new(Some(PooledModel::published())),
            Some(p) => match PooledModel::load(p) {
                Ok(m) => Self::new(Some(m)),
                Err(e) => {
                    tracing::error!("cannot load model {}: {e}", p.display());
                    Self::new(None)
                }
            },
        }
    }

    pub fn model(&self) -> Option<&PooledModel> {
        self.model.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub fields: BTreeMap<String, String>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn invalid(error: impl Into<String>, fields: BTreeMap<String, String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: error.into(),
                fields,
            },
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self::invalid("invalid request", BTreeMap::from([(field.to_string(), message.into())]))
    }

    fn no_model() -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            body: ErrorBody {
                error: "no model loaded".into(),
                fields: BTreeMap::new(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self.body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = serde_json::to_vec(body).expect("response bodies serialize");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn parse_object(body: &Bytes) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::invalid("request body must be a JSON object", BTreeMap::new())),
        Err(e) => Err(ApiError::invalid(format!("malformed JSON: {e}"), BTreeMap::new())),
    }
}

fn require_model(state: &AppState) -> Result<&PooledModel, ApiError> {
    state.model().ok_or_else(ApiError::no_model)
}

const PROFILE_FIELDS: [&str; 9] = [
    "age",
    "disease_duration",
    "edss",
    "gd_lesions",
    "prior_relapses",
    "months_since_last_relapse",
    "treatment_naive",
    "gender",
    "on_treatment",
];

fn number(v: &Value, lo: f64, hi: f64) -> Result<f64, String> {
    let x = v.as_f64().ok_or("expected a number")?;
    if x.is_finite() && x >= lo && x <= hi {
        Ok(x)
    } else if hi.is_infinite() {
        Err(format!("must be at least {lo}"))
    } else {
        Err(format!("must lie in [{lo}, {hi}]"))
    }
}

fn count(v: &Value) -> Result<u32, String> {
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| "expected a non-negative integer".to_string())
}

fn flag(v: &Value) -> Result<bool, String> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        _ => Err("expected 0 or 1".into()),
    }
}

fn gender(v: &Value) -> Result<Gender, String> {
    match v.as_str() {
        Some("F") => Ok(Gender::Female),
        Some("M") => Ok(Gender::Male),
        _ => Err("expected \"F\" or \"M\"".into()),
    }
}

/// Parses a profile object, collecting one message per offending field.
pub fn parse_profile(value: &Value) -> Result<ProfileInput, BTreeMap<String, String>> {
    let mut errors = BTreeMap::new();
    let obj = match value {
        Value::String(s) if s == "reference" => return Ok(ProfileInput::Reference(ReferenceProfile::Reference)),
        Value::Object(o) => o,
        _ => {
            errors.insert("profile".into(), "expected an object or \"reference\"".into());
            return Err(errors);
        }
    };
    for key in obj.keys() {
        if !PROFILE_FIELDS.contains(&key.as_str()) {
            errors.insert(key.clone(), "unknown field".into());
        }
    }
    let mut take = |name: &str| -> Option<&Value> {
        let v = obj.get(name);
        if v.is_none() {
            errors.insert(name.to_string(), "required".into());
        }
        v
    };
    let raw: Vec<Option<&Value>> = PROFILE_FIELDS.iter().map(|f| take(f)).collect();
    let mut check = |i: usize, r: Result<(), String>| {
        if let Err(m) = r {
            errors.insert(PROFILE_FIELDS[i].to_string(), m);
        }
    };
    let mut out = Covariates {
        age: 0.0,
        disease_duration: 0.0,
        edss: 0.0,
        gd_lesions: 0,
        prior_relapses: 0,
        months_since_last_relapse: 0.0,
        treatment_naive: false,
        gender: Gender::Female,
        on_treatment: false,
    };
    if let Some(v) = raw[0] {
        check(0, number(v, 10.0, 100.0).map(|x| out.age = x));
    }
    if let Some(v) = raw[1] {
        check(1, number(v, 0.0, f64::INFINITY).map(|x| out.disease_duration = x));
    }
    if let Some(v) = raw[2] {
        check(2, number(v, 0.0, 10.0).map(|x| out.edss = x));
    }
    if let Some(v) = raw[3] {
        check(3, count(v).map(|x| out.gd_lesions = x));
    }
    if let Some(v) = raw[4] {
        check(4, count(v).map(|x| out.prior_relapses = x));
    }
    if let Some(v) = raw[5] {
        check(5, number(v, 0.0, f64::INFINITY).map(|x| out.months_since_last_relapse = x));
    }
    if let Some(v) = raw[6] {
        check(6, flag(v).map(|x| out.treatment_naive = x));
    }
    if let Some(v) = raw[7] {
        check(7, gender(v).map(|x| out.gender = x));
    }
    if let Some(v) = raw[8] {
        check(8, flag(v).map(|x| out.on_treatment = x));
    }
    if errors.is_empty() {
        Ok(ProfileInput::Covariates(out))
    } else {
        Err(errors)
    }
}

fn profile_field(body: &Map<String, Value>) -> Result<ProfileInput, ApiError> {
    let value = body.get("profile").ok_or_else(|| ApiError::field("profile", "required"))?;
    parse_profile(value).map_err(|fields| ApiError::invalid("invalid profile", fields))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    /// Rounded half-up to three decimals.
    pub risk: f64,
    pub linear_predictor: f64,
    pub contributions: Vec<Contribution>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recommendation {
    MoreActive,
    StandardCare,
}

/// `more-active` iff `risk >= threshold`, the same tie rule as the decision curves.
pub fn recommend(risk: f64, threshold: f64) -> Recommendation {
    if risk >= threshold {
        Recommendation::MoreActive
    } else {
        Recommendation::StandardCare
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub risk: f64,
    pub threshold: f64,
    pub recommendation: Recommendation,
}

fn predict_inner(state: &AppState, body: &Bytes) -> Result<(PredictResponse, Map<String, Value>), ApiError> {
    let model = require_model(state)?;
    let obj = parse_object(body)?;
    let profile = profile_field(&obj)?;
    let p = predict_risk(&profile, model).map_err(|e| ApiError::invalid(e.to_string(), BTreeMap::new()))?;
    Ok((
        PredictResponse {
            risk: round_risk(p.risk),
            linear_predictor: p.linear_predictor,
            contributions: p.contributions,
            warnings: p.warnings,
        },
        obj,
    ))
}

async fn health(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(m) => json_response(
            StatusCode::OK,
            &serde_json::json!({"status": "ok", "model_version": m.version}),
        ),
        None => ApiError::no_model().into_response(),
    }
}

async fn model(State(state): State<AppState>) -> Response {
    match state.model() {
        Some(m) => json_response(StatusCode::OK, m),
        None => ApiError::no_model().into_response(),
    }
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Response {
    match predict_inner(&state, &body) {
        Ok((r, _)) => json_response(StatusCode::OK, &r),
        Err(e) => e.into_response(),
    }
}

async fn recommend_handler(State(state): State<AppState>, body: Bytes) -> Response {
    let run = || -> Result<RecommendResponse, ApiError> {
        let (p, obj) = predict_inner(&state, &body)?;
        let threshold = obj
            .get("threshold")
            .ok_or_else(|| ApiError::field("threshold", "required"))?
            .as_f64()
            .filter(|a| *a > 0.0 && *a < 1.0)
            .ok_or_else(|| ApiError::field("threshold", "must lie strictly between 0 and 1"))?;
        Ok(RecommendResponse {
            risk: p.risk,
            threshold,
            recommendation: recommend(p.risk, threshold),
        })
    };
    match run() {
        Ok(r) => json_response(StatusCode::OK, &r),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct DcaRow {
    predicted: f64,
    outcome: u8,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GridInput {
    Range(GridSpec),
    Thresholds(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DcaRequest {
    rows: Vec<DcaRow>,
    grid: Option<GridInput>,
}

async fn dca(body: Bytes) -> Response {
    let run = || -> Result<crate::dca::DecisionCurve, ApiError> {
        let req: DcaRequest = serde_json::from_slice(&body)
            .map_err(|e| ApiError::invalid(format!("invalid request: {e}"), BTreeMap::new()))?;
        if let Some(i) = req.rows.iter().position(|r| r.outcome > 1) {
            return Err(ApiError::field(&format!("rows[{i}].outcome"), "expected 0 or 1"));
        }
        let grid = match req.grid {
            None => GridSpec::default().thresholds(),
            Some(GridInput::Range(g)) => g.thresholds(),
            Some(GridInput::Thresholds(t)) => Ok(t),
        }
        .map_err(|e| ApiError::field("grid", e.to_string()))?;
        let predicted: Vec<f64> = req.rows.iter().map(|r| r.predicted).collect();
        let outcomes: Vec<bool> = req.rows.iter().map(|r| r.outcome == 1).collect();
        decision_curve(&predicted, &outcomes, &grid, None).map_err(|e| ApiError::field("rows", e.to_string()))
    };
    match run() {
        Ok(c) => json_response(StatusCode::OK, &c),
        Err(e) => e.into_response(),
    }
}

/// Routes without CORS.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/predict", post(predict))
        .route("/recommend", post(recommend_handler))
        .route("/dca", post(dca))
        .with_state(state)
}

/// CORS layer for the given origins; `*` admits any origin.
pub fn cors_layer(origins: &[String]) -> Result<CorsLayer, header::InvalidHeaderValue> {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o))
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(values)
    };
    Ok(CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub model: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model: None,
            host: "127.0.0.1".into(),
            port: 8080,
            cors_origins: Vec::new(),
        }
    }
}

/// Full application: routes plus CORS when origins are configured.
pub fn app(config: &ServiceConfig) -> std::io::Result<Router> {
    let app = router(AppState::from_path(config.model.as_deref()));
    if config.cors_origins.is_empty() {
        return Ok(app);
    }
    let cors = cors_layer(&config.cors_origins)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    Ok(app.layer(cors))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> std::io::Result<()> {
    let app = app(config)?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
