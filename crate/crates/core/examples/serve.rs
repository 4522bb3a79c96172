//! Risk calculator HTTP API on 127.0.0.1:8080 with the shipped model.
//!
//! cargo run --example serve
//! curl -s localhost:8080/predict -H 'content-type: application/json' -d '{"profile":"reference"}'

use rrms_prognosis::service::{serve, ServiceConfig};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let config = ServiceConfig {
        cors_origins: vec!["http://localhost:5173".into()],
        ..Default::default()
    };
    serve(&config).await?;
    Ok(())
}
