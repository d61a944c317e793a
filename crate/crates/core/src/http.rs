//! Shared blocking HTTP plumbing for the live clients.

use std::time::Duration;

pub(crate) const USER_AGENT: &str = concat!("xmc/", env!("CARGO_PKG_VERSION"));

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .user_agent(USER_AGENT)
        .build()
        .into()
}

/// Failure of a single HTTP exchange, classified for retry decisions.
#[derive(Debug)]
pub(crate) enum HttpFailure {
    Status(u16),
    Timeout(String),
    Other(String),
}

impl HttpFailure {
    pub(crate) fn retryable(&self) -> bool {
        match self {
            HttpFailure::Status(code) => *code == 429 || *code >= 500,
            HttpFailure::Timeout(_) => true,
            HttpFailure::Other(_) => true,
        }
    }
}

impl std::fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HttpFailure::Status(code) => write!(f, "HTTP status {code}"),
            HttpFailure::Timeout(m) => write!(f, "timed out: {m}"),
            HttpFailure::Other(m) => f.write_str(m),
        }
    }
}

impl From<ureq::Error> for HttpFailure {
    fn from(err: ureq::Error) -> Self {
        match err {
            ureq::Error::StatusCode(code) => HttpFailure::Status(code),
            ureq::Error::Timeout(t) => HttpFailure::Timeout(t.to_string()),
            other => HttpFailure::Other(other.to_string()),
        }
    }
}

/// GET `url` and read the body as UTF-8 text.
pub(crate) fn get_text(agent: &ureq::Agent, url: &str, headers: &[(&str, &str)]) -> Result<String, HttpFailure> {
    let mut req = agent.get(url);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let mut resp = req.call()?;
    Ok(resp.body_mut().read_to_string()?)
}
