//! JSON-over-HTTP clients for the rating and reward endpoints.
//!
//! Rating: `POST {system, user}` → `{content}`.
//! Reward: `POST {question, answer}` → `{score}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{RatingEndpoint, RewardEndpoint, TransportError};

pub const RATING_URL_ENV: &str = "CURATOR_RATING_URL";
pub const REWARD_URL_ENV: &str = "CURATOR_REWARD_URL";
pub const API_KEY_ENV: &str = "CURATOR_API_KEY";

#[derive(Serialize)]
struct RatingRequest<'a> {
    system: &'a str,
    user: &'a str,
}

#[derive(Deserialize)]
struct RatingReply {
    content: String,
}

#[derive(Serialize)]
struct RewardRequest<'a> {
    question: &'a str,
    answer: &'a str,
}

#[derive(Deserialize)]
struct RewardReply {
    score: f64,
}

#[derive(Clone)]
struct JsonClient {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl JsonClient {
    fn new(url: String, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent, url, api_key }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        body: &Req,
    ) -> Result<Resp, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| TransportError(format!("{}: {e}", self.url)))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| TransportError(format!("{}: bad reply body: {e}", self.url)))
    }
}

/// Client for a chat-style grader.
#[derive(Clone)]
pub struct HttpRatingClient(JsonClient);

impl HttpRatingClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self(JsonClient::new(url.into(), api_key, timeout))
    }

    /// Reads the URL from `CURATOR_RATING_URL`, the key from `CURATOR_API_KEY`.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(RATING_URL_ENV).ok()?;
        Some(Self::new(url, std::env::var(API_KEY_ENV).ok(), timeout))
    }
}

impl RatingEndpoint for HttpRatingClient {
    fn rate(&self, system: &str, user: &str) -> Result<String, TransportError> {
        self.0
            .post::<_, RatingReply>(&RatingRequest { system, user })
            .map(|r| r.content)
    }
}

/// Client for a reward-model server.
#[derive(Clone)]
pub struct HttpRewardClient(JsonClient);

impl HttpRewardClient {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self(JsonClient::new(url.into(), api_key, timeout))
    }

    /// Reads the URL from `CURATOR_REWARD_URL`, the key from `CURATOR_API_KEY`.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(REWARD_URL_ENV).ok()?;
        Some(Self::new(url, std::env::var(API_KEY_ENV).ok(), timeout))
    }
}

impl RewardEndpoint for HttpRewardClient {
    fn reward(&self, question: &str, answer: &str) -> Result<f64, TransportError> {
        self.0
            .post::<_, RewardReply>(&RewardRequest { question, answer })
            .map(|r| r.score)
    }
}
