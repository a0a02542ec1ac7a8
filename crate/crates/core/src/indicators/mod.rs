//! The four per-sample quality indicators: CLIP score, response length,
//! reward-model score and GPT rating.
//!
//! CLIP and length are computed locally from features and text. Reward and
//! GPT scores come from a [`RewardEndpoint`] / [`RatingEndpoint`] (HTTP
//! clients live in [`http`]) or, in cache-only mode, from a score cache.

#[cfg(feature = "http")]
pub mod http;
mod prompt;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use prompt::{parse_gpt_reply, PromptTemplate};

use crate::corpus::{FeatureStore, ScoreCache, ScoreRecord, Triplet};
use crate::error::{Error, Result};
use crate::numerics::linalg::{dot, norm};

/// Indicator values for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorScores {
    pub clip: f64,
    pub length: u64,
    pub reward: f64,
    pub gpt: f64,
}

impl IndicatorScores {
    /// Fails with `MissingScore` naming the first absent indicator.
    pub fn from_record(id: &str, r: &ScoreRecord) -> Result<Self> {
        let missing = |indicator: Indicator| Error::MissingScore {
            id: id.to_string(),
            indicator: indicator.name().to_string(),
        };
        Ok(Self {
            clip: r.clip.ok_or_else(|| missing(Indicator::Clip))?,
            length: r.length.ok_or_else(|| missing(Indicator::Length))?,
            reward: r.reward.ok_or_else(|| missing(Indicator::Reward))?,
            gpt: r.gpt.ok_or_else(|| missing(Indicator::Gpt))?,
        })
    }

    /// `[clip, length, reward, gpt]`, the embedding slot order.
    pub fn to_array(&self) -> [f64; 4] {
        [self.clip, self.length as f64, self.reward, self.gpt]
    }

    pub fn get(&self, indicator: Indicator) -> f64 {
        self.to_array()[indicator as usize]
    }
}

impl From<IndicatorScores> for ScoreRecord {
    fn from(s: IndicatorScores) -> Self {
        ScoreRecord {
            clip: Some(s.clip),
            length: Some(s.length),
            reward: Some(s.reward),
            gpt: Some(s.gpt),
        }
    }
}

/// One indicator column; the discriminant is its embedding slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Indicator {
    Clip = 0,
    Length = 1,
    Reward = 2,
    Gpt = 3,
}

impl Indicator {
    pub const ALL: [Indicator; 4] = [Indicator::Clip, Indicator::Length, Indicator::Reward, Indicator::Gpt];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Clip => "clip",
            Indicator::Length => "length",
            Indicator::Reward => "reward",
            Indicator::Gpt => "gpt",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Indicator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown indicator {s:?}")))
    }
}

/// Cosine similarity of an image embedding and a response-text embedding,
/// clamped to [-1, 1].
pub fn clip_score(image_vec: &[f64], text_vec: &[f64]) -> Result<f64> {
    if image_vec.len() != text_vec.len() {
        return Err(Error::dims(image_vec.len(), text_vec.len(), "clip_score"));
    }
    let (a, b) = (norm(image_vec), norm(text_vec));
    if a == 0.0 || b == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot(image_vec, text_vec) / (a * b)).clamp(-1.0, 1.0))
}

/// Number of whitespace-delimited tokens.
pub fn length_score(response: &str) -> u64 {
    response.split_whitespace().count() as u64
}

/// A failed request: connection error, bad status or malformed body.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportError(pub String);

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Chat-style grader: takes a system and a user message, returns the reply text.
pub trait RatingEndpoint: Sync {
    fn rate(&self, system: &str, user: &str) -> std::result::Result<String, TransportError>;
}

/// Reward model: scores an answer to a question.
pub trait RewardEndpoint: Sync {
    fn reward(&self, question: &str, answer: &str) -> std::result::Result<f64, TransportError>;
}

/// Renders the rating prompt, sends it and parses the reply. Any failure
/// (transport, unparseable or out-of-range reply) is retried up to
/// `retries` more times.
pub fn gpt_score(
    client: &dyn RatingEndpoint,
    template: &PromptTemplate,
    triplet: &Triplet,
    retries: usize,
) -> Result<f64> {
    let (system, user) = template.render(&triplet.instruction, &triplet.response)?;
    let mut last = String::new();
    for attempt in 0..=retries {
        match client.rate(&system, &user) {
            Ok(body) => match parse_gpt_reply(&body) {
                Ok(score) => return Ok(score),
                Err(e) => last = e.to_string(),
            },
            Err(e) => last = e.to_string(),
        }
        log::debug!("gpt score attempt {} for {} failed: {last}", attempt + 1, triplet.id);
    }
    Err(Error::ScoringFailed {
        id: triplet.id.clone(),
        attempts: retries + 1,
        last,
    })
}

/// Sends `(question = instruction, answer = response)` and returns the score
/// unchanged. Non-finite scores count as failed attempts.
pub fn reward_score(client: &dyn RewardEndpoint, triplet: &Triplet, retries: usize) -> Result<f64> {
    let mut last = String::new();
    for _ in 0..=retries {
        match client.reward(&triplet.instruction, &triplet.response) {
            Ok(v) if v.is_finite() => return Ok(v),
            Ok(v) => last = format!("non-finite reward {v}"),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::ScoringFailed {
        id: triplet.id.clone(),
        attempts: retries + 1,
        last,
    })
}

/// Where model-backed scores come from.
pub enum Providers<'a> {
    /// Reward and GPT scores must already be in the cache.
    CacheOnly,
    Online {
        rating: &'a dyn RatingEndpoint,
        reward: &'a dyn RewardEndpoint,
        template: &'a PromptTemplate,
        retries: usize,
        workers: usize,
    },
}

#[derive(Clone, Copy)]
enum Job {
    Reward(usize),
    Gpt(usize),
}

/// Fills in every missing indicator for the manifest. Cached values are
/// never recomputed; CLIP and length are always computed locally.
pub fn score_corpus(
    manifest: &[Triplet],
    features: &FeatureStore,
    providers: &Providers<'_>,
    mut cache: ScoreCache,
) -> Result<ScoreCache> {
    let image = features.image();
    let text = features.text_clip();
    let mut jobs = Vec::new();
    for (i, t) in manifest.iter().enumerate() {
        let rec = cache.entry(t.id.clone()).or_default();
        if rec.clip.is_none() {
            rec.clip = Some(clip_score(image.row(i), text.row(i))?);
        }
        if rec.length.is_none() {
            rec.length = Some(length_score(&t.response));
        }
        for (missing, job, indicator) in [
            (rec.reward.is_none(), Job::Reward(i), Indicator::Reward),
            (rec.gpt.is_none(), Job::Gpt(i), Indicator::Gpt),
        ] {
            if !missing {
                continue;
            }
            if let Providers::CacheOnly = providers {
                return Err(Error::MissingScore {
                    id: t.id.clone(),
                    indicator: indicator.name().to_string(),
                });
            }
            jobs.push(job);
        }
    }

    let Providers::Online {
        rating,
        reward,
        template,
        retries,
        workers,
    } = providers
    else {
        return Ok(cache);
    };
    if jobs.is_empty() {
        return Ok(cache);
    }

    let next = AtomicUsize::new(0);
    let cache = Mutex::new(cache);
    let failures: Mutex<Vec<(usize, Error)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..(*workers).clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&job) = jobs.get(j) else { break };
                let (i, value) = match job {
                    Job::Reward(i) => (i, reward_score(*reward, &manifest[i], *retries)),
                    Job::Gpt(i) => (i, gpt_score(*rating, template, &manifest[i], *retries)),
                };
                match value {
                    Ok(v) => {
                        let mut c = cache.lock().unwrap();
                        let rec = c.get_mut(&manifest[i].id).expect("entry created above");
                        match job {
                            Job::Reward(_) => rec.reward = Some(v),
                            Job::Gpt(_) => rec.gpt = Some(v),
                        }
                    }
                    Err(e) => failures.lock().unwrap().push((j, e)),
                }
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        failures.sort_by_key(|(j, _)| *j);
        return Err(failures.swap_remove(0).1);
    }
    Ok(cache.into_inner().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FeatureStore;
    use crate::numerics::Matrix;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn clip_examples() {
        assert_eq!(clip_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(clip_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((clip_score(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-15);
        assert!(matches!(clip_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateEmbedding)));
        assert!(matches!(clip_score(&[1.0], &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_score(""), 0);
        assert_eq!(length_score("hello world"), 2);
        assert_eq!(length_score("  hello \n\t world  "), 2);
    }

    #[test]
    fn indicator_names_round_trip() {
        for i in Indicator::ALL {
            assert_eq!(i.name().parse::<Indicator>().unwrap(), i);
        }
        assert!("perplexity".parse::<Indicator>().is_err());
    }

    struct Scripted {
        replies: Vec<std::result::Result<String, TransportError>>,
        calls: AtomicUsize,
    }

    impl RatingEndpoint for Scripted {
        fn rate(&self, _: &str, _: &str) -> std::result::Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies[n.min(self.replies.len() - 1)].clone()
        }
    }

    fn triplet() -> Triplet {
        Triplet {
            id: "a".into(),
            image_ref: "a.jpg".into(),
            instruction: "Describe this image in detail.".into(),
            response: "A cat.".into(),
        }
    }

    #[test]
    fn gpt_score_retries_then_succeeds() {
        let stub = Scripted {
            replies: vec![
                Ok("garbage".into()),
                Err(TransportError("timeout".into())),
                Ok("70\nok".into()),
            ],
            calls: AtomicUsize::new(0),
        };
        let s = gpt_score(&stub, &PromptTemplate::default(), &triplet(), 3).unwrap();
        assert_eq!(s, 70.0);
        assert_eq!(stub.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gpt_score_gives_up() {
        let stub = Scripted {
            replies: vec![Err(TransportError("down".into()))],
            calls: AtomicUsize::new(0),
        };
        let err = gpt_score(&stub, &PromptTemplate::default(), &triplet(), 2).unwrap_err();
        assert!(matches!(err, Error::ScoringFailed { attempts: 3, .. }));
        assert_eq!(stub.calls.load(Ordering::SeqCst), 3);
    }

    struct FixedReward(f64);
    impl RewardEndpoint for FixedReward {
        fn reward(&self, _: &str, _: &str) -> std::result::Result<f64, TransportError> {
            Ok(self.0)
        }
    }

    #[test]
    fn reward_passes_through_negative() {
        assert_eq!(reward_score(&FixedReward(-3.0), &triplet(), 0).unwrap(), -3.0);
        assert_eq!(reward_score(&FixedReward(1.25), &triplet(), 0).unwrap(), 1.25);
        assert!(reward_score(&FixedReward(f64::NAN), &triplet(), 1).is_err());
    }

    #[test]
    fn cache_only_reports_missing_gpt() {
        let manifest = vec![triplet()];
        let m = Matrix::from_vec(1, 2, vec![1.0, 0.0]);
        let store = FeatureStore::from_matrices(
            &manifest,
            [
                ("image".to_string(), m.clone()),
                ("text_clip".to_string(), m.clone()),
                ("text_llm".to_string(), m),
            ],
        )
        .unwrap();
        let mut cache = ScoreCache::new();
        cache.insert(
            "a".into(),
            ScoreRecord {
                reward: Some(1.0),
                ..Default::default()
            },
        );
        let err = score_corpus(&manifest, &store, &Providers::CacheOnly, cache).unwrap_err();
        assert!(matches!(err, Error::MissingScore { ref indicator, .. } if indicator == "gpt"));
    }
}
