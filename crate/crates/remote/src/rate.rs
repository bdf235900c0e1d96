//! Sending rating prompts to one or more chat endpoints.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use emi_core::rater::{build_prompt, parse_rating_payload, EpistemicRating, Message, ProceduralRating, Task};
use futures::{StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::cache::{cache_key, DiskCache};
use crate::http::{Client, Failure};
use crate::wire::{ChatRequest, ChatResponse};
use crate::{EndpointConfig, RemoteError, Result};

const CACHE_NS: &str = "chat";

/// A unit of text to rate: a speech or a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateJob {
    pub id: String,
    pub language: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedItem {
    pub segment_id: String,
    pub model_name: String,
    pub values: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingRating {
    pub segment_id: String,
    pub model_name: String,
    pub task: Task,
    pub attempts: u32,
    pub last_error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub requests: usize,
    pub retries: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOutput {
    pub task: Task,
    /// Sorted by (segment id, model name).
    pub rated: Vec<RatedItem>,
    pub missing: Vec<MissingRating>,
    pub stats: RateStats,
}

impl RateOutput {
    pub fn procedural(&self) -> Vec<ProceduralRating> {
        self.rated
            .iter()
            .map(|r| ProceduralRating {
                segment_id: r.segment_id.clone(),
                model_name: r.model_name.clone(),
                rating: r.values["procedural"] as u8,
            })
            .collect()
    }

    pub fn epistemic(&self) -> Vec<EpistemicRating> {
        self.rated
            .iter()
            .map(|r| EpistemicRating {
                segment_id: r.segment_id.clone(),
                model_name: r.model_name.clone(),
                evidence_based: r.values["evidence_based"] as u8,
                evidence_free: r.values["evidence_free"] as u8,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateOptions {
    /// Upper bound on in-flight requests across all endpoints.
    pub max_in_flight: usize,
    /// Probe every endpoint before the first request.
    pub probe: bool,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { max_in_flight: 16, probe: true }
    }
}

#[derive(Default)]
struct Counters {
    requests: AtomicUsize,
    retries: AtomicUsize,
    cache_hits: AtomicUsize,
}

enum PairOutcome {
    Rated(RatedItem),
    Missing(MissingRating),
}

fn prompt_hash(messages: &[Message]) -> String {
    cache_key(&[&serde_json::to_string(messages).expect("messages serialize")])
}

/// Rates every job with every endpoint. Transport failures that outlast the
/// retry budget abort the run; malformed or rejected responses that outlast
/// it leave the pair in `missing`. Valid responses are cached, so a rerun
/// after an abort only sends what is still outstanding.
pub async fn rate_segments(
    client: &Client,
    jobs: &[RateJob],
    endpoints: &[EndpointConfig],
    task: Task,
    cache: Option<&DiskCache>,
    opts: RateOptions,
) -> Result<RateOutput> {
    if endpoints.is_empty() {
        return Err(RemoteError::Config(format!("no endpoint configured for the {} task", task.as_str())));
    }
    for ep in endpoints {
        ep.validate()?;
    }
    let prompts: Vec<Vec<Message>> =
        jobs.iter().map(|j| build_prompt(task, &j.language, &j.text)).collect::<emi_core::Result<_>>()?;
    if opts.probe && !jobs.is_empty() {
        for ep in endpoints {
            client.probe(ep).await?;
        }
    }

    let limits: Vec<Arc<Semaphore>> = endpoints.iter().map(|e| Arc::new(Semaphore::new(e.max_parallel))).collect();
    let counters = Counters::default();
    let pairs = (0..jobs.len()).flat_map(|j| (0..endpoints.len()).map(move |e| (j, e)));
    let outcomes: Vec<PairOutcome> = futures::stream::iter(pairs)
        .map(|(j, e)| {
            let limit = limits[e].clone();
            let (job, ep, messages, counters) = (&jobs[j], &endpoints[e], &prompts[j], &counters);
            async move {
                let _permit = limit.acquire_owned().await.expect("semaphore open");
                rate_pair(client, job, ep, messages, task, cache, counters).await
            }
        })
        .buffer_unordered(opts.max_in_flight.max(1))
        .try_collect()
        .await?;

    let mut rated = Vec::new();
    let mut missing = Vec::new();
    for o in outcomes {
        match o {
            PairOutcome::Rated(r) => rated.push(r),
            PairOutcome::Missing(m) => missing.push(m),
        }
    }
    rated.sort_by(|a, b| (&a.segment_id, &a.model_name).cmp(&(&b.segment_id, &b.model_name)));
    missing.sort_by(|a, b| (&a.segment_id, &a.model_name).cmp(&(&b.segment_id, &b.model_name)));
    Ok(RateOutput {
        task,
        rated,
        missing,
        stats: RateStats {
            requests: counters.requests.into_inner(),
            retries: counters.retries.into_inner(),
            cache_hits: counters.cache_hits.into_inner(),
        },
    })
}

async fn rate_pair(
    client: &Client,
    job: &RateJob,
    ep: &EndpointConfig,
    messages: &[Message],
    task: Task,
    cache: Option<&DiskCache>,
    counters: &Counters,
) -> Result<PairOutcome> {
    let key = cache_key(&[&job.id, &ep.model_name, task.as_str(), &prompt_hash(messages)]);
    let rated = |values| RatedItem { segment_id: job.id.clone(), model_name: ep.model_name.clone(), values };
    if let Some(c) = cache {
        if let Some(bytes) = c.get(CACHE_NS, &key)? {
            if let Ok(p) = parse_rating_payload(&String::from_utf8_lossy(&bytes), task.schema()) {
                counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(PairOutcome::Rated(rated(p.values)));
            }
        }
    }

    let request = ChatRequest {
        model: ep.model_name.clone(),
        messages: messages.to_vec(),
        temperature: ep.temperature,
        max_tokens: Some(ep.max_tokens),
    };
    let mut last = Failure::Response(String::new());
    for attempt in 0..=ep.max_retries {
        if attempt > 0 {
            counters.retries.fetch_add(1, Ordering::Relaxed);
            tokio::time::sleep(ep.backoff(attempt - 1)).await;
        }
        counters.requests.fetch_add(1, Ordering::Relaxed);
        let outcome = match client.post_json::<_, ChatResponse>(ep, "/v1/chat/completions", &request).await {
            Ok(resp) => match resp.content() {
                Some(content) => parse_rating_payload(content, task.schema())
                    .map(|p| (content.to_string(), p))
                    .map_err(|e| Failure::Response(e.to_string())),
                None => Err(Failure::Response("response has no choices".into())),
            },
            Err(f) => Err(f),
        };
        match outcome {
            Ok((content, parsed)) => {
                if attempt > 0 {
                    tracing::info!(segment = %job.id, model = %ep.model_name, retries = attempt, "rating succeeded after retries");
                }
                if let Some(c) = cache {
                    c.put(CACHE_NS, &key, content.as_bytes())?;
                }
                return Ok(PairOutcome::Rated(rated(parsed.values)));
            }
            Err(f) => {
                tracing::debug!(segment = %job.id, model = %ep.model_name, attempt, error = f.message(), "rating attempt failed");
                last = f;
            }
        }
    }
    let attempts = ep.max_retries + 1;
    match last {
        Failure::Transport(reason) => Err(RemoteError::EndpointDown { url: ep.base_url.clone(), attempts, reason }),
        Failure::Response(reason) => {
            tracing::warn!(segment = %job.id, model = %ep.model_name, "rating missing: {reason}");
            Ok(PairOutcome::Missing(MissingRating {
                segment_id: job.id.clone(),
                model_name: ep.model_name.clone(),
                task,
                attempts,
                last_error: reason,
            }))
        }
    }
}
