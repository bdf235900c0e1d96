//! Embedding texts through an embeddings endpoint, with content caching.

use std::collections::HashMap;

use emi_core::embedder::{AnchorCategory, AnchorEmbedMode, AnchorSet, AnchorVectors};
use futures::{StreamExt, TryStreamExt};

use crate::cache::{cache_key, DiskCache};
use crate::http::{Client, Failure};
use crate::wire::{EmbeddingRequest, EmbeddingResponse};
use crate::{EndpointConfig, RemoteError, Result};

const CACHE_NS: &str = "embed";

fn encode(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// One vector per input, index-aligned. Vectors are rounded to `f32`, the
/// storage precision, whether they come from the endpoint or the cache.
pub async fn embed_texts(
    client: &Client,
    texts: &[String],
    ep: &EndpointConfig,
    cache: Option<&DiskCache>,
    max_in_flight: usize,
) -> Result<Vec<Vec<f32>>> {
    ep.validate()?;
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(RemoteError::EmptyInput(i));
    }
    let mut known: HashMap<&str, Vec<f32>> = HashMap::new();
    let mut pending: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for t in texts {
        if !seen.insert(t.as_str()) {
            continue;
        }
        let cached = match cache {
            Some(c) => c.get(CACHE_NS, &cache_key(&[&ep.model_name, t]))?.and_then(|b| decode(&b)),
            None => None,
        };
        match cached {
            Some(v) => {
                known.insert(t, v);
            }
            None => pending.push(t),
        }
    }

    let limit = ep.max_parallel.min(max_in_flight.max(1));
    let fetched: Vec<Vec<(&str, Vec<f32>)>> = futures::stream::iter(pending.chunks(ep.batch_size))
        .map(|batch| embed_batch(client, ep, batch))
        .buffered(limit)
        .try_collect()
        .await?;

    let mut dim = known.values().next().map(Vec::len);
    for (text, v) in fetched.into_iter().flatten() {
        match dim {
            Some(d) if d != v.len() => return Err(RemoteError::DimensionMismatch { expected: d, actual: v.len() }),
            _ => dim = Some(v.len()),
        }
        known.insert(text, v);
    }
    if let Some(d) = dim {
        if let Some(bad) = known.values().find(|v| v.len() != d) {
            return Err(RemoteError::DimensionMismatch { expected: d, actual: bad.len() });
        }
    }
    if let Some(c) = cache {
        for t in &pending {
            c.put(CACHE_NS, &cache_key(&[&ep.model_name, t]), &encode(&known[t]))?;
        }
    }
    Ok(texts.iter().map(|t| known[t.as_str()].clone()).collect())
}

async fn embed_batch<'a>(client: &Client, ep: &EndpointConfig, batch: &[&'a str]) -> Result<Vec<(&'a str, Vec<f32>)>> {
    let request = EmbeddingRequest { model: ep.model_name.clone(), input: batch.iter().map(|s| s.to_string()).collect() };
    let mut last = Failure::Response(String::new());
    for attempt in 0..=ep.max_retries {
        if attempt > 0 {
            tokio::time::sleep(ep.backoff(attempt - 1)).await;
        }
        match client.post_json::<_, EmbeddingResponse>(ep, "/v1/embeddings", &request).await {
            Ok(resp) => match align(resp, batch.len()) {
                Ok(vectors) => return Ok(batch.iter().copied().zip(vectors).collect()),
                Err(reason) => last = Failure::Response(reason),
            },
            Err(f) => last = f,
        }
        tracing::debug!(model = %ep.model_name, attempt, error = last.message(), "embedding attempt failed");
    }
    let attempts = ep.max_retries + 1;
    Err(match last {
        Failure::Transport(reason) => RemoteError::EndpointDown { url: ep.base_url.clone(), attempts, reason },
        Failure::Response(reason) => RemoteError::Protocol { url: ep.url("/v1/embeddings"), reason },
    })
}

fn align(resp: EmbeddingResponse, n: usize) -> std::result::Result<Vec<Vec<f32>>, String> {
    if resp.data.len() != n {
        return Err(format!("{} embeddings for {n} inputs", resp.data.len()));
    }
    let mut out: Vec<Option<Vec<f32>>> = vec![None; n];
    for item in resp.data {
        if item.index >= n || out[item.index].is_some() {
            return Err(format!("bad or repeated index {}", item.index));
        }
        if item.embedding.is_empty() || item.embedding.iter().any(|x| !x.is_finite()) {
            return Err(format!("empty or non-finite embedding at index {}", item.index));
        }
        out[item.index] = Some(item.embedding.iter().map(|&x| x as f32).collect());
    }
    Ok(out.into_iter().map(|v| v.expect("all indices filled")).collect())
}

/// Embeds each category's anchor entries and averages them.
pub async fn build_anchor_vectors(
    client: &Client,
    anchors: &AnchorSet,
    ep: &EndpointConfig,
    cache: Option<&DiskCache>,
    mode: AnchorEmbedMode,
    normalize_before_mean: bool,
) -> Result<AnchorVectors<f64>> {
    let widen = |v: Vec<Vec<f32>>| v.into_iter().map(|x| x.into_iter().map(f64::from).collect()).collect::<Vec<Vec<f64>>>();
    let ev = embed_texts(client, &anchors.embedding_texts(AnchorCategory::Evidence, mode), ep, cache, ep.max_parallel).await?;
    let int = embed_texts(client, &anchors.embedding_texts(AnchorCategory::Intuition, mode), ep, cache, ep.max_parallel).await?;
    Ok(AnchorVectors::from_entry_embeddings(anchors.language.clone(), &widen(ev), &widen(int), normalize_before_mean)?)
}
