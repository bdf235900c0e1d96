use emi_core::embedder::{load_anchors, AnchorEmbedMode};
use emi_core::rater::Task;
use emi_remote::mock::FailureInjection;
use emi_remote::{
    build_anchor_vectors, embed_texts, rate_segments, Client, DiskCache, EndpointConfig, MockRules, MockServer, RateJob,
    RateOptions, RemoteError,
};

fn rules(failure: FailureInjection) -> MockRules {
    let words = |s: &str| s.split_whitespace().map(String::from).collect();
    MockRules {
        seed: 42,
        evidence_lexicon: words("argue evidence data analyze research examine"),
        intuition_lexicon: words("feeling belief instinct doubt opinion conviction"),
        procedural_lexicon: words("order session chair agenda vote"),
        embedding_dim: 64,
        delay_ms: 0,
        failure,
    }
}

fn endpoint(server: &MockServer, model: &str, retries: u32) -> EndpointConfig {
    EndpointConfig { max_retries: retries, backoff_ms: 1, timeout_secs: 5.0, ..EndpointConfig::new(server.base_url(), model) }
}

fn jobs() -> Vec<RateJob> {
    [
        ("s1", "The data and research examine the budget."),
        ("s2", "My feeling and belief tell me otherwise."),
        ("s3", "Order, order. The session agenda moves to a vote."),
    ]
    .iter()
    .map(|(id, t)| RateJob { id: id.to_string(), language: "en".into(), text: t.to_string() })
    .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn every_segment_rated_by_every_endpoint() {
    let server = MockServer::start_local(rules(FailureInjection::default())).await.unwrap();
    let eps: Vec<_> = ["a", "b", "c"].iter().map(|m| endpoint(&server, m, 0)).collect();
    let out = rate_segments(&Client::default(), &jobs(), &eps, Task::Epistemic, None, RateOptions::default()).await.unwrap();
    assert_eq!(out.rated.len(), 9);
    assert!(out.missing.is_empty());
    let ratings = out.epistemic();
    let s1a = ratings.iter().find(|r| r.segment_id == "s1" && r.model_name == "a").unwrap();
    assert_eq!((s1a.evidence_based, s1a.evidence_free), (3, 0));
    let s2c = ratings.iter().find(|r| r.segment_id == "s2" && r.model_name == "c").unwrap();
    assert_eq!((s2c.evidence_based, s2c.evidence_free), (0, 2));
    server.shutdown().await;
}

#[tokio::test]
async fn garbage_twice_then_valid_is_recorded() {
    let server = MockServer::start_local(rules(FailureInjection { garbage_first: 2, ..Default::default() })).await.unwrap();
    let eps = [endpoint(&server, "m", 3)];
    let out =
        rate_segments(&Client::default(), &jobs()[..1], &eps, Task::Procedural, None, RateOptions::default()).await.unwrap();
    assert_eq!(out.rated.len(), 1);
    assert_eq!(out.stats.retries, 2);
    server.shutdown().await;
}

#[tokio::test]
async fn garbage_past_retry_budget_is_missing() {
    let server = MockServer::start_local(rules(FailureInjection { garbage_first: 4, ..Default::default() })).await.unwrap();
    let eps = [endpoint(&server, "m", 3)];
    let out =
        rate_segments(&Client::default(), &jobs()[..1], &eps, Task::Procedural, None, RateOptions::default()).await.unwrap();
    assert!(out.rated.is_empty());
    assert_eq!(out.missing.len(), 1);
    assert_eq!(out.missing[0].attempts, 4);
    server.shutdown().await;
}

#[tokio::test]
async fn server_errors_are_retried() {
    let server = MockServer::start_local(rules(FailureInjection { fail_every: 2, ..Default::default() })).await.unwrap();
    let eps = [endpoint(&server, "m", 3)];
    let out = rate_segments(&Client::default(), &jobs(), &eps, Task::Epistemic, None, RateOptions::default()).await.unwrap();
    assert_eq!(out.rated.len(), 3);
    server.shutdown().await;
}

#[tokio::test]
async fn unreachable_endpoint_aborts() {
    let server = MockServer::start_local(rules(FailureInjection::default())).await.unwrap();
    let ep = endpoint(&server, "m", 1);
    server.shutdown().await;
    let err = rate_segments(&Client::default(), &jobs(), &[ep], Task::Epistemic, None, RateOptions::default()).await.unwrap_err();
    assert!(matches!(err, RemoteError::EndpointDown { .. }), "{err}");
}

#[tokio::test]
async fn cached_ratings_survive_a_failing_backend() {
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::open(dir.path()).unwrap();
    let good = MockServer::start_local(rules(FailureInjection::default())).await.unwrap();
    let first = rate_segments(
        &Client::default(),
        &jobs(),
        &[endpoint(&good, "m", 0)],
        Task::Epistemic,
        Some(&cache),
        RateOptions::default(),
    )
    .await
    .unwrap();
    good.shutdown().await;

    let bad = MockServer::start_local(rules(FailureInjection { fail_every: 1, ..Default::default() })).await.unwrap();
    let opts = RateOptions { probe: false, ..Default::default() };
    let again =
        rate_segments(&Client::default(), &jobs(), &[endpoint(&bad, "m", 0)], Task::Epistemic, Some(&cache), opts).await.unwrap();
    assert_eq!(again.rated, first.rated);
    assert_eq!(again.stats.cache_hits, 3);
    assert_eq!(again.stats.requests, 0);
    bad.shutdown().await;
}

#[tokio::test]
async fn embeddings_are_aligned_cached_and_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let cache = DiskCache::open(dir.path()).unwrap();
    let server = MockServer::start_local(rules(FailureInjection::default())).await.unwrap();
    let mut ep = endpoint(&server, "emb", 0);
    ep.batch_size = 2;
    let texts: Vec<String> = ["alpha beta", "gamma", "alpha beta", "delta epsilon"].iter().map(|s| s.to_string()).collect();
    let v = embed_texts(&Client::default(), &texts, &ep, Some(&cache), 4).await.unwrap();
    assert_eq!(v.len(), 4);
    assert!(v.iter().all(|x| x.len() == 64));
    assert_eq!(v[0], v[2]);
    assert_ne!(v[0], v[1]);
    server.shutdown().await;

    let failing = MockServer::start_local(rules(FailureInjection { fail_every: 1, ..Default::default() })).await.unwrap();
    let ep2 = EndpointConfig { base_url: failing.base_url(), ..ep.clone() };
    let again = embed_texts(&Client::default(), &texts, &ep2, Some(&cache), 4).await.unwrap();
    assert_eq!(again, v);
    assert!(matches!(
        embed_texts(&Client::default(), &["".to_string()], &ep2, Some(&cache), 4).await,
        Err(RemoteError::EmptyInput(0))
    ));
    failing.shutdown().await;
}

#[tokio::test]
async fn anchor_vectors_from_bundled_english_set() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/anchors/en.csv");
    let anchors = load_anchors(path, "en").unwrap();
    let server = MockServer::start_local(rules(FailureInjection::default())).await.unwrap();
    let ep = endpoint(&server, "emb", 0);
    let client = Client::default();
    let a = build_anchor_vectors(&client, &anchors, &ep, None, AnchorEmbedMode::Joined, false).await.unwrap();
    assert_eq!(a.dim, 64);
    let ev_text = vec!["We argue from evidence and data and analyze the research.".to_string()];
    let int_text = vec!["A feeling of doubt and belief, an instinct and opinion.".to_string()];
    let e = embed_texts(&client, &ev_text, &ep, None, 1).await.unwrap();
    let i = embed_texts(&client, &int_text, &ep, None, 1).await.unwrap();
    let widen = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
    let se = emi_core::embedder::score_segment_embedding("e", &widen(&e[0]), &a).unwrap();
    let si = emi_core::embedder::score_segment_embedding("i", &widen(&i[0]), &a).unwrap();
    assert!(se.emi_emb_raw > si.emi_emb_raw, "{} vs {}", se.emi_emb_raw, si.emi_emb_raw);
    server.shutdown().await;
}
