mod common;

use std::time::Duration;

use bl_engine::cli::CliError;
use bl_engine::llm_client::{build_prompts, cached_batch, ClientError, EndpointConfig, LlmClient, ViewCache};
use bl_engine::views::{build_contexts, SamplingConfig};
use common::FakeServer;

fn endpoint(base_url: &str) -> EndpointConfig {
    EndpointConfig {
        base_url: base_url.to_string(),
        api_key_env_var_name: "BL_ENGINE_TEST_UNSET_KEY".into(),
        max_retries: 2,
        timeout: Duration::from_secs(5),
        backoff: Duration::ZERO,
        parallelism: 2,
        ..EndpointConfig::default()
    }
}

fn bundle() -> bl_engine::llm_client::PromptBundle {
    let table = common::market(1, 30, 1);
    build_prompts(table.dates[20], &table.assets[0], &[0.1, -0.36], &[0.2], &[0.0])
}

#[test]
fn structured_answer_parses() {
    let server = FakeServer::start(|_| "{\"prediction\":0.12}".into());
    let client = LlmClient::new(endpoint(&server.base_url)).unwrap();
    let f = client.query_forecast(&bundle()).unwrap();
    assert_eq!(f.value, 0.12);
    assert_eq!(f.retries, 0);
    assert_eq!(server.hits(), 1);
}

#[test]
fn prose_then_json_costs_one_retry() {
    let server = FakeServer::start(|i| {
        if i == 0 {
            "I expect the stock to rise about 0.3% tomorrow.".into()
        } else {
            "{\"prediction\": -0.25}".into()
        }
    });
    let client = LlmClient::new(endpoint(&server.base_url)).unwrap();
    let f = client.query_forecast(&bundle()).unwrap();
    assert_eq!((f.value, f.retries), (-0.25, 1));
    assert_eq!(server.hits(), 2);
}

#[test]
fn persistent_prose_exhausts_retries() {
    let server = FakeServer::start(|_| "no json here".into());
    let client = LlmClient::new(endpoint(&server.base_url)).unwrap();
    match client.query_forecast(&bundle()) {
        Err(ClientError::SchemaViolation { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.hits(), 3);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = LlmClient::new(endpoint(&format!("http://127.0.0.1:{port}/v1"))).unwrap();
    assert!(matches!(client.query_forecast(&bundle()), Err(ClientError::Transport(_))));
}

#[test]
fn cache_turns_repeat_requests_into_hits() {
    let server = FakeServer::start(|i| format!("{{\"prediction\": {}}}", (i % 5) as f64 / 10.0));
    let client = LlmClient::new(endpoint(&server.base_url)).unwrap();
    let table = common::market(2, 30, 4);
    let returns = table.returns();
    let as_of = table.dates[15];
    let contexts = build_contexts(&table, &returns, as_of, 10).unwrap();
    let sampling = SamplingConfig {
        n_samples: 2,
        retry_budget: 0,
        parallelism: 2,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("views.jsonl");

    let mut cache = ViewCache::open(&path).unwrap();
    let cold = cached_batch(&client, as_of, &contexts, &sampling, &mut cache).unwrap();
    assert_eq!(server.hits(), 4);

    let mut warm_cache = ViewCache::open(&path).unwrap();
    let warm = cached_batch(&client, as_of, &contexts, &sampling, &mut warm_cache).unwrap();
    assert_eq!(server.hits(), 4);
    assert_eq!(warm, cold);
    assert_eq!(warm_cache.appended(), 0);
}

#[test]
fn cli_reports_unreachable_endpoint_with_provider_code() {
    let dir = tempfile::tempdir().unwrap();
    let table = common::market(2, 30, 2);
    let files = common::write_market(dir.path(), &table);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let conf = common::write_config(
        dir.path(),
        &files,
        &format!(
            "provider = llm\nbase_url = http://127.0.0.1:{port}/v1\nmax_retries = 0\nbackoff_ms = 0\nretry_budget = 0\n\
             n_samples = 2\ntest_start = {}\ntest_end = {}\n",
            table.dates[10], table.dates[29]
        ),
    );
    let out = dir.path().join("out");
    let code = common::run_cli(&["generate-views", "--config", conf.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, CliError::Provider(String::new()).exit_code());
    let manifest = std::fs::read_to_string(out.join("missing_pairs.csv")).unwrap();
    // header comment, column row, 2 dates x 2 tickers
    assert_eq!(manifest.lines().count(), 2 + 4);
}
