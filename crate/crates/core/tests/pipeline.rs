mod common;

use std::fs;
use std::path::Path;

use common::{MockServer, Reply};
use patchscreen::ingest::{write_series, ManifestEntry};
use patchscreen::pipeline::{
    read_f64s, run_all, run_eval, run_screen, run_verify, series_dir, ClientKind, PipelineConfig,
    ProposalsFile, ProviderKind,
};
use patchscreen::synthetic::SyntheticSpec;
use patchscreen::verify::VerifyOutcome;

fn dataset(dir: &Path, n: usize) -> Vec<ManifestEntry> {
    SyntheticSpec::default()
        .suite(7, n)
        .unwrap()
        .into_iter()
        .map(|s| {
            let id = s.series.id().to_string();
            let series = dir.join(format!("{id}.csv"));
            let labels = dir.join(format!("{id}.labels.json"));
            write_series(&s.series, &series).unwrap();
            fs::write(&labels, s.labels.to_json()).unwrap();
            ManifestEntry {
                id: Some(id),
                series,
                labels: Some(labels),
                changepoint: None,
                dataset: Some("synthetic".into()),
            }
        })
        .collect()
}

fn config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: out.to_path_buf(),
        ..Default::default()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_manifest_is_not_a_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_all(&config(tmp.path()), &[], false).unwrap();
    assert!(!summary.all_failed());
    assert!(summary.report.methods.is_empty());
    assert!(tmp.path().join("report.json").exists());
}

#[test]
fn one_bad_series_does_not_stop_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut entries = dataset(tmp.path(), 2);
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "timestamp,value\n0,1.0\n1,not-a-number\n").unwrap();
    entries.insert(
        1,
        ManifestEntry {
            id: Some("bad".into()),
            series: bad,
            labels: None,
            changepoint: None,
            dataset: None,
        },
    );
    let out = tmp.path().join("out");
    let summary = run_all(&config(&out), &entries, false).unwrap();
    assert!(!summary.all_failed());
    assert_eq!(summary.screen.failures(), 1);
    assert!(!summary.screen.series[1].ok());
    for i in [0, 2] {
        let dir = series_dir(&out, &summary.screen.series[i].id);
        assert!(dir.join("scores.bin").exists());
        assert!(dir.join("final.json").exists());
    }
    let status: serde_json::Value = read_json(&out.join("status-screen.json"));
    assert!(status["series"][1]["error"].is_string());
    assert_eq!(summary.report.methods[0].per_series.len(), 2);
}

#[test]
fn unreachable_remote_with_cold_cache_fails_every_series() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 2);
    let mut c = config(&tmp.path().join("out"));
    c.provider.kind = ProviderKind::Remote;
    c.provider.remote.url = "http://127.0.0.1:9".into();
    c.provider.remote.retries = 0;
    c.provider.remote.timeout_secs = 2.0;
    c.provider.cache_dir = Some(tmp.path().join("cache"));
    let summary = run_screen(&c, &entries).unwrap();
    assert!(summary.all_failed());
}

#[test]
fn store_reproduces_the_provider_that_warmed_it() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 2);
    let cache = tmp.path().join("cache");

    let mut warm = config(&tmp.path().join("a"));
    warm.provider.cache_dir = Some(cache.clone());
    run_screen(&warm, &entries).unwrap();

    let mut store = config(&tmp.path().join("b"));
    store.provider.kind = ProviderKind::Store;
    store.provider.name = "reference".into();
    store.provider.d = patchscreen::embed::REFERENCE_DIM;
    store.provider.cache_dir = Some(cache);
    let summary = run_screen(&store, &entries).unwrap();
    assert_eq!(summary.failures(), 0);

    for e in &entries {
        let id = e.series_id();
        let a = read_f64s(&series_dir(&warm.output_dir, &id).join("scores.bin")).unwrap();
        let b = read_f64s(&series_dir(&store.output_dir, &id).join("scores.bin")).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn store_miss_is_a_per_series_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 1);
    let mut c = config(&tmp.path().join("out"));
    c.provider.kind = ProviderKind::Store;
    c.provider.cache_dir = Some(tmp.path().join("empty"));
    assert!(run_screen(&c, &entries).unwrap().all_failed());
}

#[test]
fn sweep_equals_best_single_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 2);
    let mut c = config(&tmp.path().join("out"));
    c.screen.alpha_list = vec![0.2, 0.05, 0.001];
    run_screen(&c, &entries).unwrap();
    let swept = run_eval(&c, &entries).unwrap();

    let mut singles = Vec::new();
    for &a in &[0.2, 0.05, 0.001] {
        c.screen.alpha_list = vec![a];
        singles.push(run_eval(&c, &entries).unwrap());
    }
    for (i, s) in swept.methods[0].per_series.iter().enumerate() {
        let best = singles
            .iter()
            .map(|r| r.methods[0].per_series[i].f1_max)
            .fold(0.0, f64::max);
        assert_eq!(s.f1_max, best);
    }
    let best_dataset = singles
        .iter()
        .map(|r| r.methods[0].datasets[0].f1_max)
        .fold(0.0, f64::max);
    assert_eq!(swept.methods[0].datasets[0].f1_max, best_dataset);
}

#[test]
fn eval_skips_unlabelled_series() {
    let tmp = tempfile::tempdir().unwrap();
    let mut entries = dataset(tmp.path(), 2);
    entries[0].labels = None;
    let c = config(&tmp.path().join("out"));
    let summary = run_all(&c, &entries, true).unwrap();
    assert_eq!(summary.screen.failures(), 0);
    let per_series = &summary.report.methods[0].per_series;
    assert_eq!(per_series.len(), 1);
    assert_eq!(per_series[0].series_id, entries[1].series_id());
}

#[test]
fn stage_one_only_skips_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 1);
    let out = tmp.path().join("out");
    let summary = run_all(&config(&out), &entries, true).unwrap();
    assert!(summary.verify.is_none());
    let methods: Vec<&str> = summary
        .report
        .methods
        .iter()
        .map(|m| m.method.as_str())
        .collect();
    assert_eq!(methods, ["screen"]);
    assert!(!series_dir(&out, &entries[0].series_id())
        .join("final.json")
        .exists());
    assert!(!out.join("tokens.json").exists());
}

#[test]
fn full_run_with_echo_client_keeps_proposals() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 1);
    let out = tmp.path().join("out");
    let summary = run_all(&config(&out), &entries, false).unwrap();
    let methods: Vec<&str> = summary
        .report
        .methods
        .iter()
        .map(|m| m.method.as_str())
        .collect();
    assert_eq!(methods, ["screen", "verify"]);

    let dir = series_dir(&out, &entries[0].series_id());
    let proposals: ProposalsFile = read_json(&dir.join("proposals.json"));
    let outcome: VerifyOutcome = read_json(&dir.join("final.json"));
    assert_eq!(outcome.final_set, proposals.proposals);
    let tokens: serde_json::Value = read_json(&out.join("tokens.json"));
    assert_eq!(tokens["total"]["series"], 1);
}

#[test]
fn garbage_verifier_reply_falls_back_to_proposals() {
    let tmp = tempfile::tempdir().unwrap();
    let entries = dataset(tmp.path(), 1);
    let out = tmp.path().join("out");
    let mut c = config(&out);
    run_screen(&c, &entries).unwrap();

    let server = MockServer::start(vec![Reply::Json(
        200,
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "I cannot help with that."}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 6},
        })
        .to_string(),
    )]);
    std::env::set_var("PATCHSCREEN_PIPELINE_TEST_KEY", "sk-test");
    c.client.kind = ClientKind::Chat;
    c.client.chat.endpoint = server.url.clone();
    c.client.chat.api_key_env = "PATCHSCREEN_PIPELINE_TEST_KEY".into();
    c.client.chat.requests_per_minute = 0;
    let summary = run_verify(&c, &entries).unwrap();
    assert_eq!(summary.failures(), 0);

    let dir = series_dir(&out, &entries[0].series_id());
    let proposals: ProposalsFile = read_json(&dir.join("proposals.json"));
    let outcome: VerifyOutcome = read_json(&dir.join("final.json"));
    assert!(outcome.fallback.is_some());
    assert_eq!(outcome.final_set, proposals.proposals);
    assert_eq!(outcome.usage.completion_tokens, 6);
}
