//! Pipeline orchestration: bounded concurrency, ordering, failure policy.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;

use cake_forge::config::PipelineConfig;
use cake_forge::lm_backend::{
    mock::prompt_subject, CompletionProvider, CompletionRequest, CompletionResponse, LmError,
};
use cake_forge::pipeline::run_extraction;
use cake_forge::CaptionRecord;

/// Records peak concurrency; captions containing "fail" error out.
#[derive(Default)]
struct Instrumented {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

#[async_trait]
impl CompletionProvider for Instrumented {
    fn id(&self) -> &str {
        "instrumented"
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LmError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        let subject = prompt_subject(&req.prompt).to_string();
        // Later captions finish first, so ordering has to be restored.
        let n: u64 = subject.split_whitespace().last().unwrap().parse().unwrap_or(0);
        tokio::time::sleep(Duration::from_millis(2 + (40 - n.min(40)))).await;
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if subject.contains("fail") {
            return Err(LmError::Transport("scripted failure".into()));
        }
        Ok(CompletionResponse {
            choices: (0..req.num_choices)
                .map(|i| format!("to answer {subject} in way {i}"))
                .collect(),
            provider_id: "instrumented".into(),
            raw_latency: Duration::ZERO,
        })
    }
}

fn captions(n: usize, failing: &[usize]) -> Vec<CaptionRecord> {
    (0..n)
        .map(|i| CaptionRecord {
            video_id: format!("v{i:02}"),
            caption: if failing.contains(&i) {
                format!("a robot will fail {i}")
            } else {
                format!("a person is walking {i}")
            },
        })
        .collect()
}

async fn run(provider: &Instrumented, caps: &[CaptionRecord], bound: usize, strict: bool) -> Result<cake_forge::pipeline::GenerateOutcome, cake_forge::PipelineError> {
    let mut cfg = PipelineConfig::default();
    cfg.prompt.kind = cake_forge::prompting::PromptKind::ZeroShot;
    run_extraction(
        caps,
        provider,
        &cfg.prompt_spec().unwrap(),
        &cfg.completion_defaults(),
        &cfg.filter,
        bound,
        strict,
    )
    .await
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn in_flight_never_exceeds_bound() {
    for bound in [1, 3, 8] {
        let p = Instrumented::default();
        let out = run(&p, &captions(40, &[]), bound, false).await.unwrap();
        let peak = p.peak.load(Ordering::SeqCst);
        assert!(peak <= bound, "peak {peak} > bound {bound}");
        assert_eq!(p.calls.load(Ordering::SeqCst), 40);
        if bound > 1 {
            assert!(peak > 1, "bound {bound} never overlapped");
        }
        assert_eq!(out.responses.len(), 40);
    }
}

#[tokio::test]
async fn results_keep_input_order() {
    let p = Instrumented::default();
    let caps = captions(20, &[]);
    let out = run(&p, &caps, 8, false).await.unwrap();
    let ids: Vec<&str> = out.responses.iter().map(|r| r.video_id.as_str()).collect();
    let expect: Vec<&str> = caps.iter().map(|c| c.video_id.as_str()).collect();
    assert_eq!(ids, expect);
    for r in &out.responses {
        assert_eq!(r.candidates.len(), 5);
        assert_eq!(r.choice_indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.provider, "instrumented");
    }
}

#[tokio::test]
async fn failures_skip_unless_strict() {
    let caps = captions(10, &[3, 7]);
    let p = Instrumented::default();
    let out = run(&p, &caps, 4, false).await.unwrap();
    assert_eq!(out.responses.len(), 8);
    let failed: Vec<&str> = out.failures.iter().map(|f| f.video_id.as_str()).collect();
    assert_eq!(failed, vec!["v03", "v07"]);

    let p = Instrumented::default();
    let err = run(&p, &caps, 4, true).await.unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[tokio::test]
async fn zero_bound_is_config_error() {
    let p = Instrumented::default();
    let err = run(&p, &captions(2, &[]), 0, false).await.unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert_eq!(p.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn shared_provider_is_send_sync() {
    fn assert_send_sync<T: Send + Sync>(_: &T) {}
    let p: Arc<dyn CompletionProvider> = Arc::new(Instrumented::default());
    assert_send_sync(&p);
}
