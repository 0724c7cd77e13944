//! Serve the review API for the sample corpus, judge one pair over HTTP and
//! print progress.
//!
//! Pass `--serve` to keep the server running on 127.0.0.1:8765.

use std::sync::{Arc, Mutex};

use genealogy::adjudication::VerdictLogFile;
use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::normalize::dedup_exact;
use genealogy::review::{serve, NextPair, Progress, ReviewState};
use genealogy::similarity::{top_k_candidates, BackendConfig};

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let corpus = load_corpus(path.as_ref(), CorpusFormat::Csv)?;
    let exact = dedup_exact(&corpus)?;
    let cands = top_k_candidates(&exact, &BackendConfig::default(), 3)?;
    let dir = tempfile_dir()?;
    let state = ReviewState::new(&corpus, &exact, &cands, VerdictLogFile::new(dir.join("verdicts.jsonl")))?;
    let shared = Arc::new(Mutex::new(state));

    let keep_running = std::env::args().any(|a| a == "--serve");
    let rt = tokio::runtime::Runtime::new()?;
    let addr = if keep_running { "127.0.0.1:8765" } else { "127.0.0.1:0" };
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let base = format!("http://{}", listener.local_addr()?);
    if keep_running {
        println!("serving on {base}");
        return Ok(rt.block_on(serve(listener, shared))?);
    }
    rt.spawn(serve(listener, shared));

    let next: NextPair = ureq::get(format!("{base}/pairs/next?annotator=demo"))
        .call()?
        .body_mut()
        .read_json()?;
    let pair = next.pair.expect("sample has candidates");
    println!("{} of {}: {} | {}", next.judged, next.total, pair.left.text, pair.right.text);
    ureq::post(format!("{base}/verdicts")).send_json(serde_json::json!({
        "pair_key": pair.pair_key,
        "decision": "similar",
        "annotator_id": "demo",
    }))?;
    let progress: Progress = ureq::get(format!("{base}/progress")).call()?.body_mut().read_json()?;
    println!("judged: {:?}", progress.judged);
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("genealogy-review-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
