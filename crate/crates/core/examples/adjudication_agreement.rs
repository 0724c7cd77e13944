//! Record verdicts from two annotators, measure agreement and close the
//! accepted pairs into final classes under both merge policies.

use chrono::Utc;
use genealogy::adjudication::{agreement, build_equivalence, Decision, MergePolicy, VerdictLog};
use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::normalize::dedup_exact;
use genealogy::similarity::{top_k_candidates, BackendConfig};

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let exact = dedup_exact(&load_corpus(path.as_ref(), CorpusFormat::Csv)?)?;
    let cands = top_k_candidates(&exact, &BackendConfig::default(), 3)?;
    let mut log = VerdictLog::for_candidates(&cands);

    // Annotator r1 accepts anything above 0.5; r2 is stricter and unsure in
    // the middle band.
    let now = Utc::now();
    for (key, pair) in cands.by_key() {
        let r1 = if pair.score >= 0.5 { Decision::Similar } else { Decision::Distinct };
        let r2 = match pair.score {
            s if s >= 0.6 => Decision::Similar,
            s if s >= 0.45 => Decision::Unsure,
            _ => Decision::Distinct,
        };
        log.record_verdict(key, r1, "r1", now)?;
        log.record_verdict(key, r2, "r2", now)?;
    }

    let ag = agreement(&log, "r1", "r2")?;
    println!("agreement over {} pairs: {:.1}%, kappa {:.3}", ag.n, ag.percent * 100.0, ag.kappa);
    for policy in [MergePolicy::AnySimilar, MergePolicy::AllSimilar] {
        let eq = build_equivalence(&exact, &log, policy)?;
        println!("{policy}: {} exact -> {} final classes", exact.len(), eq.len());
    }
    Ok(())
}
