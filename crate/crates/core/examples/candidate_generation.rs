//! Top-k candidate pairs under both built-in backends.

use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::normalize::dedup_exact;
use genealogy::similarity::{levenshtein_similarity, top_k_candidates, BackendConfig};

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let exact = dedup_exact(&load_corpus(path.as_ref(), CorpusFormat::Csv)?)?;
    let texts = exact.texts();

    for backend in [BackendConfig::char_ngram(3), BackendConfig::levenshtein()] {
        let set = top_k_candidates(&exact, &backend, 3)?;
        println!(
            "{}: {} classes -> {} rows, {} distinct pairs",
            backend.kind,
            exact.len(),
            set.pairs.len(),
            set.pair_keys().len()
        );
        let mut best = set.pairs.clone();
        best.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.pair_key.cmp(&b.pair_key)));
        best.dedup_by(|a, b| a.pair_key == b.pair_key);
        for p in best.iter().take(5) {
            println!("  {:.3}  {}  |  {}", p.score, texts[p.left_class], texts[p.right_class]);
        }
    }

    println!(
        "\nlevenshtein(\"kitten\", \"sitting\") = {:.4}",
        levenshtein_similarity("kitten", "sitting")
    );
    Ok(())
}
