//! Incidence and commonality matrices, computed two ways.

use genealogy::adjudication::EquivalenceClasses;
use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::matrix::{build_incidence, commonality, commonality_from_classes};
use genealogy::normalize::dedup_exact;

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let corpus = load_corpus(path.as_ref(), CorpusFormat::Csv)?;
    let eq = EquivalenceClasses::from_exact(&dedup_exact(&corpus)?);
    let inc = build_incidence(&corpus, &eq)?;
    println!("incidence: {} rows x {} items, {} classes", inc.n_rows(), inc.n_cols(), inc.class_count());

    let cm = commonality(&inc);
    assert_eq!(cm, commonality_from_classes(&corpus, &eq, &inc.items)?);
    for (i, item) in cm.items.iter().enumerate() {
        let row: Vec<String> = cm.counts[i].iter().map(|c| format!("{c:>2}")).collect();
        println!("{:<16} {}", item.title, row.join(" "));
    }
    Ok(())
}
