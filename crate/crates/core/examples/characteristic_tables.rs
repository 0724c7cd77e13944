//! Specs shared by at least a threshold fraction of each group.

use genealogy::adjudication::EquivalenceClasses;
use genealogy::characterize::{group_spec_table, read_groups_csv, support_cutoff, to_markdown};
use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::matrix::build_incidence;
use genealogy::normalize::dedup_exact;

fn main() -> anyhow::Result<()> {
    for (size, t) in [(10, 0.3), (5, 0.4), (5, 0.6), (3, 0.6), (2, 1.0)] {
        println!("{size} items at {t}: support >= {}", support_cutoff(size, t));
    }

    let dir = env!("CARGO_MANIFEST_DIR");
    let corpus = load_corpus(format!("{dir}/data/sample_corpus.csv").as_ref(), CorpusFormat::Csv)?;
    let inc = build_incidence(&corpus, &EquivalenceClasses::from_exact(&dedup_exact(&corpus)?))?;
    let groups = read_groups_csv(format!("{dir}/data/sample_groups.csv").as_ref())?;
    let (tables, _) = group_spec_table(&groups, &inc, 0.6, None)?;
    println!("\n{}", to_markdown(&tables));
    Ok(())
}
