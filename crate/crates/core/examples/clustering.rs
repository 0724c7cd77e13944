//! Complete and Ward dendrograms over items, with a cut into groups.

use genealogy::adjudication::EquivalenceClasses;
use genealogy::clustering::{agglomerate, cut, distance_matrix, Axis, Linkage, Metric};
use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::matrix::build_incidence;
use genealogy::normalize::dedup_exact;

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let corpus = load_corpus(path.as_ref(), CorpusFormat::Csv)?;
    let inc = build_incidence(&corpus, &EquivalenceClasses::from_exact(&dedup_exact(&corpus)?))?;

    for linkage in [Linkage::Complete, Linkage::Ward] {
        let dm = distance_matrix(&inc, Axis::Items, Metric::default_for(linkage))?;
        let dend = agglomerate(&dm, linkage)?;
        println!("{linkage}:\n  {}", dend.to_newick());
        let part = cut(&dend, 3)?;
        for (g, leaves) in part.groups.iter().enumerate() {
            let names: Vec<&str> = leaves.iter().map(|&l| dend.leaves[l].as_str()).collect();
            println!("  group {}: {}", g + 1, names.join(", "));
        }
    }
    Ok(())
}
