//! Genealogy, dendrogram and profile SVGs written to a temporary directory.

use genealogy::adjudication::EquivalenceClasses;
use genealogy::clustering::{agglomerate, distance_matrix, Axis, Linkage, Metric};
use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::matrix::{build_incidence, commonality};
use genealogy::normalize::dedup_exact;
use genealogy::render::{render_dendrogram, render_genealogy, render_profile, NodeWeight};

fn main() -> anyhow::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let corpus = load_corpus(path.as_ref(), CorpusFormat::Csv)?;
    let inc = build_incidence(&corpus, &EquivalenceClasses::from_exact(&dedup_exact(&corpus)?))?;
    let cm = commonality(&inc);
    let out = std::env::temp_dir().join("genealogy-render");
    std::fs::create_dir_all(&out)?;

    let g = render_genealogy(&cm, None, 2, NodeWeight::Sum)?;
    std::fs::write(out.join("genealogy.svg"), &g.svg)?;
    std::fs::write(out.join("genealogy.json"), serde_json::to_string_pretty(&g.data)?)?;
    for r in &g.data.ribbons {
        println!("{} -> {}: {}", r.from, r.to, r.width);
    }

    let dend = agglomerate(&distance_matrix(&inc, Axis::Items, Metric::Jaccard)?, Linkage::Complete)?;
    std::fs::write(out.join("dendrogram.svg"), render_dendrogram(&dend))?;

    let first = &cm.items[0].item_id;
    let p = render_profile(first, &cm)?;
    std::fs::write(out.join("profile.svg"), &p.svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
