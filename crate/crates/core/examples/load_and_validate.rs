//! Load a corpus CSV and print the validation report.
//!
//! cargo run --example load_and_validate [path/to/corpus.csv]

use std::path::PathBuf;

use genealogy::corpus::{load_corpus, validate, CorpusFormat};

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv")));
    let corpus = load_corpus(&path, CorpusFormat::from_path(&path).unwrap_or(CorpusFormat::Csv))?;
    println!("{} items, {} records", corpus.items.len(), corpus.records.len());
    for item in &corpus.items {
        let n = corpus.records_of(&item.item_id).count();
        let date = item.release_date.map(|d| d.to_string()).unwrap_or_else(|| "undated".into());
        println!("  {:<8} {:<20} {date}  {n} specs", item.item_id, item.title);
    }
    let report = validate(&corpus);
    if report.is_empty() {
        println!("no findings");
    }
    for f in &report.findings {
        println!("{:?}: {f}", f.severity());
    }
    Ok(())
}
