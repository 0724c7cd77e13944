//! Canonicalize spec texts and group identical ones.

use genealogy::corpus::{load_corpus, CorpusFormat};
use genealogy::normalize::{dedup_exact, normalize_text};

fn main() -> anyhow::Result<()> {
    for raw in ["ＨＰが０になる", "  HPが0に   なる ", "コマンドが 9 つ選択できる"] {
        println!("{raw:?} -> {:?}", normalize_text(raw)?);
    }

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_corpus.csv");
    let corpus = load_corpus(path.as_ref(), CorpusFormat::Csv)?;
    let exact = dedup_exact(&corpus)?;
    println!("\n{} records -> {} exact classes", corpus.records.len(), exact.len());
    for (i, class) in exact.classes.iter().enumerate().take(8) {
        println!("  [{i:>2}] x{} {}", class.source_record_ids.len(), class.value);
    }
    Ok(())
}
