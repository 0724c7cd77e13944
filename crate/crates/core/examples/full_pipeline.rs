//! Every CLI stage in order on the sample corpus, with the score-based
//! auto-accept standing in for human review.

use genealogy::adjudication::MergePolicy;
use genealogy::clustering::{Axis, Linkage};
use genealogy::matrix::ColumnOrder;
use genealogy::pipeline::{self, GroupSource, RenderOptions, VerdictSource, Workspace};
use genealogy::similarity::BackendConfig;

fn main() -> anyhow::Result<()> {
    let dir = env!("CARGO_MANIFEST_DIR");
    let root = std::env::temp_dir().join(format!("genealogy-pipeline-{}", std::process::id()));
    let ws = Workspace::new(&root);
    let _lock = ws.lock()?;

    pipeline::ingest(&ws, format!("{dir}/data/sample_corpus.csv").as_ref(), None, false)?;
    pipeline::dedup(&ws)?;
    pipeline::candidates(&ws, &BackendConfig::default(), 3, None)?;
    pipeline::verdicts_import(
        &ws,
        &VerdictSource::AutoAccept {
            annotator: "auto".into(),
            min_score: 0.6,
        },
    )?;
    let eq = pipeline::equivalence(&ws, MergePolicy::AnySimilar)?;
    println!("{} final classes", eq.len());
    pipeline::matrix(&ws, ColumnOrder::ReleaseDate)?;
    pipeline::cluster(&ws, Axis::Items, Linkage::Ward, None, Some(3))?;
    pipeline::cluster(&ws, Axis::Items, Linkage::Complete, None, Some(3))?;
    pipeline::characterize(&ws, &GroupSource::File(format!("{dir}/data/sample_groups.csv").into()), 0.6, None)?;
    pipeline::render(&ws, &RenderOptions { min_edge: 2, ..Default::default() })?;
    let report = pipeline::report(&ws)?;
    println!("report: {}", report.display());
    Ok(())
}
