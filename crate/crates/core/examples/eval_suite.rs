//! Scores the fixture evaluation set over five seeds, with ranking metrics
//! from the fixture score table.

use std::path::PathBuf;

use dlport::canon::SignatureDatabase;
use dlport::dict::{KeywordDictionary, ScoreTable};
use dlport::eval::{load_eval_set, run_suite, DEFAULT_SEEDS};
use dlport::llm::{BackendConfig, PromptTemplate};
use dlport::pipeline::Pipeline;

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let dict = KeywordDictionary::load(&root.join("dict/pytorch-keras.json"))?;
    let tmpl = PromptTemplate::load(
        &root.join("prompts/pytorch-keras.txt"),
        dict.src_framework,
        dict.tgt_framework,
    )?;
    let backend = BackendConfig::load(&root.join("backend_mock.json"))?.build()?;
    let mut pipeline = Pipeline::new(
        SignatureDatabase::load(&root.join("db/pytorch.json"))?,
        SignatureDatabase::load(&root.join("db/keras.json"))?,
        dict,
        tmpl,
        backend,
    )?;
    let table = ScoreTable::load(&root.join("scores/pytorch-keras.json"))?;
    let (v1, v2) = table.vocabs();
    pipeline.scores = Some((table.matrix()?, v1, v2));

    let examples = load_eval_set(&root.join("eval/pytorch-keras.jsonl"))?;
    let dbs = [&pipeline.src_db, &pipeline.tgt_db];
    let report = run_suite(&pipeline, &examples, &DEFAULT_SEEDS, &dbs, None)?;
    for row in &report.seeds {
        println!(
            "seed {} f1 {:.3} em {:.3}",
            row.seed, row.f1, row.exact_match
        );
        for r in row.results.iter().filter(|r| !r.exact_match) {
            println!("  miss {} (f1 {:.3})", r.id, r.f1);
        }
    }
    println!("{}", serde_json::to_string_pretty(&report.keyword_metrics)?);
    println!("hash {}", report.hash());
    Ok(())
}
