//! Builds a corpus from the fixture source trees and prints its manifest.

use std::path::PathBuf;

use dlport::canon::SignatureDatabase;
use dlport::corpus::{Corpus, IngestOptions};

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let torch = SignatureDatabase::load(&root.join("db/pytorch.json"))?;
    let keras = SignatureDatabase::load(&root.join("db/keras.json"))?;
    let dbs = [&torch, &keras];
    let corpus = Corpus::ingest(&[root.join("corpus")], &dbs, &IngestOptions::default())?;
    for fw in corpus.frameworks() {
        for unit in corpus.units(fw) {
            println!("{fw} #{} {}", unit.id, unit.origin);
        }
    }
    for s in &corpus.skipped {
        println!("skipped {}: {}", s.path, s.reason);
    }
    let manifest = corpus.manifest(&dbs, None)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}
