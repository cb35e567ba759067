//! Embeds every keyword occurrence of the fixture corpus with the hashed and
//! the skip-gram context providers, and writes a few vectors in the text format.

use std::path::PathBuf;
use std::sync::Arc;

use dlport::canon::SignatureDatabase;
use dlport::corpus::{Corpus, IngestOptions};
use dlport::embed::{
    bpe_train, embed_batch, ContextWindow, EmbeddingProvider, FileBacked, HashProvider,
    SkipGramConfig, VectorEncoding,
};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
        * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let db = SignatureDatabase::load(&root.join("db/pytorch.json"))?;
    let corpus = Corpus::ingest(
        &[root.join("corpus/torch")],
        &[&db],
        &IngestOptions::default(),
    )?;
    let texts: Vec<&str> = corpus
        .units(db.framework)
        .iter()
        .map(|u| u.text.as_str())
        .collect();
    let bpe = Arc::new(bpe_train(texts.iter().copied(), 300));
    let occs = corpus.occurrences(&db)?;

    let hashed = HashProvider::new(bpe.clone(), 16, 10);
    let context = ContextWindow::train(
        bpe,
        &texts,
        SkipGramConfig {
            d_b: 16,
            ..Default::default()
        },
    );
    for provider in [&hashed as &dyn EmbeddingProvider, &context] {
        let embs = embed_batch(provider, &occs)?;
        let same: Vec<usize> = (0..occs.len())
            .filter(|&i| occs[i].keyword.qualified() == "nn.Linear")
            .collect();
        let c = if same.len() >= 2 {
            cosine(&embs[same[0]].vector, &embs[same[1]].vector)
        } else {
            f64::NAN
        };
        println!(
            "{}: {} occurrences, cos of the first two nn.Linear occurrences {c:.6}",
            provider.kind(),
            embs.len()
        );
    }

    let mut file = FileBacked::new(16);
    for e in embed_batch(&hashed, &occs[..3])? {
        file.insert(e.occurrence, e.vector.iter().map(|&x| x as f32).collect())?;
    }
    file.write(&mut std::io::stdout(), VectorEncoding::Base64)?;
    Ok(())
}
