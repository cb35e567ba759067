//! Transpiles the fixture module from PyTorch to Keras with the committed
//! dictionary and the offline backend.

use std::path::PathBuf;

use dlport::canon::SignatureDatabase;
use dlport::dict::KeywordDictionary;
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
    let pipeline = Pipeline::new(
        SignatureDatabase::load(&root.join("db/pytorch.json"))?,
        SignatureDatabase::load(&root.join("db/keras.json"))?,
        dict,
        tmpl,
        backend,
    )?;
    let out = pipeline.transpile(&std::fs::read_to_string(root.join("net/input.py"))?)?;
    println!(
        "skeleton:\n{}\ntarget skeleton:\n{}\nresult:\n{}",
        out.skeleton.text, out.target_skeleton, out.text
    );
    Ok(())
}
