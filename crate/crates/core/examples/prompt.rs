//! Renders the few-shot prompt for a skeleton and completes it with the
//! offline rule-based backend.

use dlport::canon::{canonicalize, extract_keywords, Framework, SignatureDatabase, SourceUnit};
use dlport::llm::{render_prompt, transpile_skeleton, MockRules, PromptTemplate};
use dlport::skeleton::to_skeleton;

fn main() -> anyhow::Result<()> {
    let db = SignatureDatabase::from_json(include_str!("../fixtures/db/pytorch.json"))?;
    let tmpl = PromptTemplate::parse(
        include_str!("../fixtures/prompts/pytorch-keras.txt"),
        Framework::Pytorch,
        Framework::Keras,
    )?;
    let unit = canonicalize(
        &SourceUnit::new(include_str!("../fixtures/net/input.py"), db.framework),
        &db,
    )?;
    let skeleton = to_skeleton(&unit.text, &extract_keywords(&unit, &db)?)?;
    let prompt = render_prompt(&skeleton, &tmpl);
    println!(
        "{} prompt lines, query:\n{}",
        prompt.lines().count(),
        skeleton.text
    );
    let backend = MockRules::from_json(include_str!("../fixtures/mock_rules.json"))?;
    print!("{}", transpile_skeleton(&skeleton, &tmpl, &backend)?);
    Ok(())
}
