//! Replaces API keywords with placeholders, then fills them back in with
//! target-framework names, dropping one parameter.

use dlport::canon::{canonicalize, extract_keywords, SignatureDatabase, SourceUnit};
use dlport::skeleton::{reinsert, to_skeleton, Translations};

fn main() -> anyhow::Result<()> {
    let db = SignatureDatabase::from_json(include_str!("../fixtures/db/pytorch.json"))?;
    let unit = canonicalize(
        &SourceUnit::new("self.fc = nn.Linear(1024, 10)\n", db.framework),
        &db,
    )?;
    let occs = extract_keywords(&unit, &db)?;
    let skeleton = to_skeleton(&unit.text, &occs)?;
    print!("{}", skeleton.text);

    let mut translations = Translations::new();
    translations.insert(1, vec!["layers.Dense".into()]);
    translations.insert(2, vec![]);
    translations.insert(3, vec!["units".into()]);
    print!("{}", reinsert(&skeleton.text, &translations)?);
    Ok(())
}
