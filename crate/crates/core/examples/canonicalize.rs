//! Canonicalizes a PyTorch snippet and lists the API keywords found in it.

use dlport::canon::{canonicalize, extract_keywords, SignatureDatabase, SourceUnit};

fn main() -> anyhow::Result<()> {
    let db = SignatureDatabase::from_json(include_str!("../fixtures/db/pytorch.json"))?;
    let src = "import torch.nn as nn\n\nclass Net(nn.Module):\n    def __init__(self):\n        super().__init__()\n        self.conv = torch.nn.Conv2d(3, 64, 3, stride=2)\n        self.drop = nn.Dropout(0.1)\n";
    let unit = canonicalize(&SourceUnit::new(src, db.framework), &db)?;
    println!("{}", unit.text);
    for occ in extract_keywords(&unit, &db)? {
        println!(
            "{:>4}..{:<4} {}",
            occ.span.start,
            occ.span.end,
            occ.keyword.qualified()
        );
    }
    Ok(())
}
