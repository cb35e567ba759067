//! Rescales a fixture score table with CSLS and induces keyword dictionaries
//! with and without parameter expansion.

use dlport::dict::{csls_rescale, generate_dictionary, DictConfig, ScoreTable};

fn main() -> anyhow::Result<()> {
    let table = ScoreTable::from_json(include_str!("../fixtures/scores/keras-pytorch.json"))?;
    let (v1, v2) = table.vocabs();
    let scores = table.matrix()?;
    for (label, cfg) in [
        ("expanding", DictConfig::default()),
        (
            "plain",
            DictConfig {
                tau: None,
                ..Default::default()
            },
        ),
    ] {
        let dict = generate_dictionary(&v1, &v2, &scores, &cfg)?;
        println!("-- {label}");
        for (src, tgt) in dict.keyword_pairs() {
            println!("{} -> {}", src.qualified(), tgt.qualified());
        }
        for g in &dict.groups {
            for e in &g.expansions {
                println!(
                    "{}::{} -> extra call {}",
                    g.src_callable, e.src_param, e.new_call
                );
            }
        }
    }
    let csls = csls_rescale(&scores, 3)?;
    let dict = generate_dictionary(
        &v1,
        &v2,
        &csls,
        &DictConfig {
            tau: None,
            ..Default::default()
        },
    )?;
    println!("-- csls k=3: {} groups", dict.groups.len());
    Ok(())
}
