//! Trains on two synthetic frameworks related by a rotation and reports how
//! well the induced dictionary recovers the hidden correspondence.

use dlport::dict::DictConfig;
use dlport::eval::dictionary_precision;
use dlport::train::synthetic::{generate, SyntheticSpec};
use dlport::train::{grid_search, induce_dictionary, TrainConfig, BATCH_GRID, LR_GRID};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let samples: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30_000);
    let problem = generate(&SyntheticSpec::default());
    let vocabs = [problem.vocabs[0].as_slice(), problem.vocabs[1].as_slice()];
    let base = TrainConfig {
        total_samples: samples,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let (cells, best) = grid_search(&problem.samples, vocabs, &base, &LR_GRID, &BATCH_GRID)?;
    for (i, cell) in cells.iter().enumerate() {
        let dict = induce_dictionary(
            &cell.checkpoint.model,
            vocabs,
            &base.selection_measure,
            &DictConfig::default(),
        )?;
        let p1 = dictionary_precision(&dict, &problem.gold);
        println!(
            "lr={:<7} N={:<4} avg_cos={:.4} p@1={:.3} step={}{}",
            cell.peak_lr,
            cell.batch_size,
            cell.score,
            p1,
            cell.checkpoint.step,
            if i == best { "  <- selected" } else { "" }
        );
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
