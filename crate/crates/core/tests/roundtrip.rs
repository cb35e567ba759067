use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dlport::canon::{canonicalize, extract_keywords, ApiKeyword, SignatureDatabase, SourceUnit};
use dlport::dict::{generate_dictionary, DictConfig, KeywordDictionary, Measure, ScoreMatrix};
use dlport::fuzz::fuzz_units;
use dlport::skeleton::{reinsert, to_skeleton, validate_placeholders, Translations};
use dlport::train::{initial_checkpoint, Checkpoint, TrainConfig};

fn db(name: &str) -> SignatureDatabase {
    let path = format!("{}/fixtures/db/{name}.json", env!("CARGO_MANIFEST_DIR"));
    SignatureDatabase::load(std::path::Path::new(&path)).unwrap()
}

fn corpus() -> Vec<(SignatureDatabase, Vec<String>)> {
    [("pytorch", 1000, 1), ("keras", 500, 2), ("mxnet", 500, 3)]
        .into_iter()
        .map(|(name, n, seed)| {
            let db = db(name);
            let units = fuzz_units(&db, n, seed);
            (db, units)
        })
        .collect()
}

fn vocab(db: &SignatureDatabase, text: &str) -> Vec<ApiKeyword> {
    let unit = canonicalize(&SourceUnit::new(text, db.framework), db).unwrap();
    let set: BTreeSet<_> = extract_keywords(&unit, db)
        .unwrap()
        .into_iter()
        .map(|o| o.keyword.qualified())
        .collect();
    set.into_iter()
        .map(|q| dlport::eval::parse_qualified(db.framework, &q))
        .collect()
}

#[test]
fn canonicalization_is_idempotent_and_skeletons_reinsert_exactly() {
    let (mut checked, mut occurrences) = (0, 0);
    for (db, units) in corpus() {
        for (i, text) in units.iter().enumerate() {
            let once = canonicalize(&SourceUnit::new(text, db.framework), &db)
                .unwrap_or_else(|e| panic!("{} unit {i}: {e}\n{text}", db.framework));
            let twice = canonicalize(&once, &db).unwrap();
            assert_eq!(
                once.text, twice.text,
                "{} unit {i} not idempotent",
                db.framework
            );

            let occs = extract_keywords(&once, &db).unwrap();
            occurrences += occs.len();
            let sk = to_skeleton(&once.text, &occs).unwrap();
            validate_placeholders(&sk, &sk.text).unwrap();
            let identity: Translations = occs
                .iter()
                .enumerate()
                .map(|(k, o)| (k + 1, vec![o.keyword.text.clone()]))
                .collect();
            let back = reinsert(&sk.text, &identity).unwrap();
            assert_eq!(
                back, once.text,
                "{} unit {i} skeleton round trip",
                db.framework
            );
            checked += 1;
        }
    }
    assert!(checked >= 1000);
    assert!(occurrences > 20 * checked, "{occurrences}");
}

#[test]
fn dictionaries_survive_json() {
    let torch = db("pytorch");
    let keras = db("keras");
    let src_units = fuzz_units(&torch, 1000, 11);
    let tgt_units = fuzz_units(&keras, 1000, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for (i, (a, b)) in src_units.iter().zip(&tgt_units).enumerate() {
        let (v1, v2) = (vocab(&torch, a), vocab(&keras, b));
        if v1.is_empty() || v2.is_empty() {
            continue;
        }
        let scores = Array2::from_shape_fn((v1.len(), v2.len()), |_| {
            6.0 * rng.sample::<f64, _>(StandardNormal)
        });
        let s = ScoreMatrix::new(scores, Measure::Dot);
        let cfg = DictConfig {
            tau: Some(rng.random_range(0.0..8.0)),
            ..Default::default()
        };
        let dict = generate_dictionary(&v1, &v2, &s, &cfg).unwrap();
        let back = KeywordDictionary::from_json(&dict.to_json()).unwrap();
        assert_eq!(back, dict, "unit {i}");
        checked += 1;
    }
    assert!(checked >= 990, "{checked}");
}

#[test]
fn checkpoints_survive_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000u64 {
        let cfg = TrainConfig {
            d: rng.random_range(1..6),
            seed: i,
            ..Default::default()
        };
        let d_b = rng.random_range(1..6);
        let sizes = [rng.random_range(1..12), rng.random_range(1..12)];
        let ck = initial_checkpoint(d_b, &cfg, sizes).unwrap();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck, "checkpoint {i}");
    }
}
