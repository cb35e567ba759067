//! Random module sources built from a signature database, for round-trip
//! testing of the canonicalizer, skeletonizer and serializers.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canon::{ApiSignature, Framework, SignatureDatabase};

const BASE_NAMES: [&str; 5] = [
    "nn.Module",
    "layers.Layer",
    "keras.Model",
    "nn.Block",
    "nn.HybridBlock",
];
const NAMES: [&str; 8] = ["x", "h", "out", "hidden", "feats", "y", "z", "mask"];
const STRINGS: [&str; 6] = [
    "'same'",
    "'valid'",
    "'relu'",
    "\"zeros\"",
    "'mean'",
    "\"tanh\"",
];

struct Gen<'a> {
    db: &'a SignatureDatabase,
    rng: ChaCha8Rng,
    calls: Vec<&'a ApiSignature>,
    bases: Vec<&'a ApiSignature>,
}

/// `n` source units for `db`'s framework; the same seed gives the same units.
pub fn fuzz_units(db: &SignatureDatabase, n: usize, seed: u64) -> Vec<String> {
    let bases: Vec<_> = db
        .signatures()
        .filter(|s| BASE_NAMES.contains(&s.canonical_name.as_str()))
        .collect();
    let calls: Vec<_> = db.signatures().filter(|s| !bases.contains(s)).collect();
    let mut g = Gen {
        db,
        rng: ChaCha8Rng::seed_from_u64(seed),
        calls,
        bases,
    };
    (0..n).map(|i| g.unit(i)).collect()
}

impl Gen<'_> {
    fn unit(&mut self, i: usize) -> String {
        let mut out = self.imports();
        if self.rng.random_bool(0.3) {
            out.push('\n');
        }
        for c in 0..self.rng.random_range(1..=3) {
            out.push_str(&self.class(&format!("Model{i}x{c}")));
            if self.rng.random_bool(0.5) {
                out.push('\n');
            }
        }
        if self.rng.random_bool(0.3) {
            out.push_str(&format!("def build_{i}():\n    return {}\n", self.call(2)));
        }
        out
    }

    fn imports(&mut self) -> String {
        let mut pairs: Vec<_> = self.db.import_aliases.iter().collect();
        pairs.shuffle(&mut self.rng);
        let keep = self.rng.random_range(1..=pairs.len().max(1));
        pairs
            .into_iter()
            .take(keep)
            .map(|(module, short)| {
                if module == short {
                    format!("import {module}\n")
                } else {
                    format!("import {module} as {short}\n")
                }
            })
            .collect()
    }

    fn class(&mut self, name: &str) -> String {
        let base = match self.bases.choose(&mut self.rng) {
            Some(b) => self.spell(&b.canonical_name.clone()),
            None => "object".into(),
        };
        let mut s = format!("class {name}({base}):\n");
        if self.rng.random_bool(0.3) {
            s.push_str("    \"\"\"Generated.\"\"\"\n");
        }
        s.push_str("    def __init__(self, dim=16):\n        super().__init__()\n");
        let n = self.rng.random_range(1..=6);
        for j in 0..n {
            let line = match self.rng.random_range(0..10) {
                0 => format!("self.l{j} = [{}, {}]", self.call(1), self.call(1)),
                1 => format!("self.l{j} = ({},)", self.call(1)),
                2 => format!("tmp{j} = {}", self.call(1)),
                3 => format!("# layer {j}"),
                _ => format!("self.l{j} = {}", self.call(2)),
            };
            s.push_str(&format!("        {line}\n"));
        }
        let method = if self.db.framework == Framework::Keras {
            "call"
        } else {
            "forward"
        };
        s.push_str(&format!("    def {method}(self, x):\n"));
        for j in 0..n {
            match self.rng.random_range(0..6) {
                0 => s.push_str(&format!(
                    "        if self.training:\n            x = self.l{j}(x)\n"
                )),
                1 => s.push_str(&format!(
                    "        for _ in range({}):\n            x = x + 1\n",
                    j + 1
                )),
                2 => {
                    let c = self.call_on_x();
                    s.push_str(&format!("        x = {c}\n"));
                }
                _ => s.push_str(&format!("        x = self.l{j}(x)\n")),
            }
        }
        s.push_str("        return x\n");
        s
    }

    /// A database name, sometimes spelled through an alias or a long module path.
    fn spell(&mut self, canonical: &str) -> String {
        let sig = self.db.signature(canonical);
        let mut options = vec![canonical.to_string()];
        if let Some(sig) = sig {
            options.extend(sig.aliases.iter().cloned());
        }
        if let Some((prefix, rest)) = canonical.split_once('.') {
            for (module, short) in &self.db.import_aliases {
                if short == prefix && module != short {
                    options.push(format!("{module}.{rest}"));
                }
            }
        }
        options.choose(&mut self.rng).cloned().unwrap_or_default()
    }

    fn value(&mut self, depth: usize) -> String {
        match self.rng.random_range(0..9) {
            0..=2 => self.rng.random_range(1..2048).to_string(),
            3 => format!("{:.2}", self.rng.random_range(0.0..1.0)),
            4 => ["True", "False", "None"]
                .choose(&mut self.rng)
                .unwrap()
                .to_string(),
            5 => STRINGS.choose(&mut self.rng).unwrap().to_string(),
            6 => format!(
                "({}, {})",
                self.rng.random_range(1..8),
                self.rng.random_range(1..8)
            ),
            7 if depth > 0 => self.call(depth - 1),
            _ => ["dim", "dim * 2", "dim // 4"]
                .choose(&mut self.rng)
                .unwrap()
                .to_string(),
        }
    }

    fn call(&mut self, depth: usize) -> String {
        let sig = *self
            .calls
            .choose(&mut self.rng)
            .expect("database has callables");
        let name = self.spell(&sig.canonical_name);
        let mut args = Vec::new();
        if sig.variadic {
            for _ in 0..self.rng.random_range(0..=3) {
                let a = if depth > 0 {
                    self.call(depth - 1)
                } else {
                    self.value(0)
                };
                args.push(a);
            }
        } else {
            let n = sig.parameters.len();
            let positional = self.rng.random_range(0..=n);
            for _ in 0..positional {
                args.push(self.value(depth));
            }
            let mut rest: Vec<&String> = sig.parameters[positional..].iter().collect();
            rest.shuffle(&mut self.rng);
            for (k, p) in rest.into_iter().enumerate() {
                let required = positional + k < sig.required_count;
                if required || self.rng.random_bool(0.4) {
                    let v = self.value(depth);
                    args.push(format!("{p}={v}"));
                }
            }
        }
        format!("{name}({})", args.join(", "))
    }

    fn call_on_x(&mut self) -> String {
        let unary: Vec<_> = self
            .calls
            .iter()
            .filter(|s| !s.parameters.is_empty() && !s.variadic)
            .copied()
            .collect();
        match unary.choose(&mut self.rng) {
            Some(sig) => {
                let name = self.spell(&sig.canonical_name.clone());
                let var = NAMES.choose(&mut self.rng).unwrap();
                format!("{name}({var})")
            }
            None => "x".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_parseable() {
        let db = SignatureDatabase::from_json(include_str!("../fixtures/db/pytorch.json")).unwrap();
        let a = fuzz_units(&db, 20, 3);
        assert_eq!(a, fuzz_units(&db, 20, 3));
        assert_ne!(a, fuzz_units(&db, 20, 4));
        for u in &a {
            crate::python::parse_module(u).unwrap_or_else(|e| panic!("{e}\n{u}"));
        }
    }
}
