use std::collections::{BTreeMap, HashSet};

use crate::python::ast::{walk_stmts_mut, Alias, Arg, Expr, Module, Stmt};
use crate::python::{parse_module, unparse};

use super::{ApiSignature, CanonError, SignatureDatabase, SourceUnit};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CanonOptions {
    /// Fail on framework-prefixed calls missing from the database.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonWarning {
    /// A recognized API call used `*args`/`**kwargs` and was left as written.
    StarArguments { callee: String },
}

/// Local name → fully qualified module path, collected from import statements.
#[derive(Debug, Clone, Default)]
pub struct ImportEnv {
    bindings: BTreeMap<String, String>,
}

impl ImportEnv {
    pub fn from_module(module: &Module) -> Self {
        let mut env = ImportEnv::default();
        for stmt in &module.body {
            env.record(stmt);
        }
        env
    }

    fn record(&mut self, stmt: &Stmt) {
        match stmt {
            Stmt::Import(names) => {
                for a in names {
                    match &a.asname {
                        Some(local) => {
                            self.bindings.insert(local.clone(), a.name.clone());
                        }
                        None => {
                            let head = a.name.split('.').next().unwrap_or_default().to_string();
                            self.bindings.insert(head.clone(), head);
                        }
                    }
                }
            }
            Stmt::ImportFrom {
                module: Some(m),
                level: 0,
                names,
            } => {
                for a in names.iter().filter(|a| a.name != "*") {
                    let local = a.asname.clone().unwrap_or_else(|| a.name.clone());
                    self.bindings.insert(local, format!("{m}.{}", a.name));
                }
            }
            _ => {}
        }
    }

    /// Expands the head of a dotted path through the import bindings.
    pub fn qualify(&self, path: &str) -> Option<String> {
        let (head, tail) = match path.split_once('.') {
            Some((h, t)) => (h, Some(t)),
            None => (path, None),
        };
        let full = self.bindings.get(head)?;
        Some(match tail {
            Some(t) => format!("{full}.{t}"),
            None => full.clone(),
        })
    }
}

/// Rewrites every name/attribute chain in `module` to its fully qualified path.
pub fn qualify_names(stmts: &mut [Stmt], env: &ImportEnv) {
    walk_stmts_mut(stmts, &mut |e| {
        if let Some(path) = e.as_dotted() {
            if let Some(full) = env.qualify(&path) {
                if full != path {
                    *e = Expr::dotted(&full);
                }
            }
            return false;
        }
        true
    });
}

pub fn canonicalize(unit: &SourceUnit, db: &SignatureDatabase) -> Result<SourceUnit, CanonError> {
    canonicalize_with(unit, db, CanonOptions::default()).map(|(u, _)| u)
}

pub fn canonicalize_with(
    unit: &SourceUnit,
    db: &SignatureDatabase,
    opts: CanonOptions,
) -> Result<(SourceUnit, Vec<CanonWarning>), CanonError> {
    if unit.framework != db.framework {
        return Err(CanonError::FrameworkMismatch {
            unit: unit.framework,
            database: db.framework,
        });
    }
    let mut module = parse_module(&unit.text)?;
    let warnings = canonicalize_module(&mut module, db, opts)?;
    let text = unparse(&module);
    Ok((
        SourceUnit {
            text,
            framework: unit.framework,
            origin: unit.origin.clone(),
        },
        warnings,
    ))
}

/// Applies import-alias unification, callable-alias resolution and argument
/// binding to a parsed module in place.
pub fn canonicalize_module(
    module: &mut Module,
    db: &SignatureDatabase,
    opts: CanonOptions,
) -> Result<Vec<CanonWarning>, CanonError> {
    let env = ImportEnv::from_module(module);
    for stmt in &mut module.body {
        unify_import(stmt, db);
    }
    let mut result = Ok(());
    let mut warnings = Vec::new();
    walk_stmts_mut(&mut module.body, &mut |e| {
        if result.is_err() {
            return false;
        }
        if let Some(path) = e.as_dotted() {
            let resolved = resolve_reference(&path, &env, db);
            if resolved != path {
                *e = Expr::dotted(&resolved);
            }
            return false;
        }
        if let Expr::Call { func, args } = e {
            // Resolve the callee first so binding sees the canonical name.
            if let Some(path) = func.as_dotted() {
                let resolved = resolve_reference(&path, &env, db);
                if resolved != path {
                    **func = Expr::dotted(&resolved);
                }
                if let Some(sig) = db.signature(&resolved) {
                    if args.iter().any(Arg::is_star) {
                        warnings.push(CanonWarning::StarArguments { callee: resolved });
                    } else {
                        match bind_arguments(args, sig) {
                            Ok(bound) => *args = bound,
                            Err(err) => result = Err(err),
                        }
                    }
                } else if opts.strict
                    && db.unify_module_prefix(&resolved).is_some()
                    && is_framework_path(&path, &env, db)
                {
                    result = Err(CanonError::UnknownCallable(resolved));
                }
            }
        }
        true
    });
    result.map(|_| warnings)
}

fn is_framework_path(path: &str, env: &ImportEnv, db: &SignatureDatabase) -> bool {
    let qualified = env.qualify(path).unwrap_or_else(|| path.to_string());
    // A bare head like `layers` counts only when there is an attribute after it.
    qualified.contains('.') && db.unify_module_prefix(&qualified).is_some()
}

/// Unifies a dotted reference: import binding, module short name, callable alias.
fn resolve_reference(path: &str, env: &ImportEnv, db: &SignatureDatabase) -> String {
    let qualified = env.qualify(path);
    let candidate = qualified.as_deref().unwrap_or(path);
    let unified = match db.unify_module_prefix(candidate) {
        Some(u) => u,
        None => return path.to_string(),
    };
    match db.resolve_callable(&unified) {
        Some(canonical) => canonical.to_string(),
        None => unified,
    }
}

fn unify_import(stmt: &mut Stmt, db: &SignatureDatabase) {
    let short_for = |full: &str| db.import_aliases.get(full).cloned();
    match stmt {
        Stmt::Import(names) => {
            for a in names.iter_mut() {
                if a.asname.is_none() {
                    continue;
                }
                if let Some(short) = short_for(&a.name) {
                    if !short.contains('.') {
                        a.asname = Some(short);
                    }
                }
            }
        }
        Stmt::ImportFrom {
            module: Some(m),
            level: 0,
            names,
        } => {
            for a in names.iter_mut() {
                if a.name == "*" {
                    continue;
                }
                if let Some(short) = short_for(&format!("{m}.{}", a.name)) {
                    if short.contains('.') {
                        continue;
                    }
                    a.asname = if short == a.name { None } else { Some(short) };
                }
            }
        }
        _ => {}
    }
    if let Stmt::Import(names) | Stmt::ImportFrom { names, .. } = stmt {
        dedup_aliases(names);
    }
}

fn dedup_aliases(names: &mut Vec<Alias>) {
    let mut seen = HashSet::new();
    names.retain(|a| seen.insert((a.name.clone(), a.asname.clone())));
}

/// Converts positional arguments to keyword form and orders keywords by the
/// signature. Keywords unknown to the signature keep their relative order
/// after the known ones. Value expressions are moved, never rewritten.
pub fn bind_arguments(args: &[Arg], sig: &ApiSignature) -> Result<Vec<Arg>, CanonError> {
    let positional_count = args
        .iter()
        .filter(|a| matches!(a, Arg::Positional(_)))
        .count();
    if sig.variadic && positional_count > sig.parameters.len() {
        // Surplus positionals belong to `*args`; only keywords can be reordered.
        let (mut pos, kw): (Vec<Arg>, Vec<Arg>) = args
            .iter()
            .cloned()
            .partition(|a| matches!(a, Arg::Positional(_)));
        let keywords = bind_arguments(&kw, sig)?;
        pos.extend(keywords);
        return Ok(pos);
    }
    let mut slots: Vec<Option<Expr>> = vec![None; sig.parameters.len()];
    let mut extra: Vec<(String, Expr)> = Vec::new();
    let mut positional = 0;
    for arg in args {
        match arg {
            Arg::Positional(value) => {
                if positional >= sig.parameters.len() {
                    return Err(CanonError::Arity {
                        callee: sig.canonical_name.clone(),
                        given: positional_count,
                        max: sig.parameters.len(),
                    });
                }
                slots[positional] = Some(value.clone());
                positional += 1;
            }
            Arg::Keyword { name, value } => match sig.position_of(name) {
                Some(idx) => {
                    if slots[idx].is_some() {
                        return Err(CanonError::DuplicateKeyword {
                            callee: sig.canonical_name.clone(),
                            name: name.clone(),
                        });
                    }
                    slots[idx] = Some(value.clone());
                }
                None => {
                    if extra.iter().any(|(n, _)| n == name) {
                        return Err(CanonError::DuplicateKeyword {
                            callee: sig.canonical_name.clone(),
                            name: name.clone(),
                        });
                    }
                    extra.push((name.clone(), value.clone()));
                }
            },
            Arg::Star(_) | Arg::DoubleStar(_) => {
                return Err(CanonError::StarArguments(sig.canonical_name.clone()));
            }
        }
    }
    let mut out: Vec<Arg> = sig
        .parameters
        .iter()
        .zip(slots)
        .filter_map(|(name, value)| {
            value.map(|value| Arg::Keyword {
                name: name.clone(),
                value,
            })
        })
        .collect();
    out.extend(
        extra
            .into_iter()
            .map(|(name, value)| Arg::Keyword { name, value }),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::Framework;
    use crate::python::parse_expression;

    fn torch_db() -> SignatureDatabase {
        let aliases = [("torch.nn", "nn"), ("torch", "torch")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        SignatureDatabase::new(
            Framework::Pytorch,
            aliases,
            vec![
                ApiSignature::new("nn.Linear", &["in_features", "out_features", "bias"]),
                ApiSignature::new(
                    "nn.Conv2d",
                    &[
                        "in_channels",
                        "out_channels",
                        "kernel_size",
                        "stride",
                        "padding",
                    ],
                ),
                ApiSignature::new("nn.ReLU", &["inplace"]),
                ApiSignature::new("nn.Sequential", &[]).variadic(),
            ],
        )
        .unwrap()
    }

    fn canon(src: &str) -> String {
        canonicalize(&SourceUnit::new(src, Framework::Pytorch), &torch_db())
            .unwrap()
            .text
    }

    fn call_args(src: &str) -> Vec<Arg> {
        match parse_expression(src).unwrap() {
            Expr::Call { args, .. } => args,
            _ => panic!(),
        }
    }

    #[test]
    fn module_prefix_and_positional_binding() {
        assert_eq!(
            canon("torch.nn.Linear(128, 64)\n"),
            "nn.Linear(in_features=128, out_features=64)\n"
        );
    }

    #[test]
    fn import_binding_is_followed() {
        let out = canon("import torch.nn as tnn\nx = tnn.Linear(4, 2, bias=False)\n");
        assert_eq!(
            out,
            "import torch.nn as nn\nx = nn.Linear(in_features=4, out_features=2, bias=False)\n"
        );
        let out = canon("from torch.nn import Linear\nx = Linear(4, 2)\n");
        assert_eq!(
            out,
            "from torch.nn import Linear\nx = nn.Linear(in_features=4, out_features=2)\n"
        );
    }

    #[test]
    fn bind_orders_and_converts() {
        let sig = ApiSignature::new(
            "nn.Conv2d",
            &[
                "in_channels",
                "out_channels",
                "kernel_size",
                "stride",
                "padding",
            ],
        );
        let bound = bind_arguments(&call_args("f(3, 16, kernel_size=3)"), &sig).unwrap();
        let names: Vec<_> = bound
            .iter()
            .map(|a| match a {
                Arg::Keyword { name, .. } => name.as_str(),
                _ => panic!(),
            })
            .collect();
        assert_eq!(names, ["in_channels", "out_channels", "kernel_size"]);
    }

    #[test]
    fn variadic_surplus_stays_positional() {
        let sig = ApiSignature::new("nn.Sequential", &[]).variadic();
        let bound = bind_arguments(&call_args("f(a, b)"), &sig).unwrap();
        assert!(bound.iter().all(|a| matches!(a, Arg::Positional(_))));
        let sig = ApiSignature::new("g", &["x"]).variadic();
        let bound = bind_arguments(&call_args("g(1)"), &sig).unwrap();
        assert!(matches!(&bound[0], Arg::Keyword { name, .. } if name == "x"));
    }

    #[test]
    fn bind_errors() {
        let sig = ApiSignature::new("f", &["a", "b"]);
        assert!(matches!(
            bind_arguments(&call_args("f(1, 2, 3)"), &sig),
            Err(CanonError::Arity { .. })
        ));
        assert!(matches!(
            bind_arguments(&call_args("f(1, a=2)"), &sig),
            Err(CanonError::DuplicateKeyword { .. })
        ));
        assert!(bind_arguments(&call_args("f()"), &sig).unwrap().is_empty());
    }

    #[test]
    fn star_calls_are_left_alone_with_warning() {
        let unit = SourceUnit::new("nn.Linear(*dims)\n", Framework::Pytorch);
        let (out, warnings) =
            canonicalize_with(&unit, &torch_db(), CanonOptions::default()).unwrap();
        assert_eq!(out.text, "nn.Linear(*dims)\n");
        assert_eq!(
            warnings,
            vec![CanonWarning::StarArguments {
                callee: "nn.Linear".into()
            }]
        );
    }

    #[test]
    fn unknown_calls_pass_through_unless_strict() {
        let unit = SourceUnit::new("y = nn.Mystery(1)\nz = helper(2)\n", Framework::Pytorch);
        let db = torch_db();
        assert_eq!(
            canonicalize(&unit, &db).unwrap().text,
            "y = nn.Mystery(1)\nz = helper(2)\n"
        );
        let strict = CanonOptions { strict: true };
        assert!(
            matches!(canonicalize_with(&unit, &db, strict), Err(CanonError::UnknownCallable(n)) if n == "nn.Mystery")
        );
        let benign = SourceUnit::new("z = helper(2)\nsuper().__init__()\n", Framework::Pytorch);
        assert!(canonicalize_with(&benign, &db, strict).is_ok());
    }

    #[test]
    fn nested_calls_are_bound() {
        assert_eq!(
            canon("nn.Sequential(nn.Linear(2, 3), nn.ReLU(True))\n"),
            "nn.Sequential(nn.Linear(in_features=2, out_features=3), nn.ReLU(inplace=True))\n"
        );
    }

    #[test]
    fn framework_mismatch() {
        let unit = SourceUnit::new("x = 1\n", Framework::Keras);
        assert!(matches!(
            canonicalize(&unit, &torch_db()),
            Err(CanonError::FrameworkMismatch { .. })
        ));
    }

    #[test]
    fn fixed_point_without_aliases() {
        assert_eq!(canon("nn.ReLU()\n"), "nn.ReLU()\n");
    }
}
