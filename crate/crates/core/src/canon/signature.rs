use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CanonError;

/// A registered deep-learning framework dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Pytorch,
    Keras,
    Mxnet,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Pytorch, Framework::Keras, Framework::Mxnet];

    pub fn id(self) -> &'static str {
        match self {
            Framework::Pytorch => "pytorch",
            Framework::Keras => "keras",
            Framework::Mxnet => "mxnet",
        }
    }

    /// Human-facing name used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Framework::Pytorch => "PyTorch",
            Framework::Keras => "Keras",
            Framework::Mxnet => "MXNet",
        }
    }

    /// Marker substring used by the corpus text filter.
    pub fn marker(self) -> &'static str {
        match self {
            Framework::Pytorch => "torch",
            Framework::Keras => "keras",
            Framework::Mxnet => "mxnet",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Framework {
    type Err = CanonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pytorch" | "torch" => Ok(Framework::Pytorch),
            "keras" | "tensorflow" => Ok(Framework::Keras),
            "mxnet" => Ok(Framework::Mxnet),
            _ => Err(CanonError::UnknownFramework(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSignature {
    pub canonical_name: String,
    #[serde(default)]
    pub aliases: BTreeSet<String>,
    pub parameters: Vec<String>,
    #[serde(default)]
    pub required_count: usize,
    /// Accepts surplus positional arguments (`*args`), e.g. `nn.Sequential`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub variadic: bool,
}

impl ApiSignature {
    pub fn new(canonical_name: &str, parameters: &[&str]) -> Self {
        ApiSignature {
            canonical_name: canonical_name.to_string(),
            aliases: BTreeSet::new(),
            parameters: parameters.iter().map(|p| p.to_string()).collect(),
            required_count: 0,
            variadic: false,
        }
    }

    pub fn variadic(mut self) -> Self {
        self.variadic = true;
        self
    }

    pub fn with_aliases(mut self, aliases: &[&str]) -> Self {
        self.aliases = aliases.iter().map(|a| a.to_string()).collect();
        self
    }

    pub fn position_of(&self, param: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p == param)
    }

    fn validate(&self) -> Result<(), CanonError> {
        let bad = |msg: String| {
            Err(CanonError::InvalidDatabase(format!(
                "{}: {msg}",
                self.canonical_name
            )))
        };
        let unique: BTreeSet<_> = self.parameters.iter().collect();
        if unique.len() != self.parameters.len() {
            return bad("duplicate parameter name".into());
        }
        if self.required_count > self.parameters.len() {
            return bad(format!(
                "required_count {} exceeds {} parameters",
                self.required_count,
                self.parameters.len()
            ));
        }
        if self.aliases.contains(&self.canonical_name) {
            return bad("canonical name listed among its aliases".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatabaseFile {
    framework: Framework,
    #[serde(default)]
    import_aliases: BTreeMap<String, String>,
    #[serde(default)]
    signatures: Vec<ApiSignature>,
}

/// Per-framework table of import aliases and API signatures. Read-only after load.
#[derive(Debug, Clone)]
pub struct SignatureDatabase {
    pub framework: Framework,
    pub import_aliases: BTreeMap<String, String>,
    signatures: BTreeMap<String, ApiSignature>,
    alias_index: HashMap<String, String>,
    short_names: BTreeSet<String>,
}

impl SignatureDatabase {
    pub fn new(
        framework: Framework,
        import_aliases: BTreeMap<String, String>,
        signatures: Vec<ApiSignature>,
    ) -> Result<Self, CanonError> {
        let mut by_name = BTreeMap::new();
        for sig in signatures {
            sig.validate()?;
            if by_name.insert(sig.canonical_name.clone(), sig).is_some() {
                return Err(CanonError::InvalidDatabase(
                    "duplicate canonical name".into(),
                ));
            }
        }
        let mut alias_index = HashMap::new();
        for sig in by_name.values() {
            for alias in &sig.aliases {
                if by_name.contains_key(alias) {
                    return Err(CanonError::InvalidDatabase(format!(
                        "alias {alias} is also a canonical name"
                    )));
                }
                if let Some(prev) = alias_index.insert(alias.clone(), sig.canonical_name.clone()) {
                    return Err(CanonError::InvalidDatabase(format!(
                        "alias {alias} resolves to both {prev} and {}",
                        sig.canonical_name
                    )));
                }
            }
        }
        let short_names: BTreeSet<String> = import_aliases.values().cloned().collect();
        for short in &short_names {
            if let Some(target) = import_aliases.get(short) {
                if target != short {
                    return Err(CanonError::InvalidDatabase(format!(
                        "short name {short} is itself rewritten to {target}"
                    )));
                }
            }
        }
        Ok(SignatureDatabase {
            framework,
            import_aliases,
            signatures: by_name,
            alias_index,
            short_names,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, CanonError> {
        let file: DatabaseFile =
            serde_json::from_str(text).map_err(|e| CanonError::InvalidDatabase(e.to_string()))?;
        Self::new(file.framework, file.import_aliases, file.signatures)
    }

    pub fn load(path: &Path) -> Result<Self, CanonError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CanonError::InvalidDatabase(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = DatabaseFile {
            framework: self.framework,
            import_aliases: self.import_aliases.clone(),
            signatures: self.signatures.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("database serializes")
    }

    pub fn signature(&self, canonical_name: &str) -> Option<&ApiSignature> {
        self.signatures.get(canonical_name)
    }

    pub fn signatures(&self) -> impl Iterator<Item = &ApiSignature> {
        self.signatures.values()
    }

    /// Maps a callable alias to its canonical name; canonical names map to themselves.
    pub fn resolve_callable(&self, name: &str) -> Option<&str> {
        if let Some((k, _)) = self.signatures.get_key_value(name) {
            return Some(k.as_str());
        }
        self.alias_index.get(name).map(String::as_str)
    }

    /// Rewrites the longest module-path prefix of `path` that has a registered
    /// short name. Returns `None` when the path does not start with a known module.
    pub fn unify_module_prefix(&self, path: &str) -> Option<String> {
        let parts: Vec<&str> = path.split('.').collect();
        for cut in (1..=parts.len()).rev() {
            let prefix = parts[..cut].join(".");
            if let Some(short) = self.import_aliases.get(&prefix) {
                let mut out = short.clone();
                for p in &parts[cut..] {
                    out.push('.');
                    out.push_str(p);
                }
                return Some(out);
            }
        }
        if self.short_names.contains(parts[0]) {
            return Some(path.to_string());
        }
        None
    }
}
