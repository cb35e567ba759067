//! Few-shot translation of code skeletons through a completion backend.
//!
//! Prompts follow the code-translation layout: an instruction line, a
//! sequence of demonstration blocks, then the skeleton to translate. The
//! model is expected to answer with the translated skeleton and `# END`.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canon::Framework;
use crate::skeleton::{scan_placeholders, CodeSkeleton};

pub const STOP_MARKER: &str = "# END";
const SOURCE_SLOT: &str = "{{SOURCE}}";
const TARGET_SLOT: &str = "{{TARGET}}";
const SKELETON_SLOT: &str = "{{SKELETON}}";
/// Demonstrations required: three that only carry placeholders through, one real pair.
pub const MIN_DEMONSTRATIONS: usize = 4;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("completion has no `{STOP_MARKER}` marker")]
    StopMarkerMissing,
    #[error("mock rules: {0}")]
    Rules(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub source: Framework,
    pub target: Framework,
    /// Instruction line with `{{SOURCE}}` and `{{TARGET}}` slots.
    pub instruction: String,
    pub demonstrations: Vec<Demonstration>,
}

impl PromptTemplate {
    /// Parses the plain-text template format:
    ///
    /// ```text
    /// # Translate from {{SOURCE}} to {{TARGET}}
    ///
    /// # {{SOURCE}}
    /// <input skeleton>
    /// # {{TARGET}}
    /// <output skeleton>
    /// # END
    ///
    /// # {{SOURCE}}
    /// {{SKELETON}}
    /// # {{TARGET}}
    /// ```
    pub fn parse(text: &str, source: Framework, target: Framework) -> Result<Self, LlmError> {
        let bad = |m: &str| LlmError::InvalidTemplate(m.to_string());
        let text = text.replace("\r\n", "\n");
        let mut lines = text.lines().peekable();
        let instruction = lines
            .next()
            .ok_or_else(|| bad("empty template"))?
            .to_string();
        if !instruction.contains(SOURCE_SLOT) || !instruction.contains(TARGET_SLOT) {
            return Err(bad("instruction line needs {{SOURCE}} and {{TARGET}}"));
        }
        let src_header = format!("# {SOURCE_SLOT}");
        let tgt_header = format!("# {TARGET_SLOT}");
        let mut demonstrations = Vec::new();
        let mut query_seen = false;
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            if line != src_header {
                return Err(bad(&format!("expected `{src_header}`, found `{line}`")));
            }
            if query_seen {
                return Err(bad("content after the {{SKELETON}} block"));
            }
            let mut input = Vec::new();
            loop {
                match lines.next() {
                    Some(l) if l == tgt_header => break,
                    Some(l) => input.push(l),
                    None => return Err(bad("block without `# {{TARGET}}`")),
                }
            }
            if input == [SKELETON_SLOT] {
                query_seen = true;
                continue;
            }
            let mut output = Vec::new();
            loop {
                match lines.next() {
                    Some(STOP_MARKER) => break,
                    Some(l) => output.push(l),
                    None => return Err(bad("demonstration without `# END`")),
                }
            }
            demonstrations.push(Demonstration {
                input: input.join("\n"),
                output: output.join("\n"),
            });
        }
        if !query_seen {
            return Err(bad("missing {{SKELETON}} block"));
        }
        let tmpl = PromptTemplate {
            source,
            target,
            instruction,
            demonstrations,
        };
        tmpl.validate()?;
        Ok(tmpl)
    }

    pub fn load(path: &Path, source: Framework, target: Framework) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidTemplate(format!("{}: {e}", path.display())))?;
        Self::parse(&text, source, target)
    }

    /// Every demonstration keeps its placeholders; at least one changes the code around them.
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::InvalidTemplate(m));
        if self.demonstrations.len() < MIN_DEMONSTRATIONS {
            return bad(format!(
                "{} demonstrations, need {MIN_DEMONSTRATIONS}",
                self.demonstrations.len()
            ));
        }
        for (k, d) in self.demonstrations.iter().enumerate() {
            let (mut a, mut b) = (scan_placeholders(&d.input), scan_placeholders(&d.output));
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return bad(format!(
                    "demonstration {} does not preserve its placeholders",
                    k + 1
                ));
            }
        }
        if !self.demonstrations.iter().any(|d| d.input != d.output) {
            return bad("no demonstration translates any code".into());
        }
        Ok(())
    }

    /// Template file text; `parse(to_text())` gives back `self`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n\n", self.instruction);
        for d in &self.demonstrations {
            out.push_str(&format!(
                "# {SOURCE_SLOT}\n{}\n# {TARGET_SLOT}\n{}\n{STOP_MARKER}\n\n",
                d.input, d.output
            ));
        }
        out.push_str(&format!(
            "# {SOURCE_SLOT}\n{SKELETON_SLOT}\n# {TARGET_SLOT}\n"
        ));
        out
    }
}

/// Full prompt for `skel`. LF line endings only.
pub fn render_prompt(skel: &CodeSkeleton, tmpl: &PromptTemplate) -> String {
    let (src, tgt) = (tmpl.source.display_name(), tmpl.target.display_name());
    let fill = |s: &str| s.replace(SOURCE_SLOT, src).replace(TARGET_SLOT, tgt);
    let mut out = format!("{}\n\n", fill(&tmpl.instruction));
    for d in &tmpl.demonstrations {
        out.push_str(&format!(
            "# {src}\n{}\n# {tgt}\n{}\n{STOP_MARKER}\n\n",
            d.input, d.output
        ));
    }
    let body = skel.text.replace("\r\n", "\n");
    out.push_str(&format!(
        "# {src}\n{}\n# {tgt}\n",
        body.trim_end_matches('\n')
    ));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub stop: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// The backend reports it halted on the stop sequence (which it may have stripped).
    pub stopped: bool,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError>;
}

/// Translates a skeleton and returns the raw output skeleton, cut at the stop
/// marker. Placeholder validation is the caller's job.
pub fn transpile_skeleton(
    skel: &CodeSkeleton,
    tmpl: &PromptTemplate,
    backend: &dyn CompletionBackend,
) -> Result<String, LlmError> {
    let request = CompletionRequest {
        prompt: render_prompt(skel, tmpl),
        stop: STOP_MARKER.to_string(),
    };
    let completion = backend.complete(&request)?;
    let text = completion.text.replace("\r\n", "\n");
    let body = match find_stop(&text) {
        Some(end) => &text[..end],
        None if completion.stopped => text.as_str(),
        None => return Err(LlmError::StopMarkerMissing),
    };
    let body = body.trim_end();
    Ok(if body.is_empty() {
        String::new()
    } else {
        format!("{body}\n")
    })
}

fn find_stop(text: &str) -> Option<usize> {
    if text.starts_with(STOP_MARKER) {
        return Some(0);
    }
    text.find(&format!("\n{STOP_MARKER}")).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_tokens() -> u32 {
    1024
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    HttpCompletion(HttpConfig),
    HttpChat(HttpConfig),
    MockRules { rules: PathBuf },
}

impl BackendConfig {
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text).map_err(|e| LlmError::Config(e.to_string()))
    }

    /// Reads a config file; a relative rules path resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let BackendConfig::MockRules { rules } = &mut cfg {
            if rules.is_relative() {
                *rules = path.parent().unwrap_or(Path::new(".")).join(&*rules);
            }
        }
        Ok(cfg)
    }

    pub fn build(&self) -> Result<Box<dyn CompletionBackend>, LlmError> {
        Ok(match self {
            BackendConfig::HttpCompletion(c) => {
                Box::new(HttpBackend::new(c.clone(), ApiStyle::Completion)?)
            }
            BackendConfig::HttpChat(c) => Box::new(HttpBackend::new(c.clone(), ApiStyle::Chat)?),
            BackendConfig::MockRules { rules } => Box::new(MockRules::load(rules)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Regex applied to the whole skeleton; use `(?m)` for line anchors.
    pub pattern: String,
    pub replace: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub source: Framework,
    pub target: Framework,
    pub rules: Vec<Rule>,
}

/// Offline backend: reads the query skeleton out of the prompt and rewrites
/// it with the rule set for the prompt's framework pair.
type CompiledRules = Vec<(Regex, String)>;

#[derive(Debug, Clone)]
pub struct MockRules {
    sets: Vec<(Framework, Framework, CompiledRules)>,
}

impl MockRules {
    pub fn new(sets: &[RuleSet]) -> Result<Self, LlmError> {
        let mut out = Vec::new();
        for set in sets {
            let rules = set
                .rules
                .iter()
                .map(|r| Regex::new(&r.pattern).map(|re| (re, r.replace.clone())))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| LlmError::Rules(e.to_string()))?;
            out.push((set.source, set.target, rules));
        }
        Ok(MockRules { sets: out })
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let sets: Vec<RuleSet> =
            serde_json::from_str(text).map_err(|e| LlmError::Rules(e.to_string()))?;
        Self::new(&sets)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Rules(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn rewrite(
        &self,
        source: Framework,
        target: Framework,
        skeleton: &str,
    ) -> Result<String, LlmError> {
        let (_, _, rules) = self
            .sets
            .iter()
            .find(|(s, t, _)| *s == source && *t == target)
            .ok_or_else(|| LlmError::Rules(format!("no rules for {source} -> {target}")))?;
        let mut text = skeleton.to_string();
        for (re, rep) in rules {
            text = re.replace_all(&text, rep.as_str()).into_owned();
        }
        Ok(text)
    }
}

fn framework_by_display(name: &str) -> Option<Framework> {
    Framework::ALL
        .into_iter()
        .find(|f| f.display_name() == name)
}

impl CompletionBackend for MockRules {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let bad = |m: &str| LlmError::Rules(format!("unrecognized prompt: {m}"));
        let header = request.prompt.lines().next().unwrap_or_default();
        let rest = header
            .strip_prefix("# Translate from ")
            .ok_or_else(|| bad("no instruction line"))?;
        let (src, tgt) = rest
            .split_once(" to ")
            .ok_or_else(|| bad("no framework pair"))?;
        let source = framework_by_display(src).ok_or_else(|| bad(src))?;
        let target = framework_by_display(tgt).ok_or_else(|| bad(tgt))?;
        let src_header = format!("# {src}\n");
        let tgt_footer = format!("# {tgt}\n");
        let start = request
            .prompt
            .rfind(&src_header)
            .ok_or_else(|| bad("no query block"))?
            + src_header.len();
        let query = request.prompt[start..]
            .strip_suffix(&tgt_footer)
            .ok_or_else(|| bad("no query footer"))?;
        let out = self.rewrite(source, target, query)?;
        Ok(Completion {
            text: format!("{}\n{}\n", out.trim_end_matches('\n'), request.stop),
            stopped: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApiStyle {
    Completion,
    Chat,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// JSON-over-HTTP completion client with retries. Shareable across threads.
pub struct HttpBackend {
    cfg: HttpConfig,
    style: ApiStyle,
    agent: ureq::Agent,
    token: Option<String>,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig, style: ApiStyle) -> Result<Self, LlmError> {
        if cfg.endpoint.is_empty() {
            return Err(LlmError::Config("empty endpoint".into()));
        }
        if cfg.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be positive".into()));
        }
        let token =
            match &cfg.auth_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    LlmError::Config(format!("environment variable {var} is not set"))
                })?),
                None => None,
            };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(cfg.max_in_flight),
            cv: Condvar::new(),
        };
        Ok(HttpBackend {
            cfg,
            style,
            agent,
            token,
            slots,
        })
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = match self.style {
            ApiStyle::Completion => json!({ "prompt": request.prompt }),
            ApiStyle::Chat => {
                json!({ "messages": [{ "role": "user", "content": request.prompt }] })
            }
        };
        body["max_tokens"] = json!(self.cfg.max_tokens);
        body["temperature"] = json!(self.cfg.temperature);
        body["stop"] = json!([request.stop]);
        if let Some(m) = &self.cfg.model {
            body["model"] = json!(m);
        }
        body
    }

    fn parse(&self, v: &Value) -> Option<Completion> {
        let choice = v.get("choices")?.get(0)?;
        let text = match self.style {
            ApiStyle::Completion => choice.get("text")?.as_str()?,
            ApiStyle::Chat => choice.get("message")?.get("content")?.as_str()?,
        };
        let stopped = choice.get("finish_reason").and_then(Value::as_str) == Some("stop");
        Some(Completion {
            text: text.to_string(),
            stopped,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Completion, (bool, String)> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}")));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| (true, e.to_string()))?;
        self.parse(&v)
            .ok_or_else(|| (false, "response has no completion text".to_string()))
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let _slot = self.slots.acquire();
        let body = self.body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err((retry, msg)) => {
                    if !retry || attempt >= self.cfg.retry.max_retries {
                        return Err(LlmError::BackendUnavailable(format!(
                            "{msg} after {} attempts",
                            attempt + 1
                        )));
                    }
                    log::warn!("completion request failed ({msg}), retrying");
                    std::thread::sleep(self.cfg.retry.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
