//! Meta-prompt rendering and response parsing.
//!
//! Templates live in `templates/` as plain UTF-8 files. They support
//! `{{name}}` substitution and `{{#flag}}...{{/flag}}` conditional regions;
//! see `docs/templates.md` for the region layout.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::MetapromptError;
use crate::model::{normalize_text, Prompt, DEFAULT_CANDIDATES, DEFAULT_MAX_WORDS};

pub const OPTIMIZER_TEMPLATE: &str = include_str!("../templates/optimizer.txt");
pub const HINT_TEMPLATE: &str = include_str!("../templates/hint.txt");

/// Query for the optimizer text model.
///
/// History and hint regions are rendered independently; with neither the
/// query reduces to the plain paraphrase prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerQuery {
    pub initial_prompt: Prompt,
    pub context: Vec<(Prompt, f64)>,
    pub hint: Option<String>,
    pub num_variations: usize,
    pub max_words: usize,
}

impl OptimizerQuery {
    pub fn paraphrase(initial_prompt: Prompt) -> Self {
        Self {
            initial_prompt,
            context: Vec::new(),
            hint: None,
            num_variations: DEFAULT_CANDIDATES as usize,
            max_words: DEFAULT_MAX_WORDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HintQuery {
    pub context: Vec<(Prompt, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    CountMismatch { expected: usize, found: usize },
    OverLength { position: usize, words: usize },
    NonMonotoneLength { position: usize },
    MultiLineHint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVariations {
    pub prompts: Vec<Prompt>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedHint {
    pub text: String,
    pub violations: Vec<Violation>,
}

pub fn format_score(score: f64) -> String {
    format!("{score:.3}")
}

/// Strip newlines from untrusted hint text before embedding it.
fn sanitize_hint(hint: &str) -> String {
    hint.replace(['\r', '\n'], " ")
}

pub fn render_optimizer(q: &OptimizerQuery) -> String {
    let history_lines = q
        .context
        .iter()
        .enumerate()
        .map(|(i, (p, s))| format!("{}. Prompt: {} (Score: {})", i + 1, p, format_score(*s)))
        .collect::<Vec<_>>()
        .join("\n");
    let vars = HashMap::from([
        ("num_variations", q.num_variations.to_string()),
        ("num_history", q.context.len().to_string()),
        ("hint", q.hint.as_deref().map(sanitize_hint).unwrap_or_default()),
        ("history_lines", history_lines),
        ("max_words", q.max_words.to_string()),
        ("initial_prompt", q.initial_prompt.to_string()),
    ]);
    let flags = HashMap::from([("history", !q.context.is_empty()), ("hint", q.hint.is_some())]);
    render_template(OPTIMIZER_TEMPLATE, &vars, &flags)
}

pub fn render_hint(q: &HintQuery) -> Result<String, MetapromptError> {
    if q.context.is_empty() {
        return Err(MetapromptError::EmptyContext);
    }
    let history_lines = q
        .context
        .iter()
        .map(|(p, s)| format!("Prompt: {} (Score: {})", p, format_score(*s)))
        .collect::<Vec<_>>()
        .join("\n");
    let vars = HashMap::from([("history_lines", history_lines)]);
    Ok(render_template(HINT_TEMPLATE, &vars, &HashMap::new()))
}

/// Minimal renderer for `{{var}}` and `{{#flag}}..{{/flag}}`. Unknown
/// variables and flags render as empty / false. The template's final
/// newline is dropped.
fn render_template(template: &str, vars: &HashMap<&str, String>, flags: &HashMap<&str, bool>) -> String {
    let template = template.strip_suffix('\n').unwrap_or(template);
    let mut out = String::with_capacity(template.len() + 256);
    let mut active: Vec<bool> = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let emitting = active.iter().all(|a| *a);
        if emitting {
            out.push_str(&rest[..start]);
        }
        let after = &rest[start + 2..];
        let end = after.find("}}").expect("unterminated template tag");
        let tag = after[..end].trim();
        if let Some(name) = tag.strip_prefix('#') {
            active.push(flags.get(name).copied().unwrap_or(false));
        } else if tag.starts_with('/') {
            active.pop().expect("unbalanced template section");
        } else if emitting {
            out.push_str(vars.get(tag).map(String::as_str).unwrap_or(""));
        }
        rest = &after[end + 2..];
    }
    if active.iter().all(|a| *a) {
        out.push_str(rest);
    }
    out
}

static NUMBERED_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\*\*)?(\d+)[.)](?:\*\*)?\s*(.+)$").unwrap());
// Models sometimes echo the history-line format back.
static ECHOED_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:\*\*)?(?:prompt|variation\s*\d*)\s*:\s*(?:\*\*)?\s*").unwrap());
static ECHOED_SCORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\s*\(score:[^)]*\)\s*$").unwrap());

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Remove surrounding quotes and markdown emphasis, repeatedly.
fn strip_decoration(text: &str) -> String {
    let mut s = text.trim().to_string();
    loop {
        let before = s.clone();
        for marker in ["**", "__", "*", "_"] {
            if s.len() >= 2 * marker.len() && s.starts_with(marker) && s.ends_with(marker) {
                s = s[marker.len()..s.len() - marker.len()].trim().to_string();
            }
        }
        for q in QUOTES {
            if let (Some(first), Some(last)) = (s.chars().next(), s.chars().last()) {
                if s.chars().count() >= 2 && QUOTES.contains(&first) && QUOTES.contains(&last) && first == *q {
                    s = s[first.len_utf8()..s.len() - last.len_utf8()].trim().to_string();
                }
            }
        }
        if s == before {
            break;
        }
    }
    s.replace("**", "")
}

/// Extract numbered variations from an optimizer response.
///
/// Lenient: count, length and ordering problems are reported as violations.
/// Variations that merely echo `initial` are dropped unless nothing else remains.
pub fn parse_variations(
    response: &str,
    expected: usize,
    max_words: usize,
    initial: Option<&Prompt>,
) -> Result<ParsedVariations, MetapromptError> {
    let mut prompts: Vec<Prompt> = response
        .lines()
        .filter_map(|line| NUMBERED_LINE.captures(line))
        .filter_map(|caps| {
            let text = strip_decoration(&caps[2]);
            let text = ECHOED_LABEL.replace(&text, "");
            Prompt::new(&strip_decoration(&ECHOED_SCORE.replace(&text, "")))
        })
        .collect();
    if prompts.is_empty() {
        return Err(MetapromptError::NoVariationsFound);
    }
    if let Some(initial) = initial {
        if prompts.iter().any(|p| p != initial) {
            prompts.retain(|p| p != initial);
        }
    }

    let mut violations = Vec::new();
    if prompts.len() != expected {
        violations.push(Violation::CountMismatch {
            expected,
            found: prompts.len(),
        });
        prompts.truncate(expected.max(1));
    }
    for (i, p) in prompts.iter().enumerate() {
        let words = p.word_count();
        if words > max_words {
            violations.push(Violation::OverLength { position: i + 1, words });
        }
        if i > 0 && p.as_str().chars().count() < prompts[i - 1].as_str().chars().count() {
            violations.push(Violation::NonMonotoneLength { position: i + 1 });
        }
    }
    Ok(ParsedVariations { prompts, violations })
}

static HINT_LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*(hint|strategy|answer)\s*:\s*").unwrap());

/// First meaningful line of a hint response, with labels and decoration removed.
pub fn parse_hint(response: &str) -> Result<ParsedHint, MetapromptError> {
    let mut lines = response
        .lines()
        .map(|line| {
            let undecorated = strip_decoration(line);
            let unlabeled = HINT_LABEL.replace(&undecorated, "");
            normalize_text(&strip_decoration(&unlabeled))
        })
        .filter(|line| !line.is_empty());
    let text = lines.next().ok_or(MetapromptError::EmptyResponse)?;
    let violations = if lines.next().is_some() {
        vec![Violation::MultiLineHint]
    } else {
        Vec::new()
    };
    Ok(ParsedHint { text, violations })
}
