//! GPU-free stand-ins for the image generator, reward model and text models.
//!
//! `KeywordReward` scores prompts by the weighted keyword phrases they
//! contain, minus a length penalty past a soft cap, plus optional hash-derived
//! per-seed noise. `ScriptedTextModel` reads the rendered meta-prompts (the
//! same text a real model would see) and answers with numbered variations or
//! a one-line hint built by `scripted_hint`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::{Evaluator, TextModel};
use crate::error::{BackendError, ConfigError};
use crate::model::{normalize_text, Prompt};
use crate::rng::DetRng;

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Case-insensitive whole-phrase containment on token boundaries.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let hay = tokens(text);
    let needle = tokens(phrase);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// 64-bit FNV-1a over the seed (little endian) followed by the text bytes.
pub fn stable_hash(seed: u64, text: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    seed.to_le_bytes()
        .iter()
        .chain(text.as_bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Deterministic pseudo-noise in `[-1, 1]` for a (seed, prompt) pair.
pub fn unit_noise(seed: u64, prompt: &str) -> f64 {
    let h = stable_hash(seed, &normalize_text(prompt));
    (h >> 11) as f64 / ((1u64 << 53) - 1) as f64 * 2.0 - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordReward {
    pub keyword_weights: Vec<(String, f64)>,
    pub length_penalty: f64,
    pub soft_cap: usize,
    pub noise_amplitude: f64,
}

impl KeywordReward {
    pub fn score(&self, prompt: &Prompt, seed: u64) -> f64 {
        let matched: f64 = self
            .keyword_weights
            .iter()
            .filter(|(phrase, _)| contains_phrase(prompt.as_str(), phrase))
            .map(|(_, w)| w)
            .sum();
        let overflow = prompt.word_count().saturating_sub(self.soft_cap) as f64;
        let noise = if self.noise_amplitude > 0.0 {
            self.noise_amplitude * unit_noise(seed, prompt.as_str())
        } else {
            0.0
        };
        matched - self.length_penalty * overflow + noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    HintFollowing,
    HistoryFollowing,
    RandomWalk,
}

/// Testbed backend description as it appears under `"backends"` in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestbedConfig {
    pub keyword_weights: BTreeMap<String, f64>,
    pub vocabulary: Vec<String>,
    pub behavior: Behavior,
    pub length_penalty: f64,
    pub soft_cap: usize,
    pub noise: f64,
    pub model_seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        let keywords = [("full body", 0.5), ("detailed hands", 0.4), ("soft lighting", 0.3), ("film grain", 0.2)];
        Self {
            keyword_weights: keywords.iter().map(|(k, w)| (k.to_string(), *w)).collect(),
            vocabulary: PHRASE_BANK[..16].iter().map(|s| s.to_string()).collect(),
            behavior: Behavior::HintFollowing,
            length_penalty: 0.01,
            soft_cap: 60,
            noise: 0.0,
            model_seed: 0,
        }
    }
}

impl TestbedConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field, reason: &str| ConfigError::InvalidValue {
            field,
            reason: reason.to_string(),
        };
        if self.vocabulary.is_empty() || self.vocabulary.iter().any(|p| tokens(p).is_empty()) {
            return Err(bad("backends.vocabulary", "must be a nonempty list of phrases"));
        }
        if self.keyword_weights.values().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(bad("backends.keyword_weights", "weights must be positive"));
        }
        if !(self.length_penalty.is_finite() && self.length_penalty >= 0.0) {
            return Err(bad("backends.length_penalty", "must be nonnegative"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(bad("backends.noise", "must be nonnegative"));
        }
        if self.soft_cap == 0 {
            return Err(bad("backends.soft_cap", "must be positive"));
        }
        Ok(())
    }

    pub fn reward(&self) -> KeywordReward {
        KeywordReward {
            keyword_weights: self.keyword_weights.iter().map(|(k, w)| (k.clone(), *w)).collect(),
            length_penalty: self.length_penalty,
            soft_cap: self.soft_cap,
            noise_amplitude: self.noise,
        }
    }

    pub fn text_model(&self) -> ScriptedTextModel {
        ScriptedTextModel::new(self.vocabulary.clone(), self.behavior, self.model_seed)
    }

    pub fn evaluator(&self) -> TestbedEvaluator {
        TestbedEvaluator { reward: self.reward() }
    }
}

pub struct TestbedEvaluator {
    pub reward: KeywordReward,
}

impl Evaluator for TestbedEvaluator {
    fn evaluate(&self, prompt: &Prompt, _initial: &Prompt, seeds: &[u64]) -> Result<Vec<f64>, BackendError> {
        Ok(seeds.iter().map(|&s| self.reward.score(prompt, s)).collect())
    }

    fn id(&self) -> &str {
        "keyword"
    }

    fn deterministic(&self) -> bool {
        true
    }
}

/// Hint summarizing which vocabulary phrases separate good from bad prompts:
/// phrases found in some top-quartile prompt and in no bottom-quartile prompt.
/// Quartiles are taken by rank with ties included on both sides.
pub fn scripted_hint(context: &[(Prompt, f64)], vocabulary: &[String]) -> String {
    if context.is_empty() {
        return "Focus on: ".to_string();
    }
    let mut scores: Vec<f64> = context.iter().map(|(_, s)| *s).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let q = context.len().div_ceil(4);
    let top_cut = scores[q - 1];
    let bottom_cut = scores[context.len() - q];
    let present = |pred: &dyn Fn(f64) -> bool, phrase: &str| {
        context.iter().any(|(p, s)| pred(*s) && contains_phrase(p.as_str(), phrase))
    };
    let phrases: Vec<&str> = vocabulary
        .iter()
        .map(String::as_str)
        .filter(|phrase| present(&|s| s >= top_cut, phrase) && !present(&|s| s <= bottom_cut, phrase))
        .collect();
    format!("Focus on: {}", phrases.join(", "))
}

/// Probability that random proposals include a given vocabulary phrase.
const RANDOM_INCLUSION: f64 = 0.25;
/// New phrases tried per variation when following a hint.
const HINT_EXPLORATION: usize = 3;

static HISTORY_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\d+\. )?Prompt: (.*) \(Score: (-?[0-9.]+)\)$").unwrap());
static HINT_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\(Hint: (.*)\)$").unwrap());
static COUNT_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Return exactly (\d+) variations").unwrap());
static ORIGINAL_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Original Prompt: (.*)$").unwrap());

/// What the scripted model understood from a meta-prompt.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedRequest {
    Optimize {
        initial: Prompt,
        context: Vec<(Prompt, f64)>,
        hint: Option<String>,
        count: usize,
    },
    Hint {
        context: Vec<(Prompt, f64)>,
    },
}

pub fn parse_request(text: &str) -> Option<ScriptedRequest> {
    let mut context = Vec::new();
    let mut hint = None;
    let mut count = None;
    let mut initial = None;
    for line in text.lines() {
        if let Some(c) = HISTORY_LINE.captures(line) {
            if let (Some(p), Ok(s)) = (Prompt::new(&c[1]), c[2].parse::<f64>()) {
                context.push((p, s));
            }
        } else if let Some(c) = HINT_LINE.captures(line) {
            hint = Some(c[1].to_string());
        } else if let Some(c) = COUNT_LINE.captures(line) {
            count = c[1].parse().ok();
        } else if let Some(c) = ORIGINAL_LINE.captures(line) {
            initial = Prompt::new(&c[1]);
        }
    }
    match (initial, count) {
        (Some(initial), Some(count)) => Some(ScriptedRequest::Optimize {
            initial,
            context,
            hint,
            count,
        }),
        _ if text.contains("increase the score") && !context.is_empty() => Some(ScriptedRequest::Hint { context }),
        _ => None,
    }
}

/// Deterministic text model for the testbed. Answers depend only on the input
/// text and `seed`.
#[derive(Debug, Clone)]
pub struct ScriptedTextModel {
    pub vocabulary: Vec<String>,
    pub behavior: Behavior,
    pub seed: u64,
    id: String,
}

impl ScriptedTextModel {
    pub fn new(vocabulary: Vec<String>, behavior: Behavior, seed: u64) -> Self {
        let id = format!("scripted-{}", serde_json::to_value(behavior).unwrap().as_str().unwrap());
        Self {
            vocabulary,
            behavior,
            seed,
            id,
        }
    }

    fn phrases_of(&self, prompt: &Prompt) -> BTreeSet<usize> {
        (0..self.vocabulary.len())
            .filter(|&i| contains_phrase(prompt.as_str(), &self.vocabulary[i]))
            .collect()
    }

    /// `initial` followed by the chosen phrases in vocabulary order.
    pub fn compose(&self, initial: &Prompt, phrases: &BTreeSet<usize>) -> String {
        let mut text = initial.to_string();
        for &i in phrases {
            text.push_str(", ");
            text.push_str(&self.vocabulary[i]);
        }
        text
    }

    fn random_set(&self, rng: &mut DetRng) -> BTreeSet<usize> {
        let set = (0..self.vocabulary.len()).filter(|_| rng.chance(RANDOM_INCLUSION)).collect();
        self.nonempty(set, None, rng)
    }

    /// A bare initial prompt would be dropped as an echo, so keep at least
    /// one phrase, avoiding `except` when possible.
    fn nonempty(&self, mut set: BTreeSet<usize>, except: Option<usize>, rng: &mut DetRng) -> BTreeSet<usize> {
        let n = self.vocabulary.len();
        if set.is_empty() && n > 0 {
            let mut i = rng.below(n as u64) as usize;
            if Some(i) == except && n > 1 {
                i = (i + 1 + rng.below(n as u64 - 1) as usize) % n;
            }
            set.insert(i);
        }
        set
    }

    fn best_context_phrases(&self, context: &[(Prompt, f64)]) -> Option<BTreeSet<usize>> {
        context
            .iter()
            .fold(None::<&(Prompt, f64)>, |best, entry| match best {
                Some(b) if b.1 > entry.1 => Some(b),
                _ => Some(entry),
            })
            .map(|(p, _)| self.phrases_of(p))
    }

    pub fn propose(
        &self,
        initial: &Prompt,
        context: &[(Prompt, f64)],
        hint: Option<&str>,
        count: usize,
        rng: &mut DetRng,
    ) -> Vec<String> {
        let best = self.best_context_phrases(context);
        let hinted: Option<BTreeSet<usize>> = hint.map(|h| {
            (0..self.vocabulary.len())
                .filter(|&i| contains_phrase(h, &self.vocabulary[i]))
                .collect()
        });
        let sets: Vec<BTreeSet<usize>> = match (self.behavior, best, hinted) {
            (Behavior::RandomWalk, _, _) | (_, None, None) => (0..count).map(|_| self.random_set(rng)).collect(),
            (Behavior::HintFollowing, best, Some(hinted)) => {
                let mut base = best.unwrap_or_default();
                base.extend(hinted.iter().copied());
                self.explore(&base, &hinted, count, rng)
            }
            (_, Some(best), _) => (0..count).map(|_| self.flip_one(&best, rng)).collect(),
            (Behavior::HistoryFollowing, None, Some(_)) => (0..count).map(|_| self.random_set(rng)).collect(),
        };
        let mut variations: Vec<String> = sets.iter().map(|s| self.compose(initial, s)).collect();
        variations.sort_by_key(|v| v.chars().count());
        variations
    }

    /// Copy `base` and toggle one uniformly chosen vocabulary phrase.
    fn flip_one(&self, base: &BTreeSet<usize>, rng: &mut DetRng) -> BTreeSet<usize> {
        let mut set = base.clone();
        let i = rng.below(self.vocabulary.len() as u64) as usize;
        if !set.remove(&i) {
            set.insert(i);
        }
        self.nonempty(set, Some(i), rng)
    }

    /// Keep `base` (which contains every hinted phrase) and add untried
    /// phrases, spreading them over the variations without repeats where the
    /// pool allows. With nothing left to add, drop one unhinted phrase.
    fn explore(&self, base: &BTreeSet<usize>, hinted: &BTreeSet<usize>, count: usize, rng: &mut DetRng) -> Vec<BTreeSet<usize>> {
        let pool: Vec<usize> = (0..self.vocabulary.len()).filter(|i| !base.contains(i)).collect();
        let order: Vec<usize> = rng.sample_indices(pool.len(), pool.len()).into_iter().map(|j| pool[j]).collect();
        let mut cursor = 0;
        (0..count)
            .map(|_| {
                let mut set = base.clone();
                if order.is_empty() {
                    let removable: Vec<usize> = base.difference(hinted).copied().collect();
                    if !removable.is_empty() {
                        set.remove(&removable[rng.below(removable.len() as u64) as usize]);
                    }
                    return set;
                }
                for _ in 0..HINT_EXPLORATION.min(order.len()) {
                    set.insert(order[cursor % order.len()]);
                    cursor += 1;
                }
                set
            })
            .collect()
    }
}

impl TextModel for ScriptedTextModel {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut rng = DetRng::new(stable_hash(self.seed, prompt), 0);
        match parse_request(prompt) {
            Some(ScriptedRequest::Optimize {
                initial,
                context,
                hint,
                count,
            }) => {
                let variations = self.propose(&initial, &context, hint.as_deref(), count, &mut rng);
                Ok(variations
                    .iter()
                    .enumerate()
                    .map(|(i, v)| format!("{}. {}", i + 1, v))
                    .collect::<Vec<_>>()
                    .join("\n"))
            }
            Some(ScriptedRequest::Hint { context }) => Ok(scripted_hint(&context, &self.vocabulary)),
            None => Err(BackendError::MalformedResponse("scripted model did not recognize the request".into())),
        }
    }

    fn id(&self) -> &str {
        &self.id
    }
}

/// Two- and three-word modifiers with no phrase contained in another.
pub const PHRASE_BANK: [&str; 32] = [
    "full body",
    "detailed hands",
    "soft lighting",
    "golden hour",
    "sharp focus",
    "vivid colors",
    "wide angle",
    "film grain",
    "oil painting",
    "studio portrait",
    "dramatic shadows",
    "ultra realistic",
    "cinematic composition",
    "depth of field",
    "pastel palette",
    "high contrast",
    "volumetric fog",
    "rim light",
    "matte finish",
    "symmetrical framing",
    "natural texture",
    "bokeh background",
    "warm tones",
    "cool tones",
    "intricate patterns",
    "crisp edges",
    "gentle gradient",
    "moody atmosphere",
    "clean background",
    "dynamic pose",
    "rule of thirds",
    "fine details",
];

const SUBJECTS: [&str; 8] = [
    "a woman playing guitar",
    "a cat on a windowsill",
    "an old lighthouse by the sea",
    "a robot reading a book",
    "a bowl of ramen",
    "a knight on horseback",
    "a city street at night",
    "a mountain cabin in winter",
];

/// Parameters for a randomly drawn testbed instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub vocabulary_size: usize,
    pub min_keywords: usize,
    pub max_keywords: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            vocabulary_size: 32,
            min_keywords: 6,
            max_keywords: 6,
        }
    }
}

/// A random vocabulary/weight instance and a matching initial prompt.
///
/// The soft cap admits the initial prompt plus every vocabulary phrase, so the
/// optimum is "all keywords present".
pub fn random_instance(seed: u64, spec: InstanceSpec, behavior: Behavior) -> (Prompt, TestbedConfig) {
    let mut rng = DetRng::new(seed, 0x7e57_bed);
    let vocab: Vec<String> = rng
        .sample_indices(PHRASE_BANK.len(), spec.vocabulary_size)
        .into_iter()
        .map(|i| PHRASE_BANK[i].to_string())
        .collect();
    let span = (spec.max_keywords - spec.min_keywords + 1) as u64;
    let n_keywords = spec.min_keywords + rng.below(span) as usize;
    let keyword_weights: BTreeMap<String, f64> = rng
        .sample_indices(vocab.len(), n_keywords)
        .into_iter()
        .map(|i| {
            let w = 0.2 + 0.8 * (rng.below(81) as f64 / 80.0);
            (vocab[i].clone(), w)
        })
        .collect();
    let initial = Prompt::new(SUBJECTS[rng.below(SUBJECTS.len() as u64) as usize]).unwrap();
    let soft_cap = initial.word_count() + vocab.iter().map(|p| tokens(p).len()).sum::<usize>();
    let config = TestbedConfig {
        keyword_weights,
        vocabulary: vocab,
        behavior,
        length_penalty: 0.01,
        soft_cap,
        noise: 0.0,
        model_seed: seed,
    };
    (initial, config)
}
