//! Recorded optimizer responses and their expected extractions.

use serde::Deserialize;
use serde_json::Value;

use promptsearch::metaprompt::{parse_hint, parse_variations};
use promptsearch::{MetapromptError, Prompt};

#[derive(Deserialize)]
struct Case {
    name: String,
    initial: String,
    expected: usize,
    max_words: usize,
    response: String,
    #[serde(default)]
    prompts: Vec<String>,
    #[serde(default)]
    violations: Vec<Value>,
    error: Option<String>,
}

#[test]
fn corpus_extractions() {
    let cases: Vec<Case> = serde_json::from_str(include_str!("fixtures/llm_responses.json")).unwrap();
    assert!(cases.len() >= 20);
    for case in cases {
        let initial = Prompt::new(&case.initial).unwrap();
        let parsed = parse_variations(&case.response, case.expected, case.max_words, Some(&initial));
        if let Some(error) = &case.error {
            assert_eq!(error, "no_variations");
            assert_eq!(parsed, Err(MetapromptError::NoVariationsFound), "{}", case.name);
            continue;
        }
        let parsed = parsed.unwrap_or_else(|e| panic!("{}: {e}", case.name));
        let got: Vec<&str> = parsed.prompts.iter().map(Prompt::as_str).collect();
        assert_eq!(got, case.prompts, "{}", case.name);
        let violations: Vec<Value> = parsed.violations.iter().map(|v| serde_json::to_value(v).unwrap()).collect();
        assert_eq!(violations, case.violations, "{}", case.name);
    }
}

#[test]
fn hint_responses() {
    let cases = [
        ("Focus on lighting and texture.", "Focus on lighting and texture.", false),
        ("Hint: Focus on lighting and texture.", "Focus on lighting and texture.", false),
        ("**Strategy:** add a concrete setting", "add a concrete setting", false),
        ("\n\n\"Use warmer colors\"\n", "Use warmer colors", false),
        ("Answer: add lens details\nThis works because lens terms sharpen images.", "add lens details", true),
        ("  Mention   the time of day  ", "Mention the time of day", false),
    ];
    for (response, text, multi) in cases {
        let parsed = parse_hint(response).unwrap();
        assert_eq!(parsed.text, text, "{response:?}");
        assert_eq!(!parsed.violations.is_empty(), multi, "{response:?}");
    }
    assert_eq!(parse_hint(" \n\n "), Err(MetapromptError::EmptyResponse));
}
