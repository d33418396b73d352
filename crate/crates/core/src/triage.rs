//! Symptom questionnaire and rule-based scoring.
//!
//! Rules live in a JSON table. A rule fires either when every listed
//! question is answered yes (`all_yes`) or when the total number of yes
//! answers reaches `min_yes`. The first rule that fires, in file order, is
//! reported; if none fires the recommendation is to self-monitor.
//!
//! Both rule shapes are monotone in the answers, so any table built from them
//! keeps the property that answering yes to more questions never downgrades
//! the recommendation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const QUESTION_COUNT: usize = 9;

/// Identifier reported when no rule fires.
pub const NO_RULE: &str = "none";

const DEFAULT_RULES: &str = include_str!("../rules/default_rules.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Question {
    pub id: &'static str,
    pub text: &'static str,
}

const QUESTIONS: [Question; QUESTION_COUNT] = [
    Question {
        id: "cough",
        text: "New or worsening cough",
    },
    Question {
        id: "shortness_of_breath",
        text: "Shortness of breath",
    },
    Question {
        id: "sore_throat",
        text: "Sore throat",
    },
    Question {
        id: "runny_nose",
        text: "Runny nose, sneezing or nasal congestion",
    },
    Question {
        id: "hoarse_voice",
        text: "Hoarse voice",
    },
    Question {
        id: "difficulty_swallowing",
        text: "Difficulty swallowing",
    },
    Question {
        id: "gastrointestinal",
        text: "Nausea/vomiting/diarrhea/abdominal pain",
    },
    Question {
        id: "fatigue",
        text: "Unexpected fatigue",
    },
    Question {
        id: "fever",
        text: "Fever",
    },
];

/// The questions in their fixed order.
pub fn questionnaire_schema() -> &'static [Question] {
    &QUESTIONS
}

fn question_index(id: &str) -> Option<usize> {
    QUESTIONS.iter().position(|q| q.id == id)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TriageError {
    #[error("expected {QUESTION_COUNT} answers, got {0}")]
    AnswerCount(usize),
    #[error("unknown question id {0:?}")]
    UnknownQuestion(String),
    #[error("missing answer for {0:?}")]
    MissingAnswer(&'static str),
    #[error("invalid rule table: {}", .0.join("; "))]
    Rules(Vec<String>),
    #[error("cannot read rule table {path}: {message}")]
    RulesFile { path: String, message: String },
}

/// Answers in schema order; `true` means yes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Questionnaire {
    answers: [bool; QUESTION_COUNT],
}

impl Questionnaire {
    pub fn from_slice(answers: &[bool]) -> Result<Self, TriageError> {
        let answers: [bool; QUESTION_COUNT] = answers
            .try_into()
            .map_err(|_| TriageError::AnswerCount(answers.len()))?;
        Ok(Questionnaire { answers })
    }

    /// Answers keyed by question id. Every id must be present exactly once.
    pub fn from_map(answers: &BTreeMap<String, bool>) -> Result<Self, TriageError> {
        if let Some(bad) = answers.keys().find(|k| question_index(k).is_none()) {
            return Err(TriageError::UnknownQuestion(bad.clone()));
        }
        let mut out = [false; QUESTION_COUNT];
        for (i, q) in QUESTIONS.iter().enumerate() {
            out[i] = *answers.get(q.id).ok_or(TriageError::MissingAnswer(q.id))?;
        }
        Ok(Questionnaire { answers: out })
    }

    /// Bit `i` of `bits` is the answer to question `i`.
    pub fn from_bits(bits: u16) -> Self {
        let mut answers = [false; QUESTION_COUNT];
        for (i, a) in answers.iter_mut().enumerate() {
            *a = bits >> i & 1 == 1;
        }
        Questionnaire { answers }
    }

    pub fn answers(&self) -> &[bool; QUESTION_COUNT] {
        &self.answers
    }

    pub fn yes_count(&self) -> usize {
        self.answers.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    SelfMonitor,
    TestAdvised,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageResult {
    pub recommendation: Recommendation,
    pub yes_count: usize,
    pub rule_fired: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    #[serde(default)]
    all_yes: Option<Vec<String>>,
    #[serde(default)]
    min_yes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleTable {
    rules: Vec<RawRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Condition {
    AllYes(Vec<usize>),
    MinYes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    name: String,
    condition: Condition,
}

impl Rule {
    pub fn name(&self) -> &str {
        &self.name
    }

    fn fires(&self, q: &Questionnaire) -> bool {
        match &self.condition {
            Condition::AllYes(idx) => idx.iter().all(|&i| q.answers[i]),
            Condition::MinYes(n) => q.yes_count() >= *n,
        }
    }
}

/// An ordered, validated rule table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_json(DEFAULT_RULES).expect("bundled rule table is valid")
    }
}

impl RuleSet {
    /// Parses and validates a rule table, collecting every problem found.
    pub fn from_json(text: &str) -> Result<Self, TriageError> {
        let raw: RawRuleTable = serde_json::from_str(text).map_err(|e| TriageError::Rules(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        let mut names = BTreeSet::new();
        let mut rules = Vec::new();
        if raw.rules.is_empty() {
            problems.push("rule list is empty".to_string());
        }
        for (i, r) in raw.rules.into_iter().enumerate() {
            let at = format!("rule {} ({:?})", i + 1, r.name);
            if r.name.is_empty() || r.name == NO_RULE {
                problems.push(format!("{at}: name must be non-empty and not {NO_RULE:?}"));
            }
            if !names.insert(r.name.clone()) {
                problems.push(format!("{at}: duplicate name"));
            }
            let condition = match (r.all_yes, r.min_yes) {
                (Some(ids), None) => {
                    if ids.is_empty() {
                        problems.push(format!("{at}: all_yes is empty"));
                    }
                    let mut idx = Vec::new();
                    for id in &ids {
                        match question_index(id) {
                            Some(k) => idx.push(k),
                            None => problems.push(format!("{at}: unknown question id {id:?}")),
                        }
                    }
                    Condition::AllYes(idx)
                }
                (None, Some(n)) => {
                    if n == 0 || n > QUESTION_COUNT {
                        problems.push(format!("{at}: min_yes must lie in 1..={QUESTION_COUNT}, got {n}"));
                    }
                    Condition::MinYes(n)
                }
                _ => {
                    problems.push(format!("{at}: exactly one of all_yes or min_yes is required"));
                    continue;
                }
            };
            rules.push(Rule {
                name: r.name,
                condition,
            });
        }
        if !problems.is_empty() {
            return Err(TriageError::Rules(problems));
        }
        Ok(RuleSet { rules })
    }

    pub fn from_file(path: &Path) -> Result<Self, TriageError> {
        let text = fs::read_to_string(path).map_err(|e| TriageError::RulesFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        RuleSet::from_json(&text)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn score(&self, q: &Questionnaire) -> TriageResult {
        let fired = self.rules.iter().find(|r| r.fires(q));
        TriageResult {
            recommendation: if fired.is_some() {
                Recommendation::TestAdvised
            } else {
                Recommendation::SelfMonitor
            },
            yes_count: q.yes_count(),
            rule_fired: fired.map_or(NO_RULE, |r| r.name()).to_string(),
        }
    }
}

/// Scores against the bundled rule table.
pub fn score_questionnaire(q: &Questionnaire) -> TriageResult {
    RuleSet::default().score(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(yes: &[&str]) -> Questionnaire {
        let map = QUESTIONS
            .iter()
            .map(|q| (q.id.to_string(), yes.contains(&q.id)))
            .collect();
        Questionnaire::from_map(&map).unwrap()
    }

    #[test]
    fn schema_shape() {
        let s = questionnaire_schema();
        assert_eq!(s.len(), 9);
        assert!(s[8].text.contains("Fever"));
        assert_eq!(s[0].text, "New or worsening cough");
        let ids: BTreeSet<_> = s.iter().map(|q| q.id).collect();
        assert_eq!(ids.len(), 9);
        assert_eq!(questionnaire_schema(), s);
    }

    #[test]
    fn forced_examples() {
        let r = score_questionnaire(&answers(&[]));
        assert_eq!(r.recommendation, Recommendation::SelfMonitor);
        assert_eq!((r.yes_count, r.rule_fired.as_str()), (0, NO_RULE));

        let r = score_questionnaire(&answers(&["fever", "cough"]));
        assert_eq!(r.recommendation, Recommendation::TestAdvised);
        assert_eq!(r.rule_fired, "fever_with_cough");

        let r = score_questionnaire(&answers(&["runny_nose", "hoarse_voice", "fatigue", "gastrointestinal"]));
        assert_eq!(r.recommendation, Recommendation::TestAdvised);
        assert_eq!((r.yes_count, r.rule_fired.as_str()), (4, "four_or_more_symptoms"));

        let r = score_questionnaire(&answers(&["runny_nose", "hoarse_voice", "fatigue"]));
        assert_eq!(r.recommendation, Recommendation::SelfMonitor);
        let r = score_questionnaire(&answers(&["fever", "fatigue"]));
        assert_eq!(r.recommendation, Recommendation::SelfMonitor);
    }

    #[test]
    fn answer_count_checked() {
        assert_eq!(Questionnaire::from_slice(&[true; 8]), Err(TriageError::AnswerCount(8)));
        assert_eq!(
            Questionnaire::from_slice(&[true; 10]),
            Err(TriageError::AnswerCount(10))
        );
        assert!(Questionnaire::from_slice(&[false; 9]).is_ok());
    }

    #[test]
    fn keyed_answers_checked() {
        let mut map: BTreeMap<String, bool> = QUESTIONS.iter().map(|q| (q.id.to_string(), false)).collect();
        map.remove("fever");
        assert_eq!(Questionnaire::from_map(&map), Err(TriageError::MissingAnswer("fever")));
        map.insert("fever".into(), true);
        map.insert("headache".into(), true);
        assert_eq!(
            Questionnaire::from_map(&map),
            Err(TriageError::UnknownQuestion("headache".into()))
        );
    }

    #[test]
    fn matches_closed_form_and_is_monotone() {
        let idx = |id| question_index(id).unwrap();
        let (fever, cough, sob, sore) = (
            idx("fever"),
            idx("cough"),
            idx("shortness_of_breath"),
            idx("sore_throat"),
        );
        for bits in 0u16..512 {
            let q = Questionnaire::from_bits(bits);
            let a = q.answers();
            let expected = (a[fever] && (a[cough] || a[sob] || a[sore])) || q.yes_count() >= 4;
            let r = score_questionnaire(&q);
            assert_eq!(r.recommendation == Recommendation::TestAdvised, expected, "{bits:09b}");
            for k in 0..QUESTION_COUNT {
                let more = Questionnaire::from_bits(bits | 1 << k);
                assert!(score_questionnaire(&more).recommendation >= r.recommendation);
            }
        }
    }

    #[test]
    fn bad_tables_report_every_problem() {
        let err = RuleSet::from_json(
            r#"{"rules":[
                {"name":"a","all_yes":["fever","headache"]},
                {"name":"a","min_yes":12},
                {"name":"c"}
            ]}"#,
        )
        .unwrap_err();
        let TriageError::Rules(problems) = err else { panic!() };
        assert_eq!(problems.len(), 4, "{problems:?}");
        assert!(RuleSet::from_json("not json").is_err());
        assert!(RuleSet::from_json(r#"{"rules":[]}"#).is_err());
    }
}
