//! SNLI-style JSON-lines corpora.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::conll::{parse_sidecar, write_sidecar};
use crate::data::sexpr::parse_sexpr;
use crate::data::tree::ParseTree;
use crate::error::{Error, Result};

/// Fraction of malformed lines above which a corpus is rejected outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Contradiction,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            other => Err(Error::Data(format!("unknown label {other:?}"))),
        }
    }
}

/// The parses available for one sentence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sentence {
    pub constituency: Option<ParseTree>,
    pub dependency: Option<ParseTree>,
}

impl Sentence {
    pub fn from_constituency(tree: ParseTree) -> Self {
        Sentence {
            constituency: Some(tree),
            dependency: None,
        }
    }

    /// Tokens in sentence order from whichever parse is present.
    pub fn tokens(&self) -> Vec<&str> {
        self.constituency
            .as_ref()
            .or(self.dependency.as_ref())
            .map(|t| t.tokens())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pair_id: String,
    pub premise: Sentence,
    pub hypothesis: Sentence,
    pub gold: Label,
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub examples: Vec<Example>,
    /// Records whose gold label was `-`.
    pub skipped_unlabeled: usize,
    /// `(line number, reason)` for every line that could not be used.
    pub malformed: Vec<(usize, String)>,
}

#[derive(Deserialize)]
struct Record {
    gold_label: String,
    sentence1_binary_parse: String,
    sentence2_binary_parse: String,
    #[serde(rename = "pairID")]
    pair_id: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    gold_label: &'a str,
    sentence1_binary_parse: String,
    sentence2_binary_parse: String,
    #[serde(rename = "pairID")]
    pair_id: &'a str,
}

enum LineOutcome {
    Example(Example),
    Unlabeled,
}

fn parse_line(line: &str, deps: &BTreeMap<String, ParseTree>) -> Result<LineOutcome> {
    let rec: Record = serde_json::from_str(line)?;
    if rec.gold_label == "-" {
        return Ok(LineOutcome::Unlabeled);
    }
    let gold: Label = rec.gold_label.parse()?;
    let premise = Sentence {
        constituency: Some(parse_sexpr(&rec.sentence1_binary_parse)?),
        dependency: deps.get(&format!("{}.s1", rec.pair_id)).cloned(),
    };
    let hypothesis = Sentence {
        constituency: Some(parse_sexpr(&rec.sentence2_binary_parse)?),
        dependency: deps.get(&format!("{}.s2", rec.pair_id)).cloned(),
    };
    Ok(LineOutcome::Example(Example {
        pair_id: rec.pair_id,
        premise,
        hypothesis,
        gold,
    }))
}

/// Parses corpus text. Malformed lines are skipped and reported; more than
/// [`MAX_MALFORMED_FRACTION`] of them aborts.
pub fn parse_corpus(text: &str, deps: &BTreeMap<String, ParseTree>) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut records = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        match parse_line(line, deps) {
            Ok(LineOutcome::Example(ex)) => corpus.examples.push(ex),
            Ok(LineOutcome::Unlabeled) => corpus.skipped_unlabeled += 1,
            Err(e) => {
                log::warn!("line {}: skipping malformed record: {e}", i + 1);
                corpus.malformed.push((i + 1, e.to_string()));
            }
        }
    }
    if records > 0 && corpus.malformed.len() as f64 > MAX_MALFORMED_FRACTION * records as f64 {
        return Err(Error::Data(format!(
            "{} of {records} lines malformed (first at line {})",
            corpus.malformed.len(),
            corpus.malformed[0].0
        )));
    }
    Ok(corpus)
}

pub fn load_sidecar(path: &Path) -> Result<BTreeMap<String, ParseTree>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sidecar(&text)
}

pub fn load_corpus(path: &Path, sidecar: Option<&Path>) -> Result<Corpus> {
    let deps = match sidecar {
        Some(p) => load_sidecar(p)?,
        None => BTreeMap::new(),
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &deps)
}

/// Renders examples as corpus lines plus a dependency sidecar (empty when
/// no example carries dependency parses).
pub fn render_corpus(examples: &[Example]) -> Result<(String, String)> {
    let mut jsonl = String::new();
    for ex in examples {
        let sexpr = |s: &Sentence, side: &'static str| {
            s.constituency
                .as_ref()
                .map(ParseTree::to_sexpr)
                .ok_or_else(|| Error::Data(format!("{}: no constituency parse for {side}", ex.pair_id)))
        };
        let rec = RecordOut {
            gold_label: ex.gold.as_str(),
            sentence1_binary_parse: sexpr(&ex.premise, "premise")?,
            sentence2_binary_parse: sexpr(&ex.hypothesis, "hypothesis")?,
            pair_id: &ex.pair_id,
        };
        jsonl.push_str(&serde_json::to_string(&rec)?);
        jsonl.push('\n');
    }
    let ids: Vec<(String, &ParseTree)> = examples
        .iter()
        .flat_map(|ex| {
            [
                ex.premise.dependency.as_ref().map(|t| (format!("{}.s1", ex.pair_id), t)),
                ex.hypothesis.dependency.as_ref().map(|t| (format!("{}.s2", ex.pair_id), t)),
            ]
        })
        .flatten()
        .collect();
    let sidecar = write_sidecar(ids.iter().map(|(k, t)| (k.as_str(), *t)));
    Ok((jsonl, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"gold_label": "neutral", "sentence1_binary_parse": "( ( a cat ) sits )", "sentence2_binary_parse": "( cat sleeps )", "pairID": "7"}"#;

    #[test]
    fn empty_text_is_empty_corpus() {
        let c = parse_corpus("", &BTreeMap::new()).unwrap();
        assert!(c.examples.is_empty());
    }

    #[test]
    fn one_line_one_example() {
        let c = parse_corpus(LINE, &BTreeMap::new()).unwrap();
        assert_eq!(c.examples.len(), 1);
        let ex = &c.examples[0];
        assert_eq!(ex.gold, Label::Neutral);
        assert_eq!(ex.pair_id, "7");
        assert_eq!(ex.premise.tokens(), vec!["a", "cat", "sits"]);
        assert!(ex.premise.dependency.is_none());
    }

    #[test]
    fn unlabeled_pairs_are_counted() {
        let dash = LINE.replace("neutral", "-");
        let c = parse_corpus(&format!("{LINE}\n{dash}\n"), &BTreeMap::new()).unwrap();
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.skipped_unlabeled, 1);
    }

    #[test]
    fn malformed_lines_skip_then_abort() {
        let mut text: String = (0..10).map(|_| format!("{LINE}\n")).collect();
        text.push_str("{not json\n");
        let c = parse_corpus(&text, &BTreeMap::new()).unwrap();
        assert_eq!(c.examples.len(), 10);
        assert_eq!(c.malformed.len(), 1);
        assert_eq!(c.malformed[0].0, 11);

        text.push_str(&LINE.replace("( cat sleeps )", "( cat sleeps"));
        assert!(parse_corpus(&text, &BTreeMap::new()).is_err());
    }

    #[test]
    fn sidecar_attaches_dependency_parses() {
        let deps = parse_sidecar("7.s1\n1\ta\t2\n2\tcat\t3\n3\tsits\t0\n\n7.s2\n1\tcat\t2\n2\tsleeps\t0\n").unwrap();
        let c = parse_corpus(LINE, &deps).unwrap();
        let ex = &c.examples[0];
        assert_eq!(ex.premise.dependency.as_ref().unwrap().len(), 3);
        assert_eq!(ex.hypothesis.dependency.as_ref().unwrap().len(), 2);

        let (jsonl, sidecar) = render_corpus(&c.examples).unwrap();
        let again = parse_corpus(&jsonl, &parse_sidecar(&sidecar).unwrap()).unwrap();
        assert_eq!(again.examples, c.examples);
    }
}
