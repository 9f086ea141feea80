//! Small generated corpora with known answers.
//!
//! * [`overfit_corpus`]: 50 hand-patterned pairs whose hypotheses differ
//!   lexically by class, so any working model can memorize them.
//! * [`structure_corpus`]: pairs whose premise and hypothesis contain the
//!   same multiset of words; the label is decided only by which phrase a
//!   word sits in, so bag-of-words models are at chance.
//!
//! Both carry constituency and dependency parses. The bundled copies under
//! `data/synthetic/` are byte-identical to the generator output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::conll::{parse_conll, ConllRow};
use crate::data::corpus::{Example, Label, Sentence};
use crate::data::sexpr::parse_sexpr;

pub const OVERFIT_JSONL: &str = include_str!("../data/synthetic/overfit.jsonl");
pub const OVERFIT_DEPS: &str = include_str!("../data/synthetic/overfit.deps");
pub const STRUCTURE_JSONL: &str = include_str!("../data/synthetic/structure.jsonl");
pub const STRUCTURE_DEPS: &str = include_str!("../data/synthetic/structure.deps");

pub const OVERFIT_SIZE: usize = 50;
pub const STRUCTURE_SIZE: usize = 500;
/// The last `STRUCTURE_DEV` pairs form a class-balanced dev split.
pub const STRUCTURE_DEV: usize = 120;
pub const STRUCTURE_SEED: u64 = 17;

#[derive(Clone, Debug)]
struct NounPhrase<'a> {
    det: &'a str,
    adj: Option<&'a str>,
    noun: &'a str,
}

impl NounPhrase<'_> {
    fn sexpr(&self) -> String {
        match self.adj {
            Some(a) => format!("( {} ( {a} {} ) )", self.det, self.noun),
            None => format!("( {} {} )", self.det, self.noun),
        }
    }

    fn tokens(&self) -> Vec<&str> {
        [Some(self.det), self.adj, Some(self.noun)].into_iter().flatten().collect()
    }
}

/// `subject verb object` with both parses: the verb heads both noun heads,
/// which head their determiners and adjectives.
fn clause(subject: &NounPhrase, verb: &str, object: &NounPhrase) -> Sentence {
    let sexpr = format!("( {} ( {verb} {} ) )", subject.sexpr(), object.sexpr());
    let mut rows = Vec::new();
    let subj = subject.tokens();
    let verb_index = subj.len() + 1;
    let obj = object.tokens();
    for (offset, toks, head_of_noun) in [(0, &subj, verb_index), (verb_index, &obj, verb_index)] {
        let noun_index = offset + toks.len();
        for (k, t) in toks.iter().enumerate() {
            let index = offset + k + 1;
            let head = if index == noun_index { head_of_noun } else { noun_index };
            rows.push(ConllRow::new(index, *t, head));
        }
        if offset == 0 {
            rows.push(ConllRow::new(verb_index, verb, 0));
        }
    }
    Sentence {
        constituency: Some(parse_sexpr(&sexpr).expect("generated bracketing")),
        dependency: Some(parse_conll(&rows).expect("generated heads")),
    }
}

const DETS: [&str; 2] = ["a", "the"];
const ADJS: [&str; 5] = ["small", "big", "old", "young", "happy"];
const NOUNS: [&str; 7] = ["dog", "cat", "man", "woman", "child", "horse", "bird"];
const VERBS: [&str; 5] = ["chases", "sees", "follows", "feeds", "watches"];
const OPPOSITE_VERBS: [&str; 5] = ["avoids", "ignores", "leads", "starves", "misses"];

/// Entailment drops the subject's adjective, contradiction swaps the verb
/// for its opposite, neutral adds an adjective to the object.
pub fn overfit_corpus() -> Vec<Example> {
    (0..OVERFIT_SIZE)
        .map(|i| {
            let gold = Label::ALL[i % 3];
            let subject = NounPhrase {
                det: DETS[i % 2],
                adj: Some(ADJS[i % 5]),
                noun: NOUNS[i % 7],
            };
            let v = (i / 3) % 5;
            let object = NounPhrase {
                det: DETS[(i + 1) % 2],
                adj: None,
                noun: NOUNS[(i + 3) % 7],
            };
            let premise = clause(&subject, VERBS[v], &object);
            let hypothesis = match gold {
                Label::Entailment => clause(&NounPhrase { adj: None, ..subject.clone() }, VERBS[v], &object),
                Label::Contradiction => clause(&subject, OPPOSITE_VERBS[v], &object),
                Label::Neutral => clause(
                    &subject,
                    VERBS[v],
                    &NounPhrase {
                        adj: Some(ADJS[(i + 2) % 5]),
                        ..object.clone()
                    },
                ),
            };
            Example {
                pair_id: format!("overfit-{i:02}"),
                premise,
                hypothesis,
                gold,
            }
        })
        .collect()
}

const S_ADJS: [&str; 3] = ["red", "blue", "tall"];
const S_NOUNS: [&str; 4] = ["dog", "cat", "man", "woman"];
const S_VERBS: [&str; 2] = ["sees", "follows"];

/// Premise `det adj1 n1 verb det adj2 n2`. Entailment repeats it,
/// contradiction swaps the nouns, neutral swaps the adjectives. Labels are
/// balanced within the last `dev` pairs and within the rest, and shuffled.
pub fn structure_corpus(n: usize, dev: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dev = dev.min(n);
    let mut labels = Vec::with_capacity(n);
    for len in [n - dev, dev] {
        let mut part: Vec<Label> = (0..len).map(|i| Label::ALL[i % 3]).collect();
        part.shuffle(&mut rng);
        labels.extend(part);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, gold)| {
            let pick2 = |rng: &mut ChaCha8Rng, len: usize| {
                let a = rng.random_range(0..len);
                let b = (a + rng.random_range(1..len)) % len;
                (a, b)
            };
            let (a1, a2) = pick2(&mut rng, S_ADJS.len());
            let (n1, n2) = pick2(&mut rng, S_NOUNS.len());
            let verb = S_VERBS[rng.random_range(0..S_VERBS.len())];
            let build = |a1: usize, n1: usize, a2: usize, n2: usize| {
                clause(
                    &NounPhrase {
                        det: "the",
                        adj: Some(S_ADJS[a1]),
                        noun: S_NOUNS[n1],
                    },
                    verb,
                    &NounPhrase {
                        det: "the",
                        adj: Some(S_ADJS[a2]),
                        noun: S_NOUNS[n2],
                    },
                )
            };
            let hypothesis = match gold {
                Label::Entailment => build(a1, n1, a2, n2),
                Label::Contradiction => build(a1, n2, a2, n1),
                Label::Neutral => build(a2, n1, a1, n2),
            };
            Example {
                pair_id: format!("structure-{i:03}"),
                premise: build(a1, n1, a2, n2),
                hypothesis,
                gold,
            }
        })
        .collect()
}
