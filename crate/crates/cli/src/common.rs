use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};
use treeattn::data::conll::{parse_conll, ConllRow};
use treeattn::data::corpus::{load_corpus, Corpus};
use treeattn::data::sexpr::parse_sexpr;
use treeattn::model::ParseRequirement;
use treeattn::{Example, ModelVariant, Sentence};

use crate::CliError;

pub fn parse_variant(name: &str) -> Result<ModelVariant, CliError> {
    name.parse::<ModelVariant>().map_err(CliError::from)
}

/// Loads a corpus, logging skipped records.
pub fn read_corpus(path: &Path, sidecar: Option<&Path>) -> Result<Corpus, CliError> {
    let corpus = load_corpus(path, sidecar)?;
    if corpus.skipped_unlabeled > 0 {
        log::info!("{}: skipped {} unlabeled pairs", path.display(), corpus.skipped_unlabeled);
    }
    if !corpus.malformed.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), corpus.malformed.len());
    }
    Ok(corpus)
}

/// Fails early, with the pair id, when a variant needs a parse the data lacks.
pub fn check_parses(variant: ModelVariant, examples: &[Example], what: &str) -> Result<(), CliError> {
    let has = |s: &Sentence| match variant.requires() {
        ParseRequirement::None => s.constituency.is_some() || s.dependency.is_some(),
        ParseRequirement::Constituency => s.constituency.is_some(),
        ParseRequirement::Dependency => s.dependency.is_some(),
    };
    match examples.iter().find(|e| !has(&e.premise) || !has(&e.hypothesis)) {
        Some(e) => Err(CliError::Data(format!(
            "{what}: pair {} lacks the parse {variant} needs{}",
            e.pair_id,
            if variant.requires() == ParseRequirement::Dependency {
                " (pass --dep-sidecar)"
            } else {
                ""
            }
        ))),
        None => Ok(()),
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// A sentence given on the command line: a bracketed parse, or plain
/// tokens which are bracketed right-branching. `heads` (1-based, 0 = root)
/// adds a dependency parse over the same tokens.
pub fn inline_sentence(text: &str, heads: Option<&str>) -> Result<Sentence, CliError> {
    let text = text.trim();
    let tree = if text.starts_with('(') {
        parse_sexpr(text)?
    } else {
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.is_empty() {
            return Err(CliError::Config("empty inline sentence".into()));
        }
        let mut s = toks[toks.len() - 1].to_string();
        for t in toks[..toks.len() - 1].iter().rev() {
            s = format!("( {t} {s} )");
        }
        parse_sexpr(&s)?
    };
    let dependency = match heads {
        None => None,
        Some(h) => {
            let tokens = tree.tokens();
            let heads = h
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Config(format!("bad head list {h:?}: {e}")))?;
            if heads.len() != tokens.len() {
                return Err(CliError::Config(format!(
                    "{} heads for {} tokens",
                    heads.len(),
                    tokens.len()
                )));
            }
            let rows: Vec<ConllRow> = tokens
                .iter()
                .zip(&heads)
                .enumerate()
                .map(|(i, (t, &hd))| ConllRow::new(i + 1, *t, hd))
                .collect();
            Some(parse_conll(&rows)?)
        }
    };
    Ok(Sentence {
        constituency: Some(tree),
        dependency,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Writes `text` to `path`, or to `out` when no path is given.
pub fn emit(text: &str, path: Option<&Path>, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))),
        None => out.write_all(text.as_bytes()).map_err(CliError::from),
    }
}
