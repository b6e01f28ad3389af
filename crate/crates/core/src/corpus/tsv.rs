use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{Corpus, MentionTag, Scene, SpanRole, TokenRecord, Utterance, FORMAT_VERSION};
use crate::{Error, Result};

const SCENE: &str = "#scene ";
const SPEAKERS: &str = "#speakers ";

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = parse_corpus_str(&text)?;
    corpus.source = Some(path.to_path_buf());
    Ok(corpus)
}

struct OpenSpan {
    entity: String,
    line: usize,
}

/// Parses the corpus TSV layout:
///
/// ```text
/// #scene s01
/// #speakers Joey Tribbiani
/// Ross<TAB>E:335<TAB>NNP
/// ,<TAB>-
///
/// ```
///
/// Spans are checked for contiguity and must close inside their utterance.
pub fn parse_corpus_str(text: &str) -> Result<Corpus> {
    let mut scenes: Vec<Scene> = Vec::new();
    let mut ids = HashSet::new();
    let mut in_utterance = false;
    let mut open: Option<OpenSpan> = None;

    let close_utterance = |open: &mut Option<OpenSpan>, in_utt: &mut bool| -> Result<()> {
        if let Some(span) = open.take() {
            return Err(Error::data(format!(
                "mention of {} opened at line {} is not closed inside its utterance",
                span.entity, span.line
            )));
        }
        *in_utt = false;
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };

        if line.is_empty() {
            close_utterance(&mut open, &mut in_utterance)?;
            continue;
        }
        if let Some(id) = line.strip_prefix(SCENE) {
            close_utterance(&mut open, &mut in_utterance)?;
            if id.is_empty() {
                return Err(parse_err("empty scene id".into()));
            }
            if !ids.insert(id.to_string()) {
                return Err(Error::data(format!(
                    "duplicate scene id {id} at line {line_no}"
                )));
            }
            scenes.push(Scene {
                id: id.to_string(),
                utterances: Vec::new(),
            });
            continue;
        }
        if let Some(names) = line.strip_prefix(SPEAKERS) {
            close_utterance(&mut open, &mut in_utterance)?;
            let scene = scenes
                .last_mut()
                .ok_or_else(|| parse_err("#speakers before any #scene".into()))?;
            let speakers: Vec<String> = names.split(',').map(str::to_string).collect();
            if speakers.iter().any(String::is_empty) {
                return Err(parse_err(format!("empty speaker name in '{names}'")));
            }
            scene.utterances.push(Utterance {
                speakers,
                tokens: Vec::new(),
            });
            in_utterance = true;
            continue;
        }

        if !in_utterance {
            return Err(parse_err("token line outside an utterance".into()));
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(parse_err(format!(
                "expected 2 or 3 tab-separated columns, got {}",
                cols.len()
            )));
        }
        if cols[0].is_empty() {
            return Err(parse_err("empty token".into()));
        }
        let mention = parse_mention_field(cols[1]).map_err(parse_err)?;
        match (&mention, &open) {
            (Some(m), None) if m.role == SpanRole::Inside => {
                return Err(Error::data(format!(
                    "line {line_no}: inside-span marker on a token outside any mention"
                )));
            }
            (Some(m), Some(_)) if m.role == SpanRole::Begin => {
                return Err(Error::data(format!(
                    "line {line_no}: overlapping mention spans"
                )));
            }
            (Some(m), Some(span)) if m.entity != span.entity => {
                return Err(Error::data(format!(
                    "line {line_no}: span of {} continues with entity {}",
                    span.entity, m.entity
                )));
            }
            (None, Some(span)) => {
                return Err(Error::data(format!(
                    "line {line_no}: mention of {} opened at line {} is not contiguous",
                    span.entity, span.line
                )));
            }
            _ => {}
        }
        if let Some(m) = &mention {
            match m.role {
                SpanRole::Begin => {
                    open = Some(OpenSpan {
                        entity: m.entity.clone(),
                        line: line_no,
                    })
                }
                SpanRole::End => open = None,
                SpanRole::Inside => {}
            }
        }
        let category = cols.get(2).map(|s| s.to_string());
        let utt = scenes
            .last_mut()
            .and_then(|s| s.utterances.last_mut())
            .expect("in_utterance implies an open utterance");
        utt.tokens.push(TokenRecord {
            surface: cols[0].to_string(),
            mention,
            category,
        });
    }
    close_utterance(&mut open, &mut in_utterance)?;

    Ok(Corpus {
        scenes,
        source: None,
        format_version: FORMAT_VERSION,
    })
}

fn parse_mention_field(field: &str) -> std::result::Result<Option<MentionTag>, String> {
    if field == "-" {
        return Ok(None);
    }
    let (marker, entity) = field
        .split_once(':')
        .ok_or_else(|| format!("bad mention field '{field}'"))?;
    let role = match marker {
        "B" => SpanRole::Begin,
        "I" => SpanRole::Inside,
        "E" => SpanRole::End,
        _ => return Err(format!("unknown span marker '{marker}'")),
    };
    if entity.is_empty() {
        return Err(format!("missing entity id in '{field}'"));
    }
    Ok(Some(MentionTag {
        entity: entity.to_string(),
        role,
    }))
}

/// Canonical text form; [`parse_corpus_str`] of the result reproduces the
/// corpus and re-serialising gives back the same bytes.
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for scene in &corpus.scenes {
        let _ = writeln!(out, "{SCENE}{}", scene.id);
        for utt in &scene.utterances {
            let _ = writeln!(out, "{SPEAKERS}{}", utt.speakers.join(","));
            for tok in &utt.tokens {
                out.push_str(&tok.surface);
                out.push('\t');
                match &tok.mention {
                    Some(m) => {
                        out.push(m.role.marker());
                        out.push(':');
                        out.push_str(&m.entity);
                    }
                    None => out.push('-'),
                }
                if let Some(cat) = &tok.category {
                    out.push('\t');
                    out.push_str(cat);
                }
                out.push('\n');
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_corpus(corpus)).map_err(|e| Error::io(path, e))
}
