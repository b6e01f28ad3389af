//! Reader for binary word vectors: an ASCII header `<count> <dim>\n`, then
//! `count` records of a whitespace-terminated word followed by `dim`
//! little-endian `f32` values.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Vocabulary;
use crate::autodiff::{glorot_bound, Tensor};
use crate::{Error, Real, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Coverage {
    pub hits: usize,
    pub misses: usize,
    pub missing: Vec<String>,
}

impl Coverage {
    /// Fraction of looked-up words found in the file; 1 for an empty lookup.
    pub fn ratio(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            1.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    /// One row per vocabulary token.
    pub matrix: Tensor,
    pub coverage: Coverage,
}

/// Token-embedding matrix for `vocab`: rows of words present in the file are
/// copied, all other rows (and the unknown-token row) are drawn uniformly from
/// `[-a, a]` with `a = sqrt(6 / (|V| + dim))`, the same scheme used for
/// randomly initialised token embeddings.
pub fn load_pretrained_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<Pretrained> {
    let words = &vocab.tokens.items()[1..];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unk = Tensor::uniform(&[dim], glorot_bound(vocab.tokens.len(), dim), &mut rng);
    let rest = load_with_rng(path.as_ref(), words, dim, vocab.tokens.len(), &mut rng)?;
    let mut data = unk.into_data();
    data.extend_from_slice(rest.matrix.data());
    Ok(Pretrained {
        matrix: Tensor::new(vec![vocab.tokens.len(), dim], data)?,
        coverage: rest.coverage,
    })
}

/// Like [`load_pretrained_embeddings`] for an explicit word list.
pub fn load_pretrained_rows(
    path: impl AsRef<Path>,
    words: &[String],
    dim: usize,
    seed: u64,
) -> Result<Pretrained> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    load_with_rng(path.as_ref(), words, dim, words.len(), &mut rng)
}

fn load_with_rng(
    path: &Path,
    words: &[String],
    dim: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Pretrained> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_vectors(BufReader::new(file), dim, words)?;
    let bound = glorot_bound(fan_in, dim);
    let mut data = Vec::with_capacity(words.len() * dim);
    let mut coverage = Coverage::default();
    for w in words {
        match table.get(w.as_str()) {
            Some(v) => {
                coverage.hits += 1;
                data.extend(v.iter().map(|&x| x as Real));
            }
            None => {
                coverage.misses += 1;
                coverage.missing.push(w.clone());
                data.extend_from_slice(Tensor::uniform(&[dim], bound, rng).data());
            }
        }
    }
    Ok(Pretrained {
        matrix: Tensor::new(vec![words.len(), dim], data)?,
        coverage,
    })
}

/// Reads the file, keeping only vectors of `wanted` words.
fn read_vectors<R: BufRead>(
    mut reader: R,
    dim: usize,
    wanted: &[String],
) -> Result<HashMap<String, Vec<f32>>> {
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::Format(format!("reading header: {e}")))?;
    let mut parts = header.split_whitespace();
    let (count, file_dim) = match (parts.next(), parts.next(), parts.next()) {
        (Some(c), Some(d), None) => (
            c.parse::<usize>().map_err(|_| {
                Error::Format(format!("bad vector count in header '{}'", header.trim()))
            })?,
            d.parse::<usize>().map_err(|_| {
                Error::Format(format!("bad dimension in header '{}'", header.trim()))
            })?,
        ),
        _ => {
            return Err(Error::Format(format!(
                "malformed header '{}'",
                header.trim()
            )))
        }
    };
    if file_dim != dim {
        return Err(Error::Format(format!(
            "file has dimension {file_dim}, expected {dim}"
        )));
    }

    let wanted: std::collections::HashSet<&str> = wanted.iter().map(String::as_str).collect();
    let mut out = HashMap::new();
    let mut raw = vec![0u8; dim * 4];
    for i in 0..count {
        let word = read_word(&mut reader).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("record {i} ('{word}') is truncated")))?;
        if wanted.contains(word.as_str()) {
            let v = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            out.insert(word, v);
        }
    }
    Ok(out)
}

fn read_word<R: BufRead>(reader: &mut R) -> std::result::Result<String, String> {
    let mut bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte) {
            Ok(0) => return Err("unexpected end of file".into()),
            Ok(_) => {}
            Err(e) => return Err(e.to_string()),
        }
        if byte[0].is_ascii_whitespace() {
            if bytes.is_empty() {
                continue;
            }
            break;
        }
        bytes.push(byte[0]);
    }
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

/// Writes vectors in the same binary layout, one newline after each record.
pub fn write_pretrained<W: Write>(mut w: W, entries: &[(String, Vec<f32>)]) -> std::io::Result<()> {
    let dim = entries.first().map_or(0, |(_, v)| v.len());
    writeln!(w, "{} {}", entries.len(), dim)?;
    for (word, v) in entries {
        write!(w, "{word} ")?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}
