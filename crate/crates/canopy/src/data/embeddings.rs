//! Pretrained word and entity vector loading.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct PretrainedEmbeddings {
    /// `n_words × word_dim`, row 0 zeroed for padding.
    pub word_table: Array2<f64>,
    /// `n_entities × entity_dim`, row 0 zeroed for padding.
    pub entity_table: Array2<f64>,
    /// Fraction of non-padding vocabulary entries found in the vector file;
    /// 0 when no file was given.
    pub word_coverage: f64,
    pub entity_coverage: f64,
}

/// Build embedding tables for a vocabulary from whitespace-delimited vector
/// files (`key v1 … vD` per line, optional `count dim` header).
///
/// Keys absent from a file, or the whole table when its path is `None`, are
/// initialized uniformly in (−0.1, 0.1). The padding row is always zero.
pub fn load_pretrained_embeddings(
    vocab: &Vocabulary,
    word_dim: usize,
    entity_dim: usize,
    word_vec_path: Option<&Path>,
    entity_vec_path: Option<&Path>,
    rng: &mut impl Rng,
) -> Result<PretrainedEmbeddings> {
    let (word_table, word_coverage) = fill_table(
        vocab.n_words(),
        word_dim,
        &vocab.words(),
        word_vec_path,
        rng,
    )?;
    let (entity_table, entity_coverage) = fill_table(
        vocab.n_entities(),
        entity_dim,
        &vocab.entities(),
        entity_vec_path,
        rng,
    )?;
    Ok(PretrainedEmbeddings {
        word_table,
        entity_table,
        word_coverage,
        entity_coverage,
    })
}

fn fill_table(
    rows: usize,
    dim: usize,
    keys: &[(&str, usize)],
    path: Option<&Path>,
    rng: &mut impl Rng,
) -> Result<(Array2<f64>, f64)> {
    let mut table = Array2::zeros((rows, dim));
    for &(_, id) in keys {
        for v in table.row_mut(id) {
            *v = rng.random_range(-0.1..0.1);
        }
    }

    let Some(path) = path else {
        return Ok((table, 0.0));
    };

    let wanted: HashMap<&str, usize> = keys.iter().copied().collect();
    let mut hits = 0usize;

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(key) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if lineno == 0 && values.len() == 1 && key.parse::<usize>().is_ok() {
            // word2vec-style "count dim" header
            continue;
        }
        let Some(&id) = wanted.get(key) else { continue };
        if values.len() != dim {
            return Err(Error::malformed(
                path,
                lineno + 1,
                format!("expected {dim} vector components, found {}", values.len()),
            ));
        }
        let mut row = table.row_mut(id);
        for (slot, raw) in row.iter_mut().zip(&values) {
            *slot = raw.parse::<f64>().map_err(|e| {
                Error::malformed(path, lineno + 1, format!("bad float {raw:?}: {e}"))
            })?;
        }
        hits += 1;
    }

    let coverage = if keys.is_empty() {
        1.0
    } else {
        hits as f64 / keys.len() as f64
    };
    Ok((table, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn vocab_with(words: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::new();
        for w in words {
            v.intern_word(w);
        }
        v
    }

    #[test]
    fn file_rows_are_copied_exactly_and_padding_stays_zero() {
        let vocab = vocab_with(&["apple", "banana"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "apple 1.5 -2.0 0.25").unwrap();
        writeln!(f, "ignored 9 9 9").unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb =
            load_pretrained_embeddings(&vocab, 3, 4, Some(f.path()), None, &mut rng).unwrap();

        let apple = vocab.word_id("apple").unwrap();
        assert_eq!(emb.word_table.row(apple).to_vec(), vec![1.5, -2.0, 0.25]);
        assert!(emb.word_table.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(emb.word_coverage, 0.5);

        let banana = vocab.word_id("banana").unwrap();
        assert!(emb
            .word_table
            .row(banana)
            .iter()
            .all(|&v| v != 0.0 && v.abs() < 0.1));
    }

    #[test]
    fn dimension_mismatch_aborts() {
        let vocab = vocab_with(&["apple"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "apple 1.0 2.0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = load_pretrained_embeddings(&vocab, 3, 4, Some(f.path()), None, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn count_header_is_skipped() {
        let vocab = vocab_with(&["apple"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "400000 3").unwrap();
        writeln!(f, "apple 1.0 2.0 3.0").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let emb =
            load_pretrained_embeddings(&vocab, 3, 4, Some(f.path()), None, &mut rng).unwrap();
        assert_eq!(emb.word_coverage, 1.0);
    }
}
