//! Token sources: the synthetic repetition task and the interleaved
//! byte-level translation corpus.

use super::TrainError;
use crate::rng::{seeded, SeededRng};
use rand::Rng;
use std::io::BufRead;
use std::path::Path;

/// An infinite, seed-deterministic token source.
pub trait TaskStream: Send {
    fn next_token(&mut self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Period length for synthetic periodic tasks.
    fn period(&self) -> Option<usize> {
        None
    }
}

/// Fixed warm-up string, then `reps` copies of a fresh random word; the whole
/// pattern repeats with a new word every `warmup_len + word_len * reps` tokens.
pub struct RepetitionStream {
    warmup: Vec<usize>,
    word: Vec<usize>,
    word_len: usize,
    reps: usize,
    alphabet: usize,
    pos: usize,
    rng: SeededRng,
}

pub fn make_repetition_stream(
    warmup_len: usize,
    word_len: usize,
    reps: usize,
    alphabet: usize,
    seed: u64,
) -> RepetitionStream {
    assert!(warmup_len > 0 && word_len > 0 && reps > 0 && alphabet > 1);
    let mut rng = seeded(seed);
    // The warm-up is the same for every seed; only words differ.
    let warmup = (0..warmup_len).map(|i| i % alphabet).collect();
    let word = (0..word_len).map(|_| rng.random_range(0..alphabet)).collect();
    RepetitionStream {
        warmup,
        word,
        word_len,
        reps,
        alphabet,
        pos: 0,
        rng,
    }
}

impl RepetitionStream {
    pub fn period_len(&self) -> usize {
        self.warmup.len() + self.word_len * self.reps
    }

    /// Offset of the current position within its period.
    pub fn phase(&self) -> usize {
        self.pos
    }

    /// Ground-truth token at a given offset of the *current* period.
    pub fn token_at_offset(&self, offset: usize) -> usize {
        if offset < self.warmup.len() {
            self.warmup[offset]
        } else {
            self.word[(offset - self.warmup.len()) % self.word_len]
        }
    }
}

impl TaskStream for RepetitionStream {
    fn next_token(&mut self) -> usize {
        let tok = self.token_at_offset(self.pos);
        self.pos += 1;
        if self.pos == self.period_len() {
            self.pos = 0;
            for w in &mut self.word {
                *w = self.rng.random_range(0..self.alphabet);
            }
        }
        tok
    }

    fn vocab_size(&self) -> usize {
        self.alphabet
    }

    fn period(&self) -> Option<usize> {
        Some(self.period_len())
    }
}

/// Byte-level stream of `<F:xx>src<T:yy>tgt` records over aligned sentence
/// pairs, with a random direction per pair; wraps around at the epoch end.
pub struct InterleavedCorpus {
    pairs: Vec<(Vec<u8>, Vec<u8>)>,
    lang_a: String,
    lang_b: String,
    next_pair: usize,
    buffer: std::collections::VecDeque<u8>,
    rng: SeededRng,
}

pub fn make_interleaved_corpus(
    file_a: &Path,
    lang_a: &str,
    file_b: &Path,
    lang_b: &str,
    seed: u64,
) -> Result<InterleavedCorpus, TrainError> {
    let read_lines = |p: &Path| -> Result<Vec<Vec<u8>>, TrainError> {
        let f = std::fs::File::open(p)?;
        let mut out = Vec::new();
        for line in std::io::BufReader::new(f).split(b'\n') {
            out.push(line?);
        }
        Ok(out)
    };
    let a = read_lines(file_a)?;
    let b = read_lines(file_b)?;
    if a.len() != b.len() {
        let line = a.len().min(b.len()) + 1;
        return Err(TrainError::Ingestion {
            line,
            reason: format!(
                "aligned pair files differ in length ({} vs {} sentences)",
                a.len(),
                b.len()
            ),
        });
    }
    if a.is_empty() {
        return Err(TrainError::Ingestion { line: 1, reason: "empty corpus".into() });
    }
    Ok(InterleavedCorpus {
        pairs: a.into_iter().zip(b).collect(),
        lang_a: lang_a.to_string(),
        lang_b: lang_b.to_string(),
        next_pair: 0,
        buffer: Default::default(),
        rng: seeded(seed),
    })
}

impl InterleavedCorpus {
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    fn refill(&mut self) {
        let (a, b) = &self.pairs[self.next_pair];
        self.next_pair = (self.next_pair + 1) % self.pairs.len();
        let a_to_b: bool = self.rng.random();
        let (src_lang, src, tgt_lang, tgt) = if a_to_b {
            (&self.lang_a, a, &self.lang_b, b)
        } else {
            (&self.lang_b, b, &self.lang_a, a)
        };
        self.buffer.extend(format!("<F:{src_lang}>").bytes());
        self.buffer.extend(src.iter().copied());
        self.buffer.extend(format!("<T:{tgt_lang}>").bytes());
        self.buffer.extend(tgt.iter().copied());
    }
}

impl TaskStream for InterleavedCorpus {
    fn next_token(&mut self) -> usize {
        while self.buffer.is_empty() {
            self.refill();
        }
        self.buffer.pop_front().unwrap() as usize
    }

    fn vocab_size(&self) -> usize {
        256
    }
}
