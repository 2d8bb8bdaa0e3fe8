//! Seeded, linearly separable Arabic-script fixtures.
//!
//! Each class draws its content words from its own set of letters; a few
//! filler words from shared letters appear in every class. Words have no
//! doubled letters, so normalization leaves them intact.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabeledText;
use crate::label::{Label, NUM_CLASSES};

const CLASS_LETTERS: [&[char]; NUM_CLASSES] = [
    &['ب', 'ت', 'ث', 'ج', 'ح'],
    &['خ', 'د', 'ذ', 'ر', 'ز'],
    &['س', 'ش', 'ص', 'ض', 'ط'],
    &['ظ', 'ع', 'غ', 'ف', 'ق'],
    &['ك', 'ل', 'م', 'ن', 'و'],
];
const FILLER_LETTERS: &[char] = &['ه', 'ي', 'ا'];

fn word(rng: &mut ChaCha8Rng, letters: &[char], min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    let mut out = String::new();
    let mut prev = None;
    while out.chars().count() < len {
        let c = *letters.choose(rng).expect("non-empty letter set");
        if Some(c) != prev {
            out.push(c);
            prev = Some(c);
        }
    }
    out
}

fn text(rng: &mut ChaCha8Rng, label: Label) -> String {
    let mut words: Vec<String> = (0..rng.gen_range(3..=6))
        .map(|_| word(rng, CLASS_LETTERS[label.index()], 3, 6))
        .collect();
    for _ in 0..rng.gen_range(0..=2) {
        words.push(word(rng, FILLER_LETTERS, 3, 4));
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Rows of one class with ids `{source}-{label}-{i}`; texts are unique
/// within the call.
pub fn class_rows(label: Label, n: usize, seed: u64, source: &str) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label.index() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = text(&mut rng, label);
        if seen.insert(t.clone()) {
            out.push(LabeledText::gold(format!("{source}-{label}-{}", out.len()), t, label, source));
        }
    }
    out
}

/// A gold corpus with `counts[c]` rows of class `c`, in label order.
pub fn corpus(counts: [usize; NUM_CLASSES], seed: u64) -> Vec<LabeledText> {
    Label::ALL
        .iter()
        .zip(counts)
        .flat_map(|(l, n)| class_rows(*l, n, seed, "synthetic"))
        .collect()
}
