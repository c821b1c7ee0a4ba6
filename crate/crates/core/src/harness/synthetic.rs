//! Multi-aspect synthetic classification task.
//!
//! Vocabulary ids `[a·t, (a+1)·t)` belong to aspect `a` (with `t` tokens
//! per aspect); every other id is noise. Each aspect is present with
//! probability ½. The label XOR-folds the presence bits into
//! `⌈log₂ C⌉` bits and reduces modulo `C`, so with `k > log₂ C` some label
//! bits depend on two aspects at once.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Splits};
use crate::error::{Error, Result};
use crate::numeric::{RngState, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub vocab: usize,
    pub aspects: usize,
    pub tokens_per_aspect: usize,
    /// Target share of noise tokens in a sentence.
    pub noise_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub classes: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            vocab: 200,
            aspects: 4,
            tokens_per_aspect: 5,
            noise_fraction: 0.6,
            min_len: 12,
            max_len: 24,
            classes: 8,
            train: 2000,
            validation: 500,
            test: 500,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic task: {msg}")));
        if self.aspects < 2 || self.aspects > 20 {
            return bad(format!("aspects must lie in 2..=20, got {}", self.aspects));
        }
        if self.tokens_per_aspect == 0 {
            return bad("tokens_per_aspect must be >= 1".into());
        }
        if self.vocab <= self.signal_tokens() {
            return bad(format!(
                "vocab {} leaves no noise tokens after {} aspect tokens",
                self.vocab,
                self.signal_tokens()
            ));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return bad(format!("noise_fraction must lie in [0, 1), got {}", self.noise_fraction));
        }
        if self.min_len < self.aspects || self.min_len > self.max_len {
            return bad(format!(
                "length range {}..={} must start at >= aspects ({})",
                self.min_len, self.max_len, self.aspects
            ));
        }
        if self.classes < 2 || self.classes > self.patterns() {
            return bad(format!(
                "{} classes exceed the {} aspect-presence patterns",
                self.classes,
                self.patterns()
            ));
        }
        if self.train == 0 {
            return bad("train split must be nonempty".into());
        }
        Ok(())
    }

    pub fn patterns(&self) -> usize {
        1 << self.aspects
    }

    fn signal_tokens(&self) -> usize {
        self.aspects * self.tokens_per_aspect
    }

    fn label_bits(&self) -> usize {
        (usize::BITS - (self.classes - 1).leading_zeros()) as usize
    }

    /// Label of an aspect-presence pattern (bit `a` set ⇔ aspect `a` present).
    pub fn label_of_pattern(&self, pattern: usize) -> usize {
        let bits = self.label_bits();
        let mask = (1usize << bits) - 1;
        let mut folded = 0;
        let mut rest = pattern;
        while rest != 0 {
            folded ^= rest & mask;
            rest >>= bits;
        }
        folded % self.classes
    }

    /// Aspect a token belongs to, if any.
    pub fn aspect_of(&self, token: usize) -> Option<usize> {
        (token < self.signal_tokens()).then(|| token / self.tokens_per_aspect)
    }

    /// Presence pattern of a token sequence.
    pub fn pattern_of(&self, tokens: &[usize]) -> usize {
        tokens
            .iter()
            .filter_map(|&t| self.aspect_of(t))
            .fold(0, |p, a| p | (1 << a))
    }
}

/// Accuracy of the best classifier that sees only whether `aspect` is
/// present, under uniform patterns. Enumerates all patterns.
pub fn single_aspect_oracle_accuracy(config: &SyntheticTaskConfig, aspect: usize) -> f64 {
    let mut counts = vec![vec![0usize; config.classes]; 2];
    for p in 0..config.patterns() {
        counts[(p >> aspect) & 1][config.label_of_pattern(p)] += 1;
    }
    let best: usize = counts.iter().map(|c| *c.iter().max().expect("classes >= 2")).sum();
    best as f64 / config.patterns() as f64
}

fn gen_example(config: &SyntheticTaskConfig, rng: &mut RngState) -> Example {
    let pattern = rng.below(config.patterns());
    let len = config.min_len + rng.below(config.max_len - config.min_len + 1);
    let present: Vec<usize> = (0..config.aspects).filter(|a| pattern >> a & 1 == 1).collect();
    let mut tokens = Vec::with_capacity(len);
    if !present.is_empty() {
        let target = ((1.0 - config.noise_fraction) * len as f64).round() as usize;
        let signal = target.clamp(present.len(), len);
        let t = config.tokens_per_aspect;
        for k in 0..signal {
            // one token per present aspect first, then random present aspects
            let a = if k < present.len() {
                present[k]
            } else {
                present[rng.below(present.len())]
            };
            tokens.push(a * t + rng.below(t));
        }
    }
    let noise_lo = config.signal_tokens();
    while tokens.len() < len {
        tokens.push(noise_lo + rng.below(config.vocab - noise_lo));
    }
    rng.shuffle(&mut tokens);
    Example {
        tokens,
        label: config.label_of_pattern(pattern),
    }
}

/// Generates the three splits. Every example is distinct across and within
/// splits; duplicates are redrawn.
pub fn gen_synthetic(config: &SyntheticTaskConfig) -> Result<Splits> {
    config.validate()?;
    let mut rng = RngState::new(config.seed, Stream::Data);
    let mut seen = HashSet::new();
    let mut draw = |n: usize| -> Result<Dataset> {
        let mut examples = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while examples.len() < n {
            attempts += 1;
            if attempts > 100 * (n + 10) {
                return Err(Error::Config(
                    "synthetic task: too few distinct sentences for the requested split sizes".into(),
                ));
            }
            let ex = gen_example(config, &mut rng);
            if seen.insert(ex.clone()) {
                examples.push(ex);
            }
        }
        Ok(Dataset {
            vocab: config.vocab,
            classes: config.classes,
            examples,
        })
    };
    let train = draw(config.train)?;
    let validation = draw(config.validation)?;
    let test = draw(config.test)?;
    Ok(Splits {
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SyntheticTaskConfig {
        SyntheticTaskConfig {
            train: 300,
            validation: 100,
            test: 100,
            seed: 5,
            ..SyntheticTaskConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(&tiny()).unwrap();
        let b = gen_synthetic(&tiny()).unwrap();
        assert_eq!(a.train.to_tsv(), b.train.to_tsv());
        assert_eq!(a.test.to_tsv(), b.test.to_tsv());
        let c = gen_synthetic(&SyntheticTaskConfig { seed: 6, ..tiny() }).unwrap();
        assert_ne!(a.train.to_tsv(), c.train.to_tsv());
    }

    #[test]
    fn labels_follow_the_aspect_pattern() {
        let cfg = tiny();
        let s = gen_synthetic(&cfg).unwrap();
        for ex in s.train.examples.iter().chain(&s.validation.examples).chain(&s.test.examples) {
            assert_eq!(cfg.label_of_pattern(cfg.pattern_of(&ex.tokens)), ex.label);
            assert!((cfg.min_len..=cfg.max_len).contains(&ex.tokens.len()));
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let s = gen_synthetic(&tiny()).unwrap();
        let train: HashSet<_> = s.train.examples.iter().collect();
        assert!(s.validation.examples.iter().all(|e| !train.contains(e)));
        assert!(s.test.examples.iter().all(|e| !train.contains(e)));
        let val: HashSet<_> = s.validation.examples.iter().collect();
        assert!(s.test.examples.iter().all(|e| !val.contains(e)));
    }

    #[test]
    fn default_label_function() {
        let cfg = SyntheticTaskConfig::default();
        // three label bits; aspect 3 folds onto bit 0
        assert_eq!(cfg.label_of_pattern(0b0000), 0);
        assert_eq!(cfg.label_of_pattern(0b1000), 1);
        assert_eq!(cfg.label_of_pattern(0b1001), 0);
        assert_eq!(cfg.label_of_pattern(0b0110), 6);
        let labels: HashSet<usize> = (0..16).map(|p| cfg.label_of_pattern(p)).collect();
        assert_eq!(labels.len(), 8);
    }

    #[test]
    fn oracle_accuracies() {
        let cfg = SyntheticTaskConfig::default();
        // Aspects 0 and 3 are XORed: fixing one leaves all 8 labels equally
        // likely. Aspects 1 and 2 pin one label bit: 4 labels remain, each
        // hit by 2 of the 8 completions.
        let accs: Vec<f64> = (0..4).map(|a| single_aspect_oracle_accuracy(&cfg, a)).collect();
        assert_eq!(accs, vec![0.125, 0.25, 0.25, 0.125]);
        // full-pattern oracle is exact on generated data
        let s = gen_synthetic(&tiny()).unwrap();
        let correct = s
            .test
            .examples
            .iter()
            .filter(|e| cfg.label_of_pattern(cfg.pattern_of(&e.tokens)) == e.label)
            .count();
        assert_eq!(correct, s.test.len());
        // two classes over two aspects is XOR: one aspect alone is chance
        let xor = SyntheticTaskConfig { aspects: 2, classes: 2, ..cfg };
        assert_eq!(xor.label_of_pattern(0b11), 0);
        assert!((single_aspect_oracle_accuracy(&xor, 0) - 0.5).abs() < 1e-12);
        // three classes over two aspects: patterns 0,1,2,3 → labels 0,1,2,0
        let three = SyntheticTaskConfig { aspects: 2, classes: 3, ..cfg };
        assert_eq!(three.label_of_pattern(3), 0);
        assert!((single_aspect_oracle_accuracy(&three, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_configs_rejected() {
        let cfg = SyntheticTaskConfig::default();
        assert!(gen_synthetic(&SyntheticTaskConfig { classes: 17, ..cfg }).is_err());
        assert!(gen_synthetic(&SyntheticTaskConfig { aspects: 1, ..cfg }).is_err());
        assert!(gen_synthetic(&SyntheticTaskConfig { vocab: 20, ..cfg }).is_err());
        assert!(gen_synthetic(&SyntheticTaskConfig { min_len: 30, ..cfg }).is_err());
    }
}
