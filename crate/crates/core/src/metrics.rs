//! Normalized similarity between AST label sequences. Jaccard and
//! Sorensen-Dice compare label sets; Levenshtein compares the sequences.
//! All return similarities in `[0, 1]`, with empty-vs-empty equal to 1.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::ast::{parse, traversal_labels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Jaccard,
    Levenshtein,
    SorensenDice,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jaccard, Metric::Levenshtein, Metric::SorensenDice];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Jaccard => "jaccard",
            Metric::Levenshtein => "levenshtein",
            Metric::SorensenDice => "sorensen_dice",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Metric::Jaccard => "Jaccard",
            Metric::Levenshtein => "Levenshtein",
            Metric::SorensenDice => "Sorensen-Dice",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub jaccard: f64,
    pub levenshtein: f64,
    pub sorensen_dice: f64,
}

impl SimilarityScores {
    pub const PERFECT: SimilarityScores = SimilarityScores {
        jaccard: 1.0,
        levenshtein: 1.0,
        sorensen_dice: 1.0,
    };

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Jaccard => self.jaccard,
            Metric::Levenshtein => self.levenshtein,
            Metric::SorensenDice => self.sorensen_dice,
        }
    }

    /// Component-wise mean. Returns `None` for an empty slice.
    pub fn mean(scores: &[SimilarityScores]) -> Option<SimilarityScores> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let sum = |f: fn(&SimilarityScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(SimilarityScores {
            jaccard: sum(|s| s.jaccard),
            levenshtein: sum(|s| s.levenshtein),
            sorensen_dice: sum(|s| s.sorensen_dice),
        })
    }
}

fn set_sizes<T: Eq + Hash>(a: &[T], b: &[T]) -> (usize, usize, usize) {
    let sa: HashSet<&T> = a.iter().collect();
    let sb: HashSet<&T> = b.iter().collect();
    let inter = sa.intersection(&sb).count();
    (sa.len(), sb.len(), inter)
}

pub fn jaccard<T: Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    let (na, nb, inter) = set_sizes(a, b);
    let union = na + nb - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn sorensen_dice<T: Eq + Hash>(a: &[T], b: &[T]) -> f64 {
    let (na, nb, inter) = set_sizes(a, b);
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Unit-cost edit distance, two-row dynamic program.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn levenshtein_norm<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

pub fn similarity<T: Eq + Hash>(a: &[T], b: &[T]) -> SimilarityScores {
    SimilarityScores {
        jaccard: jaccard(a, b),
        levenshtein: levenshtein_norm(a, b),
        sorensen_dice: sorensen_dice(a, b),
    }
}

/// Parses both programs and compares their traversal label sequences.
pub fn score_sample(ground_source: &str, predicted_source: &str) -> SimilarityScores {
    if ground_source == predicted_source {
        return SimilarityScores::PERFECT;
    }
    let ground = parse(ground_source);
    let predicted = parse(predicted_source);
    similarity(&traversal_labels(&ground), &traversal_labels(&predicted))
}
