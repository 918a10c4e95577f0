//! Treatment (syntax-guided) and control (random) masking of snippets.
//!
//! Every masked token is replaced by exactly one sentinel. Spans always
//! refer to byte offsets in the original source.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ast::{find_node_spans, AstTree, ByteSpan};
use crate::corpus::Snippet;
use crate::error::{Error, Result};

pub const DEFAULT_SENTINEL: &str = "<mask>";
pub const DEFAULT_VARIANTS: usize = 20;
pub const DEFAULT_MAX_MASK_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub snippet_id: String,
    pub arm: Arm,
    /// For controls, the node type of the treatment sample they are matched to.
    pub node_type: String,
    pub masked_text: String,
    pub mask_count: usize,
    pub masked_spans: Vec<ByteSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_index: Option<usize>,
    pub ground_truth_tokens: Vec<String>,
}

impl MaskedSample {
    /// Byte offsets of each sentinel inside `masked_text`, derived from the
    /// original spans rather than by searching the text.
    pub fn sentinel_offsets(&self, sentinel_len: usize) -> Vec<usize> {
        let mut shift: isize = 0;
        self.masked_spans
            .iter()
            .map(|&(start, end)| {
                let at = (start as isize + shift) as usize;
                shift += sentinel_len as isize - (end - start) as isize;
                at
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    Absent,
    TooDense {
        mask_count: usize,
        token_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentOutcome {
    Masked(MaskedSample),
    Skipped(SkipReason),
}

impl TreatmentOutcome {
    pub fn sample(self) -> Option<MaskedSample> {
        match self {
            TreatmentOutcome::Masked(s) => Some(s),
            TreatmentOutcome::Skipped(_) => None,
        }
    }
}

fn check_sentinel(snippet: &Snippet, sentinel: &str) -> Result<()> {
    if sentinel.is_empty() {
        return Err(Error::InvalidArgument("mask sentinel is empty".into()));
    }
    if snippet.source.contains(sentinel) {
        return Err(Error::SentinelInSource {
            snippet_id: snippet.id.clone(),
            sentinel: sentinel.to_owned(),
        });
    }
    Ok(())
}

/// Replaces each span (ordered, disjoint) with the sentinel.
pub fn apply_masks(source: &str, spans: &[ByteSpan], sentinel: &str) -> String {
    let mut out = String::with_capacity(source.len() + spans.len() * sentinel.len());
    let mut cursor = 0;
    for &(start, end) in spans {
        out.push_str(&source[cursor..start]);
        out.push_str(sentinel);
        cursor = end;
    }
    out.push_str(&source[cursor..]);
    out
}

fn build_sample(
    snippet: &Snippet,
    arm: Arm,
    node_type: &str,
    spans: Vec<ByteSpan>,
    variant_index: Option<usize>,
    sentinel: &str,
) -> MaskedSample {
    let ground_truth_tokens = spans
        .iter()
        .map(|&(s, e)| snippet.source[s..e].to_owned())
        .collect();
    MaskedSample {
        snippet_id: snippet.id.clone(),
        arm,
        node_type: node_type.to_owned(),
        masked_text: apply_masks(&snippet.source, &spans, sentinel),
        mask_count: spans.len(),
        masked_spans: spans,
        variant_index,
        ground_truth_tokens,
    }
}

/// Masks every token inside any node labelled `node_type`. Nested matches
/// are unioned so no token is masked twice.
pub fn mask_treatment(
    snippet: &Snippet,
    tree: &AstTree,
    node_type: &str,
    sentinel: &str,
    max_mask_fraction: f64,
) -> Result<TreatmentOutcome> {
    if !(max_mask_fraction > 0.0 && max_mask_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "max_mask_fraction must be in (0, 1], got {max_mask_fraction}"
        )));
    }
    check_sentinel(snippet, sentinel)?;

    let tokens: BTreeSet<ByteSpan> = find_node_spans(tree, node_type)
        .into_iter()
        .flat_map(|s| s.leaf_token_spans)
        .collect();
    if tokens.is_empty() {
        return Ok(TreatmentOutcome::Skipped(SkipReason::Absent));
    }
    let token_count = tree.leaf_tokens().len();
    let mask_count = tokens.len();
    if mask_count as f64 > max_mask_fraction * token_count as f64 {
        return Ok(TreatmentOutcome::Skipped(SkipReason::TooDense {
            mask_count,
            token_count,
        }));
    }
    Ok(TreatmentOutcome::Masked(build_sample(
        snippet,
        Arm::Treatment,
        node_type,
        tokens.into_iter().collect(),
        None,
        sentinel,
    )))
}

/// Generator for one control variant, keyed by (seed, snippet id, variant).
fn variant_rng(seed: u64, snippet_id: &str, variant_index: usize) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((snippet_id.len() as u64).to_le_bytes());
    hasher.update(snippet_id.as_bytes());
    hasher.update((variant_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Draws `variants` random maskings of `k` distinct tokens each, over all
/// tokens of the snippet.
pub fn mask_control(
    snippet: &Snippet,
    tree: &AstTree,
    node_type: &str,
    k: usize,
    seed: u64,
    variants: usize,
    sentinel: &str,
) -> Result<Vec<MaskedSample>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "control mask count must be >= 1".into(),
        ));
    }
    check_sentinel(snippet, sentinel)?;
    let tokens = tree.leaf_tokens();
    if k > tokens.len() {
        return Err(Error::NotEnoughTokens {
            snippet_id: snippet.id.clone(),
            requested: k,
            available: tokens.len(),
        });
    }

    Ok((0..variants)
        .map(|v| {
            let mut rng = variant_rng(seed, &snippet.id, v);
            let mut picked: Vec<usize> = index::sample(&mut rng, tokens.len(), k).into_vec();
            picked.sort_unstable();
            let spans = picked.into_iter().map(|i| tokens[i]).collect();
            build_sample(snippet, Arm::Control, node_type, spans, Some(v), sentinel)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::parse;

    fn masked(src: &str, node_type: &str) -> TreatmentOutcome {
        let s = Snippet::new("s", src);
        mask_treatment(&s, &parse(src), node_type, DEFAULT_SENTINEL, 1.0).unwrap()
    }

    #[test]
    fn masks_identifiers() {
        let s = masked("x = y", "identifier").sample().unwrap();
        assert_eq!(s.masked_text, "<mask> = <mask>");
        assert_eq!(s.mask_count, 2);
        assert_eq!(s.ground_truth_tokens, ["x", "y"]);
        assert_eq!(s.sentinel_offsets(6), [0, 9]);
    }

    #[test]
    fn absent_type_is_skipped() {
        assert_eq!(
            masked("x = 1", "while_statement"),
            TreatmentOutcome::Skipped(SkipReason::Absent)
        );
    }

    #[test]
    fn non_terminal_masks_every_token() {
        let s = masked("return x", "return_statement").sample().unwrap();
        assert_eq!(s.ground_truth_tokens, ["return", "x"]);
        assert_eq!(s.masked_text, "<mask> <mask>");
    }

    #[test]
    fn nested_matches_mask_once() {
        // the inner boolean_operator is nested inside the outer one
        let src = "z = a and b or c";
        let s = masked(src, "boolean_operator").sample().unwrap();
        assert_eq!(s.ground_truth_tokens, ["a", "and", "b", "or", "c"]);
    }

    #[test]
    fn dense_masks_are_skipped() {
        let src = "return x";
        let s = Snippet::new("s", src);
        let out = mask_treatment(&s, &parse(src), "return_statement", "<mask>", 0.5).unwrap();
        assert_eq!(
            out,
            TreatmentOutcome::Skipped(SkipReason::TooDense {
                mask_count: 2,
                token_count: 2
            })
        );
    }

    #[test]
    fn sentinel_in_source_is_rejected() {
        let src = "s = '<mask>'";
        let s = Snippet::new("s", src);
        let err = mask_treatment(&s, &parse(src), "identifier", "<mask>", 1.0).unwrap_err();
        assert!(matches!(err, Error::SentinelInSource { .. }));
    }

    #[test]
    fn control_saturation_masks_everything() {
        let src = "x = y + 1";
        let s = Snippet::new("s", src);
        let tree = parse(src);
        let n = tree.leaf_tokens().len();
        let variants = mask_control(&s, &tree, "identifier", n, 3, 20, "<mask>").unwrap();
        assert_eq!(variants.len(), 20);
        assert!(variants
            .iter()
            .all(|v| v.masked_text == variants[0].masked_text));
        assert_eq!(
            variants[0].masked_text,
            "<mask> <mask> <mask> <mask> <mask>"
        );
    }

    #[test]
    fn control_rejects_excess_k() {
        let s = Snippet::new("snip", "x = 1");
        let err = mask_control(&s, &parse("x = 1"), "identifier", 4, 0, 20, "<mask>").unwrap_err();
        assert!(err.to_string().contains("snip"));
    }

    #[test]
    fn control_is_deterministic() {
        let src = "a = b + c * d - e";
        let s = Snippet::new("s", src);
        let tree = parse(src);
        let a = mask_control(&s, &tree, "identifier", 2, 9, 20, "<mask>").unwrap();
        let b = mask_control(&s, &tree, "identifier", 2, 9, 20, "<mask>").unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.mask_count == 2));
        assert_eq!(
            a.iter()
                .map(|v| v.variant_index.unwrap())
                .collect::<Vec<_>>(),
            (0..20).collect::<Vec<_>>()
        );
    }
}
