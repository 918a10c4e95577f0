//! Plain-text summary table: per-arm performance (avg ± std) above the
//! per-node-type causal effects.

use std::fmt::Write;

use crate::causal::{ArmStats, CausalResult};
use crate::metrics::Metric;

const LABEL_WIDTH: usize = 22;
const CELL_WIDTH: usize = 16;

/// Pools per-group means and sample stds into overall arm statistics.
fn pooled(groups: &[(usize, ArmStats)]) -> Option<ArmStats> {
    let total: usize = groups.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return None;
    }
    let mean = groups.iter().map(|(n, s)| *n as f64 * s.mean).sum::<f64>() / total as f64;
    if total < 2 {
        return Some(ArmStats { mean, std: 0.0 });
    }
    let within: f64 = groups
        .iter()
        .map(|(n, s)| n.saturating_sub(1) as f64 * s.std * s.std)
        .sum();
    let between: f64 = groups
        .iter()
        .map(|(n, s)| *n as f64 * (s.mean - mean).powi(2))
        .sum();
    Some(ArmStats {
        mean,
        std: ((within + between) / (total - 1) as f64).sqrt(),
    })
}

fn arm_cell(results: &[CausalResult], metric: Metric, treated: bool) -> String {
    let groups: Vec<(usize, ArmStats)> = results
        .iter()
        .filter(|r| r.outcome_metric == metric)
        .map(|r| {
            if treated {
                (r.n_treated, r.treated)
            } else {
                (r.n_control, r.control)
            }
        })
        .collect();
    match pooled(&groups) {
        Some(s) => format!("{:.2} ± {:.2}", s.mean, s.std),
        None => "-".into(),
    }
}

fn row(out: &mut String, label: &str, cells: &[String], trailer: &str) {
    let _ = write!(out, "{label:<LABEL_WIDTH$}");
    for c in cells {
        let pad = CELL_WIDTH.saturating_sub(c.chars().count());
        let _ = write!(out, "{c}{}", " ".repeat(pad));
    }
    let _ = writeln!(out, "{trailer}");
}

/// Renders the two-block table. Rows are ordered by node type; metrics are
/// always in Jaccard, Levenshtein, Sorensen-Dice order.
pub fn report_summary(results: &[CausalResult]) -> String {
    let headers: Vec<String> = Metric::ALL
        .iter()
        .map(|m| m.display_name().to_owned())
        .collect();
    let mut out = String::new();

    let _ = writeln!(out, "Performance metric Y [avg ± std]");
    row(&mut out, "Treatment", &headers, "");
    if !results.is_empty() {
        for (label, treated) in [("T0 (random)", false), ("T1 (AST node)", true)] {
            let cells: Vec<String> = Metric::ALL
                .iter()
                .map(|&m| arm_cell(results, m, treated))
                .collect();
            row(&mut out, label, &cells, "");
        }
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "Causal effect tau");
    row(&mut out, "AST node type", &headers, "flags");

    let mut node_types: Vec<&str> = results.iter().map(|r| r.node_type.as_str()).collect();
    node_types.sort_unstable();
    node_types.dedup();
    for nt in node_types {
        let mut flags: Vec<&str> = Vec::new();
        let cells: Vec<String> = Metric::ALL
            .iter()
            .map(|&m| {
                match results
                    .iter()
                    .find(|r| r.node_type == nt && r.outcome_metric == m)
                {
                    Some(r) => {
                        for f in &r.flags {
                            if !flags.contains(&f.as_str()) {
                                flags.push(f.as_str());
                            }
                        }
                        format!("{:.3}", r.tau)
                    }
                    None => "-".into(),
                }
            })
            .collect();
        row(&mut out, nt, &cells, &flags.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(node_type: &str, metric: Metric, tau: f64) -> CausalResult {
        CausalResult {
            node_type: node_type.into(),
            outcome_metric: metric,
            tau,
            tau_naive: tau,
            ci_low: tau,
            ci_high: tau,
            tau_bootstrap_mean: tau,
            tau_bootstrap_std: 0.0,
            placebo_tau: 0.0,
            n_treated: 40,
            n_control: 40,
            treated: ArmStats {
                mean: 0.78,
                std: 0.21,
            },
            control: ArmStats {
                mean: 0.88,
                std: 0.17,
            },
            flags: vec![],
        }
    }

    #[test]
    fn empty_results_render_headers_only() {
        let text = report_summary(&[]);
        assert!(text.contains("Treatment"));
        assert!(text.contains("AST node type"));
        assert!(!text.contains("T0"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn single_row_is_aligned() {
        let text = report_summary(&[result("identifier", Metric::Jaccard, 0.016)]);
        let header = text
            .lines()
            .find(|l| l.starts_with("AST node type"))
            .unwrap();
        let line = text.lines().find(|l| l.starts_with("identifier")).unwrap();
        assert_eq!(header.find("Jaccard"), line.find("0.016"));
        assert!(line.contains('-'));
    }

    #[test]
    fn pooling_one_group_is_identity() {
        let s = pooled(&[(
            10,
            ArmStats {
                mean: 0.5,
                std: 0.2,
            },
        )])
        .unwrap();
        assert!((s.mean - 0.5).abs() < 1e-12 && (s.std - 0.2).abs() < 1e-12);
        assert!(pooled(&[]).is_none());
    }
}
