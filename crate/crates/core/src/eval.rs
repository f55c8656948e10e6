//! Cluster purity statistics and a k-medoids baseline.
//!
//! The purity of a cluster is the share of its labeled members that carry
//! the most common label. A clustering is summarized by the fraction of its
//! clusters whose purity reaches each threshold (by default 50%, 70% and
//! 90%). Noise buckets are never counted as clusters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_io::{EmbeddingSet, Labels};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no gold labels available")]
    NoLabels,
    #[error("cluster has no labeled members")]
    NoLabeledMembers,
    #[error("no clusters to evaluate")]
    NoClusters,
    #[error("purity threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("k must lie in 1..={n}, got {k}")]
    InvalidK { k: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPurity {
    pub purity: f64,
    pub majority_label: String,
    pub majority_count: usize,
    pub labeled: usize,
    pub unlabeled: usize,
}

/// Purity of one cluster. Members without a label are skipped and counted;
/// ties between labels go to the lexicographically smallest.
pub fn cluster_purity<S: AsRef<str>>(
    members: &[S],
    labels: &Labels,
) -> Result<ClusterPurity, EvalError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut unlabeled = 0;
    for m in members {
        match labels.get(m.as_ref()) {
            Some(label) => *counts.entry(label).or_default() += 1,
            None => unlabeled += 1,
        }
    }
    let labeled: usize = counts.values().sum();
    // BTreeMap iterates labels in order, so the first maximum is the smallest.
    let (label, count) = counts
        .iter()
        .fold(None, |best: Option<(&str, usize)>, (&l, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        })
        .ok_or(EvalError::NoLabeledMembers)?;
    Ok(ClusterPurity {
        purity: count as f64 / labeled as f64,
        majority_label: label.to_owned(),
        majority_count: count,
        labeled,
        unlabeled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    /// All members, labeled or not.
    pub size: usize,
    pub labeled: usize,
    pub majority_label: Option<String>,
    pub majority_count: usize,
    pub purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFraction {
    pub threshold: f64,
    /// Clusters with purity at or above the threshold.
    pub clusters: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub per_cluster: Vec<ClusterRow>,
    /// Clusters with at least one labeled member; the denominator of every
    /// fraction.
    pub n_clusters: usize,
    /// Clusters skipped because none of their members has a label.
    pub unlabeled_clusters: usize,
    pub unlabeled_members: usize,
    pub fractions: Vec<ThresholdFraction>,
    pub noise_size: usize,
}

impl PurityReport {
    pub fn fraction(&self, threshold: f64) -> Option<f64> {
        self.fractions
            .iter()
            .find(|f| f.threshold == threshold)
            .map(|f| f.fraction)
    }
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<(), EvalError> {
    match thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        Some(&t) => Err(EvalError::Threshold(t)),
        None => Ok(()),
    }
}

/// Purity statistics over `clusters`. The noise bucket must not be among
/// them; its size is only recorded.
pub fn purity_report<S: AsRef<str>>(
    clusters: &[Vec<S>],
    labels: &Labels,
    thresholds: &[f64],
    noise_size: usize,
) -> Result<PurityReport, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::NoLabels);
    }
    if clusters.is_empty() {
        return Err(EvalError::NoClusters);
    }
    validate_thresholds(thresholds)?;

    let mut per_cluster = Vec::with_capacity(clusters.len());
    let mut unlabeled_members = 0;
    for (cluster, members) in clusters.iter().enumerate() {
        let row = match cluster_purity(members, labels) {
            Ok(p) => {
                unlabeled_members += p.unlabeled;
                ClusterRow {
                    cluster,
                    size: members.len(),
                    labeled: p.labeled,
                    majority_label: Some(p.majority_label),
                    majority_count: p.majority_count,
                    purity: Some(p.purity),
                }
            }
            Err(EvalError::NoLabeledMembers) => {
                unlabeled_members += members.len();
                ClusterRow {
                    cluster,
                    size: members.len(),
                    labeled: 0,
                    majority_label: None,
                    majority_count: 0,
                    purity: None,
                }
            }
            Err(e) => return Err(e),
        };
        per_cluster.push(row);
    }

    let purities: Vec<f64> = per_cluster.iter().filter_map(|r| r.purity).collect();
    let n_clusters = purities.len();
    let fractions = thresholds
        .iter()
        .map(|&threshold| {
            let count = purities.iter().filter(|&&p| p >= threshold).count();
            ThresholdFraction {
                threshold,
                clusters: count,
                fraction: if n_clusters == 0 {
                    0.0
                } else {
                    count as f64 / n_clusters as f64
                },
            }
        })
        .collect();
    Ok(PurityReport {
        per_cluster,
        n_clusters,
        unlabeled_clusters: clusters.len() - n_clusters,
        unlabeled_members,
        fractions,
        noise_size,
    })
}

/// Renders purity fractions as a table with one row per threshold and one
/// column per method.
pub fn render_table(dataset: &str, methods: &[(&str, &PurityReport)]) -> String {
    let mut thresholds: Vec<f64> = Vec::new();
    for (_, report) in methods {
        for f in &report.fractions {
            if !thresholds.contains(&f.threshold) {
                thresholds.push(f.threshold);
            }
        }
    }
    thresholds.sort_by(f64::total_cmp);

    let mut header = vec!["Dataset".to_owned(), "Purity Value".to_owned()];
    header.extend(
        methods
            .iter()
            .map(|(name, _)| format!("Fraction of clusters @ k% purity ({name})")),
    );
    let mut rows = vec![header];
    for (i, &t) in thresholds.iter().enumerate() {
        let mut row = vec![
            if i == 0 {
                dataset.to_owned()
            } else {
                String::new()
            },
            format!("{}%", format_percent(t)),
        ];
        row.extend(methods.iter().map(|(_, report)| {
            report
                .fraction(t)
                .map_or_else(|| "-".to_owned(), |f| format!("{f:.2}"))
        }));
        rows.push(row);
    }

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let rule: String = widths
        .iter()
        .map(|w| format!("+{}", "-".repeat(w + 2)))
        .collect::<String>()
        + "+\n";
    let mut out = rule.clone();
    for (i, row) in rows.iter().enumerate() {
        for (cell, w) in row.iter().zip(&widths) {
            let _ = write!(out, "| {cell:<w$} ");
        }
        out.push_str("|\n");
        if i == 0 {
            out.push_str(&rule);
        }
    }
    out.push_str(&rule);
    out
}

fn format_percent(t: f64) -> String {
    let pct = t * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoidsResult {
    /// Members of each cluster, ascending; cluster `j` belongs to `medoids[j]`.
    pub clusters: Vec<Vec<usize>>,
    pub medoids: Vec<usize>,
    /// Sum of member-to-medoid distances after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn unit_rows(emb: &EmbeddingSet) -> Vec<Vec<f64>> {
    emb.vectors()
        .map(|v| {
            let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            v.iter().map(|&x| f64::from(x) / norm).collect()
        })
        .collect()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let cs: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - cs.clamp(-1.0, 1.0)
}

/// k-medoids with cosine distance, k-means++ style seeding and Voronoi
/// iteration (reassign, then move each medoid to the member minimizing the
/// summed in-cluster distance).
pub fn kmedoids(
    emb: &EmbeddingSet,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMedoidsResult, EvalError> {
    let n = emb.len();
    if k == 0 || k > n {
        return Err(EvalError::InvalidK { k, n });
    }
    let x = unit_rows(emb);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut medoids = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = x
        .iter()
        .map(|v| cosine_distance(v, &x[medoids[0]]))
        .collect();
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if medoids.contains(&i) {
                    0.0
                } else {
                    nearest[i].powi(2)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Everything left coincides with a chosen medoid.
            let free: Vec<usize> = (0..n).filter(|i| !medoids.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(cosine_distance(&x[i], &x[next]));
        }
        medoids.push(next);
    }

    let mut assignment = vec![0usize; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut objective = 0.0;
        for i in 0..n {
            if let Some(j) = medoids.iter().position(|&m| m == i) {
                assignment[i] = j;
                continue;
            }
            let (best, dist) = medoids
                .iter()
                .enumerate()
                .map(|(j, &m)| (j, cosine_distance(&x[i], &x[m])))
                .fold(
                    (0, f64::INFINITY),
                    |acc, cur| if cur.1 < acc.1 { cur } else { acc },
                );
            assignment[i] = best;
            objective += dist;
        }
        trace.push(objective);
        if iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut members = vec![Vec::new(); k];
        for (i, &j) in assignment.iter().enumerate() {
            members[j].push(i);
        }
        let mut changed = false;
        for (j, group) in members.iter().enumerate() {
            let cost = |c: usize| {
                group
                    .iter()
                    .map(|&i| cosine_distance(&x[i], &x[c]))
                    .sum::<f64>()
            };
            let mut best = medoids[j];
            let mut best_cost = cost(best);
            for &candidate in group {
                let c = cost(candidate);
                if c < best_cost {
                    best = candidate;
                    best_cost = c;
                }
            }
            if best != medoids[j] {
                medoids[j] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut clusters = vec![Vec::new(); k];
    for (i, &j) in assignment.iter().enumerate() {
        clusters[j].push(i);
    }
    Ok(KMedoidsResult {
        clusters,
        medoids,
        objective_trace: trace,
        iterations,
    })
}
