//! Agglomerative clustering of embeddings and majority-cluster aggregation.
//!
//! Face crops in crawled reference images mostly show the queried person,
//! but bystanders and mismatched search hits show up too. Clustering all
//! face embeddings and keeping the largest cluster isolates the identity
//! the images agree on.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, FeatureError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub linkage: Linkage,
    /// Clusters keep merging while their linkage distance is at most this.
    pub threshold: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { linkage: Linkage::Average, threshold: 0.5 }
    }
}

/// `1 - a·b`; in `[0, 2]` for unit vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Bottom-up clustering of `points` (unit vectors).
///
/// At each step the two closest clusters merge, as long as their distance
/// does not exceed the threshold. Equal distances resolve to the pair whose
/// smallest member indices come first. Returns clusters as ascending member
/// lists, ordered by their first member.
pub fn agglomerate(points: &[&[f64]], config: &ClusterConfig) -> Vec<Vec<usize>> {
    let n = points.len();
    // Cluster `i` lives in slot `i` and always contains point `i` as its
    // smallest member; merging folds the higher slot into the lower one.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(points[i], points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if members[j].is_none() {
                    continue;
                }
                if best.is_none_or(|(_, _, d)| dist[i][j] < d) {
                    best = Some((i, j, dist[i][j]));
                }
            }
        }
        let Some((i, j, d)) = best else { break };
        if d > config.threshold {
            break;
        }

        let absorbed = members[j].take().expect("active cluster");
        let (ni, nj) = (members[i].as_ref().expect("active cluster").len() as f64, absorbed.len() as f64);
        for k in 0..n {
            if k == i || members[k].is_none() {
                continue;
            }
            let merged = match config.linkage {
                Linkage::Single => dist[i][k].min(dist[j][k]),
                Linkage::Complete => dist[i][k].max(dist[j][k]),
                Linkage::Average => (ni * dist[i][k] + nj * dist[j][k]) / (ni + nj),
            };
            dist[i][k] = merged;
            dist[k][i] = merged;
        }
        let kept = members[i].as_mut().expect("active cluster");
        kept.extend(absorbed);
        kept.sort_unstable();
    }

    members.into_iter().flatten().collect()
}

/// Mean pairwise cosine distance within a cluster; zero for singletons.
pub fn mean_intra_distance(points: &[&[f64]], cluster: &[usize]) -> f64 {
    if cluster.len() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in cluster.iter().enumerate() {
        for &j in &cluster[a + 1..] {
            sum += cosine_distance(points[i], points[j]);
            pairs += 1;
        }
    }
    sum / pairs as f64
}

/// Result of [`cluster_majority_mean`].
#[derive(Debug, Clone, PartialEq)]
pub struct MajorityCluster {
    /// Normalized mean of the majority cluster.
    pub mean: EmbeddingVector,
    /// Input positions of the majority cluster's members, ascending.
    pub members: Vec<usize>,
    pub cluster_count: usize,
}

/// Lexicographic order on coordinates; equal vectors keep input order.
pub(crate) fn canonical_order(vectors: &[EmbeddingVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (vectors[a].values(), vectors[b].values());
        va.iter()
            .zip(vb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Clusters `vectors` and returns the normalized mean of the largest cluster.
///
/// Vectors are put into canonical lexicographic order first, so the result
/// does not depend on input order. Clusters of equal size are ranked by
/// smaller mean intra-cluster distance, then by smaller first member in
/// canonical order.
///
/// ```
/// use xmc_core::features::{cluster_majority_mean, ClusterConfig, EmbeddingVector};
///
/// let v = |x: f64, y: f64| EmbeddingVector::normalized(vec![x, y], "demo").unwrap();
/// let faces = vec![v(1.0, 0.05), v(1.0, -0.05), v(1.0, 0.0), v(0.0, 1.0)];
/// let majority = cluster_majority_mean(&faces, &ClusterConfig::default()).unwrap();
/// assert_eq!(majority.members, vec![0, 1, 2]);
/// assert!((majority.mean.values()[0] - 1.0).abs() < 1e-9);
/// ```
pub fn cluster_majority_mean(vectors: &[EmbeddingVector], config: &ClusterConfig) -> Result<MajorityCluster, FeatureError> {
    let first = vectors.first().ok_or(FeatureError::EmptyInput)?;
    for v in vectors {
        if v.dim() != first.dim() {
            return Err(FeatureError::DimensionMismatch { expected: first.dim(), actual: v.dim() });
        }
        if v.provider_id() != first.provider_id() {
            return Err(FeatureError::MixedProviders(first.provider_id().to_string(), v.provider_id().to_string()));
        }
    }

    let order = canonical_order(vectors);
    let points: Vec<&[f64]> = order.iter().map(|&i| vectors[i].values()).collect();
    let clusters = agglomerate(&points, config);
    let cluster_count = clusters.len();

    let scored: Vec<(usize, f64, usize, &Vec<usize>)> = clusters
        .iter()
        .map(|c| (c.len(), mean_intra_distance(&points, c), c[0], c))
        .collect();
    let (_, _, _, majority) = scored
        .into_iter()
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .expect("at least one cluster");

    let mut members: Vec<usize> = majority.iter().map(|&m| order[m]).collect();
    members.sort_unstable();
    if let [only] = members[..] {
        // Already unit norm; renormalizing would only add rounding error.
        return Ok(MajorityCluster { mean: vectors[only].clone(), members, cluster_count });
    }

    let mut sum = vec![0.0; first.dim()];
    for &m in majority {
        for (s, x) in sum.iter_mut().zip(points[m]) {
            *s += x;
        }
    }
    let count = majority.len() as f64;
    let mean = EmbeddingVector::normalized(sum.into_iter().map(|s| s / count).collect(), first.provider_id())?;
    Ok(MajorityCluster { mean, members, cluster_count })
}
