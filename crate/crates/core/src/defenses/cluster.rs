//! Cosine geometry and deterministic average-linkage clustering.

/// Cosine similarity; two zero vectors count as identical, a zero vector and a
/// non-zero one as orthogonal.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
    }
}

/// Pairwise `1 - cos` distances.
pub fn cosine_distance_matrix(vectors: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = 1.0 - cosine_similarity(vectors[i], vectors[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Average-linkage agglomerative clustering: repeatedly merges the closest
/// pair of clusters while their distance is at most `threshold`. Ties go to the
/// lexicographically smallest pair. Labels are numbered in order of each
/// cluster's first member.
pub fn agglomerative(dist: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = dist.len();
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if alive[j] && best.is_none_or(|(b, _, _)| d[i][j] < b) {
                    best = Some((d[i][j], i, j));
                }
            }
        }
        let Some((dij, i, j)) = best else { break };
        if dij > threshold {
            break;
        }
        // Lance-Williams update for average linkage.
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if alive[k] && k != i && k != j {
                let v = (si * d[i][k] + sj * d[j][k]) / (si + sj);
                d[i][k] = v;
                d[k][i] = v;
            }
        }
        size[i] += size[j];
        alive[j] = false;
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for p in 0..n {
        if labels[p] == usize::MAX {
            let root = owner[p];
            for q in p..n {
                if owner[q] == root {
                    labels[q] = next;
                }
            }
            next += 1;
        }
    }
    labels
}

/// Label of the largest cluster; ties go to the cluster holding the lowest id.
pub fn largest_cluster(labels: &[usize], ids: &[usize]) -> Option<usize> {
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    (0..clusters)
        .map(|c| {
            let members: Vec<usize> = labels
                .iter()
                .zip(ids)
                .filter(|(l, _)| **l == c)
                .map(|(_, id)| *id)
                .collect();
            (c, members.len(), members.into_iter().min().unwrap_or(usize::MAX))
        })
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|(c, _, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_conventions() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn aligned_and_opposed_groups_split() {
        let mut v: Vec<Vec<f64>> = (0..7).map(|i| vec![1.0, 0.05 * i as f64]).collect();
        v.extend((0..3).map(|i| vec![-1.0, 0.05 * i as f64]));
        let refs: Vec<&[f64]> = v.iter().map(|x| x.as_slice()).collect();
        let labels = agglomerative(&cosine_distance_matrix(&refs), 0.15);
        assert!(labels[..7].iter().all(|&l| l == 0));
        assert!(labels[7..].iter().all(|&l| l == 1));
        let ids: Vec<usize> = (0..10).collect();
        assert_eq!(largest_cluster(&labels, &ids), Some(0));
    }

    #[test]
    fn average_linkage_matches_brute_force() {
        // 1-D points; distance |a - b|
        let pts = [0.0, 0.1, 0.35, 1.0, 1.05, 3.0];
        let d: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| f64::abs(a - b)).collect())
            .collect();
        // {0, 0.1} at 0.1, then 0.35 joins at mean(0.35, 0.25) = 0.3 > 0.2 -> stays out
        assert_eq!(agglomerative(&d, 0.2), vec![0, 0, 1, 2, 2, 3]);
        assert_eq!(agglomerative(&d, 0.31), vec![0, 0, 0, 1, 1, 2]);
        assert_eq!(agglomerative(&d, 10.0), vec![0; 6]);
    }

    #[test]
    fn largest_cluster_ties_go_to_lowest_id() {
        assert_eq!(largest_cluster(&[1, 1, 0, 0], &[4, 5, 2, 9]), Some(0));
        assert_eq!(largest_cluster(&[0, 1, 1], &[0, 1, 2]), Some(1));
        assert_eq!(largest_cluster(&[], &[]), None);
    }

    proptest! {
        #[test]
        fn clustering_is_scale_free(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 2..12),
            scale in 0.01f64..100.0,
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(|x| x.as_slice()).collect();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let srefs: Vec<&[f64]> = scaled.iter().map(|x| x.as_slice()).collect();
            let a = agglomerative(&cosine_distance_matrix(&refs), 0.15);
            let b = agglomerative(&cosine_distance_matrix(&srefs), 0.15);
            prop_assert_eq!(a, b);
        }
    }
}
