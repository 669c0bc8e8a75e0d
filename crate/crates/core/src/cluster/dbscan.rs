use std::collections::VecDeque;

use super::ClusterError;
use crate::par;

pub const NOISE: i64 = -1;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN with Euclidean distance. A point is core when at least `min_pts`
/// points, itself included, lie within `eps`. Clusters are numbered in
/// order of their lowest-index core point; a border point reachable from
/// several clusters joins the lowest-numbered one.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<Vec<i64>, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = par::map_range(points.len(), |i| {
        (0..points.len())
            .filter(|&j| dist2(&points[i], &points[j]) <= eps2)
            .collect()
    });
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();

    let mut labels: Vec<Option<i64>> = vec![None; points.len()];
    let mut next = 0;
    for i in 0..points.len() {
        if labels[i].is_some() || !core[i] {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = Some(cluster);
        let mut queue = VecDeque::from([i]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    Ok(labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Core points, their density-connected components via transitive
    /// closure, and border attachment to the component with the smallest
    /// lowest core index. Labels are then renumbered by first appearance.
    fn oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
        let n = points.len();
        let close = |i: usize, j: usize| {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                <= eps
        };
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| close(i, j)).count() >= min_pts)
            .collect();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                reach[i][j] = i == j || (core[i] && core[j] && close(i, j));
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let comp_min = |i: usize| (0..n).find(|&j| core[j] && reach[i][j]).unwrap();
        let raw: Vec<Option<usize>> = (0..n)
            .map(|i| {
                if core[i] {
                    Some(comp_min(i))
                } else {
                    (0..n).filter(|&j| core[j] && close(i, j)).map(comp_min).min()
                }
            })
            .collect();
        canonical(&raw.iter().map(|r| r.map_or(NOISE, |x| x as i64)).collect::<Vec<_>>())
    }

    fn canonical(labels: &[i64]) -> Vec<i64> {
        let mut map = std::collections::HashMap::new();
        labels
            .iter()
            .map(|&l| {
                if l == NOISE {
                    NOISE
                } else {
                    let next = map.len() as i64;
                    *map.entry(l).or_insert(next)
                }
            })
            .collect()
    }

    #[test]
    fn identical_points_one_cluster() {
        let pts = vec![vec![1.0, 2.0]; 6];
        assert_eq!(dbscan(&pts, 0.5, 5).unwrap(), vec![0; 6]);
    }

    #[test]
    fn far_point_is_noise() {
        let mut pts: Vec<Vec<f64>> = (0..5).map(|i| vec![0.01 * i as f64, 0.0]).collect();
        pts.push(vec![5.0, 0.0]);
        let got = dbscan(&pts, 0.5, 5).unwrap();
        assert_eq!(got, vec![0, 0, 0, 0, 0, NOISE]);
        assert_eq!(got, oracle(&pts, 0.5, 5));
    }

    #[test]
    fn two_separated_balls() {
        let mut pts: Vec<Vec<f64>> = (0..5).map(|i| vec![0.05 * i as f64]).collect();
        pts.extend((0..5).map(|i| vec![3.0 + 0.05 * i as f64]));
        let got = dbscan(&pts, 0.5, 5).unwrap();
        assert_eq!(got, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(dbscan(&[], 0.5, 5), Err(ClusterError::EmptyInput));
    }

    proptest! {
        #[test]
        fn matches_reachability_oracle(
            dims in 2usize..=8,
            raw in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 8), 1..=50),
            min_pts in 1usize..6,
        ) {
            let pts: Vec<Vec<f64>> = raw.into_iter().map(|p| p[..dims].to_vec()).collect();
            let eps = 0.3 * (dims as f64).sqrt();
            prop_assert_eq!(canonical(&dbscan(&pts, eps, min_pts).unwrap()), oracle(&pts, eps, min_pts));
        }
    }
}
