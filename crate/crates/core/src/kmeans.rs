//! Two-cluster Lloyd iteration over feature vectors.
//!
//! Assignment minimizes squared Euclidean distance to the centroids;
//! centroids move to the mean of their members. The summed within-cluster
//! squared distance is tracked per iteration and never increases.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ITERATIONS: usize = 300;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansState {
    pub centroids: [Vec<f64>; 2],
    /// Cluster index (0 or 1) per input point.
    pub assignments: Vec<u8>,
    /// Final summed squared distance to assigned centroids.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after every Lloyd iteration, for monotonicity checks.
    pub objective_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>; 2], assignments: &[u8]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a as usize]))
        .sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>; 2], assignments: &mut [u8]) {
    for (p, slot) in points.iter().zip(assignments.iter_mut()) {
        let d0 = squared_distance(p, &centroids[0]);
        let d1 = squared_distance(p, &centroids[1]);
        // ties stay with the lower index
        *slot = u8::from(d1 < d0);
    }
}

fn centroid_of(points: &[Vec<f64>], assignments: &[u8], cluster: u8, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0f64; dim];
    let mut n = 0usize;
    for (p, &a) in points.iter().zip(assignments) {
        if a == cluster {
            for (s, &v) in sum.iter_mut().zip(p) {
                *s += v;
            }
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    for s in &mut sum {
        *s /= n as f64;
    }
    Some(sum)
}

/// Index of the point farthest from `from`.
fn farthest_point(points: &[Vec<f64>], from: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_d = -1.0f64;
    for (i, p) in points.iter().enumerate() {
        let d = squared_distance(p, from);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd iteration for exactly two clusters with a seeded start.
///
/// Initial centroids are two points drawn by the seeded stream, re-drawn
/// toward the farthest point when they coincide. An emptied cluster is
/// re-seeded to the point farthest from the other centroid. Runs until the
/// objective's relative decrease drops below 1e-6 or 300 iterations.
pub fn kmeans2(points: &[Vec<f64>], seed: u64) -> Result<KMeansState> {
    if points.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "k-means needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension(
            "points must share a positive dimension".into(),
        ));
    }

    let mut stream = rng::stream(seed);
    let first = stream.gen_range(0..points.len());
    let mut second = stream.gen_range(0..points.len());
    let mut tries = 0;
    while points[second] == points[first] && tries < 8 {
        second = stream.gen_range(0..points.len());
        tries += 1;
    }
    if points[second] == points[first] {
        // no distinct draw found: jump to the farthest point (may still
        // coincide when every point is identical)
        second = farthest_point(points, &points[first]);
    }

    let mut centroids = [points[first].clone(), points[second].clone()];
    let mut assignments = vec![0u8; points.len()];
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut iterations = 0usize;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        assign(points, &centroids, &mut assignments);

        // an emptied cluster grabs the point farthest from its peer, which
        // can only lower that point's cost
        for cluster in 0..2u8 {
            if !assignments.iter().any(|&a| a == cluster) {
                let other = &centroids[1 - cluster as usize];
                let idx = farthest_point(points, other);
                centroids[cluster as usize] = points[idx].clone();
                assign(points, &centroids, &mut assignments);
            }
        }

        for cluster in 0..2u8 {
            if let Some(c) = centroid_of(points, &assignments, cluster, dim) {
                centroids[cluster as usize] = c;
            }
        }

        let current = objective(points, &centroids, &assignments);
        history.push(current);
        let converged = prev.is_finite()
            && (prev - current).abs() <= RELATIVE_TOLERANCE * prev.abs().max(1e-30);
        prev = current;
        if converged || current == 0.0 {
            break;
        }
    }

    Ok(KMeansState {
        objective: prev,
        centroids,
        assignments,
        iterations,
        objective_history: history,
    })
}
