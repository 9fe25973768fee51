use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::Volume;

const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeans {
    /// Cluster of each input value, `0..k`, ordered by ascending centroid.
    pub assignments: Vec<usize>,
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_history: Vec<f64>,
}

fn nearest(centroids: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (c, &m) in centroids.iter().enumerate() {
        if (x - m).abs() < (x - centroids[best]).abs() {
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm on scalars, initialized from `k` distinct values chosen
/// by the seed.
pub fn kmeans_1d(values: &[f64], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "k-means with k={k} on {} distinct values",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<f64> = sample(&mut rng, distinct.len(), k).iter().map(|i| distinct[i]).collect();
    centroids.sort_by(f64::total_cmp);
    let mut assignments = vec![usize::MAX; values.len()];
    let mut sse_history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (a, &x) in assignments.iter_mut().zip(values) {
            let c = nearest(&centroids, x);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        sse_history.push(
            values
                .iter()
                .zip(&assignments)
                .map(|(x, &a)| (x - centroids[a]).powi(2))
                .sum(),
        );
        if !changed {
            break;
        }
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (&x, &a) in values.iter().zip(&assignments) {
            sum[a] += x;
            count[a] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centroids[c] = sum[c] / count[c] as f64;
            }
        }
    }
    // Relabel by ascending centroid so cluster ids do not depend on the seed.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(KMeans {
        assignments: assignments.iter().map(|&a| rank[a]).collect(),
        centroids: order.iter().map(|&c| centroids[c]).collect(),
        sse_history,
    })
}

/// Clusters the masked voxels of `intensity` into `k` classes. The result
/// holds `1..=k` inside the mask (ascending mean intensity) and 0 outside.
pub fn kmeans_labels(intensity: &Volume<f64>, mask: &Volume<bool>, k: usize, seed: u64) -> Result<Volume<u8>> {
    if !intensity.same_grid(mask) {
        return Err(Error::ShapeMismatch("intensity and mask grids differ".into()));
    }
    if k > 255 {
        return Err(Error::invalid("at most 255 clusters"));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask.data[i]).collect();
    if idx.is_empty() {
        return Err(Error::invalid("k-means mask is empty"));
    }
    let values: Vec<f64> = idx.iter().map(|&i| intensity.data[i]).collect();
    let km = kmeans_1d(&values, k, seed)?;
    let mut out = intensity.map(|_| 0u8);
    for (&i, &a) in idx.iter().zip(&km.assignments) {
        out.data[i] = a as u8 + 1;
    }
    Ok(out)
}
