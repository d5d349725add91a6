//! Fixed-dimension vector collections plus the exact-scan oracle used as
//! ground truth for every approximate search in the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SaxError};

/// A dense collection of `count` vectors of identical dimension.
///
/// Vectors are stored row-major in one flat buffer. Ids are the row
/// positions, so id `i` always refers to the same vector for the lifetime
/// of the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    /// Wraps a flat row-major buffer. `data.len()` must be a multiple of
    /// `dim` and every entry must be finite.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(SaxError::invalid_input("dataset dim must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(SaxError::invalid_input(format!(
                "buffer of {} floats is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SaxError::invalid_input("dataset contains non-finite values"));
        }
        Ok(Dataset { dim, data })
    }

    /// Draws `count` vectors with independent standard-normal coordinates
    /// from a seeded generator. With `normalize` each vector is scaled to
    /// unit L2 norm.
    pub fn generate_gaussian(count: usize, dim: usize, seed: u64, normalize: bool) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(SaxError::invalid_input("count and dim must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let start = data.len();
            for _ in 0..dim {
                let v: f64 = StandardNormal.sample(&mut rng);
                data.push(v as f32);
            }
            if normalize {
                let row = &mut data[start..];
                let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in row.iter_mut() {
                        *v = (*v as f64 / norm) as f32;
                    }
                }
            }
        }
        Dataset::from_flat(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Borrows the vector stored under `id`.
    pub fn vector(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Exact top-k by squared Euclidean distance, ascending, with ties
    /// broken by the smaller id.
    ///
    /// # Errors
    ///
    /// Rejects a query of the wrong dimension and `k` outside
    /// `1..=self.len()`.
    pub fn brute_force_topk(&self, query: &[f32], k: usize) -> Result<Vec<(u32, f64)>> {
        if query.len() != self.dim {
            return Err(SaxError::invalid_input(format!(
                "query dim {} does not match dataset dim {}",
                query.len(),
                self.dim
            )));
        }
        if k == 0 || k > self.len() {
            return Err(SaxError::invalid_input(format!(
                "k = {} out of range for dataset of {} vectors",
                k,
                self.len()
            )));
        }
        let mut scored: Vec<(u32, f64)> = (0..self.len() as u32)
            .map(|id| (id, sq_dist(query, self.vector(id))))
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

/// Squared Euclidean distance between two equal-length slices, accumulated
/// in f64 for a stable total order.
///
/// # Errors
///
/// Rejects slices of different lengths.
pub fn distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SaxError::invalid_input(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b))
}

/// Unchecked squared Euclidean distance for hot paths.
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Fraction of `oracle` ids recovered by `result`. Both slices are
/// expected to hold the same k ids; duplicates are not counted twice.
pub fn recall(result: &[u32], oracle: &[u32]) -> f64 {
    if oracle.is_empty() {
        return 0.0;
    }
    let hits = result.iter().filter(|id| oracle.contains(id)).count();
    hits as f64 / oracle.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_of_identical_vectors_is_zero() {
        let v = [0.3f32, -1.2, 4.5];
        assert_eq!(distance(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn distance_of_unit_axes_is_two() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        assert_eq!(distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn distance_matches_hand_computed_value() {
        let a = [0.1f32, 0.2];
        let b = [0.4f32, 0.6];
        let d = distance(&a, &b).unwrap();
        assert!((d - 0.25).abs() < 1e-7, "got {d}");
    }

    #[test]
    fn distance_rejects_dimension_mismatch() {
        let a = [1.0f32];
        let b = [1.0f32, 2.0];
        assert!(distance(&a, &b).is_err());
    }

    #[test]
    fn brute_force_topk_finds_member_at_distance_zero() {
        let ds = Dataset::generate_gaussian(32, 8, 11, false).unwrap();
        let q: Vec<f32> = ds.vector(7).to_vec();
        let top = ds.brute_force_topk(&q, 1).unwrap();
        assert_eq!(top, vec![(7, 0.0)]);
    }

    #[test]
    fn brute_force_topk_matches_hand_computed_order() {
        let ds = Dataset::from_flat(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0]).unwrap();
        let top = ds.brute_force_topk(&[0.9, 0.0], 2).unwrap();
        assert_eq!(top[0].0, 1);
        assert!((top[0].1 - 0.01).abs() < 1e-6);
        assert_eq!(top[1].0, 0);
        assert!((top[1].1 - 0.81).abs() < 1e-6);
    }

    #[test]
    fn brute_force_topk_with_k_equal_count_sorts_everything() {
        let ds = Dataset::generate_gaussian(16, 4, 3, false).unwrap();
        let q = vec![0.0f32; 4];
        let all = ds.brute_force_topk(&q, 16).unwrap();
        assert_eq!(all.len(), 16);
        let mut ids: Vec<u32> = all.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..16).collect::<Vec<_>>());
        for pair in all.windows(2) {
            assert!(pair[0].1 <= pair[1].1);
        }
    }

    #[test]
    fn brute_force_topk_breaks_ties_by_smaller_id() {
        let ds = Dataset::from_flat(1, vec![1.0, 2.0, 1.0]).unwrap();
        let top = ds.brute_force_topk(&[0.0], 2).unwrap();
        assert_eq!(top[0].0, 0);
        assert_eq!(top[1].0, 2);
    }

    #[test]
    fn brute_force_topk_rejects_k_out_of_range() {
        let ds = Dataset::generate_gaussian(4, 2, 1, false).unwrap();
        assert!(ds.brute_force_topk(&[0.0, 0.0], 0).is_err());
        assert!(ds.brute_force_topk(&[0.0, 0.0], 5).is_err());
    }

    #[test]
    fn gaussian_generation_is_deterministic() {
        let a = Dataset::generate_gaussian(100, 16, 42, false).unwrap();
        let b = Dataset::generate_gaussian(100, 16, 42, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalized_vectors_have_unit_norm() {
        let ds = Dataset::generate_gaussian(50, 12, 9, true).unwrap();
        for id in 0..ds.len() as u32 {
            let norm: f64 = ds.vector(id).iter().map(|v| (*v as f64).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn recall_handles_full_partial_and_disjoint_overlap() {
        let oracle: Vec<u32> = (0..10).collect();
        assert_eq!(recall(&oracle, &oracle), 1.0);
        let disjoint: Vec<u32> = (10..20).collect();
        assert_eq!(recall(&disjoint, &oracle), 0.0);
        let mut nine = oracle.clone();
        nine[9] = 99;
        assert!((recall(&nine, &oracle) - 0.9).abs() < 1e-12);
    }
}
