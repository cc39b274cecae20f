//! Keypoint normalization and exact k-nearest-neighbor tentative matching.

use crate::frame::{Descriptors, Frame, Keypoint};
use crate::geometry::CameraIntrinsics;
use nalgebra::Vector3;
use thiserror::Error;

/// Normalized image point `K⁻¹ (u, v, 1)ᵀ`; the third coordinate is 1.
pub type NormalizedPoint = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("descriptor dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("no descriptors on the {0} side")]
    Empty(&'static str),
    #[error("k must be positive")]
    ZeroK,
    #[error("non-finite descriptor value")]
    NonFinite,
    #[error(
        "keypoint and descriptor counts differ on the {side} side ({points} vs {descriptors})"
    )]
    CountMismatch {
        side: &'static str,
        points: usize,
        descriptors: usize,
    },
}

pub fn normalize(points: &[Keypoint], k: &CameraIntrinsics) -> Vec<NormalizedPoint> {
    points
        .iter()
        .map(|p| {
            let y = (p.v - k.cy) / k.fy;
            let x = (p.u - k.cx - k.skew * y) / k.fx;
            Vector3::new(x, y, 1.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnOptions {
    pub k: usize,
    /// Rescale descriptors to unit norm before the inner-product search.
    pub unit_normalize: bool,
}

impl Default for KnnOptions {
    fn default() -> Self {
        Self {
            k: 5,
            unit_normalize: false,
        }
    }
}

/// Bidirectional k-nearest-neighbor lists.
///
/// Each list is sorted by decreasing similarity, ties by increasing index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorrespondenceSet {
    k: usize,
    n_left: usize,
    n_right: usize,
    /// `min(k, n_right)` right indices per left keypoint.
    to_right: Vec<u32>,
    /// `min(k, n_left)` left indices per right keypoint.
    to_left: Vec<u32>,
}

impl CorrespondenceSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    fn stride_right(&self) -> usize {
        self.k.min(self.n_right)
    }

    fn stride_left(&self) -> usize {
        self.k.min(self.n_left)
    }

    /// Right neighbors of left keypoint `i`.
    pub fn right_of(&self, i: usize) -> &[u32] {
        let s = self.stride_right();
        &self.to_right[i * s..(i + 1) * s]
    }

    /// Left neighbors of right keypoint `j`.
    pub fn left_of(&self, j: usize) -> &[u32] {
        let s = self.stride_left();
        &self.to_left[j * s..(j + 1) * s]
    }

    /// Total number of neighbor entries over both directions.
    pub fn len(&self) -> usize {
        self.to_right.len() + self.to_left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every `(left, right)` term of the symmetric kNN loss: first the left →
    /// right lists in left order, then the right → left lists in right order.
    pub fn terms(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let forward = (0..self.n_left)
            .flat_map(move |i| self.right_of(i).iter().map(move |&j| (i as u32, j)));
        let backward = (0..self.n_right)
            .flat_map(move |j| self.left_of(j).iter().map(move |&i| (i, j as u32)));
        forward.chain(backward)
    }

    /// Mutual nearest neighbors, a one-to-one match list.
    pub fn mutual_matches(&self) -> Vec<(u32, u32)> {
        if self.is_empty() {
            return Vec::new();
        }
        (0..self.n_left)
            .filter_map(|i| {
                let j = self.right_of(i)[0];
                (self.left_of(j as usize)[0] == i as u32).then_some((i as u32, j))
            })
            .collect()
    }

    /// Same lists with the roles of the two images exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            k: self.k,
            n_left: self.n_right,
            n_right: self.n_left,
            to_right: self.to_left.clone(),
            to_left: self.to_right.clone(),
        }
    }
}

/// Running top-k lists for a block of queries, stored flat.
struct TopK {
    k: usize,
    sims: Vec<f32>,
    idx: Vec<u32>,
}

impl TopK {
    fn new(queries: usize, k: usize) -> Self {
        Self {
            k,
            sims: vec![f32::NEG_INFINITY; queries * k],
            idx: vec![u32::MAX; queries * k],
        }
    }

    /// Candidates must arrive in increasing `cand` order per query, which
    /// makes strict comparison equivalent to the lower-index tie-break.
    #[inline]
    fn offer(&mut self, query: usize, sim: f32, cand: u32) {
        let base = query * self.k;
        let sims = &mut self.sims[base..base + self.k];
        if !(sim > sims[self.k - 1]) {
            return;
        }
        let idx = &mut self.idx[base..base + self.k];
        let mut pos = self.k - 1;
        while pos > 0 && sim > sims[pos - 1] {
            sims[pos] = sims[pos - 1];
            idx[pos] = idx[pos - 1];
            pos -= 1;
        }
        sims[pos] = sim;
        idx[pos] = cand;
    }
}

/// `S = L Rᵀ`, column-major `n_left × n_right`.
fn similarity(left: &Descriptors, right: &Descriptors) -> Vec<f32> {
    let (n, m, d) = (left.len(), right.len(), left.dim());
    let mut s = vec![0.0f32; n * m];
    // SAFETY: the strides describe `left` as n×d row-major, `right` read as
    // d×m (its transpose) and `s` as n×m column-major; all three buffers
    // have exactly the sizes those shapes require.
    unsafe {
        matrixmultiply::sgemm(
            n,
            d,
            m,
            1.0,
            left.as_slice().as_ptr(),
            d as isize,
            1,
            right.as_slice().as_ptr(),
            1,
            d as isize,
            0.0,
            s.as_mut_ptr(),
            1,
            n as isize,
        );
    }
    s
}

/// Exact maximum-inner-product neighbors in both directions.
pub fn knn(
    left: &Descriptors,
    right: &Descriptors,
    k: usize,
) -> Result<CorrespondenceSet, MatchingError> {
    if k == 0 {
        return Err(MatchingError::ZeroK);
    }
    if left.is_empty() {
        return Err(MatchingError::Empty("left"));
    }
    if right.is_empty() {
        return Err(MatchingError::Empty("right"));
    }
    if left.dim() != right.dim() {
        return Err(MatchingError::DimensionMismatch {
            left: left.dim(),
            right: right.dim(),
        });
    }
    if !left
        .as_slice()
        .iter()
        .chain(right.as_slice())
        .all(|x| x.is_finite())
    {
        return Err(MatchingError::NonFinite);
    }

    let (n, m) = (left.len(), right.len());
    let (kr, kl) = (k.min(m), k.min(n));
    let s = similarity(left, right);
    let mut rows = TopK::new(n, kr);
    let mut cols = TopK::new(m, kl);
    for (j, column) in s.chunks_exact(n).enumerate() {
        for (i, &sim) in column.iter().enumerate() {
            rows.offer(i, sim, j as u32);
            cols.offer(j, sim, i as u32);
        }
    }
    Ok(CorrespondenceSet {
        k,
        n_left: n,
        n_right: m,
        to_right: rows.idx,
        to_left: cols.idx,
    })
}

/// Normalized keypoints plus tentative correspondences for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreparedFrame {
    pub left: Vec<NormalizedPoint>,
    pub right: Vec<NormalizedPoint>,
    pub correspondences: CorrespondenceSet,
    /// One-to-one matches (mutual 1-NN) for the pair-based losses.
    pub matches: Vec<(u32, u32)>,
}

impl PreparedFrame {
    pub fn is_low_information(&self) -> bool {
        self.left.len() < Frame::MIN_KEYPOINTS || self.right.len() < Frame::MIN_KEYPOINTS
    }
}

/// Normalizes both keypoint sets and builds the kNN lists.
///
/// A frame with an empty side yields empty correspondence data instead of
/// an error so the tracker can skip it.
pub fn prepare(
    frame: &Frame,
    k_left: &CameraIntrinsics,
    k_right: &CameraIntrinsics,
    opts: &KnnOptions,
) -> Result<PreparedFrame, MatchingError> {
    for (side, points, desc) in [
        ("left", frame.left.len(), &frame.left_desc),
        ("right", frame.right.len(), &frame.right_desc),
    ] {
        if points != desc.len() {
            return Err(MatchingError::CountMismatch {
                side,
                points,
                descriptors: desc.len(),
            });
        }
    }
    let left = normalize(&frame.left, k_left);
    let right = normalize(&frame.right, k_right);
    if left.is_empty() || right.is_empty() {
        return Ok(PreparedFrame {
            left,
            right,
            ..Default::default()
        });
    }
    let correspondences = if opts.unit_normalize {
        knn(
            &frame.left_desc.unit_normalized(),
            &frame.right_desc.unit_normalized(),
            opts.k,
        )?
    } else {
        knn(&frame.left_desc, &frame.right_desc, opts.k)?
    };
    let matches = correspondences.mutual_matches();
    Ok(PreparedFrame {
        left,
        right,
        correspondences,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Descriptors {
        // Small integers keep every inner product exact in f32, so the
        // oracle and the blocked product agree bit for bit, ties included.
        Descriptors::new(
            dim,
            (0..n * dim)
                .map(|_| rng.random_range(-4i32..=4) as f32)
                .collect(),
        )
    }

    /// Full sort per query, sums in f64.
    fn brute_force(q: &Descriptors, db: &Descriptors, k: usize) -> Vec<Vec<u32>> {
        (0..q.len())
            .map(|i| {
                let mut scored: Vec<(f64, u32)> = (0..db.len())
                    .map(|j| {
                        let s = q
                            .row(i)
                            .iter()
                            .zip(db.row(j))
                            .map(|(&a, &b)| a as f64 * b as f64)
                            .sum();
                        (s, j as u32)
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                scored.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn normalize_examples() {
        let k = CameraIntrinsics::new(400.0, 380.0, 512.0, 256.0);
        let n = normalize(
            &[Keypoint::new(512.0, 256.0), Keypoint::new(912.0, 256.0)],
            &k,
        );
        assert_eq!(n[0], Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(n[1], Vector3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn normalize_inverts_intrinsics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let k = CameraIntrinsics::new(
                rng.random_range(200.0..2000.0),
                rng.random_range(200.0..2000.0),
                rng.random_range(0.0..1000.0),
                rng.random_range(0.0..1000.0),
            );
            let pts: Vec<Keypoint> = (0..50)
                .map(|_| {
                    Keypoint::new(rng.random_range(0.0..2000.0), rng.random_range(0.0..1200.0))
                })
                .collect();
            for (p, x) in pts.iter().zip(normalize(&pts, &k)) {
                let back = k.matrix() * x;
                assert!((back.x - p.u).abs() < 1e-12 && (back.y - p.v).abs() < 1e-12);
                assert_eq!(x.z, 1.0);
            }
        }
        let skewed = CameraIntrinsics {
            skew: 3.0,
            ..CameraIntrinsics::new(500.0, 500.0, 10.0, 20.0)
        };
        let p = Keypoint::new(700.0, 90.0);
        let back = skewed.matrix() * normalize(&[p], &skewed)[0];
        assert!((back.x - p.u).abs() < 1e-12 && (back.y - p.v).abs() < 1e-12);
    }

    #[test]
    fn knn_singleton() {
        let d = Descriptors::new(3, vec![1.0, 0.0, 0.0]);
        let c = knn(&d, &d, 1).unwrap();
        assert_eq!(c.right_of(0), &[0]);
        assert_eq!(c.left_of(0), &[0]);
        assert_eq!(c.mutual_matches(), vec![(0, 0)]);
    }

    #[test]
    fn knn_saturates_at_set_size() {
        let left = Descriptors::new(2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        let right = Descriptors::new(2, vec![0.0, 1.0, 1.0, 0.0]);
        let c = knn(&left, &right, 10).unwrap();
        assert_eq!(c.right_of(0), &[1, 0]);
        assert_eq!(c.right_of(1), &[0, 1]);
        assert_eq!(c.right_of(2), &[0, 1]);
        assert_eq!(c.left_of(0), &[1, 2, 0]);
        assert_eq!(c.left_of(1), &[0, 2, 1]);
        assert_eq!(c.len(), 3 * 2 + 2 * 3);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let left = Descriptors::new(1, vec![1.0]);
        let right = Descriptors::new(1, vec![2.0, 3.0, 3.0, 2.0]);
        let c = knn(&left, &right, 3).unwrap();
        assert_eq!(c.right_of(0), &[1, 2, 0]);
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, m, dim) in &[(200, 200, 32), (137, 211, 128), (7, 300, 16)] {
            let left = random_descriptors(&mut rng, n, dim);
            let right = random_descriptors(&mut rng, m, dim);
            let c = knn(&left, &right, 5).unwrap();
            let fwd = brute_force(&left, &right, 5);
            let bwd = brute_force(&right, &left, 5);
            for i in 0..n {
                assert_eq!(c.right_of(i), fwd[i].as_slice(), "left {i}");
            }
            for j in 0..m {
                assert_eq!(c.left_of(j), bwd[j].as_slice(), "right {j}");
            }
            assert_eq!(knn(&right, &left, 5).unwrap(), c.swapped());
            assert_eq!(knn(&left, &right, 5).unwrap(), c);
        }
    }

    #[test]
    fn knn_errors() {
        let a = Descriptors::new(2, vec![1.0, 0.0]);
        let b = Descriptors::new(3, vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            knn(&a, &b, 1),
            Err(MatchingError::DimensionMismatch { .. })
        ));
        assert_eq!(
            knn(&Descriptors::empty(2), &a, 1),
            Err(MatchingError::Empty("left"))
        );
        assert_eq!(
            knn(&a, &Descriptors::empty(2), 1),
            Err(MatchingError::Empty("right"))
        );
        assert_eq!(knn(&a, &a, 0), Err(MatchingError::ZeroK));
        let nan = Descriptors::new(2, vec![f32::NAN, 0.0]);
        assert_eq!(knn(&a, &nan, 1), Err(MatchingError::NonFinite));
    }

    #[test]
    fn unit_normalization_changes_ranking() {
        let left = Descriptors::new(2, vec![1.0, 0.0]);
        let right = Descriptors::new(2, vec![10.0, 10.0, 0.9, 0.1]);
        assert_eq!(knn(&left, &right, 1).unwrap().right_of(0), &[0]);
        let ln = left.unit_normalized();
        let rn = right.unit_normalized();
        assert_eq!(knn(&ln, &rn, 1).unwrap().right_of(0), &[1]);
    }

    #[test]
    fn terms_cover_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let left = random_descriptors(&mut rng, 10, 8);
        let right = random_descriptors(&mut rng, 12, 8);
        let c = knn(&left, &right, 3).unwrap();
        let terms: Vec<_> = c.terms().collect();
        assert_eq!(terms.len(), 10 * 3 + 12 * 3);
        assert_eq!(terms[0], (0, c.right_of(0)[0]));
        assert_eq!(terms[30], (c.left_of(0)[0], 0));
    }
}
