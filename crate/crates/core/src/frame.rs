//! Per-frame stereo observations as produced by the simulator or read from a
//! feature file.

use crate::geometry::Pose;

/// Pixel position of a detected keypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
}

impl Keypoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Row-major descriptor table, one row per keypoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Descriptors {
    dim: usize,
    data: Vec<f32>,
}

impl Descriptors {
    /// Panics if `data.len()` is not a multiple of `dim`.
    pub fn new(dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0, "descriptor dimension must be positive");
        assert_eq!(
            data.len() % dim,
            0,
            "descriptor data is not a whole number of rows"
        );
        Self { dim, data }
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn push(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    /// Copy with every row scaled to unit Euclidean norm (zero rows kept).
    pub fn unit_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim) {
            let norm = row.iter().map(|&x| x * x).sum::<f32>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Self {
            dim: self.dim,
            data,
        }
    }
}

/// Keypoints and descriptors of one stereo pair, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub left: Vec<Keypoint>,
    pub right: Vec<Keypoint>,
    pub left_desc: Descriptors,
    pub right_desc: Descriptors,
    /// Pose of the right camera relative to the left.
    pub ground_truth: Option<Pose>,
    /// `(left index, right index)` of true correspondences.
    pub pairing: Vec<(u32, u32)>,
}

impl Frame {
    /// Fewer keypoints than this on either side makes the frame unusable
    /// for tracking.
    pub const MIN_KEYPOINTS: usize = 8;

    pub fn is_degenerate(&self) -> bool {
        self.left.len() < Self::MIN_KEYPOINTS || self.right.len() < Self::MIN_KEYPOINTS
    }

    /// Keypoints rounded to single precision, as stored in feature files.
    pub fn quantized(&self) -> Self {
        let q = |k: &Keypoint| Keypoint::new(k.u as f32 as f64, k.v as f32 as f64);
        Self {
            left: self.left.iter().map(q).collect(),
            right: self.right.iter().map(q).collect(),
            ..self.clone()
        }
    }
}
