//! Rotation and essential-matrix algebra.
//!
//! The tracked essential matrix is held as a pair of rotations `(U, V)` with
//! `E = U diag(1, 1, 0) Vᵀ`. A neighbourhood of that point on the essential
//! manifold is charted by five local coordinates; see [`chart`] and
//! [`EssentialState::update`].

use nalgebra::{Matrix3, Rotation3, Vector3};
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

/// Relative rotation mapping left-camera coordinates into the right camera.
pub type Rotation = Rotation3<f64>;
/// Relative translation, in meters.
pub type Translation = Vector3<f64>;

/// Number of local coordinates of the essential manifold.
pub const CHART_DIM: usize = 5;

/// Local coordinates around an [`EssentialState`].
pub type LocalCoordinates = [f64; CHART_DIM];

/// Below this rotation angle the Rodrigues coefficients switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not skew-symmetric (|Ω + Ωᵀ|_F = {0:e})")]
    NotSkew(f64),
    #[error("zero-length baseline")]
    ZeroBaseline,
    #[error("matrix is not orthogonal with det +1 (deviation {0:e})")]
    NotRotation(f64),
    #[error("essential matrix must have rank 2, got singular values {0:?}")]
    NotRankTwo([f64; 3]),
    #[error("cannot choose a pose without correspondences or a reference")]
    NoEvidence,
    #[error("Euler decomposition is singular (pitch {0:.6} deg)")]
    GimbalLock(f64),
}

/// A rigid relative pose: `X_right = R X_left + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Translation,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Translation) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn essential(&self) -> Result<Matrix3<f64>, GeometryError> {
        essential_from_rt(&self.rotation, &self.translation)
    }
}

/// Pinhole intrinsics. Inputs are assumed undistorted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            skew: 0.0,
        }
    }

    /// Square-pixel intrinsics for an image of `width × height` pixels with the
    /// given vertical field of view, principal point at the image center.
    pub fn from_vertical_fov(width: u32, height: u32, vfov_deg: f64) -> Self {
        let f = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64)
    }

    /// Intrinsics from both fields of view (non-square pixels allowed).
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64, vfov_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        let fy = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        Self::new(fx, fy, 0.5 * width as f64, 0.5 * height as f64)
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && [self.fx, self.fy, self.cx, self.cy, self.skew]
                .iter()
                .all(|v| v.is_finite())
    }

    #[rustfmt::skip]
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx,
            0.0,     self.fy,   self.cy,
            0.0,     0.0,       1.0,
        )
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.fx, self.fy, self.cx, self.cy, self.skew]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            fx: a[0],
            fy: a[1],
            cx: a[2],
            cy: a[3],
            skew: a[4],
        }
    }
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
#[rustfmt::skip]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
         0.0, -v.z,  v.y,
         v.z,  0.0, -v.x,
        -v.y,  v.x,  0.0,
    )
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues exponential of the rotation vector `w`.
pub fn exp_so3(w: &Vector3<f64>) -> Rotation {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(w);
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Angle of the rotation `a⁻¹ b`, accurate for small angles.
pub fn angle_between(a: &Rotation, b: &Rotation) -> f64 {
    let m = (a.inverse() * b).into_inner();
    let sin = 0.5 * vee(&(m - m.transpose())).norm();
    let cos = 0.5 * (m.trace() - 1.0);
    sin.atan2(cos)
}

/// Matrix exponential of a skew-symmetric matrix.
pub fn expm_skew(omega: &Matrix3<f64>) -> Result<Rotation, GeometryError> {
    let asym = (omega + omega.transpose()).norm();
    if !(asym <= 1e-9) {
        return Err(GeometryError::NotSkew(asym));
    }
    Ok(exp_so3(&vee(omega)))
}

/// Rotation vectors whose hats are Ω₁(θ) and Ω₂(θ).
///
/// Ω₁ is built from (θ₁, θ₂, θ₃) and Ω₂ from (θ₃, θ₄, θ₅), both scaled by
/// 1/√2, with θ₃ entering the in-plane entries with a further 1/√2.
pub fn omega_vectors(theta: &LocalCoordinates) -> (Vector3<f64>, Vector3<f64>) {
    let s = FRAC_1_SQRT_2;
    let w1 = Vector3::new(theta[0], theta[1], theta[2] * s) * s;
    let w2 = Vector3::new(theta[3], theta[4], -theta[2] * s) * s;
    (w1, w2)
}

pub fn omega1(theta: &LocalCoordinates) -> Matrix3<f64> {
    skew(&omega_vectors(theta).0)
}

pub fn omega2(theta: &LocalCoordinates) -> Matrix3<f64> {
    skew(&omega_vectors(theta).1)
}

/// `diag(1, 1, 0)`.
pub fn sigma0() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))
}

/// `E = [t]× R`.
pub fn essential_from_rt(r: &Rotation, t: &Translation) -> Result<Matrix3<f64>, GeometryError> {
    if !(t.norm() > 0.0) {
        return Err(GeometryError::ZeroBaseline);
    }
    Ok(skew(t) * r.matrix())
}

/// Point on the essential manifold, `E = U Σ₀ Vᵀ` with `U, V ∈ SO(3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialState {
    u: Matrix3<f64>,
    v: Matrix3<f64>,
}

fn rotation_deviation(m: &Matrix3<f64>) -> f64 {
    let ortho = (m.transpose() * m - Matrix3::identity()).norm();
    ortho.max((m.determinant() - 1.0).abs())
}

/// Nearest rotation in the Frobenius sense.
fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

impl EssentialState {
    /// Builds a state from orthogonal factors with positive determinant.
    pub fn from_factors(u: Matrix3<f64>, v: Matrix3<f64>) -> Result<Self, GeometryError> {
        let dev = rotation_deviation(&u).max(rotation_deviation(&v));
        if !(dev <= ORTHO_TOL) {
            return Err(GeometryError::NotRotation(dev));
        }
        Ok(Self { u, v })
    }

    /// Factors an (approximately) rank-2 matrix into a normalized state.
    ///
    /// Scale and sign of `E` are discarded. Third columns of `U` and `V`
    /// multiply the zero singular value, so flipping them fixes the
    /// determinants without changing `U Σ₀ Vᵀ`.
    pub fn from_matrix(e: &Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = e.svd(true, true);
        let s = svd.singular_values;
        let u = svd.u.unwrap();
        let v = svd.v_t.unwrap().transpose();

        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let sorted = [s[order[0]], s[order[1]], s[order[2]]];
        if !(sorted[0] > 0.0)
            || !sorted.iter().all(|x| x.is_finite())
            || sorted[1] <= 1e-6 * sorted[0]
            || sorted[2] > 1e-6 * sorted[0]
        {
            return Err(GeometryError::NotRankTwo(sorted));
        }

        let mut u_sorted = Matrix3::zeros();
        let mut v_sorted = Matrix3::zeros();
        for (dst, &src) in order.iter().enumerate() {
            u_sorted.set_column(dst, &u.column(src));
            v_sorted.set_column(dst, &v.column(src));
        }
        if u_sorted.determinant() < 0.0 {
            u_sorted.column_mut(2).neg_mut();
        }
        if v_sorted.determinant() < 0.0 {
            v_sorted.column_mut(2).neg_mut();
        }
        Ok(Self {
            u: u_sorted,
            v: v_sorted,
        })
    }

    pub fn from_pose(pose: &Pose) -> Result<Self, GeometryError> {
        Self::from_matrix(&pose.essential()?)
    }

    pub fn u(&self) -> &Matrix3<f64> {
        &self.u
    }

    pub fn v(&self) -> &Matrix3<f64> {
        &self.v
    }

    /// `U Σ₀ Vᵀ`.
    pub fn essential(&self) -> Matrix3<f64> {
        self.u * sigma0() * self.v.transpose()
    }

    /// Moves the chart center: `U ← U expm Ω₁(Δθ)`, `V ← V expm Ω₂(Δθ)`.
    pub fn update(&self, delta: &LocalCoordinates) -> Self {
        let (w1, w2) = omega_vectors(delta);
        Self {
            u: self.u * exp_so3(&w1).matrix(),
            v: self.v * exp_so3(&w2).matrix(),
        }
    }

    /// Projects both factors back onto SO(3).
    pub fn reorthonormalize(&mut self) {
        self.u = project_to_rotation(&self.u);
        self.v = project_to_rotation(&self.v);
    }

    pub fn orthogonality_error(&self) -> f64 {
        rotation_deviation(&self.u).max(rotation_deviation(&self.v))
    }

    /// Row-major `U` followed by row-major `V`.
    pub fn to_array(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.u[(r, c)];
                out[9 + 3 * r + c] = self.v[(r, c)];
            }
        }
        out
    }

    pub fn from_array(a: &[f64; 18]) -> Result<Self, GeometryError> {
        let u = Matrix3::from_row_slice(&a[..9]);
        let v = Matrix3::from_row_slice(&a[9..]);
        Self::from_factors(u, v)
    }
}

/// `E(θ) = U expm[Ω₁(θ)] Σ₀ expm[−Ω₂(θ)] Vᵀ`.
pub fn chart(state: &EssentialState, theta: &LocalCoordinates) -> Matrix3<f64> {
    let (w1, w2) = omega_vectors(theta);
    state.u * exp_so3(&w1).matrix() * sigma0() * exp_so3(&(-w2)).matrix() * state.v.transpose()
}

/// Depths `(λ₀, λ₁)` minimizing `|λ₀ R x + t − λ₁ y|`.
fn triangulate_depths(
    r: &Rotation,
    t: &Translation,
    x: &Vector3<f64>,
    y: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let a = r * x;
    let (aa, ab, bb) = (a.dot(&a), a.dot(y), y.dot(y));
    let (at, bt) = (a.dot(t), y.dot(t));
    let det = aa * bb - ab * ab;
    if det.abs() <= 1e-14 * aa * bb {
        return None;
    }
    // Normal equations of [a, -y] [λ₀; λ₁] = -t.
    let l0 = (-at * bb + ab * bt) / det;
    let l1 = (aa * bt - ab * at) / det;
    Some((l0, l1))
}

/// The four `(R, t̂)` factorizations of `U Σ₀ Vᵀ`.
pub fn pose_candidates(state: &EssentialState) -> [(Rotation, Translation); 4] {
    #[rustfmt::skip]
    let w = Matrix3::new(
        0.0, -1.0, 0.0,
        1.0,  0.0, 0.0,
        0.0,  0.0, 1.0,
    );
    let r1 = Rotation::from_matrix_unchecked(state.u * w * state.v.transpose());
    let r2 = Rotation::from_matrix_unchecked(state.u * w.transpose() * state.v.transpose());
    let t: Translation = state.u.column(2).into_owned();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Picks the physically valid `(R, t̂)` out of the four algebraic candidates.
///
/// Candidates are ranked by the number of correspondences triangulating in
/// front of both cameras; ties go to the rotation closest to the reference,
/// then to the translation pointing along the reference translation.
pub fn recover_rt(
    state: &EssentialState,
    inliers: &[(Vector3<f64>, Vector3<f64>)],
    reference: Option<&Pose>,
) -> Result<(Rotation, Translation), GeometryError> {
    if inliers.is_empty() && reference.is_none() {
        return Err(GeometryError::NoEvidence);
    }
    let candidates = pose_candidates(state);
    let score = |(r, t): &(Rotation, Translation)| {
        let votes = inliers
            .iter()
            .filter(|(x, y)| {
                matches!(triangulate_depths(r, t, x, y), Some((l0, l1)) if l0 > 0.0 && l1 > 0.0)
            })
            .count();
        let (angle, along) = match reference {
            Some(p) => (angle_between(r, &p.rotation), t.dot(&p.translation)),
            None => (0.0, 0.0),
        };
        (votes, angle, along)
    };

    let mut best = 0;
    let mut best_score = score(&candidates[0]);
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let s = score(c);
        let better = s.0 > best_score.0
            || (s.0 == best_score.0 && s.1 < best_score.1 - 1e-12)
            || (s.0 == best_score.0 && (s.1 - best_score.1).abs() <= 1e-12 && s.2 > best_score.2);
        if better {
            best = i;
            best_score = s;
        }
    }
    Ok(candidates[best])
}

/// Axis order used when splitting a rotation error into per-axis angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EulerConvention {
    /// `R = Rx(a) Ry(b) Rz(c)`.
    #[default]
    IntrinsicXyz,
    /// `R = Rz(c) Ry(b) Rx(a)`.
    IntrinsicZyx,
}

/// Euler angles `(a, b, c)` about x, y, z in radians.
pub fn euler_angles(r: &Rotation, convention: EulerConvention) -> Result<[f64; 3], GeometryError> {
    let m = r.matrix();
    let (sin_pitch, a, c) = match convention {
        EulerConvention::IntrinsicXyz => (
            m[(0, 2)],
            (-m[(1, 2)]).atan2(m[(2, 2)]),
            (-m[(0, 1)]).atan2(m[(0, 0)]),
        ),
        EulerConvention::IntrinsicZyx => (
            -m[(2, 0)],
            m[(2, 1)].atan2(m[(2, 2)]),
            m[(1, 0)].atan2(m[(0, 0)]),
        ),
    };
    let b = sin_pitch.clamp(-1.0, 1.0).asin();
    if b.cos() < 1e-6 {
        return Err(GeometryError::GimbalLock(b.to_degrees()));
    }
    Ok([a, b, c])
}

/// Inverse of [`euler_angles`].
pub fn rotation_from_euler(angles: [f64; 3], convention: EulerConvention) -> Rotation {
    let rx = Rotation::from_axis_angle(&Vector3::x_axis(), angles[0]);
    let ry = Rotation::from_axis_angle(&Vector3::y_axis(), angles[1]);
    let rz = Rotation::from_axis_angle(&Vector3::z_axis(), angles[2]);
    match convention {
        EulerConvention::IntrinsicXyz => rx * ry * rz,
        EulerConvention::IntrinsicZyx => rz * ry * rx,
    }
}

/// Per-axis Euler angles of `R_est R_gtᵀ`, in degrees.
pub fn rotation_error_axes(
    r_est: &Rotation,
    r_gt: &Rotation,
    convention: EulerConvention,
) -> Result<[f64; 3], GeometryError> {
    let err = r_est * r_gt.inverse();
    Ok(euler_angles(&err, convention)?.map(f64::to_degrees))
}

/// Translation error after rescaling the unit estimate to the reference
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationError {
    /// Componentwise absolute error in millimeters.
    pub abs_mm: [f64; 3],
    /// Angle between the directions in degrees.
    pub angle_deg: f64,
}

/// Compares a unit translation estimate with the ground truth (meters).
///
/// `E` fixes `t` only up to sign, so the estimate is flipped to agree with
/// the ground truth before comparing.
pub fn translation_metrics(t_est: &Translation, t_gt: &Translation) -> TranslationError {
    let baseline = t_gt.norm();
    let mut dir = t_est.normalize();
    if dir.dot(t_gt) < 0.0 {
        dir = -dir;
    }
    let diff = dir * baseline - t_gt;
    let cos = (dir.dot(t_gt) / baseline).clamp(-1.0, 1.0);
    TranslationError {
        abs_mm: [diff.x.abs(), diff.y.abs(), diff.z.abs()].map(|d| d * 1000.0),
        angle_deg: cos.acos().to_degrees(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * scale
    }

    fn random_state(rng: &mut ChaCha8Rng) -> EssentialState {
        let r = exp_so3(&random_vec(rng, 2.0));
        let t = random_vec(rng, 1.0) + Vector3::new(0.0, 0.0, 0.1);
        EssentialState::from_pose(&Pose::new(r, t)).unwrap()
    }

    /// Truncated power series, independent of the Rodrigues formula.
    fn expm_series(a: &Matrix3<f64>) -> Matrix3<f64> {
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..30 {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_examples() {
        let m = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(
            m,
            Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0)
        );
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (v, w) = (random_vec(&mut rng, 3.0), random_vec(&mut rng, 3.0));
            let cross = Vector3::new(
                v.y * w.z - v.z * w.y,
                v.z * w.x - v.x * w.z,
                v.x * w.y - v.y * w.x,
            );
            assert!((skew(&v) * w - cross).norm() < 1e-14);
        }
    }

    #[test]
    fn expm_examples() {
        assert_eq!(
            expm_skew(&Matrix3::zeros()).unwrap().into_inner(),
            Matrix3::identity()
        );
        let r = expm_skew(&skew(&Vector3::new(0.0, 0.0, PI / 2.0))).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(mat_close(r.matrix(), &expected, 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let w = random_vec(&mut rng, 1.8);
            let k = skew(&w);
            assert!(mat_close(exp_so3(&w).matrix(), &expm_series(&k), 1e-12));
        }
        // series fallback branch
        let tiny = Vector3::new(3e-9, -1e-9, 2e-9);
        assert!(mat_close(
            exp_so3(&tiny).matrix(),
            &expm_series(&skew(&tiny)),
            1e-16
        ));
    }

    #[test]
    fn expm_rejects_non_skew() {
        let mut m = skew(&Vector3::new(0.1, 0.2, 0.3));
        m[(0, 0)] = 1e-3;
        assert!(matches!(expm_skew(&m), Err(GeometryError::NotSkew(_))));
    }

    #[test]
    fn omega_examples() {
        let zero = [0.0; 5];
        assert_eq!(omega1(&zero), Matrix3::zeros());
        assert_eq!(omega2(&zero), Matrix3::zeros());

        let c = 0.3;
        let o1 = omega1(&[0.0, 0.0, c, 0.0, 0.0]);
        let o2 = omega2(&[0.0, 0.0, c, 0.0, 0.0]);
        let e1 = Matrix3::new(0.0, -c / 2.0, 0.0, c / 2.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(mat_close(&o1, &e1, 1e-16));
        assert!(mat_close(&o2, &(-e1), 1e-16));

        let (a, b) = (0.2, -0.7);
        let o1 = omega1(&[a, b, 0.0, 0.0, 0.0]);
        assert_eq!(omega2(&[a, b, 0.0, 0.0, 0.0]), Matrix3::zeros());
        assert!(mat_close(
            &o1,
            &(skew(&Vector3::new(a, b, 0.0)) * FRAC_1_SQRT_2),
            1e-16
        ));

        // Ω₁ ignores θ₄, θ₅; Ω₂ ignores θ₁, θ₂.
        assert_eq!(omega1(&[0.0, 0.0, 0.0, 1.0, 2.0]), Matrix3::zeros());
        assert_eq!(omega2(&[1.0, 2.0, 0.0, 0.0, 0.0]), Matrix3::zeros());
    }

    #[test]
    fn essential_from_rt_examples() {
        let i = Rotation::identity();
        let e = essential_from_rt(&i, &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            e,
            Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
        );
        let e = essential_from_rt(&i, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(
            e,
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(
            essential_from_rt(&i, &Vector3::zeros()),
            Err(GeometryError::ZeroBaseline)
        );
    }

    #[test]
    fn essential_singular_values_scale_with_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = exp_so3(&random_vec(&mut rng, 3.0));
            let t = random_vec(&mut rng, 2.0);
            let e = essential_from_rt(&r, &t).unwrap();
            let mut s: Vec<f64> = e.singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            assert!((s[0] - t.norm()).abs() < 1e-12);
            assert!((s[1] - t.norm()).abs() < 1e-12);
            assert!(s[2].abs() < 1e-12);
        }
    }

    #[test]
    fn state_from_matrix_examples() {
        let e = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let s = EssentialState::from_matrix(&e).unwrap();
        let rec = s.essential();
        assert!(mat_close(&rec, &e, 1e-12) || mat_close(&rec, &(-e), 1e-12));
        assert!(s.u().determinant() > 0.0 && s.v().determinant() > 0.0);

        let scaled = EssentialState::from_matrix(&(e * 7.3)).unwrap();
        assert!(mat_close(&scaled.essential(), &rec, 1e-12));

        assert!(matches!(
            EssentialState::from_matrix(&Matrix3::identity()),
            Err(GeometryError::NotRankTwo(_))
        ));
        let rank1 = Vector3::new(1.0, 2.0, 3.0) * Vector3::new(0.5, -1.0, 2.0).transpose();
        assert!(matches!(
            EssentialState::from_matrix(&rank1),
            Err(GeometryError::NotRankTwo(_))
        ));
    }

    #[test]
    fn state_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r = exp_so3(&random_vec(&mut rng, 3.0));
            let t = random_vec(&mut rng, 5.0);
            let e = essential_from_rt(&r, &t).unwrap();
            let s = EssentialState::from_matrix(&e).unwrap();
            let target = e / t.norm();
            let rec = s.essential();
            let err = (rec - target).norm().min((rec + target).norm());
            assert!(err <= 1e-9, "{err}");
            assert!(s.orthogonality_error() <= 1e-9);
        }
    }

    #[test]
    fn chart_and_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng);
        assert!(mat_close(&chart(&s, &[0.0; 5]), &s.essential(), 0.0));
        assert_eq!(s.update(&[0.0; 5]), s);
        for _ in 0..200 {
            let theta: LocalCoordinates = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
            let e = chart(&s, &theta);
            let moved = s.update(&theta);
            assert!(mat_close(&e, &moved.essential(), 1e-12));
            assert!(mat_close(&chart(&moved, &[0.0; 5]), &e, 1e-12));
            let mut sv: Vec<f64> = e.singular_values().iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            assert!((sv[0] - 1.0).abs() < 1e-9 && (sv[1] - 1.0).abs() < 1e-9 && sv[2] < 1e-9);
        }
    }

    #[test]
    fn update_accumulation_stays_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = random_state(&mut rng);
        for i in 1..=1000 {
            let theta: LocalCoordinates = std::array::from_fn(|_| rng.random_range(-0.01..0.01));
            s = s.update(&theta);
            if i % 100 == 0 {
                s.reorthonormalize();
            }
            assert!(s.orthogonality_error() <= 1e-9);
        }
    }

    #[test]
    fn reorthonormalize_repairs_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_state(&mut rng);
        let mut u = *s.u();
        u[(0, 1)] += 1e-7;
        let mut bad = EssentialState { u, v: *s.v() };
        assert!(bad.orthogonality_error() > 1e-9);
        bad.reorthonormalize();
        assert!(bad.orthogonality_error() < 1e-12);
        assert!(mat_close(bad.u(), s.u(), 1e-6));
    }

    fn scene_points(
        rng: &mut ChaCha8Rng,
        pose: &Pose,
        n: usize,
    ) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let mut out = Vec::new();
        while out.len() < n {
            let p = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(2.0..20.0),
            );
            let q = pose.rotation * p + pose.translation;
            if q.z > 0.5 {
                out.push((p / p.z, q / q.z));
            }
        }
        out
    }

    #[test]
    fn recover_rt_identity_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pose = Pose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0));
        let pts = scene_points(&mut rng, &pose, 20);
        for &(x, y) in &pts {
            assert!(y.dot(&(pose.essential().unwrap() * x)).abs() < 1e-12);
        }
        let s = EssentialState::from_pose(&pose).unwrap();
        let (r, t) = recover_rt(&s, &pts, None).unwrap();
        assert!(angle_between(&r, &pose.rotation) < 1e-6);
        assert!(t.angle(&pose.translation) < 1e-6);
    }

    #[test]
    fn recover_rt_random_poses_and_reference_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let r = exp_so3(&random_vec(&mut rng, 0.3));
            let t = Vector3::new(-1.0, 0.0, 0.0) + random_vec(&mut rng, 0.2);
            let pose = Pose::new(r, t);
            let pts = scene_points(&mut rng, &pose, 30);
            let s = EssentialState::from_pose(&pose).unwrap();
            let with = recover_rt(&s, &pts, Some(&pose)).unwrap();
            let without = recover_rt(&s, &[], Some(&pose)).unwrap();
            assert!(angle_between(&with.0, &r) < 1e-9);
            assert!(with.1.normalize().cross(&t.normalize()).norm() < 1e-9);
            assert!(with.1.dot(&t) > 0.0);
            assert!(angle_between(&with.0, &without.0) < 1e-12);
            assert!((with.1 - without.1).norm() < 1e-12);
        }
    }

    #[test]
    fn recover_rt_points_behind_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pose = Pose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0));
        // Mirror every point through the camera centers: all depths negative
        // for the true candidate.
        let pts: Vec<_> = scene_points(&mut rng, &pose, 20);
        let s = EssentialState::from_pose(&pose).unwrap();
        let true_votes = |pts: &[(Vector3<f64>, Vector3<f64>)]| {
            pts.iter()
                .filter(|(x, y)| {
                    let (l0, l1) =
                        triangulate_depths(&pose.rotation, &pose.translation, x, y).unwrap();
                    l0 > 0.0 && l1 > 0.0
                })
                .count()
        };
        assert_eq!(true_votes(&pts), 20);
        let flipped = -pose.translation;
        let behind = pts
            .iter()
            .filter(|(x, y)| {
                let (l0, l1) = triangulate_depths(&pose.rotation, &flipped, x, y).unwrap();
                l0 > 0.0 && l1 > 0.0
            })
            .count();
        assert_eq!(behind, 0);
        let a = recover_rt(&s, &pts, None).unwrap();
        let b = recover_rt(&s, &pts, None).unwrap();
        assert_eq!(a, b);
        assert!(recover_rt(&s, &[], None).is_err());
    }

    #[test]
    fn rotation_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gt = exp_so3(&random_vec(&mut rng, 1.0));
        let conv = EulerConvention::IntrinsicXyz;
        assert_eq!(
            rotation_error_axes(&gt, &gt, conv)
                .unwrap()
                .map(|x| x.abs() < 1e-12),
            [true; 3]
        );

        let ry = Rotation::from_axis_angle(&Vector3::y_axis(), 0.5f64.to_radians());
        let err = rotation_error_axes(&(ry * gt), &gt, conv).unwrap();
        assert!(err[0].abs() < 1e-6 && (err[1] - 0.5).abs() < 1e-6 && err[2].abs() < 1e-6);

        for conv in [EulerConvention::IntrinsicXyz, EulerConvention::IntrinsicZyx] {
            // Euler angles agree with the rotation vector to first order: the
            // gap is ~angle²/2, under 1e-4 deg up to 0.1 deg and under 0.01 deg
            // up to 1 deg.
            for (max_deg, tol_deg) in [(0.1, 1e-4), (1.0, 1e-2)] {
                for _ in 0..200 {
                    let w = random_vec(&mut rng, f64::to_radians(max_deg) / 3f64.sqrt());
                    let est = exp_so3(&w) * gt;
                    let e = rotation_error_axes(&est, &gt, conv).unwrap();
                    for k in 0..3 {
                        assert!((e[k] - w[k].to_degrees()).abs() < tol_deg, "{e:?} {w:?}");
                    }
                    let back = rotation_from_euler(e.map(f64::to_radians), conv);
                    assert!(angle_between(&back, &exp_so3(&w)) < 1e-12);
                }
            }
        }

        let lock = Rotation::from_axis_angle(&Vector3::y_axis(), PI / 2.0);
        assert!(matches!(
            rotation_error_axes(&lock, &Rotation::identity(), conv),
            Err(GeometryError::GimbalLock(_))
        ));
    }

    #[test]
    fn translation_metric_examples() {
        let gt = Vector3::new(1.0, 0.0, 0.0);
        let m = translation_metrics(&gt, &gt);
        assert_eq!(m.abs_mm, [0.0; 3]);
        assert!(m.angle_deg.abs() < 1e-12);

        let m = translation_metrics(&(Vector3::new(1.0, 1.0, 0.0) / 2f64.sqrt()), &gt);
        assert!((m.angle_deg - 45.0).abs() < 1e-9);

        let m = translation_metrics(&(-gt), &gt);
        assert_eq!(m.abs_mm, [0.0; 3]);
        assert!(m.angle_deg.abs() < 1e-12);

        let gt = Vector3::new(-0.8, 0.0, 0.0);
        let est = Vector3::new(-1.0, 0.001, 0.0).normalize();
        let m = translation_metrics(&est, &gt);
        assert!((m.abs_mm[1] - 0.8).abs() < 1e-3);
    }
}
