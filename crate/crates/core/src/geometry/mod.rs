//! Rigid view transforms and their analytic derivatives.
//!
//! A view is parameterized by three angles and a translation `d`. Joints
//! are re-expressed in the observation system as `v' = R (v - d)` with
//! `R = R_alpha · R_beta · R_gamma`.
//!
//! The three factor matrices follow a fixed printed convention: the
//! `alpha` factor rotates about the first coordinate axis, the `beta`
//! factor about the third and the `gamma` factor about the second. Each
//! factor is addressed by its parameter slot ([`Axis::X`] = alpha,
//! [`Axis::Y`] = beta, [`Axis::Z`] = gamma), not by the axis it turns
//! about. Any smooth rotation works for the transform math; only the
//! parameter-to-matrix binding has to stay consistent.

mod augment;
mod preprocess;

pub use augment::{random_rotation_augment, random_rotation_augment_with_rng, AugmentRange};
pub use preprocess::{
    body_center, preprocess, BodyCenter, DegeneratePolicy, Level, PreprocessSpec, RotateVariant,
};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Joint3, SkeletonFrame};

/// Parameter slot of a factor rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Angle with respect to which [`rotation_jacobian`] differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AngleParam {
    Alpha,
    Beta,
    Gamma,
}

/// Observation viewpoint: three angles (radians) and a translation (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d: [f64; 3],
}

impl ViewParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, d: [f64; 3]) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            d,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn rotation_only(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self::new(alpha, beta, gamma, [0.0; 3])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.d)
    }

    pub fn is_finite(&self) -> bool {
        [self.alpha, self.beta, self.gamma]
            .iter()
            .chain(&self.d)
            .all(|x| x.is_finite())
    }

    /// `[alpha, beta, gamma, dx, dy, dz]`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.alpha, self.beta, self.gamma, self.d[0], self.d[1], self.d[2],
        ]
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        if p.len() != 6 {
            return Err(Error::invalid(format!(
                "view params need 6 values, got {}",
                p.len()
            )));
        }
        Ok(Self::new(p[0], p[1], p[2], [p[3], p[4], p[5]]))
    }
}

/// A proper rotation (orthogonal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Max-abs deviation of `RᵀR` from identity.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

fn factor(axis: Axis, c: f64, s: f64) -> Matrix3<f64> {
    #[rustfmt::skip]
    let m = match axis {
        Axis::X => Matrix3::new(
            1.0, 0.0, 0.0,
            0.0, c,   s,
            0.0, -s,  c,
        ),
        Axis::Y => Matrix3::new(
            c,   s,   0.0,
            -s,  c,   0.0,
            0.0, 0.0, 1.0,
        ),
        Axis::Z => Matrix3::new(
            c,   0.0, -s,
            0.0, 1.0, 0.0,
            s,   0.0, c,
        ),
    };
    m
}

/// Derivative of [`factor`] with respect to its angle.
fn factor_derivative(axis: Axis, c: f64, s: f64) -> Matrix3<f64> {
    #[rustfmt::skip]
    let m = match axis {
        Axis::X => Matrix3::new(
            0.0, 0.0, 0.0,
            0.0, -s,  c,
            0.0, -c,  -s,
        ),
        Axis::Y => Matrix3::new(
            -s,  c,   0.0,
            -c,  -s,  0.0,
            0.0, 0.0, 0.0,
        ),
        Axis::Z => Matrix3::new(
            -s,  0.0, -c,
            0.0, 0.0, 0.0,
            c,   0.0, -s,
        ),
    };
    m
}

/// Factor rotation for one parameter slot.
pub fn rotation_matrix(axis: Axis, angle: f64) -> Result<RotationMatrix> {
    if !angle.is_finite() {
        return Err(Error::invalid(format!(
            "rotation angle must be finite, got {angle}"
        )));
    }
    Ok(RotationMatrix(factor(axis, angle.cos(), angle.sin())))
}

/// `R = R_alpha · R_beta · R_gamma`.
pub fn compose_rotation(p: &ViewParams) -> Result<RotationMatrix> {
    if !p.is_finite() {
        return Err(Error::invalid(format!("non-finite view params {p:?}")));
    }
    Ok(rotation_matrix(Axis::X, p.alpha)?
        * rotation_matrix(Axis::Y, p.beta)?
        * rotation_matrix(Axis::Z, p.gamma)?)
}

/// `∂R/∂angle` by the product rule over the three factors.
pub fn rotation_jacobian(p: &ViewParams, wrt: AngleParam) -> Result<Matrix3<f64>> {
    if !p.is_finite() {
        return Err(Error::invalid(format!("non-finite view params {p:?}")));
    }
    let (ca, sa) = (p.alpha.cos(), p.alpha.sin());
    let (cb, sb) = (p.beta.cos(), p.beta.sin());
    let (cg, sg) = (p.gamma.cos(), p.gamma.sin());
    let rx = factor(Axis::X, ca, sa);
    let ry = factor(Axis::Y, cb, sb);
    let rz = factor(Axis::Z, cg, sg);
    Ok(match wrt {
        AngleParam::Alpha => factor_derivative(Axis::X, ca, sa) * ry * rz,
        AngleParam::Beta => rx * factor_derivative(Axis::Y, cb, sb) * rz,
        AngleParam::Gamma => rx * ry * factor_derivative(Axis::Z, cg, sg),
    })
}

/// `v' = R (v - d)` for every joint.
pub fn apply_view_transform(frame: &SkeletonFrame, p: &ViewParams) -> Result<SkeletonFrame> {
    let r = compose_rotation(p)?;
    let d = p.translation();
    Ok(SkeletonFrame::new(
        frame.joints.iter().map(|v| r.apply(&(v - d))).collect(),
    ))
}

/// `v = Rᵀ v' + d`, the exact inverse of [`apply_view_transform`].
pub fn inverse_view_transform(frame: &SkeletonFrame, p: &ViewParams) -> Result<SkeletonFrame> {
    let rt = compose_rotation(p)?.transpose();
    let d = p.translation();
    Ok(SkeletonFrame::new(
        frame.joints.iter().map(|v| rt.apply(v) + d).collect(),
    ))
}

/// Gradients of a loss with respect to the inputs of [`apply_view_transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGradient {
    pub d: Vector3<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Per input joint.
    pub joints: Vec<Vector3<f64>>,
}

impl ViewGradient {
    /// `[alpha, beta, gamma, dx, dy, dz]`.
    pub fn params_array(&self) -> [f64; 6] {
        [
            self.alpha, self.beta, self.gamma, self.d.x, self.d.y, self.d.z,
        ]
    }
}

/// Chain rule through `v'_j = R (v_j - d)` given upstream errors `eps'_j`.
///
/// With row-vector errors: `eps_d = -Σ_j eps'_j R`,
/// `eps_angle = Σ_j eps'_j (∂R/∂angle) (v_j - d)` and `eps_v_j = eps'_j R`.
/// When every `eps'_j` is the same vector `e`, `eps_d` reduces to `-J e R`.
pub fn backprop_view_transform(
    eps_vprime: &[Vector3<f64>],
    frame: &SkeletonFrame,
    p: &ViewParams,
) -> Result<ViewGradient> {
    if eps_vprime.len() != frame.num_joints() {
        return Err(Error::invalid(format!(
            "upstream error has {} joints, frame has {}",
            eps_vprime.len(),
            frame.num_joints()
        )));
    }
    let rt = compose_rotation(p)?.matrix().transpose();
    let jac = [
        rotation_jacobian(p, AngleParam::Alpha)?,
        rotation_jacobian(p, AngleParam::Beta)?,
        rotation_jacobian(p, AngleParam::Gamma)?,
    ];
    let d = p.translation();
    let mut grad = ViewGradient {
        d: Vector3::zeros(),
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        joints: Vec::with_capacity(eps_vprime.len()),
    };
    let mut angles = [0.0; 3];
    for (e, v) in eps_vprime.iter().zip(&frame.joints) {
        // eps' R as a column vector is Rᵀ eps'
        let back = rt * e;
        grad.d -= back;
        grad.joints.push(back);
        let centered: Joint3 = v - d;
        for (acc, j) in angles.iter_mut().zip(&jac) {
            *acc += e.dot(&(j * centered));
        }
    }
    [grad.alpha, grad.beta, grad.gamma] = angles;
    Ok(grad)
}
