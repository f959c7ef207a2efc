//! Matrix Lie group kernel for SO(2) and finite direct products of SO(2).
//!
//! Algebra and coalgebra elements are stored as coordinate vectors. For a
//! product of `k` rotation factors the algebra coordinate `θ_j` is the angle
//! rate of factor `j`, and its matrix view is the block-diagonal skew matrix
//! with blocks `[[0, -θ_j], [θ_j, 0]]`. Covectors pair with algebra vectors by
//! the Euclidean inner product on coordinates.

use nalgebra::{DMatrix, DVector, Matrix2};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Distance from ±π below which [`log`] refuses to pick a branch.
pub const CHART_MARGIN: f64 = 1e-9;

/// Tolerance used when validating rotation blocks in [`GroupElement::new`].
pub const VALIDATION_TOL: f64 = 1e-12;

/// Orthogonality drift above which [`GroupElement::reproject`] acts.
pub const REPROJECT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupId {
    So2,
    /// Direct product of `k` copies of SO(2), embedded block-diagonally.
    So2Product(usize),
}

impl GroupId {
    pub fn factors(self) -> usize {
        match self {
            GroupId::So2 => 1,
            GroupId::So2Product(k) => k,
        }
    }

    pub fn algebra_dim(self) -> usize {
        self.factors()
    }

    pub fn matrix_dim(self) -> usize {
        2 * self.factors()
    }
}

/// Planar rotation by `angle` radians.
pub fn rotation(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Rotation angle of a 2×2 block, read with `atan2` on the skew and symmetric parts.
pub fn block_angle(block: &Matrix2<f64>) -> f64 {
    (block[(1, 0)] - block[(0, 1)]).atan2(block[(0, 0)] + block[(1, 1)])
}

fn block_defect(block: &Matrix2<f64>) -> f64 {
    let gram = block.transpose() * block - Matrix2::identity();
    gram.amax().max((block.determinant() - 1.0).abs())
}

fn check_compatible(expected: GroupId, got: GroupId) -> Result<()> {
    if expected.algebra_dim() != got.algebra_dim() {
        return Err(Error::DimensionMismatch {
            expected: expected.algebra_dim(),
            got: got.algebra_dim(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    group: GroupId,
    matrix: DMatrix<f64>,
}

impl GroupElement {
    /// Wraps `matrix`, checking shape, block-diagonal structure and that every
    /// block is a rotation to within [`VALIDATION_TOL`].
    pub fn new(group: GroupId, matrix: DMatrix<f64>) -> Result<Self> {
        let n = group.matrix_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        for r in 0..n {
            for c in 0..n {
                if r / 2 != c / 2 && matrix[(r, c)].abs() > VALIDATION_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({r}, {c}) lies off the diagonal blocks"
                    )));
                }
            }
        }
        let element = GroupElement { group, matrix };
        let defect = element.orthogonality_defect();
        if defect > VALIDATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not a rotation (defect {defect:.3e})"
            )));
        }
        Ok(element)
    }

    pub fn identity(group: GroupId) -> Self {
        let n = group.matrix_dim();
        GroupElement {
            group,
            matrix: DMatrix::identity(n, n),
        }
    }

    /// SO(2) element with the given rotation angle.
    pub fn so2(angle: f64) -> Self {
        Self::from_blocks(GroupId::So2, &[rotation(angle)])
    }

    /// Product element with one rotation angle per factor.
    pub fn product(angles: &[f64]) -> Self {
        let blocks: Vec<_> = angles.iter().map(|&a| rotation(a)).collect();
        Self::from_blocks(GroupId::So2Product(angles.len()), &blocks)
    }

    /// Assembles an element from its factor blocks without validation.
    pub fn from_blocks(group: GroupId, blocks: &[Matrix2<f64>]) -> Self {
        assert_eq!(group.factors(), blocks.len(), "factor count mismatch");
        let n = group.matrix_dim();
        let mut matrix = DMatrix::zeros(n, n);
        for (j, b) in blocks.iter().enumerate() {
            matrix.fixed_view_mut::<2, 2>(2 * j, 2 * j).copy_from(b);
        }
        GroupElement { group, matrix }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn block(&self, factor: usize) -> Matrix2<f64> {
        self.matrix
            .fixed_view::<2, 2>(2 * factor, 2 * factor)
            .into_owned()
    }

    pub fn blocks(&self) -> Vec<Matrix2<f64>> {
        (0..self.group.factors()).map(|j| self.block(j)).collect()
    }

    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        check_compatible(self.group, other.group)?;
        Ok(GroupElement {
            group: self.group,
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            group: self.group,
            matrix: self.matrix.transpose(),
        }
    }

    /// Largest deviation of any block from orthogonality or unit determinant.
    pub fn orthogonality_defect(&self) -> f64 {
        (0..self.group.factors())
            .map(|j| block_defect(&self.block(j)))
            .fold(0.0, f64::max)
    }

    /// Replaces each block with its polar factor when drift exceeds
    /// [`REPROJECT_THRESHOLD`]. Every correction is logged.
    pub fn reproject(&self) -> GroupElement {
        let defect = self.orthogonality_defect();
        if defect <= REPROJECT_THRESHOLD {
            return self.clone();
        }
        log::warn!("re-projecting group element onto the rotation group (defect {defect:.3e})");
        let blocks: Vec<_> = self
            .blocks()
            .iter()
            .map(|b| {
                // For a near-rotation the polar factor is the rotation by the block angle.
                rotation(block_angle(b))
            })
            .collect();
        Self::from_blocks(self.group, &blocks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraVector {
    pub group: GroupId,
    pub coords: DVector<f64>,
}

impl AlgebraVector {
    pub fn new(group: GroupId, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != group.algebra_dim() {
            return Err(Error::DimensionMismatch {
                expected: group.algebra_dim(),
                got: coords.len(),
            });
        }
        Ok(AlgebraVector {
            group,
            coords: DVector::from_vec(coords),
        })
    }

    /// Block-diagonal skew-symmetric matrix view.
    pub fn hat(&self) -> DMatrix<f64> {
        let n = self.group.matrix_dim();
        let mut m = DMatrix::zeros(n, n);
        for (j, &theta) in self.coords.iter().enumerate() {
            m[(2 * j + 1, 2 * j)] = theta;
            m[(2 * j, 2 * j + 1)] = -theta;
        }
        m
    }

    /// Inverse of [`hat`](Self::hat); reads the skew part of each diagonal block.
    pub fn vee(group: GroupId, m: &DMatrix<f64>) -> Self {
        let coords = (0..group.factors())
            .map(|j| 0.5 * (m[(2 * j + 1, 2 * j)] - m[(2 * j, 2 * j + 1)]))
            .collect::<Vec<_>>();
        AlgebraVector {
            group,
            coords: DVector::from_vec(coords),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoAlgebraVector {
    pub group: GroupId,
    pub coords: DVector<f64>,
}

impl CoAlgebraVector {
    pub fn new(group: GroupId, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != group.algebra_dim() {
            return Err(Error::DimensionMismatch {
                expected: group.algebra_dim(),
                got: coords.len(),
            });
        }
        Ok(CoAlgebraVector {
            group,
            coords: DVector::from_vec(coords),
        })
    }

    /// Dual pairing `⟨self, eta⟩`.
    pub fn pair(&self, eta: &AlgebraVector) -> Result<f64> {
        check_compatible(self.group, eta.group)?;
        Ok(self.coords.dot(&eta.coords))
    }
}

/// Matrix exponential, evaluated in closed form per factor.
pub fn exp(xi: &AlgebraVector) -> GroupElement {
    let blocks: Vec<_> = xi.coords.iter().map(|&a| rotation(a)).collect();
    GroupElement::from_blocks(xi.group, &blocks)
}

/// Principal logarithm. Fails with [`Error::OutOfChart`] when any factor's
/// angle is within [`CHART_MARGIN`] of ±π.
pub fn log(g: &GroupElement) -> Result<AlgebraVector> {
    let limit = PI - CHART_MARGIN;
    let mut coords = Vec::with_capacity(g.group.factors());
    for b in g.blocks() {
        let angle = block_angle(&b);
        if angle.abs() >= limit {
            return Err(Error::OutOfChart { angle, limit });
        }
        coords.push(angle);
    }
    Ok(AlgebraVector {
        group: g.group,
        coords: DVector::from_vec(coords),
    })
}

/// Adjoint action `Ad_g η`, the algebra coordinates of `g η̂ g⁻¹`.
pub fn adjoint(g: &GroupElement, eta: &AlgebraVector) -> Result<AlgebraVector> {
    check_compatible(g.group, eta.group)?;
    let conj = g.matrix() * eta.hat() * g.matrix().transpose();
    Ok(AlgebraVector::vee(g.group, &conj))
}

fn basis(group: GroupId, k: usize) -> AlgebraVector {
    let mut coords = DVector::zeros(group.algebra_dim());
    coords[k] = 1.0;
    AlgebraVector { group, coords }
}

/// Coadjoint action `Ad*_{g⁻¹} μ`, defined by
/// `⟨Ad*_{g⁻¹} μ, η⟩ = ⟨μ, Ad_{g⁻¹} η⟩` on every basis vector `η`.
pub fn coadjoint(g: &GroupElement, mu: &CoAlgebraVector) -> Result<CoAlgebraVector> {
    check_compatible(g.group, mu.group)?;
    let g_inv = g.inverse();
    let coords = (0..g.group.algebra_dim())
        .map(|k| {
            let moved = adjoint(&g_inv, &basis(g.group, k))?;
            Ok(mu.coords.dot(&moved.coords))
        })
        .collect::<Result<Vec<_>>>()?;
    CoAlgebraVector::new(g.group, coords)
}

/// Cotangent lift of left translation by `g`.
///
/// A covector at `g` is given in right-trivialized coordinates `μ`, meaning it
/// pairs with the tangent vector `ζ̂ g` as `⟨μ, ζ⟩`. The lift pulls it back along
/// `T_e Φ_g : η ↦ g η̂` and returns the identity-based coordinates, which are
/// `Ad_gᵀ μ`.
pub fn cotangent_lift_left(g: &GroupElement, mu: &CoAlgebraVector) -> Result<CoAlgebraVector> {
    check_compatible(g.group, mu.group)?;
    let coords = (0..g.group.algebra_dim())
        .map(|k| {
            let moved = adjoint(g, &basis(g.group, k))?;
            Ok(mu.coords.dot(&moved.coords))
        })
        .collect::<Result<Vec<_>>>()?;
    CoAlgebraVector::new(g.group, coords)
}

/// Maps the group-part adjoint `θ` to `ρ = (D log(g_rel) ∘ T_e Φ_{g_rel})ᵀ θ`.
///
/// Every factor is one-dimensional and abelian, so the derivative of the
/// logarithm along left-translated directions is the identity and `ρ = θ`.
/// The chart condition on `g_rel` is still enforced.
pub fn rho_transform(theta: &CoAlgebraVector, g_rel: &GroupElement) -> Result<CoAlgebraVector> {
    check_compatible(g_rel.group, theta.group)?;
    log(g_rel)?;
    Ok(theta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn exp_examples() {
        let id = exp(&AlgebraVector::new(GroupId::So2, vec![0.0]).unwrap());
        assert_eq!(id.matrix(), &DMatrix::identity(2, 2));

        let quarter = exp(&AlgebraVector::new(GroupId::So2, vec![PI / 2.0]).unwrap());
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(quarter.matrix(), &expected, epsilon = 1e-15);

        let half = exp(&AlgebraVector::new(GroupId::So2Product(2), vec![PI, 0.0]).unwrap());
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 0)] = -1.0;
        expected[(1, 1)] = -1.0;
        assert_abs_diff_eq!(half.matrix(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn log_examples() {
        let zero = log(&GroupElement::identity(GroupId::So2)).unwrap();
        assert_eq!(zero.coords[0], 0.0);

        let quarter = GroupElement::new(
            GroupId::So2,
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(log(&quarter).unwrap().coords[0], PI / 2.0, epsilon = 1e-15);

        let pair = GroupElement::product(&[0.3, -0.2]);
        let coords = log(&pair).unwrap().coords;
        assert_abs_diff_eq!(coords[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(coords[1], -0.2, epsilon = 1e-15);
    }

    #[test]
    fn log_rejects_half_turn() {
        let err = log(&GroupElement::so2(PI)).unwrap_err();
        assert!(matches!(err, Error::OutOfChart { .. }));
        assert!(log(&GroupElement::so2(PI - 1e-6)).is_ok());
    }

    #[test]
    fn new_rejects_non_rotations() {
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GroupElement::new(GroupId::So2, shear).is_err());
        let reflection = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(GroupElement::new(GroupId::So2, reflection).is_err());
        let wrong_size = DMatrix::identity(3, 3);
        assert!(matches!(
            GroupElement::new(GroupId::So2, wrong_size),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut coupled = DMatrix::identity(4, 4);
        coupled[(0, 3)] = 0.5;
        assert!(GroupElement::new(GroupId::So2Product(2), coupled).is_err());
    }

    #[test]
    fn coadjoint_examples() {
        let mu = CoAlgebraVector::new(GroupId::So2, vec![1.7]).unwrap();
        let moved = coadjoint(&GroupElement::so2(0.8), &mu).unwrap();
        assert_abs_diff_eq!(moved.coords[0], 1.7, epsilon = 1e-15);

        let moved = coadjoint(&GroupElement::identity(GroupId::So2), &mu).unwrap();
        assert_eq!(moved, mu);

        let mu = CoAlgebraVector::new(GroupId::So2Product(2), vec![0.4, -2.5]).unwrap();
        let moved = coadjoint(&GroupElement::product(&[1.1, -2.0]), &mu).unwrap();
        assert_abs_diff_eq!(moved.coords, mu.coords, epsilon = 1e-15);
    }

    #[test]
    fn coadjoint_dimension_mismatch() {
        let mu = CoAlgebraVector::new(GroupId::So2Product(2), vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            coadjoint(&GroupElement::so2(0.1), &mu),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(cotangent_lift_left(&GroupElement::so2(0.1), &mu).is_err());
    }

    #[test]
    fn cotangent_lift_identity_and_so2() {
        let mu = CoAlgebraVector::new(GroupId::So2, vec![2.0]).unwrap();
        let id = GroupElement::identity(GroupId::So2);
        assert_eq!(cotangent_lift_left(&id, &mu).unwrap(), mu);
        let lifted = cotangent_lift_left(&GroupElement::so2(1.0), &mu).unwrap();
        assert_abs_diff_eq!(lifted.coords[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rho_transform_examples() {
        let theta = CoAlgebraVector::new(GroupId::So2, vec![0.4]).unwrap();
        let rho = rho_transform(&theta, &GroupElement::so2(0.01)).unwrap();
        assert_eq!(rho.coords[0], 0.4);
        let zero = CoAlgebraVector::new(GroupId::So2, vec![0.0]).unwrap();
        assert_eq!(rho_transform(&zero, &GroupElement::so2(-0.3)).unwrap().coords[0], 0.0);
        assert!(matches!(
            rho_transform(&theta, &GroupElement::so2(PI)),
            Err(Error::OutOfChart { .. })
        ));
    }

    #[test]
    fn hat_vee_round_trip() {
        let xi = AlgebraVector::new(GroupId::So2Product(3), vec![0.5, -1.25, 3.0]).unwrap();
        assert_eq!(AlgebraVector::vee(xi.group, &xi.hat()), xi);
    }

    #[test]
    fn reproject_restores_orthogonality() {
        let g = GroupElement::so2(0.7);
        let mut drifted = g.matrix().clone();
        drifted *= 1.0 + 1e-6;
        let drifted = GroupElement {
            group: GroupId::So2,
            matrix: drifted,
        };
        assert!(drifted.orthogonality_defect() > REPROJECT_THRESHOLD);
        let fixed = drifted.reproject();
        assert!(fixed.orthogonality_defect() < 1e-15);
        assert_abs_diff_eq!(fixed.matrix(), g.matrix(), epsilon = 1e-14);
        assert_eq!(g.reproject(), g);
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(angle in -3.0f64..3.0) {
            let g = GroupElement::so2(angle);
            let back = exp(&log(&g).unwrap());
            prop_assert!((back.matrix() - g.matrix()).amax() <= 1e-10);
        }

        #[test]
        fn log_exp_round_trip(angle in -(PI - 1e-6)..(PI - 1e-6)) {
            let xi = AlgebraVector::new(GroupId::So2, vec![angle]).unwrap();
            prop_assert!((log(&exp(&xi)).unwrap().coords[0] - angle).abs() <= 1e-12);
        }

        #[test]
        fn pairing_is_bilinear(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -5.0f64..5.0, y in -5.0f64..5.0, s in -3.0f64..3.0) {
            let g = GroupId::So2Product(2);
            let mu = CoAlgebraVector::new(g, vec![a, b]).unwrap();
            let eta = AlgebraVector::new(g, vec![x, y]).unwrap();
            let scaled = AlgebraVector::new(g, vec![s * x, s * y]).unwrap();
            let lhs = mu.pair(&scaled).unwrap();
            prop_assert!((lhs - s * mu.pair(&eta).unwrap()).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn coadjoint_duality(angles in proptest::collection::vec(-3.0f64..3.0, 1..4), seed in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let k = angles.len();
            let group = GroupId::So2Product(k);
            let g = GroupElement::product(&angles);
            let mu = CoAlgebraVector::new(group, seed[..k].to_vec()).unwrap();
            let moved = coadjoint(&g, &mu).unwrap();
            for j in 0..k {
                let eta = basis(group, j);
                let rhs = mu.pair(&adjoint(&g.inverse(), &eta).unwrap()).unwrap();
                prop_assert!((moved.pair(&eta).unwrap() - rhs).abs() <= 1e-12);
            }
        }
    }
}
