//! Single-channel multiplexing: control boxes, the star-shaped admissible set,
//! the `z` map whose zero set is exactly that star, and the auxiliary
//! accumulator `w` that carries `Σ z` along a rollout.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default block-norm tolerance for [`star_membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Default tolerance under which `‖z(U)‖` counts as zero.
pub const Z_ZERO_TOL: f64 = 1e-12;

/// Tolerance for reading a coordinate as sitting on a box face.
pub const BOUND_TOL: f64 = 1e-9;

/// Axis-aligned control box containing the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (k, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo <= 0.0 && 0.0 <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {k} is [{lo}, {hi}]; it must be finite and contain 0"
                )));
            }
        }
        Ok(ControlBox { lower, upper })
    }

    /// The box `[-b_k, b_k]` in every coordinate.
    pub fn symmetric(bounds: &[f64]) -> Result<Self> {
        Self::new(bounds.iter().map(|b| -b).collect(), bounds.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Largest half-width; used to normalise control magnitudes.
    pub fn scale(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi.max(-lo))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.dim()
            && u
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }

    pub fn project(&self, u: &mut [f64]) {
        for (v, (&lo, &hi)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Per-plant control boxes of the joint system.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLayout {
    boxes: Vec<ControlBox>,
    offsets: Vec<usize>,
}

impl ControlLayout {
    pub fn new(boxes: Vec<ControlBox>) -> Self {
        let mut offsets = Vec::with_capacity(boxes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for b in &boxes {
            acc += b.dim();
            offsets.push(acc);
        }
        ControlLayout { boxes, offsets }
    }

    pub fn plant_count(&self) -> usize {
        self.boxes.len()
    }

    pub fn boxes(&self) -> &[ControlBox] {
        &self.boxes
    }

    pub fn dims(&self) -> Vec<usize> {
        self.boxes.iter().map(ControlBox::dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Start of plant `i`'s block in the flattened control vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Index range of plant `i`'s block in the flattened control vector.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Plant that owns flattened coordinate `k`.
    pub fn plant_of(&self, k: usize) -> usize {
        self.offsets.partition_point(|&o| o <= k) - 1
    }

    pub fn lower_flat(&self) -> Vec<f64> {
        self.boxes.iter().flat_map(|b| b.lower.iter().copied()).collect()
    }

    pub fn upper_flat(&self) -> Vec<f64> {
        self.boxes.iter().flat_map(|b| b.upper.iter().copied()).collect()
    }
}

/// One control vector per plant at a single time step.
#[derive(Debug, Clone, PartialEq)]
pub struct JointControl {
    pub blocks: Vec<Vec<f64>>,
}

impl JointControl {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        JointControl { blocks }
    }

    pub fn zeros(layout: &ControlLayout) -> Self {
        JointControl {
            blocks: layout.dims().into_iter().map(|d| vec![0.0; d]).collect(),
        }
    }

    pub fn from_flat(layout: &ControlLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                got: flat.len(),
            });
        }
        Ok(JointControl {
            blocks: (0..layout.plant_count())
                .map(|i| flat[layout.range(i)].to_vec())
                .collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn plant_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().flatten().map(|v| v * v).sum()
    }

    pub fn check_layout(&self, layout: &ControlLayout) -> Result<()> {
        if self.blocks.len() != layout.plant_count() {
            return Err(Error::DimensionMismatch {
                expected: layout.plant_count(),
                got: self.blocks.len(),
            });
        }
        for (b, d) in self.blocks.iter().zip(layout.dims()) {
            if b.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: b.len(),
                });
            }
        }
        Ok(())
    }
}

/// The `⊛` product. Stacking `v₁` through the block-indicator matrix `Λ`
/// and pairing with stacked copies of `v₂` collapses to `(Σ v₁)(Σ v₂)`.
pub fn opr(v1: &[f64], v2: &[f64]) -> f64 {
    v1.iter().sum::<f64>() * v2.iter().sum::<f64>()
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `z(U) = Σ_{i<j} ‖uⁱ‖²‖uʲ‖² (1, 1) + (uⁱ ⊛ uʲ) (1, −1)`.
pub fn z(u: &JointControl) -> [f64; 2] {
    let p = u.blocks.len();
    let mut acc = [0.0, 0.0];
    for i in 0..p {
        for j in i + 1..p {
            let a = norm_sq(&u.blocks[i]) * norm_sq(&u.blocks[j]);
            let b = opr(&u.blocks[i], &u.blocks[j]);
            acc[0] += a + b;
            acc[1] += a - b;
        }
    }
    acc
}

/// Generalisation of [`z`] that vanishes whenever at most `m` blocks are
/// nonzero: it sums over all `(m + 1)`-subsets of plants.
pub fn z_m(u: &JointControl, m: usize) -> Result<[f64; 2]> {
    let p = u.blocks.len();
    if m == 0 || m >= p {
        return Err(Error::InvalidArgument(format!(
            "z_m needs 1 <= m < P, got m = {m} with P = {p}"
        )));
    }
    let norms: Vec<f64> = u.blocks.iter().map(|b| norm_sq(b)).collect();
    let sums: Vec<f64> = u.blocks.iter().map(|b| b.iter().sum()).collect();
    let mut acc = [0.0, 0.0];
    for subset in (0..p).combinations(m + 1) {
        let a: f64 = subset.iter().map(|&i| norms[i]).product();
        let b: f64 = subset.iter().map(|&i| sums[i]).product();
        acc[0] += a + b;
        acc[1] += a - b;
    }
    Ok(acc)
}

/// Gradient of `⟨weights, z(U)⟩` with respect to each control block.
pub fn z_gradient(u: &JointControl, weights: [f64; 2]) -> Vec<Vec<f64>> {
    let norms: Vec<f64> = u.blocks.iter().map(|b| norm_sq(b)).collect();
    let sums: Vec<f64> = u.blocks.iter().map(|b| b.iter().sum()).collect();
    let total_norm: f64 = norms.iter().sum();
    let total_sum: f64 = sums.iter().sum();
    let quad = 2.0 * (weights[0] + weights[1]);
    let cross = weights[0] - weights[1];
    u.blocks
        .iter()
        .enumerate()
        .map(|(k, block)| {
            let other_norm = total_norm - norms[k];
            let other_sum = total_sum - sums[k];
            block
                .iter()
                .map(|&v| quad * v * other_norm + cross * other_sum)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Membership {
    pub member: bool,
    /// The unique active plant, if any block is above tolerance.
    pub branch: Option<usize>,
}

/// Tests `U ∈ U#`: every block lies in its box and at most one block has norm above `tol`.
pub fn star_membership(layout: &ControlLayout, u: &JointControl, tol: f64) -> Membership {
    let in_boxes = u.blocks.len() == layout.plant_count()
        && u
            .blocks
            .iter()
            .zip(layout.boxes())
            .all(|(b, bx)| bx.contains(b, tol));
    let active: Vec<usize> = u
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| norm_sq(b).sqrt() > tol)
        .map(|(i, _)| i)
        .collect();
    let branch = if active.len() == 1 { Some(active[0]) } else { None };
    Membership {
        member: in_boxes && active.len() <= 1,
        branch,
    }
}

/// Value of the auxiliary accumulator `w`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AuxState {
    pub w: [f64; 2],
}

/// `w₀ = 0`, `w_{t+1} = w_t + z(U_t)`. Returns `N + 1` states.
pub fn aux_rollout(controls: &[JointControl]) -> Vec<AuxState> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    let mut w = AuxState::default();
    out.push(w);
    for u in controls {
        let inc = z(u);
        w.w[0] += inc[0];
        w.w[1] += inc[1];
        out.push(w);
    }
    out
}

/// Admissible direction set of one scalar coordinate in the support cone of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeDirection {
    /// Strictly interior: both signs allowed.
    Free,
    /// On the upper face: only non-positive moves.
    NonPositive,
    /// On the lower face: only non-negative moves.
    NonNegative,
    /// Both faces coincide: no movement.
    Pinned,
}

/// Support cone of the box product at `apex`, as one interval per flattened coordinate.
pub fn support_cone_halfspace(
    layout: &ControlLayout,
    apex: &JointControl,
) -> Result<Vec<ConeDirection>> {
    apex.check_layout(layout)?;
    let mut out = Vec::with_capacity(layout.total_dim());
    let mut coordinate = 0;
    for (block, bx) in apex.blocks.iter().zip(layout.boxes()) {
        for (k, &v) in block.iter().enumerate() {
            let (lo, hi) = (bx.lower[k], bx.upper[k]);
            if v > hi + BOUND_TOL || v < lo - BOUND_TOL {
                return Err(Error::ApexOutsideSet {
                    coordinate,
                    value: v,
                    lower: lo,
                    upper: hi,
                });
            }
            let at_upper = v >= hi - BOUND_TOL;
            let at_lower = v <= lo + BOUND_TOL;
            out.push(match (at_lower, at_upper) {
                (true, true) => ConeDirection::Pinned,
                (false, true) => ConeDirection::NonPositive,
                (true, false) => ConeDirection::NonNegative,
                (false, false) => ConeDirection::Free,
            });
            coordinate += 1;
        }
    }
    Ok(out)
}
