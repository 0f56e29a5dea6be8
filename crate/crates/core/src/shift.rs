//! First-order interface-shift corrections.
//!
//! Conventions, used throughout:
//!
//! * The normal of a patch points from the `Plus` side toward the `Minus`
//!   side. A positive shift moves the interface along the normal and so grows
//!   the `Plus` phase.
//! * Every interphase operation returns the change caused by *inserting* the
//!   interphase into the reference composite: the interphase material grows
//!   by the local thickness `h` into the space that phase 1 occupies in the
//!   reference. In shift terms the interphase is the `Plus` side and phase 1
//!   the `Minus` side, which gives
//!   `h [ (mean(sigma) - sigma1) E_t.E_t - (mean(sigma^-1) - sigma1^-1) J_n.J_n ]`.
//!   `E_t` and `J_n` are continuous across a perfect interface, so they may be
//!   sampled on either side of the reference interface.
//!
//! All surface integrals are compensated sums over patches in mesh order
//! divided by the cell volume, so results do not depend on thread count.

use std::collections::HashMap;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::geometry::{symmetric_form, ConductivityTensor, FieldVector, InterfaceMesh, InterfacePatch, Matrix, Side};
use crate::summation::CompensatedSum;

/// Output of every correction: the energy change `<E>.dsigma*<E>` for the
/// applied field the mesh fields were computed with, and optionally the
/// full tensor when several applied fields were combined.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSigmaResult {
    pub quadratic_form_value: f64,
    pub tensor: Option<Matrix>,
    pub applied_field: Option<FieldVector>,
    /// Largest nearest-neighbour slope of the patch thickness; only filled in
    /// by the interphase corrections.
    pub max_thickness_gradient: Option<f64>,
}

impl DeltaSigmaResult {
    fn scalar(value: f64) -> Self {
        Self { quadratic_form_value: value, tensor: None, applied_field: None, max_thickness_gradient: None }
    }

    pub fn with_applied_field(mut self, e0: FieldVector) -> Self {
        self.applied_field = Some(e0);
        self
    }
}

fn patch_error(index: usize, reason: impl Into<String>) -> Error {
    Error::Patch { index, reason: reason.into() }
}

fn check_mesh_dim(mesh: &InterfaceMesh, d: usize) -> Result<()> {
    match mesh.dim() {
        Some(m) if m != d => Err(Error::DimensionMismatch { expected: d, found: m }),
        _ => Ok(()),
    }
}

/// Shift amplitudes stored on the patches, in mesh order.
pub fn patch_shifts(mesh: &InterfaceMesh) -> Vec<f64> {
    mesh.patches().iter().map(InterfacePatch::shift_amplitude).collect()
}

/// Energy change when each patch moves by `shifts[i]` along its normal:
/// `(1/|cell|) sum w_i s_i [E-.J+ - E+.J-]`.
///
/// Each patch must carry both sides, consistent with the mesh continuity
/// tolerance.
pub fn interface_shift_delta(mesh: &InterfaceMesh, shifts: &[f64]) -> Result<DeltaSigmaResult> {
    if shifts.len() != mesh.len() {
        return Err(Error::LengthMismatch { expected: mesh.len(), found: shifts.len() });
    }
    let tol = mesh.continuity_tolerance();
    let mut acc = CompensatedSum::default();
    for (index, (patch, &shift)) in mesh.patches().iter().zip(shifts).enumerate() {
        if !shift.is_finite() {
            return Err(patch_error(index, "non-finite shift"));
        }
        let (Some(plus), Some(minus)) = (patch.side(Side::Plus), patch.side(Side::Minus)) else {
            return Err(patch_error(index, "missing side fields"));
        };
        if let Some((e_mis, j_mis)) = patch.continuity_mismatch() {
            if e_mis > tol || j_mis > tol {
                return Err(patch_error(
                    index,
                    format!("fields violate continuity (E_t {e_mis:e}, J_n {j_mis:e}, tolerance {tol:e})"),
                ));
            }
        }
        let jump = minus.e.dot(&plus.j) - plus.e.dot(&minus.j);
        acc.add(patch.weight() * shift * jump);
    }
    Ok(DeltaSigmaResult::scalar(acc.value() / mesh.cell_volume()))
}

/// Tangential/normal form of [`interface_shift_delta`] with the shift equal
/// to the patch thickness:
/// `(1/|cell|) sum w h [ (s+ - s-) E_t.E_t - (s+^-1 - s-^-1) J_n.J_n ]`.
///
/// `side = None` uses the declared one-sided data; `Some(side)` decomposes
/// that side's raw fields.
pub fn interface_shift_delta_tn(
    mesh: &InterfaceMesh,
    sigma_plus: &ConductivityTensor,
    sigma_minus: &ConductivityTensor,
    side: Option<Side>,
) -> Result<DeltaSigmaResult> {
    let d = sigma_plus.dim();
    if sigma_minus.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: sigma_minus.dim() });
    }
    let conductive = sigma_plus.matrix() - sigma_minus.matrix();
    let resistive = sigma_plus.inverse() - sigma_minus.inverse();
    let value = tn_sum(mesh, side, |_| Ok((conductive.clone(), resistive.clone())))?;
    Ok(DeltaSigmaResult::scalar(value))
}

/// Sums `w h [A E_t.E_t - B J_n.J_n]` where `(A, B)` may depend on the patch.
fn tn_sum(
    mesh: &InterfaceMesh,
    side: Option<Side>,
    mut coefficients: impl FnMut(&InterfacePatch) -> Result<(Matrix, Matrix)>,
) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for (index, patch) in mesh.patches().iter().enumerate() {
        let h = patch.thickness();
        if h == 0.0 || patch.weight() == 0.0 {
            continue;
        }
        let (e_t, j_n) = patch.tangential_normal(side).map_err(|e| patch_error(index, e.to_string()))?;
        let (a, b) = coefficients(patch)?;
        let term = symmetric_form(&a, &e_t, &e_t)? - symmetric_form(&b, &j_n, &j_n)?;
        acc.add(patch.weight() * h * term);
    }
    Ok(acc.value() / mesh.cell_volume())
}

/// Several interfaces shifted at once: the sum of the individual
/// [`interface_shift_delta`] values.
pub fn multi_interface_shift(meshes: &[InterfaceMesh], shifts: &[Vec<f64>]) -> Result<DeltaSigmaResult> {
    if meshes.len() != shifts.len() {
        return Err(Error::LengthMismatch { expected: meshes.len(), found: shifts.len() });
    }
    let mut acc = CompensatedSum::default();
    for (mesh, s) in meshes.iter().zip(shifts) {
        acc.add(interface_shift_delta(mesh, s)?.quadratic_form_value);
    }
    Ok(DeltaSigmaResult::scalar(acc.value()))
}

fn interphase_delta(
    mesh: &InterfaceMesh,
    sigma1: &ConductivityTensor,
    side: Option<Side>,
    mut means: impl FnMut(&InterfacePatch) -> Result<(Matrix, Matrix)>,
) -> Result<DeltaSigmaResult> {
    check_mesh_dim(mesh, sigma1.dim())?;
    let value = tn_sum(mesh, side, |patch| {
        let (mean, mean_inverse) = means(patch)?;
        Ok((mean - sigma1.matrix(), mean_inverse - sigma1.inverse()))
    })?;
    let mut result = DeltaSigmaResult::scalar(value);
    result.max_thickness_gradient = Some(mesh.max_thickness_gradient());
    Ok(result)
}

/// Single interphase of conductivity `sigma2` and local thickness `h(x)`
/// (patch thickness) inserted on the phase-1 side of the reference interface.
pub fn single_interphase_delta(
    mesh: &InterfaceMesh,
    sigma1: &ConductivityTensor,
    sigma2: &ConductivityTensor,
    side: Option<Side>,
) -> Result<DeltaSigmaResult> {
    if sigma2.dim() != sigma1.dim() {
        return Err(Error::DimensionMismatch { expected: sigma1.dim(), found: sigma2.dim() });
    }
    interphase_delta(mesh, sigma1, side, |_| Ok((sigma2.matrix().clone(), sigma2.inverse().clone())))
}

/// Ordered interphase layers `sigma^2, ..., sigma^K` with thickness fractions
/// summing to one, listed from phase 1 outward.
#[derive(Debug, Clone, PartialEq)]
pub struct InterphaseStack {
    conductivities: Vec<ConductivityTensor>,
    fractions: Vec<f64>,
}

impl InterphaseStack {
    pub fn new(conductivities: Vec<ConductivityTensor>, fractions: Vec<f64>) -> Result<Self> {
        if conductivities.is_empty() {
            return Err(Error::InvalidFractions("interphase stack is empty".into()));
        }
        if conductivities.len() != fractions.len() {
            return Err(Error::LengthMismatch { expected: conductivities.len(), found: fractions.len() });
        }
        let d = conductivities[0].dim();
        if let Some(t) = conductivities.iter().find(|t| t.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: t.dim() });
        }
        if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::InvalidFractions("stack fractions must be finite and >= 0".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidFractions(format!("stack fractions sum to {total}, expected 1")));
        }
        Ok(Self { conductivities, fractions })
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.conductivities[0].dim()
    }

    pub fn conductivities(&self) -> &[ConductivityTensor] {
        &self.conductivities
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Thickness-weighted arithmetic mean of the layer conductivities.
    pub fn mean(&self) -> Matrix {
        weighted_sum(self.conductivities.iter().map(ConductivityTensor::matrix).zip(&self.fractions), self.dim())
    }

    /// Thickness-weighted mean of the layer resistivities.
    pub fn mean_inverse(&self) -> Matrix {
        weighted_sum(self.conductivities.iter().map(ConductivityTensor::inverse).zip(&self.fractions), self.dim())
    }

    /// Shift of each internal interface, as a fraction of the total
    /// thickness, when the stack is built up by moving interfaces: the `k`-th
    /// interface (between layer `k` and `k+1`, counting phase 1 as layer 1)
    /// moves by the combined fraction of all layers beyond it.
    pub fn interface_shift_fractions(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut remaining: f64 = 1.0;
        out.push(remaining);
        for f in &self.fractions[..self.len() - 1] {
            remaining -= f;
            out.push(remaining);
        }
        out
    }

    /// `sum_k t_k (s^k - s^(k+1))` over the interfaces of the built-up stack,
    /// with `s^1 = sigma1`; `inverse` selects resistivities. Telescopes to
    /// `s^1 - mean` (or `s^1^-1 - mean_inverse`).
    pub fn telescoped_difference(&self, sigma1: &ConductivityTensor, inverse: bool) -> Matrix {
        let pick = |t: &ConductivityTensor| if inverse { t.inverse().clone() } else { t.matrix().clone() };
        let layers: Vec<Matrix> =
            std::iter::once(pick(sigma1)).chain(self.conductivities.iter().map(pick)).collect();
        // t_k = sum of fractions of layers k+1..K, in the explicit double-sum form.
        let mut out = Matrix::zeros(self.dim(), self.dim());
        for k in 0..self.len() {
            let t_k: f64 = self.fractions[k..].iter().sum();
            out += (&layers[k] - &layers[k + 1]) * t_k;
        }
        out
    }
}

fn weighted_sum<'a>(terms: impl Iterator<Item = (&'a Matrix, &'a f64)>, d: usize) -> Matrix {
    let terms: Vec<_> = terms.collect();
    Matrix::from_fn(d, d, |i, j| terms.iter().map(|(m, f)| *f * m[(i, j)]).collect::<CompensatedSum>().value())
}

/// Stack of interphases between phase 1 and its neighbour: only the mean
/// conductivity and the mean resistivity of the stack enter.
pub fn multi_interphase_delta(
    mesh: &InterfaceMesh,
    sigma1: &ConductivityTensor,
    stack: &InterphaseStack,
    side: Option<Side>,
) -> Result<DeltaSigmaResult> {
    if stack.dim() != sigma1.dim() {
        return Err(Error::DimensionMismatch { expected: sigma1.dim(), found: stack.dim() });
    }
    let (mean, mean_inverse) = (stack.mean(), stack.mean_inverse());
    interphase_delta(mesh, sigma1, side, |_| Ok((mean.clone(), mean_inverse.clone())))
}

/// Coordinate in which a graded profile is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileCoordinate {
    /// `s = z / h` in `[0, 1]`; the profile scales with the local thickness.
    Normalized,
    /// Physical distance `z` in `[0, h]` from the phase-1 face.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// `values[k]` on `[breakpoints[k], breakpoints[k+1])`; needs one value
    /// fewer than breakpoints.
    PiecewiseConstant,
    /// Linear between values given at every breakpoint.
    PiecewiseLinear,
}

type ProfileRule = Arc<dyn Fn(f64) -> Result<ConductivityTensor> + Send + Sync>;

/// Conductivity varying through the interphase thickness.
#[derive(Clone)]
pub enum GradedProfile {
    Rule {
        coordinate: ProfileCoordinate,
        sigma: ProfileRule,
        /// Points where the rule may jump; quadrature panels are split there.
        breakpoints: Vec<f64>,
    },
    Table {
        coordinate: ProfileCoordinate,
        breakpoints: Vec<f64>,
        values: Vec<ConductivityTensor>,
        interpolation: Interpolation,
    },
}

impl std::fmt::Debug for GradedProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradedProfile::Rule { coordinate, breakpoints, .. } => f
                .debug_struct("Rule")
                .field("coordinate", coordinate)
                .field("breakpoints", breakpoints)
                .finish_non_exhaustive(),
            GradedProfile::Table { coordinate, breakpoints, interpolation, .. } => f
                .debug_struct("Table")
                .field("coordinate", coordinate)
                .field("breakpoints", breakpoints)
                .field("interpolation", interpolation)
                .finish_non_exhaustive(),
        }
    }
}

/// Adaptive Gauss-Legendre settings for profile averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Absolute tolerance on each average, relative to the largest integrand
    /// entry seen.
    pub tolerance: f64,
    /// Maximum bisection depth per panel.
    pub max_depth: u32,
    pub order: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_depth: 40, order: 8 }
    }
}

impl GradedProfile {
    pub fn rule(
        coordinate: ProfileCoordinate,
        sigma: impl Fn(f64) -> Result<ConductivityTensor> + Send + Sync + 'static,
    ) -> Self {
        GradedProfile::Rule { coordinate, sigma: Arc::new(sigma), breakpoints: Vec::new() }
    }

    pub fn table(
        coordinate: ProfileCoordinate,
        breakpoints: Vec<f64>,
        values: Vec<ConductivityTensor>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        let expected = match interpolation {
            Interpolation::PiecewiseConstant => breakpoints.len().saturating_sub(1),
            Interpolation::PiecewiseLinear => breakpoints.len(),
        };
        if breakpoints.len() < 2 || values.len() != expected {
            return Err(Error::LengthMismatch { expected, found: values.len() });
        }
        if breakpoints[0] != 0.0 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGeometry("breakpoints must start at 0 and increase strictly".into()));
        }
        if coordinate == ProfileCoordinate::Normalized && breakpoints[breakpoints.len() - 1] != 1.0 {
            return Err(Error::InvalidGeometry("normalized breakpoints must end at 1".into()));
        }
        let d = values[0].dim();
        if let Some(t) = values.iter().find(|t| t.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: t.dim() });
        }
        Ok(GradedProfile::Table { coordinate, breakpoints, values, interpolation })
    }

    /// Piecewise-constant normalized profile with the layers of `stack`.
    pub fn from_stack(stack: &InterphaseStack) -> Result<Self> {
        let mut breakpoints = vec![0.0];
        let mut z = 0.0;
        let mut values = Vec::new();
        for (t, &f) in stack.conductivities().iter().zip(stack.fractions()) {
            if f == 0.0 {
                continue;
            }
            z += f;
            breakpoints.push(z);
            values.push(t.clone());
        }
        let last = breakpoints.len() - 1;
        breakpoints[last] = 1.0;
        Self::table(ProfileCoordinate::Normalized, breakpoints, values, Interpolation::PiecewiseConstant)
    }

    fn coordinate(&self) -> ProfileCoordinate {
        match self {
            GradedProfile::Rule { coordinate, .. } | GradedProfile::Table { coordinate, .. } => *coordinate,
        }
    }

    /// Conductivity at coordinate `x` (normalized or absolute, as declared).
    pub fn sigma_at(&self, x: f64) -> Result<ConductivityTensor> {
        match self {
            GradedProfile::Rule { sigma, .. } => sigma(x),
            GradedProfile::Table { breakpoints, values, interpolation, .. } => {
                let last = breakpoints.len() - 1;
                let k = match breakpoints.partition_point(|&b| b <= x) {
                    0 => 0,
                    p => (p - 1).min(last - 1),
                };
                match interpolation {
                    Interpolation::PiecewiseConstant => Ok(values[k].clone()),
                    Interpolation::PiecewiseLinear => {
                        let t = ((x - breakpoints[k]) / (breakpoints[k + 1] - breakpoints[k])).clamp(0.0, 1.0);
                        let m = values[k].matrix() * (1.0 - t) + values[k + 1].matrix() * t;
                        ConductivityTensor::new((&m + m.transpose()) * 0.5)
                    }
                }
            }
        }
    }

    /// Through-thickness averages `(1/h) int sigma` and `(1/h) int sigma^-1`
    /// for an interphase of thickness `h`.
    pub fn averages(&self, h: f64, options: &QuadratureOptions) -> Result<(Matrix, Matrix)> {
        let upper = match self.coordinate() {
            ProfileCoordinate::Normalized => 1.0,
            ProfileCoordinate::Absolute => h,
        };
        if upper == 0.0 {
            let s = self.sigma_at(0.0)?;
            return Ok((s.matrix().clone(), s.inverse().clone()));
        }
        if let GradedProfile::Table { breakpoints, values, interpolation: Interpolation::PiecewiseConstant, .. } = self {
            if upper > breakpoints[breakpoints.len() - 1] * (1.0 + 1e-12) {
                return Err(Error::Domain(format!("profile table ends before z = {upper}")));
            }
            // Exact on each constant panel.
            let d = values[0].dim();
            let mut mean = Matrix::zeros(d, d);
            let mut mean_inverse = Matrix::zeros(d, d);
            for (k, t) in values.iter().enumerate() {
                let len = (breakpoints[k + 1].min(upper) - breakpoints[k]).max(0.0);
                mean += t.matrix() * len;
                mean_inverse += t.inverse() * len;
            }
            return Ok((mean / upper, mean_inverse / upper));
        }
        let mut panels: Vec<f64> = match self {
            GradedProfile::Rule { breakpoints, .. } | GradedProfile::Table { breakpoints, .. } => {
                breakpoints.iter().copied().filter(|&b| b > 0.0 && b < upper).collect()
            }
        };
        if let GradedProfile::Table { breakpoints, .. } = self {
            if upper > breakpoints[breakpoints.len() - 1] * (1.0 + 1e-12) {
                return Err(Error::Domain(format!("profile table ends before z = {upper}")));
            }
        }
        panels.insert(0, 0.0);
        panels.push(upper);
        let rule = GaussLegendre::new(options.order.max(2)).map_err(|e| Error::Domain(e.to_string()))?;
        let mut integrator = PanelIntegrator { profile: self, rule: &rule, options, scale: 0.0, worst: 0.0 };
        let mut total: Option<DVector<f64>> = None;
        for w in panels.windows(2) {
            let part = integrator.adaptive(w[0], w[1], 0, options.tolerance * (w[1] - w[0]) / upper)?;
            total = Some(match total {
                None => part,
                Some(t) => t + part,
            });
        }
        let total = total.expect("at least one panel") / upper;
        let d = self.sigma_at(0.0)?.dim();
        let mean = Matrix::from_column_slice(d, d, &total.as_slice()[..d * d]);
        let mean_inverse = Matrix::from_column_slice(d, d, &total.as_slice()[d * d..]);
        Ok((mean, mean_inverse))
    }
}

/// Integrates the stacked `[sigma, sigma^-1]` entries over one panel.
struct PanelIntegrator<'a> {
    profile: &'a GradedProfile,
    rule: &'a GaussLegendre,
    options: &'a QuadratureOptions,
    scale: f64,
    worst: f64,
}

impl PanelIntegrator<'_> {
    fn fixed(&mut self, a: f64, b: f64) -> Result<DVector<f64>> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc: Option<DVector<f64>> = None;
        for &(x, w) in self.rule.as_node_weight_pairs() {
            let s = self.profile.sigma_at(mid + half * x)?;
            let stacked = DVector::from_iterator(
                2 * s.dim() * s.dim(),
                s.matrix().iter().chain(s.inverse().iter()).copied(),
            );
            self.scale = self.scale.max(stacked.amax());
            let term = stacked * (w * half);
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        Ok(acc.expect("quadrature rule has nodes"))
    }

    fn adaptive(&mut self, a: f64, b: f64, depth: u32, tol: f64) -> Result<DVector<f64>> {
        let whole = self.fixed(a, b)?;
        let m = 0.5 * (a + b);
        let halves = self.fixed(a, m)? + self.fixed(m, b)?;
        let err = (&whole - &halves).amax();
        let allowed = tol * self.scale.max(f64::MIN_POSITIVE);
        if err <= allowed {
            return Ok(halves);
        }
        if depth >= self.options.max_depth {
            self.worst = self.worst.max(err);
            return Err(Error::Quadrature { estimate: err, tolerance: allowed });
        }
        Ok(self.adaptive(a, m, depth + 1, 0.5 * tol)? + self.adaptive(m, b, depth + 1, 0.5 * tol)?)
    }
}

/// Graded interphase: the stack means become through-thickness averages of
/// `sigma(z)` and `sigma(z)^-1`. Jumps at the faces are harmless because the
/// quadrature never evaluates the endpoints.
pub fn graded_interphase_delta(
    mesh: &InterfaceMesh,
    sigma1: &ConductivityTensor,
    profile: &GradedProfile,
    side: Option<Side>,
    options: &QuadratureOptions,
) -> Result<DeltaSigmaResult> {
    let mut cache: HashMap<u64, (Matrix, Matrix)> = HashMap::new();
    let normalized = profile.coordinate() == ProfileCoordinate::Normalized;
    interphase_delta(mesh, sigma1, side, |patch| {
        let key = if normalized { 0 } else { patch.thickness().to_bits() };
        if let Some(hit) = cache.get(&key) {
            return Ok(hit.clone());
        }
        let averages = profile.averages(patch.thickness(), options)?;
        if averages.0.nrows() != sigma1.dim() {
            return Err(Error::DimensionMismatch { expected: sigma1.dim(), found: averages.0.nrows() });
        }
        cache.insert(key, averages.clone());
        Ok(averages)
    })
}

/// Applied fields whose quadratic-form values determine a symmetric tensor
/// by polarization: the unit vectors, then `e_i + e_j` for `i < j`.
pub fn polarization_fields(d: usize) -> Vec<FieldVector> {
    let mut out: Vec<FieldVector> = (0..d).map(|i| FieldVector::basis(d, i)).collect();
    for i in 0..d {
        for j in i + 1..d {
            out.push(&FieldVector::basis(d, i) + &FieldVector::basis(d, j));
        }
    }
    out
}

/// Recovers the symmetric `d x d` tensor `D` from samples `v . D v = q` by
/// least squares over the `d(d+1)/2` independent entries.
pub fn assemble_delta_tensor(samples: &[(FieldVector, f64)]) -> Result<Matrix> {
    let d = samples.first().map(|(v, _)| v.dim()).ok_or(Error::RankDeficient { rank: 0, needed: 1 })?;
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let needed = pairs.len();
    let mut a = Matrix::zeros(samples.len(), needed);
    let mut rhs = DVector::zeros(samples.len());
    for (row, (v, q)) in samples.iter().enumerate() {
        if v.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: v.dim() });
        }
        let c = v.as_slice();
        for (col, &(i, j)) in pairs.iter().enumerate() {
            a[(row, col)] = if i == j { c[i] * c[i] } else { 2.0 * c[i] * c[j] };
        }
        rhs[row] = *q;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < needed {
        return Err(Error::RankDeficient { rank, needed });
    }
    let x = svd.solve(&rhs, cutoff).map_err(|e| Error::Domain(e.to_string()))?;
    let mut out = Matrix::zeros(d, d);
    for (col, &(i, j)) in pairs.iter().enumerate() {
        out[(i, j)] = x[col];
        out[(j, i)] = x[col];
    }
    Ok(out)
}

/// Evaluates `evaluator` on the polarization fields and assembles the tensor.
pub fn assemble_with(
    d: usize,
    mut evaluator: impl FnMut(&FieldVector) -> Result<f64>,
) -> Result<DeltaSigmaResult> {
    let samples = polarization_fields(d)
        .into_iter()
        .map(|v| evaluator(&v).map(|q| (v, q)))
        .collect::<Result<Vec<_>>>()?;
    let tensor = assemble_delta_tensor(&samples)?;
    Ok(DeltaSigmaResult {
        quadratic_form_value: samples[0].1,
        tensor: Some(tensor),
        applied_field: Some(samples[0].0.clone()),
        max_thickness_gradient: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_isotropic, SideFields};
    use approx::assert_relative_eq;

    fn v(c: &[f64]) -> FieldVector {
        FieldVector::from_slice(c).unwrap()
    }

    fn iso(s: f64) -> ConductivityTensor {
        make_isotropic(s, 2).unwrap()
    }

    /// Flat interface y = 0.5 in the unit square with exact two-sided fields
    /// for tangential field `et` and normal current `jn`; sigma+ above.
    fn flat_mesh(sp: f64, sm: f64, et: f64, jn: f64, h: f64) -> InterfaceMesh {
        let patches = (0..4)
            .map(|k| {
                let plus = SideFields { e: v(&[et, jn / sp]), j: v(&[sp * et, jn]) };
                let minus = SideFields { e: v(&[et, jn / sm]), j: v(&[sm * et, jn]) };
                InterfacePatch::new(v(&[0.125 + 0.25 * k as f64, 0.5]), v(&[0.0, 1.0]), 0.25)
                    .unwrap()
                    .with_thickness(h)
                    .unwrap()
                    .with_two_sided(plus, minus, 1e-12)
                    .unwrap()
                    .with_one_sided(Side::Plus, v(&[et, 0.0]), v(&[0.0, jn]))
                    .unwrap()
            })
            .collect();
        InterfaceMesh::new(patches, 1.0).unwrap()
    }

    #[test]
    fn zero_shift_and_no_contrast() {
        let mesh = flat_mesh(3.0, 1.0, 0.7, 1.3, 0.1);
        assert_eq!(interface_shift_delta(&mesh, &[0.0; 4]).unwrap().quadratic_form_value, 0.0);
        let same = flat_mesh(2.0, 2.0, 0.7, 1.3, 0.1);
        assert_eq!(interface_shift_delta(&same, &[0.1; 4]).unwrap().quadratic_form_value, 0.0);
        assert_eq!(interface_shift_delta_tn(&same, &iso(2.0), &iso(2.0), None).unwrap().quadratic_form_value, 0.0);
    }

    #[test]
    fn pure_tangential_integrand() {
        let mesh = flat_mesh(3.0, 1.0, 0.7, 0.0, 0.1);
        let r = interface_shift_delta_tn(&mesh, &iso(3.0), &iso(1.0), None).unwrap();
        assert_relative_eq!(r.quadratic_form_value, 0.1 * 2.0 * 0.49, max_relative = 1e-14);
    }

    #[test]
    fn two_forms_agree_and_sides_agree() {
        let mesh = flat_mesh(3.0, 1.5, 0.7, 1.3, 0.05);
        let raw = interface_shift_delta(&mesh, &mesh.thicknesses()).unwrap().quadratic_form_value;
        let tn = interface_shift_delta_tn(&mesh, &iso(3.0), &iso(1.5), None).unwrap().quadratic_form_value;
        let minus = interface_shift_delta_tn(&mesh, &iso(3.0), &iso(1.5), Some(Side::Minus)).unwrap().quadratic_form_value;
        assert_relative_eq!(raw, tn, max_relative = 1e-12);
        assert_relative_eq!(minus, tn, max_relative = 1e-12);
    }

    #[test]
    fn missing_sides_and_lengths() {
        let patch = InterfacePatch::new(v(&[0.0, 0.0]), v(&[1.0, 0.0]), 1.0).unwrap();
        let mesh = InterfaceMesh::new(vec![patch], 1.0).unwrap();
        assert!(matches!(interface_shift_delta(&mesh, &[1.0]), Err(Error::Patch { .. })));
        assert!(matches!(interface_shift_delta(&mesh, &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        let thick = mesh.with_thickness_fn(|_| 0.1).unwrap();
        assert!(matches!(interface_shift_delta_tn(&thick, &iso(1.0), &iso(2.0), None), Err(Error::Patch { .. })));
        assert!(multi_interface_shift(&[mesh], &[]).is_err());
    }

    #[test]
    fn continuity_violation_is_reported() {
        let plus = SideFields { e: v(&[1.0, 1.0]), j: v(&[1.0, 1.0]) };
        let minus = SideFields { e: v(&[1.5, 1.0]), j: v(&[1.5, 1.0]) };
        let patch = InterfacePatch::new(v(&[0.0, 0.0]), v(&[0.0, 1.0]), 1.0)
            .unwrap()
            .with_side(Side::Plus, plus)
            .unwrap()
            .with_side(Side::Minus, minus)
            .unwrap();
        let mesh = InterfaceMesh::new(vec![patch], 1.0).unwrap();
        assert!(interface_shift_delta(&mesh, &[1.0]).is_err());
        let loose = mesh.with_continuity_tolerance(1.0);
        assert!(interface_shift_delta(&loose, &[1.0]).is_ok());
    }

    #[test]
    fn stack_validation_and_means() {
        assert!(InterphaseStack::new(vec![], vec![]).is_err());
        assert!(InterphaseStack::new(vec![iso(1.0), iso(2.0)], vec![0.5, 0.6]).is_err());
        assert!(InterphaseStack::new(vec![iso(1.0)], vec![0.5, 0.5]).is_err());
        let stack = InterphaseStack::new(vec![iso(1.0), iso(4.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(stack.mean()[(0, 0)], 2.5);
        assert_eq!(stack.mean_inverse()[(1, 1)], 0.625);
        assert_eq!(stack.interface_shift_fractions(), vec![1.0, 0.5]);
    }

    #[test]
    fn two_layer_stack_matches_expanded_formula() {
        let mesh = flat_mesh(3.0, 1.0, 0.7, 1.3, 0.02);
        let s1 = iso(3.0);
        let (s2, s3, h2, h3) = (iso(1.7), iso(5.5), 0.3, 0.7);
        let stack = InterphaseStack::new(vec![s2.clone(), s3.clone()], vec![h2, h3]).unwrap();
        let r = multi_interphase_delta(&mesh, &s1, &stack, None).unwrap().quadratic_form_value;
        let (et2, jn2) = (0.49, 1.69);
        let a = h2 * 1.7 + h3 * 5.5 - 3.0;
        let b = h2 / 1.7 + h3 / 5.5 - 1.0 / 3.0;
        assert_relative_eq!(r, 0.02 * (a * et2 - b * jn2), max_relative = 1e-13);
        let single = single_interphase_delta(&mesh, &s1, &s2, None).unwrap().quadratic_form_value;
        let one = InterphaseStack::new(vec![s2], vec![1.0]).unwrap();
        assert_eq!(multi_interphase_delta(&mesh, &s1, &one, None).unwrap().quadratic_form_value, single);
    }

    #[test]
    fn linear_profile_closed_form() {
        let (a, b, h) = (2.0, 3.0, 0.4);
        let profile = GradedProfile::rule(ProfileCoordinate::Absolute, move |z| make_isotropic(a + b * z, 2));
        let (mean, mean_inv) = profile.averages(h, &QuadratureOptions::default()).unwrap();
        assert_relative_eq!(mean[(0, 0)], a + b * h / 2.0, max_relative = 1e-10);
        assert_relative_eq!(mean_inv[(1, 1)], ((a + b * h) / a).ln() / (b * h), max_relative = 1e-10);
        assert_eq!(mean[(0, 1)], 0.0);
    }

    #[test]
    fn undeclared_jump_fails_with_shallow_refinement() {
        let profile = GradedProfile::rule(ProfileCoordinate::Normalized, |s| {
            make_isotropic(if s < 1.0 / 3.0 { 1.0 } else { 100.0 }, 2)
        });
        let shallow = QuadratureOptions { max_depth: 3, ..QuadratureOptions::default() };
        assert!(matches!(profile.averages(1.0, &shallow), Err(Error::Quadrature { .. })));
        if let GradedProfile::Rule { coordinate, sigma, .. } = profile {
            let declared = GradedProfile::Rule { coordinate, sigma, breakpoints: vec![1.0 / 3.0] };
            let (mean, _) = declared.averages(1.0, &shallow).unwrap();
            assert_relative_eq!(mean[(0, 0)], 1.0 / 3.0 + 200.0 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn polarization_recovers_tensor() {
        let truth = Matrix::from_row_slice(3, 3, &[2.0, -0.3, 0.1, -0.3, 1.0, 0.4, 0.1, 0.4, -0.5]);
        let r = assemble_with(3, |e| Ok(e.as_vector().dot(&(&truth * e.as_vector())))).unwrap();
        let t = r.tensor.unwrap();
        assert!((t - &truth).amax() < 1e-13);
        let zero = assemble_with(2, |_| Ok(0.0)).unwrap().tensor.unwrap();
        assert_eq!(zero, Matrix::zeros(2, 2));
        let rank_deficient = [(v(&[1.0, 0.0]), 1.0), (v(&[2.0, 0.0]), 4.0), (v(&[0.0, 1.0]), 1.0)];
        assert!(matches!(assemble_delta_tensor(&rank_deficient), Err(Error::RankDeficient { rank: 2, needed: 3 })));
    }
}
