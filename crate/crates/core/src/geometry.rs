//! Value types shared by the analytic formulas, the shift engine and the
//! periodic solver: conductivity tensors, field vectors and discretized
//! interfaces.
//!
//! The dimension `d` is a runtime quantity (2 or 3). Tensors and vectors are
//! thin wrappers around `nalgebra` dynamic storage.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Tolerance on `|n| = 1` and on the orthogonality of decomposed components.
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Default relative tolerance for cross-side continuity of two-sided fields.
pub const DEFAULT_CONTINUITY_TOLERANCE: f64 = 1e-6;

/// Relative eigenvalue floor used by the positive-definiteness check.
pub const SPD_RELATIVE_FLOOR: f64 = 1e-12;

pub(crate) fn check_dim(d: usize) -> Result<()> {
    match d {
        2 | 3 => Ok(()),
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

fn expect_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// A `d`-component real vector: an electric field, a current, a normal or a
/// point of the period cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector(DVector<f64>);

impl FieldVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("field vector"));
        }
        Ok(Self(DVector::from_vec(components)))
    }

    pub fn from_slice(components: &[f64]) -> Result<Self> {
        Self::new(components.to_vec())
    }

    pub fn zeros(d: usize) -> Self {
        Self(DVector::zeros(d))
    }

    /// Unit vector along `axis`.
    pub fn basis(d: usize, axis: usize) -> Self {
        let mut v = DVector::zeros(d);
        v[axis] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dot(&self, other: &FieldVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, s: f64) -> FieldVector {
        FieldVector(&self.0 * s)
    }
}

impl Add for &FieldVector {
    type Output = FieldVector;
    fn add(self, rhs: &FieldVector) -> FieldVector {
        FieldVector(&self.0 + &rhs.0)
    }
}

impl Sub for &FieldVector {
    type Output = FieldVector;
    fn sub(self, rhs: &FieldVector) -> FieldVector {
        FieldVector(&self.0 - &rhs.0)
    }
}

impl Neg for &FieldVector {
    type Output = FieldVector;
    fn neg(self) -> FieldVector {
        FieldVector(-&self.0)
    }
}

impl Mul<f64> for &FieldVector {
    type Output = FieldVector;
    fn mul(self, rhs: f64) -> FieldVector {
        self.scale(rhs)
    }
}

/// Symmetric positive-definite conductivity of one phase. The inverse
/// (resistivity) is computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityTensor {
    matrix: Matrix,
    inverse: Matrix,
}

impl ConductivityTensor {
    /// Validates symmetry (exact, as stored) and positive definiteness
    /// (smallest eigenvalue above `SPD_RELATIVE_FLOOR` times the largest).
    pub fn new(matrix: Matrix) -> Result<Self> {
        let d = matrix.nrows();
        check_dim(d)?;
        expect_dim(d, matrix.ncols())?;
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("conductivity tensor"));
        }
        for row in 0..d {
            for col in row + 1..d {
                if matrix[(row, col)] != matrix[(col, row)] {
                    return Err(Error::NotSymmetric { row, col });
                }
            }
        }
        let eig = matrix.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        if !(min > 0.0 && min > SPD_RELATIVE_FLOOR * max) {
            return Err(Error::NotPositiveDefinite { min, max });
        }
        let inverse = eig.eigenvectors.clone()
            * Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l))
            * eig.eigenvectors.transpose();
        // Symmetrize to undo rounding in the eigen-reconstruction.
        let inverse = (&inverse + inverse.transpose()) * 0.5;
        Ok(Self { matrix, inverse })
    }

    /// `sigma * I` in dimension `d`.
    pub fn isotropic(sigma: f64, d: usize) -> Result<Self> {
        check_dim(d)?;
        if !sigma.is_finite() {
            return Err(Error::NonFinite("conductivity"));
        }
        if sigma <= 0.0 {
            return Err(Error::NonpositiveConductivity(sigma));
        }
        let matrix = Matrix::identity(d, d) * sigma;
        let inverse = Matrix::identity(d, d) * (1.0 / sigma);
        Ok(Self { matrix, inverse })
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(Matrix::from_diagonal(&DVector::from_row_slice(entries)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        check_dim(d)?;
        for r in rows {
            expect_dim(d, r.len())?;
        }
        Self::new(Matrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    /// `Some(s)` when the tensor is exactly `s * I`.
    pub fn as_scalar(&self) -> Option<f64> {
        let s = self.matrix[(0, 0)];
        let iso = Matrix::identity(self.dim(), self.dim()) * s;
        (self.matrix == iso).then_some(s)
    }

    /// `J = sigma E`.
    pub fn apply(&self, e: &FieldVector) -> Result<FieldVector> {
        expect_dim(self.dim(), e.dim())?;
        Ok(FieldVector(&self.matrix * &e.0))
    }

    /// `E = sigma^-1 J`.
    pub fn apply_inverse(&self, j: &FieldVector) -> Result<FieldVector> {
        expect_dim(self.dim(), j.dim())?;
        Ok(FieldVector(&self.inverse * &j.0))
    }

    pub fn eigenvalue_range(&self) -> (f64, f64) {
        let eig = self.matrix.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    }
}

/// Alias of [`ConductivityTensor::isotropic`].
pub fn make_isotropic(sigma: f64, d: usize) -> Result<ConductivityTensor> {
    ConductivityTensor::isotropic(sigma, d)
}

fn check_unit(n: &FieldVector) -> Result<()> {
    let norm = n.norm();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitNormal(norm));
    }
    Ok(())
}

/// Splits `f` into its tangential and normal parts with respect to the unit
/// normal `n`: `f_n = (f.n) n`, `f_t = f - f_n`.
pub fn decompose_field(f: &FieldVector, n: &FieldVector) -> Result<(FieldVector, FieldVector)> {
    expect_dim(f.dim(), n.dim())?;
    check_unit(n)?;
    let f_n = n.scale(f.dot(n));
    let f_t = f - &f_n;
    Ok((f_t, f_n))
}

/// `v . sigma v`.
pub fn quadratic_form(sigma: &ConductivityTensor, v: &FieldVector) -> Result<f64> {
    symmetric_form(sigma.matrix(), v, v)
}

/// `a . m b` for an arbitrary square matrix.
pub fn symmetric_form(m: &Matrix, a: &FieldVector, b: &FieldVector) -> Result<f64> {
    expect_dim(m.nrows(), a.dim())?;
    expect_dim(m.nrows(), b.dim())?;
    Ok(a.0.dot(&(m * &b.0)))
}

/// Which side of an interface a sample belongs to. The normal points from the
/// `Plus` side toward the `Minus` side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }
}

/// Raw `(E, J)` sample on one side of an interface.
#[derive(Debug, Clone, PartialEq)]
pub struct SideFields {
    pub e: FieldVector,
    pub j: FieldVector,
}

/// Tangential electric field and normal current on a declared side.
#[derive(Debug, Clone, PartialEq)]
pub struct OneSided {
    pub side: Side,
    pub e_t: FieldVector,
    pub j_n: FieldVector,
}

/// One quadrature point of a discretized interface.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfacePatch {
    position: FieldVector,
    normal: FieldVector,
    weight: f64,
    thickness: f64,
    shift_amplitude: f64,
    plus: Option<SideFields>,
    minus: Option<SideFields>,
    one_sided: Option<OneSided>,
}

impl InterfacePatch {
    pub fn new(position: FieldVector, normal: FieldVector, weight: f64) -> Result<Self> {
        check_dim(position.dim())?;
        expect_dim(position.dim(), normal.dim())?;
        check_unit(&normal)?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidGeometry(format!("patch weight {weight} must be finite and >= 0")));
        }
        Ok(Self {
            position,
            normal,
            weight,
            thickness: 0.0,
            shift_amplitude: 0.0,
            plus: None,
            minus: None,
            one_sided: None,
        })
    }

    pub fn with_thickness(mut self, h: f64) -> Result<Self> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::InvalidGeometry(format!("thickness {h} must be finite and >= 0")));
        }
        self.thickness = h;
        Ok(self)
    }

    pub fn with_shift(mut self, gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::NonFinite("shift amplitude"));
        }
        self.shift_amplitude = gamma;
        Ok(self)
    }

    /// Attaches raw fields on one side without any continuity check.
    pub fn with_side(mut self, side: Side, fields: SideFields) -> Result<Self> {
        self.set_side(side, fields)?;
        Ok(self)
    }

    /// Attaches both sides and checks tangential-E / normal-J continuity to
    /// relative tolerance `tol`.
    pub fn with_two_sided(self, plus: SideFields, minus: SideFields, tol: f64) -> Result<Self> {
        let patch = self.with_side(Side::Plus, plus)?.with_side(Side::Minus, minus)?;
        if let Some((e_mis, j_mis)) = patch.continuity_mismatch() {
            if e_mis > tol || j_mis > tol {
                return Err(Error::InvalidGeometry(format!(
                    "two-sided fields violate continuity (E_t mismatch {e_mis:e}, J_n mismatch {j_mis:e})"
                )));
            }
        }
        Ok(patch)
    }

    /// Declares one-sided `(E_t, J_n)`; `E_t` must be tangential and `J_n`
    /// normal to within `UNIT_TOLERANCE` (relative to their magnitudes).
    pub fn with_one_sided(mut self, side: Side, e_t: FieldVector, j_n: FieldVector) -> Result<Self> {
        let d = self.dim();
        expect_dim(d, e_t.dim())?;
        expect_dim(d, j_n.dim())?;
        let tangential_leak = e_t.dot(&self.normal).abs();
        if tangential_leak > UNIT_TOLERANCE * e_t.norm().max(1.0) {
            return Err(Error::InvalidGeometry(format!("E_t has normal component {tangential_leak:e}")));
        }
        let (j_leak, _) = decompose_field(&j_n, &self.normal)?;
        if j_leak.norm() > UNIT_TOLERANCE * j_n.norm().max(1.0) {
            return Err(Error::InvalidGeometry(format!(
                "J_n has tangential component {:e}",
                j_leak.norm()
            )));
        }
        self.one_sided = Some(OneSided { side, e_t, j_n });
        Ok(self)
    }

    pub(crate) fn set_side(&mut self, side: Side, fields: SideFields) -> Result<()> {
        expect_dim(self.dim(), fields.e.dim())?;
        expect_dim(self.dim(), fields.j.dim())?;
        match side {
            Side::Plus => self.plus = Some(fields),
            Side::Minus => self.minus = Some(fields),
        }
        Ok(())
    }

    pub(crate) fn set_one_sided(&mut self, one_sided: OneSided) {
        self.one_sided = Some(one_sided);
    }

    pub fn dim(&self) -> usize {
        self.position.dim()
    }

    pub fn position(&self) -> &FieldVector {
        &self.position
    }

    pub fn normal(&self) -> &FieldVector {
        &self.normal
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn thickness(&self) -> f64 {
        self.thickness
    }

    pub fn shift_amplitude(&self) -> f64 {
        self.shift_amplitude
    }

    pub fn side(&self, side: Side) -> Option<&SideFields> {
        match side {
            Side::Plus => self.plus.as_ref(),
            Side::Minus => self.minus.as_ref(),
        }
    }

    pub fn one_sided(&self) -> Option<&OneSided> {
        self.one_sided.as_ref()
    }

    /// `(E_t, J_n)` on the requested side: taken from the declared one-sided
    /// data when it matches (or when `side` is `None`), otherwise decomposed
    /// from the raw fields of that side.
    pub fn tangential_normal(&self, side: Option<Side>) -> Result<(FieldVector, FieldVector)> {
        match (side, &self.one_sided) {
            (None, Some(os)) => Ok((os.e_t.clone(), os.j_n.clone())),
            (Some(s), Some(os)) if os.side == s => Ok((os.e_t.clone(), os.j_n.clone())),
            (Some(s), _) => {
                let fields = self.side(s).ok_or_else(|| Error::Domain(format!("no {s:?} side fields")))?;
                let (e_t, _) = decompose_field(&fields.e, &self.normal)?;
                let (_, j_n) = decompose_field(&fields.j, &self.normal)?;
                Ok((e_t, j_n))
            }
            (None, None) => Err(Error::Domain("no declared side".into())),
        }
    }

    /// Relative cross-side mismatch of tangential E and of normal J, or `None`
    /// when one side is missing.
    pub fn continuity_mismatch(&self) -> Option<(f64, f64)> {
        let (p, m) = (self.plus.as_ref()?, self.minus.as_ref()?);
        let n = &self.normal;
        let (et_p, _) = decompose_field(&p.e, n).ok()?;
        let (et_m, _) = decompose_field(&m.e, n).ok()?;
        let e_scale = p.e.norm().max(m.e.norm());
        let j_scale = p.j.norm().max(m.j.norm());
        let e_mis = relative(( &et_p - &et_m).norm(), e_scale);
        let j_mis = relative((p.j.dot(n) - m.j.dot(n)).abs(), j_scale);
        Some((e_mis, j_mis))
    }
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// A discretized interface together with the period-cell volume that turns
/// surface sums into cell averages.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceMesh {
    patches: Vec<InterfacePatch>,
    total_area: f64,
    cell_volume: f64,
    continuity_tolerance: f64,
}

impl InterfaceMesh {
    pub fn new(patches: Vec<InterfacePatch>, cell_volume: f64) -> Result<Self> {
        if !(cell_volume.is_finite() && cell_volume > 0.0) {
            return Err(Error::InvalidGeometry(format!("cell volume {cell_volume} must be > 0")));
        }
        if let Some(first) = patches.first() {
            let d = first.dim();
            for (index, p) in patches.iter().enumerate() {
                if p.dim() != d {
                    return Err(Error::Patch { index, reason: format!("dimension {} != {d}", p.dim()) });
                }
            }
        }
        let total_area = patches.iter().map(|p| p.weight).sum();
        Ok(Self { patches, total_area, cell_volume, continuity_tolerance: DEFAULT_CONTINUITY_TOLERANCE })
    }

    pub fn with_continuity_tolerance(mut self, tol: f64) -> Self {
        self.continuity_tolerance = tol;
        self
    }

    pub fn patches(&self) -> &[InterfacePatch] {
        &self.patches
    }

    pub(crate) fn patches_mut(&mut self) -> &mut [InterfacePatch] {
        &mut self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.patches.first().map(InterfacePatch::dim)
    }

    pub fn total_area(&self) -> f64 {
        self.total_area
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn continuity_tolerance(&self) -> f64 {
        self.continuity_tolerance
    }

    /// Returns a copy with every patch thickness replaced by `h(position)`.
    pub fn with_thickness_fn(&self, h: impl Fn(&FieldVector) -> f64) -> Result<Self> {
        let patches = self
            .patches
            .iter()
            .map(|p| p.clone().with_thickness(h(&p.position)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patches, ..self.clone() })
    }

    /// Returns a copy with every shift amplitude replaced by `gamma(position)`.
    pub fn with_shift_fn(&self, gamma: impl Fn(&FieldVector) -> f64) -> Result<Self> {
        let patches = self
            .patches
            .iter()
            .map(|p| p.clone().with_shift(gamma(&p.position)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patches, ..self.clone() })
    }

    /// Per-patch thicknesses in mesh order.
    pub fn thicknesses(&self) -> Vec<f64> {
        self.patches.iter().map(|p| p.thickness).collect()
    }

    /// Largest `|h(x) - h(y)| / |x - y|` over nearest-neighbour patch pairs;
    /// a diagnostic for the slowly-varying-thickness assumption.
    pub fn max_thickness_gradient(&self) -> f64 {
        let points: Vec<&[f64]> = self.patches.iter().map(|p| p.position.as_slice()).collect();
        let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let mut worst = 0.0_f64;
        for (i, pi) in points.iter().enumerate() {
            let nearest = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, pj)| (j, dist2(pi, pj)))
                .filter(|&(_, d2)| d2 > 0.0)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, d2)) = nearest {
                let dh = (self.patches[j].thickness - self.patches[i].thickness).abs();
                worst = worst.max(dh / d2.sqrt());
            }
        }
        worst
    }

    /// Relative L2 cross-side mismatch of `(E_t, J_n)` over patches carrying
    /// both sides, weighted by patch area.
    pub fn continuity_residual(&self) -> Option<(f64, f64)> {
        let (mut de, mut se, mut dj, mut sj) = (0.0, 0.0, 0.0, 0.0);
        let mut any = false;
        for p in &self.patches {
            let (Some(a), Some(b)) = (&p.plus, &p.minus) else { continue };
            any = true;
            let n = &p.normal;
            let (et_a, _) = decompose_field(&a.e, n).ok()?;
            let (et_b, _) = decompose_field(&b.e, n).ok()?;
            let (jn_a, jn_b) = (a.j.dot(n), b.j.dot(n));
            de += p.weight * (&et_a - &et_b).norm().powi(2);
            se += p.weight * 0.5 * (et_a.norm().powi(2) + et_b.norm().powi(2));
            dj += p.weight * (jn_a - jn_b).powi(2);
            sj += p.weight * 0.5 * (jn_a * jn_a + jn_b * jn_b);
        }
        any.then(|| ((de / se.max(f64::MIN_POSITIVE)).sqrt(), (dj / sj.max(f64::MIN_POSITIVE)).sqrt()))
    }

    /// `n` equal-arc patches on a circle in 2D. The normal points outward, so
    /// the disk interior is the `Plus` side.
    pub fn circle(center: [f64; 2], radius: f64, n: usize, cell_volume: f64) -> Result<Self> {
        if !(radius > 0.0) || n == 0 {
            return Err(Error::InvalidGeometry("circle needs radius > 0 and n > 0".into()));
        }
        let weight = 2.0 * PI * radius / n as f64;
        let patches = (0..n)
            .map(|k| {
                let phi = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                let (s, c) = phi.sin_cos();
                InterfacePatch::new(
                    FieldVector::new(vec![center[0] + radius * c, center[1] + radius * s])?,
                    FieldVector::new(vec![c, s])?,
                    weight,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(patches, cell_volume)
    }

    /// Sphere surface in 3D with Gauss-Legendre nodes in `cos(theta)` and
    /// uniform azimuths. The normal points outward (interior is `Plus`).
    pub fn sphere(center: [f64; 3], radius: f64, n_polar: usize, n_azimuth: usize, cell_volume: f64) -> Result<Self> {
        if !(radius > 0.0) || n_polar < 2 || n_azimuth == 0 {
            return Err(Error::InvalidGeometry("sphere needs radius > 0, n_polar >= 2, n_azimuth > 0".into()));
        }
        let rule = GaussLegendre::new(n_polar).map_err(|e| Error::InvalidGeometry(e.to_string()))?;
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut patches = Vec::with_capacity(n_polar * n_azimuth);
        for &(mu, w) in rule.as_node_weight_pairs() {
            let st = (1.0 - mu * mu).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = dphi * (k as f64 + 0.5);
                let (sp, cp) = phi.sin_cos();
                let n = vec![st * cp, st * sp, mu];
                let x = (0..3).map(|i| center[i] + radius * n[i]).collect();
                patches.push(InterfacePatch::new(
                    FieldVector::new(x)?,
                    FieldVector::new(n)?,
                    radius * radius * w * dphi,
                )?);
            }
        }
        Self::new(patches, cell_volume)
    }

    /// Flat interface `x[axis] = position` spanning the period cell, split into
    /// `per_axis` patches along each in-plane axis. `normal_sign` selects the
    /// normal `+e_axis` or `-e_axis`.
    pub fn plane(lengths: &[f64], axis: usize, position: f64, normal_sign: f64, per_axis: usize) -> Result<Self> {
        let d = lengths.len();
        check_dim(d)?;
        if axis >= d || per_axis == 0 || lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidGeometry("invalid plane description".into()));
        }
        let in_plane: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
        let weight: f64 = in_plane.iter().map(|&a| lengths[a] / per_axis as f64).product();
        let mut normal = vec![0.0; d];
        normal[axis] = normal_sign.signum();
        let count = per_axis.pow(in_plane.len() as u32);
        let patches = (0..count)
            .map(|mut flat| {
                let mut x = vec![0.0; d];
                x[axis] = position;
                for &a in &in_plane {
                    let k = flat % per_axis;
                    flat /= per_axis;
                    x[a] = lengths[a] * (k as f64 + 0.5) / per_axis as f64;
                }
                InterfacePatch::new(FieldVector::new(x)?, FieldVector::new(normal.clone())?, weight)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(patches, lengths.iter().product())
    }
}
