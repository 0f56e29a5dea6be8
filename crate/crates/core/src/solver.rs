//! Periodic reference solver.
//!
//! Solves `div(sigma(x) (E0 + grad u)) = 0` on a voxelized period cell with
//! the fixed-point Lippmann-Schwinger scheme
//! `E <- E0 - Gamma0 * ((sigma - sigma0) E)`, `sigma0 = (lambda_min + lambda_max) / 2`.
//! Fields live at voxel centers and are stored interleaved
//! (`field[voxel * d + component]`) with voxels in row-major order, axis 0
//! slowest.
//!
//! # Binary layout
//!
//! Cells and solutions are exported as
//!
//! 1. the 8 ASCII bytes `IPHASE01`,
//! 2. a little-endian `u64` holding the byte length of a UTF-8 JSON header,
//! 3. the JSON header, whose `arrays` entry lists `{name, len}` in order,
//! 4. the listed arrays as contiguous little-endian `f64` values.
//!
//! A cell stores one array `phase_map` (phase indices as floats). A solution
//! stores `potential` (`N` values), `e` and `j` (`N * d` values each).

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    check_dim, decompose_field, ConductivityTensor, FieldVector, InterfaceMesh, Matrix, OneSided, Side, SideFields,
};
use crate::summation::CompensatedSum;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
/// Default sampling distance from the interface, in grid cells.
pub const DEFAULT_OFFSET: f64 = 1.5;
pub const MIN_GRID: usize = 4;

const MAGIC: &[u8; 8] = b"IPHASE01";
const FORMAT_VERSION: u32 = 1;

/// Analytic region whose inside is assigned one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// `lower <= x[axis] < upper`, repeated periodically along `axis`.
    Slab { axis: usize, lower: f64, upper: f64 },
    /// Disk (2D) or ball (3D), nearest periodic image. `radius <= min(L) / 2`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box `lower <= x < upper`, periodic per axis.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

fn nearest_image(dx: f64, l: f64) -> f64 {
    let t = dx.rem_euclid(l);
    if t >= 0.5 * l {
        t - l
    } else {
        t
    }
}

/// Signed distance to a periodic slab and the sign of the outward normal.
fn slab_distance(x: f64, lower: f64, upper: f64, l: f64) -> (f64, f64) {
    let w = upper - lower;
    let t = (x - lower).rem_euclid(l);
    if t < w {
        if t < w - t {
            (-t, -1.0)
        } else {
            (-(w - t), 1.0)
        }
    } else {
        let (a, b) = (t - w, l - t);
        if a < b {
            (a, 1.0)
        } else {
            (b, -1.0)
        }
    }
}

impl Region {
    fn validate(&self, lengths: &[f64]) -> Result<()> {
        let d = lengths.len();
        let bad = |msg: &str| Err(Error::InvalidGeometry(msg.to_string()));
        match self {
            Region::Slab { axis, lower, upper } => {
                if *axis >= d {
                    return Err(Error::DimensionMismatch { expected: d, found: axis + 1 });
                }
                let w = upper - lower;
                if !(lower.is_finite() && upper.is_finite() && w > 0.0 && w <= lengths[*axis]) {
                    return bad("slab needs 0 < upper - lower <= cell length");
                }
            }
            Region::Ball { center, radius } => {
                if center.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: center.len() });
                }
                let half = 0.5 * lengths.iter().copied().fold(f64::INFINITY, f64::min);
                if center.iter().any(|c| !c.is_finite()) || !(*radius > 0.0 && *radius <= half) {
                    return bad("ball needs a finite center and 0 < radius <= min(L)/2");
                }
            }
            Region::Box { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: lower.len().min(upper.len()) });
                }
                for a in 0..d {
                    let w = upper[a] - lower[a];
                    if !(lower[a].is_finite() && upper[a].is_finite() && w > 0.0 && w <= lengths[a]) {
                        return bad("box needs 0 < upper - lower <= cell length on every axis");
                    }
                }
            }
        }
        Ok(())
    }

    /// Signed distance (negative inside) and outward unit normal at `x`.
    /// Exact for slabs and balls; for boxes the distance is exact inside and
    /// an underestimate outside.
    pub fn signed_distance(&self, x: &[f64], lengths: &[f64]) -> (f64, Vec<f64>) {
        let d = lengths.len();
        match self {
            Region::Slab { axis, lower, upper } => {
                let (phi, s) = slab_distance(x[*axis], *lower, *upper, lengths[*axis]);
                let mut n = vec![0.0; d];
                n[*axis] = s;
                (phi, n)
            }
            Region::Ball { center, radius } => {
                let r: Vec<f64> = (0..d).map(|a| nearest_image(x[a] - center[a], lengths[a])).collect();
                let rho = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                let n = if rho > 0.0 {
                    r.iter().map(|v| v / rho).collect()
                } else {
                    let mut e = vec![0.0; d];
                    e[0] = 1.0;
                    e
                };
                (rho - radius, n)
            }
            Region::Box { lower, upper } => {
                let mut best = (f64::NEG_INFINITY, 0, 1.0);
                for a in 0..d {
                    let (phi, s) = slab_distance(x[a], lower[a], upper[a], lengths[a]);
                    if phi > best.0 {
                        best = (phi, a, s);
                    }
                }
                let mut n = vec![0.0; d];
                n[best.1] = best.2;
                (best.0, n)
            }
        }
    }

    pub fn contains(&self, x: &[f64], lengths: &[f64]) -> bool {
        self.signed_distance(x, lengths).0 < 0.0
    }
}

/// Region assigned to `phase`. Later level sets override earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub region: Region,
    pub phase: usize,
}

/// Analytic description of a cell: `background` fills everything outside
/// the level sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub background: usize,
    pub level_sets: Vec<LevelSet>,
    /// Interface voxels get the laminate mixture of the two adjacent phases,
    /// with the inside fraction taken from the signed distance at the voxel
    /// center. Off means the phase at the voxel center.
    #[serde(default)]
    pub smoothed: bool,
}

impl CellGeometry {
    pub fn phase_at(&self, x: &[f64], lengths: &[f64]) -> usize {
        self.level_sets
            .iter()
            .rev()
            .find(|ls| ls.region.contains(x, lengths))
            .map_or(self.background, |ls| ls.phase)
    }
}

/// Phase conductivity given as a scalar or as a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseSpec {
    Scalar(f64),
    Tensor(Vec<Vec<f64>>),
}

impl PhaseSpec {
    pub fn to_tensor(&self, d: usize) -> Result<ConductivityTensor> {
        match self {
            PhaseSpec::Scalar(s) => ConductivityTensor::isotropic(*s, d),
            PhaseSpec::Tensor(rows) => {
                let t = ConductivityTensor::from_rows(rows)?;
                if t.dim() != d {
                    return Err(Error::DimensionMismatch { expected: d, found: t.dim() });
                }
                Ok(t)
            }
        }
    }

    fn from_tensor(t: &ConductivityTensor) -> Self {
        match t.as_scalar() {
            Some(s) => PhaseSpec::Scalar(s),
            None => PhaseSpec::Tensor(matrix_rows(t.matrix())),
        }
    }
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// JSON description of a level-set cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDescription {
    pub shape: Vec<usize>,
    pub lengths: Vec<f64>,
    pub phases: Vec<PhaseSpec>,
    #[serde(flatten)]
    pub geometry: CellGeometry,
}

/// Voxelized period cell.
#[derive(Debug, Clone)]
pub struct PeriodicCell {
    shape: Vec<usize>,
    lengths: Vec<f64>,
    phases: Vec<ConductivityTensor>,
    phase_map: Vec<usize>,
    geometry: Option<CellGeometry>,
    /// Row-major `d x d` voxel tensors; the first entries are the phases.
    materials: Vec<Vec<f64>>,
    voxel_material: Vec<usize>,
}

fn validate_grid(shape: &[usize], lengths: &[f64]) -> Result<usize> {
    let d = shape.len();
    check_dim(d)?;
    if lengths.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: lengths.len() });
    }
    if let Some(n) = shape.iter().find(|&&n| n < MIN_GRID) {
        return Err(Error::InvalidGeometry(format!("grid size {n} below minimum {MIN_GRID}")));
    }
    if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidGeometry("cell lengths must be finite and positive".into()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::InvalidGeometry("grid too large".into()))
}

fn validate_phases(phases: &[ConductivityTensor], d: usize) -> Result<()> {
    if phases.is_empty() {
        return Err(Error::InvalidGeometry("phase table is empty".into()));
    }
    match phases.iter().find(|p| p.dim() != d) {
        Some(p) => Err(Error::DimensionMismatch { expected: d, found: p.dim() }),
        None => Ok(()),
    }
}

fn flatten(m: &Matrix) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

/// Effective tensor of a laminate with unit normal `n`; `layers` holds
/// `(fraction, tensor)` pairs with fractions summing to one.
pub fn laminate_mix(layers: &[(f64, &Matrix)], n: &[f64]) -> Matrix {
    let d = n.len();
    let nv = nalgebra::DVector::from_column_slice(n);
    let mut mean = Matrix::zeros(d, d);
    let mut outer = Matrix::zeros(d, d);
    let mut flux = nalgebra::DVector::zeros(d);
    let mut inv = 0.0;
    for &(f, s) in layers {
        let sn = s * &nv;
        let nsn = nv.dot(&sn);
        mean += s * f;
        outer += &sn * sn.transpose() * (f / nsn);
        flux += &sn * (f / nsn);
        inv += f / nsn;
    }
    let m = mean - outer + &flux * flux.transpose() / inv;
    (&m + m.transpose()) * 0.5
}

impl PeriodicCell {
    pub fn from_phase_map(
        shape: Vec<usize>,
        lengths: Vec<f64>,
        phase_map: Vec<usize>,
        phases: Vec<ConductivityTensor>,
    ) -> Result<Self> {
        let n = validate_grid(&shape, &lengths)?;
        validate_phases(&phases, shape.len())?;
        if phase_map.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: phase_map.len() });
        }
        if let Some(p) = phase_map.iter().find(|&&p| p >= phases.len()) {
            return Err(Error::InvalidGeometry(format!("voxel phase {p} not in phase table")));
        }
        let materials = phases.iter().map(|p| flatten(p.matrix())).collect();
        let voxel_material = phase_map.clone();
        Ok(Self { shape, lengths, phases, phase_map, geometry: None, materials, voxel_material })
    }

    pub fn from_geometry(
        shape: Vec<usize>,
        lengths: Vec<f64>,
        phases: Vec<ConductivityTensor>,
        geometry: CellGeometry,
    ) -> Result<Self> {
        let n = validate_grid(&shape, &lengths)?;
        let d = shape.len();
        validate_phases(&phases, d)?;
        if geometry.background >= phases.len() {
            return Err(Error::InvalidGeometry("background phase not in phase table".into()));
        }
        for ls in &geometry.level_sets {
            if ls.phase >= phases.len() {
                return Err(Error::InvalidGeometry(format!("level-set phase {} not in phase table", ls.phase)));
            }
            ls.region.validate(&lengths)?;
        }
        let spacing: Vec<f64> = (0..d).map(|a| lengths[a] / shape[a] as f64).collect();
        let mut cell = Self {
            shape,
            lengths,
            materials: phases.iter().map(|p| flatten(p.matrix())).collect(),
            phases,
            phase_map: Vec::with_capacity(n),
            voxel_material: Vec::with_capacity(n),
            geometry: None,
        };
        for v in 0..n {
            let x = cell.center(v);
            let phase = geometry.phase_at(&x, &cell.lengths);
            cell.phase_map.push(phase);
            let material = if geometry.smoothed {
                cell.mixed_material(&geometry, &x, &spacing)?.unwrap_or(phase)
            } else {
                phase
            };
            cell.voxel_material.push(material);
        }
        cell.geometry = Some(geometry);
        Ok(cell)
    }

    /// Appends the laminate mixture for an interface voxel centered at `x`;
    /// `None` for voxels that are not cut by the nearest interface.
    fn mixed_material(&mut self, geometry: &CellGeometry, x: &[f64], spacing: &[f64]) -> Result<Option<usize>> {
        let Some((phi, n)) = geometry
            .level_sets
            .iter()
            .map(|ls| ls.region.signed_distance(x, &self.lengths))
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        else {
            return Ok(None);
        };
        let width: f64 = n.iter().zip(spacing).map(|(c, h)| c.abs() * h).sum();
        if phi.abs() >= 0.5 * width {
            return Ok(None);
        }
        let probe = |dist: f64| -> Vec<f64> { x.iter().zip(&n).map(|(xi, ni)| xi + dist * ni).collect() };
        let inside = geometry.phase_at(&probe(-(phi.max(0.0) + 0.5 * width)), &self.lengths);
        let outside = geometry.phase_at(&probe((-phi).max(0.0) + 0.5 * width), &self.lengths);
        if inside == outside {
            return Ok(None);
        }
        let f = (0.5 - phi / width).clamp(0.0, 1.0);
        let mixed = laminate_mix(
            &[(f, self.phases[inside].matrix()), (1.0 - f, self.phases[outside].matrix())],
            &n,
        );
        // Rejects mixtures that lost definiteness to roundoff.
        ConductivityTensor::new(mixed.clone())?;
        self.materials.push(flatten(&mixed));
        Ok(Some(self.materials.len() - 1))
    }

    pub fn from_description(desc: &CellDescription) -> Result<Self> {
        let d = desc.shape.len();
        check_dim(d)?;
        let phases = desc.phases.iter().map(|p| p.to_tensor(d)).collect::<Result<Vec<_>>>()?;
        Self::from_geometry(desc.shape.clone(), desc.lengths.clone(), phases, desc.geometry.clone())
    }

    /// Level-set description, when the cell was built from one.
    pub fn description(&self) -> Option<CellDescription> {
        self.geometry.as_ref().map(|g| CellDescription {
            shape: self.shape.clone(),
            lengths: self.lengths.clone(),
            phases: self.phases.iter().map(PhaseSpec::from_tensor).collect(),
            geometry: g.clone(),
        })
    }

    pub fn homogeneous(shape: Vec<usize>, lengths: Vec<f64>, sigma: ConductivityTensor) -> Result<Self> {
        let geometry = CellGeometry { background: 0, level_sets: Vec::new(), smoothed: false };
        Self::from_geometry(shape, lengths, vec![sigma], geometry)
    }

    /// Two-phase laminate: phase 0 (`a`) fills `0 <= x[axis] < fraction * L`,
    /// phase 1 (`b`) the rest. The interfaces have normal `e_axis`.
    pub fn laminate(
        shape: Vec<usize>,
        lengths: Vec<f64>,
        axis: usize,
        fraction: f64,
        a: ConductivityTensor,
        b: ConductivityTensor,
    ) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidFractions(format!("laminate fraction {fraction} outside (0, 1)")));
        }
        let l = *lengths.get(axis).ok_or(Error::DimensionMismatch { expected: lengths.len(), found: axis + 1 })?;
        let geometry = CellGeometry {
            background: 1,
            level_sets: vec![LevelSet { region: Region::Slab { axis, lower: 0.0, upper: fraction * l }, phase: 0 }],
            smoothed: false,
        };
        Self::from_geometry(shape, lengths, vec![a, b], geometry)
    }

    /// Disk (2D) or ball (3D) of phase 0 centered in the cell, in a matrix of
    /// phase 1.
    pub fn centered_inclusion(
        shape: Vec<usize>,
        lengths: Vec<f64>,
        radius: f64,
        inside: ConductivityTensor,
        outside: ConductivityTensor,
    ) -> Result<Self> {
        let center = lengths.iter().map(|l| 0.5 * l).collect();
        let geometry = CellGeometry {
            background: 1,
            level_sets: vec![LevelSet { region: Region::Ball { center, radius }, phase: 0 }],
            smoothed: false,
        };
        Self::from_geometry(shape, lengths, vec![inside, outside], geometry)
    }

    /// 2D checkerboard on an `n x n` grid of side `length`: phase 0 (`a`) in
    /// the lower-left and upper-right quarters.
    pub fn checkerboard(n: usize, length: f64, a: ConductivityTensor, b: ConductivityTensor) -> Result<Self> {
        let h = 0.5 * length;
        let square = |lo: f64| LevelSet { region: Region::Box { lower: vec![lo, lo], upper: vec![lo + h, lo + h] }, phase: 0 };
        let geometry = CellGeometry { background: 1, level_sets: vec![square(0.0), square(h)], smoothed: false };
        Self::from_geometry(vec![n, n], vec![length, length], vec![a, b], geometry)
    }

    /// Rebuilds a level-set cell with smoothed voxelization switched on or off.
    pub fn with_smoothing(self, smoothed: bool) -> Result<Self> {
        let Some(mut geometry) = self.geometry else {
            return Err(Error::InvalidGeometry("smoothing needs a level-set cell".into()));
        };
        geometry.smoothed = smoothed;
        Self::from_geometry(self.shape, self.lengths, self.phases, geometry)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.lengths.iter().zip(&self.shape).map(|(l, &n)| l / n as f64).collect()
    }

    pub fn voxel_count(&self) -> usize {
        self.phase_map.len()
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn phases(&self) -> &[ConductivityTensor] {
        &self.phases
    }

    pub fn phase_map(&self) -> &[usize] {
        &self.phase_map
    }

    pub fn geometry(&self) -> Option<&CellGeometry> {
        self.geometry.as_ref()
    }

    /// Number of voxels holding a laminate mixture.
    pub fn mixed_voxel_count(&self) -> usize {
        self.voxel_material.iter().filter(|&&m| m >= self.phases.len()).count()
    }

    /// Volume fraction of each phase by voxel-center assignment.
    pub fn phase_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.phases.len()];
        for &p in &self.phase_map {
            counts[p] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.voxel_count() as f64).collect()
    }

    /// Conductivity used at a voxel.
    pub fn voxel_tensor(&self, voxel: usize) -> Matrix {
        let d = self.dim();
        Matrix::from_row_slice(d, d, &self.materials[self.voxel_material[voxel]])
    }

    pub fn multi_index(&self, mut voxel: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = voxel % self.shape[a];
            voxel /= self.shape[a];
        }
        idx
    }

    /// Position of a voxel center.
    pub fn center(&self, voxel: usize) -> Vec<f64> {
        self.multi_index(voxel)
            .iter()
            .enumerate()
            .map(|(a, &i)| (i as f64 + 0.5) * self.lengths[a] / self.shape[a] as f64)
            .collect()
    }

    /// Smallest and largest eigenvalue over the phases present.
    fn eigen_bounds(&self) -> (f64, f64) {
        let mut present = vec![false; self.phases.len()];
        for &p in &self.phase_map {
            present[p] = true;
        }
        self.phases
            .iter()
            .zip(present)
            .filter(|(_, used)| *used)
            .map(|(p, _)| p.eigenvalue_range())
            .fold((f64::INFINITY, 0.0), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
    }
}

/// Discretization of the periodic Green operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenOperator {
    /// Exact Fourier multipliers `i xi`, Nyquist modes dropped.
    Continuous,
    /// Rotated finite-difference multipliers; no Gibbs ringing at interfaces.
    #[default]
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on the relative gradient part of the current, `||P J|| / ||J||`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub green: GreenOperator,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, max_iterations: DEFAULT_MAX_ITERATIONS, green: GreenOperator::default() }
    }
}

impl SolverOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self { tolerance, ..Self::default() }
    }
}

/// Equilibrium fields of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCellSolution {
    shape: Vec<usize>,
    lengths: Vec<f64>,
    applied_field: FieldVector,
    potential: Vec<f64>,
    e: Vec<f64>,
    j: Vec<f64>,
    residual: f64,
    history: Vec<f64>,
    mean_current: FieldVector,
}

impl PeriodicCellSolution {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn applied_field(&self) -> &FieldVector {
        &self.applied_field
    }

    /// Periodic fluctuation `u` with `E = E0 + grad u` spectrally.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn j(&self) -> &[f64] {
        &self.j
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }

    /// `<J>`, the column of the effective tensor for the applied field.
    pub fn effective_column(&self) -> &FieldVector {
        &self.mean_current
    }

    pub fn mean_field(&self) -> Vec<f64> {
        component_means(&self.e, self.dim())
    }

    /// `<E . J>`.
    pub fn energy(&self) -> f64 {
        let n = self.e.len() / self.dim();
        self.e.iter().zip(&self.j).map(|(a, b)| a * b).collect::<CompensatedSum>().value() / n as f64
    }

    pub fn fields_at_voxel(&self, voxel: usize) -> (&[f64], &[f64]) {
        let d = self.dim();
        (&self.e[voxel * d..(voxel + 1) * d], &self.j[voxel * d..(voxel + 1) * d])
    }

    /// Multilinear periodic interpolation of `E` and `J` from voxel centers.
    pub fn interpolate(&self, point: &[f64]) -> Result<SideFields> {
        let d = self.dim();
        if point.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: point.len() });
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("interpolation point"));
        }
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let n = self.shape[a];
            let u = point[a] * n as f64 / self.lengths[a] - 0.5;
            let i = u.floor();
            frac[a] = u - i;
            base[a] = (i as i64).rem_euclid(n as i64) as usize;
        }
        let mut e = vec![0.0; d];
        let mut j = vec![0.0; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut voxel = 0;
            for a in 0..d {
                let up = (corner >> (d - 1 - a)) & 1;
                w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                voxel = voxel * self.shape[a] + (base[a] + up) % self.shape[a];
            }
            if w == 0.0 {
                continue;
            }
            let (ev, jv) = self.fields_at_voxel(voxel);
            for c in 0..d {
                e[c] += w * ev[c];
                j[c] += w * jv[c];
            }
        }
        Ok(SideFields { e: FieldVector::new(e)?, j: FieldVector::new(j)? })
    }
}

fn component_means(field: &[f64], d: usize) -> Vec<f64> {
    let n = field.len() / d;
    (0..d)
        .map(|c| field.iter().skip(c).step_by(d).copied().collect::<CompensatedSum>().value() / n as f64)
        .collect()
}

/// Multidimensional FFT on row-major complex grids.
struct Fourier {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fourier {
    fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let scratch_len = forward.iter().chain(&inverse).map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        Self {
            shape: shape.to_vec(),
            forward,
            inverse,
            lines: Vec::new(),
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    /// Unnormalized transform in place.
    fn transform(&mut self, data: &mut [Complex64], inverse: bool) {
        let total = data.len();
        for a in 0..self.shape.len() {
            let len = self.shape[a];
            let stride: usize = self.shape[a + 1..].iter().product();
            let plan = if inverse { &self.inverse[a] } else { &self.forward[a] };
            if stride == 1 {
                plan.process_with_scratch(data, &mut self.scratch);
                continue;
            }
            self.lines.resize(total, Complex64::default());
            let outer = total / (len * stride);
            for o in 0..outer {
                let block = o * len * stride;
                for k in 0..len {
                    for s in 0..stride {
                        self.lines[(o * stride + s) * len + k] = data[block + k * stride + s];
                    }
                }
            }
            plan.process_with_scratch(&mut self.lines, &mut self.scratch);
            for o in 0..outer {
                let block = o * len * stride;
                for k in 0..len {
                    for s in 0..stride {
                        data[block + k * stride + s] = self.lines[(o * stride + s) * len + k];
                    }
                }
            }
        }
    }
}

/// `(sin, cos)` of half the discrete angle `pi m / n`, exact at 0 and Nyquist.
fn half_angle(m: usize, n: usize) -> (f64, f64) {
    if m == 0 {
        (0.0, 1.0)
    } else if 2 * m == n {
        (1.0, 0.0)
    } else {
        (PI * m as f64 / n as f64).sin_cos()
    }
}

/// Signed continuous frequency index, zero at Nyquist.
fn centered(m: usize, n: usize) -> f64 {
    if 2 * m == n {
        0.0
    } else if 2 * m > n {
        m as f64 - n as f64
    } else {
        m as f64
    }
}

/// Unit frequency directions per grid mode, interleaved; zero where the
/// Green operator vanishes.
fn frequency_directions(cell: &PeriodicCell, green: GreenOperator) -> Vec<f64> {
    let d = cell.dim();
    let h = cell.spacing();
    let mut out = vec![0.0; cell.voxel_count() * d];
    let mut k = vec![0.0; d];
    for v in 0..cell.voxel_count() {
        let m = cell.multi_index(v);
        match green {
            GreenOperator::Continuous => {
                for a in 0..d {
                    k[a] = 2.0 * PI * centered(m[a], cell.shape[a]) / cell.lengths[a];
                }
            }
            GreenOperator::Rotated => {
                let sc: Vec<(f64, f64)> = (0..d).map(|a| half_angle(m[a], cell.shape[a])).collect();
                for a in 0..d {
                    k[a] = sc[a].0 / h[a] * (0..d).filter(|&l| l != a).map(|l| sc[l].1).product::<f64>();
                }
            }
        }
        let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in 0..d {
                out[v * d + a] = k[a] / norm;
            }
        }
    }
    out
}

fn spectral_potential(cell: &PeriodicCell, e: &[f64], fourier: &mut Fourier) -> Vec<f64> {
    let d = cell.dim();
    let n = cell.voxel_count();
    let mut u_hat = vec![Complex64::default(); n];
    let mut buf = vec![Complex64::default(); n];
    let xi: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let m = cell.multi_index(v);
            (0..d).map(|a| 2.0 * PI * centered(m[a], cell.shape[a]) / cell.lengths[a]).collect()
        })
        .collect();
    for c in 0..d {
        for v in 0..n {
            buf[v] = Complex64::new(e[v * d + c], 0.0);
        }
        fourier.transform(&mut buf, false);
        for v in 0..n {
            let k2: f64 = xi[v].iter().map(|x| x * x).sum();
            if k2 > 0.0 {
                // grad u = E - E0  =>  i xi u_hat = E_hat
                u_hat[v] += buf[v] * Complex64::new(0.0, -xi[v][c] / k2);
            }
        }
    }
    fourier.transform(&mut u_hat, true);
    u_hat.iter().map(|z| z.re / n as f64).collect()
}

/// Equilibrium fields for applied mean field `e0`.
pub fn solve_periodic(cell: &PeriodicCell, e0: &FieldVector, options: &SolverOptions) -> Result<PeriodicCellSolution> {
    let d = cell.dim();
    if e0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: e0.dim() });
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::Domain("solver tolerance must be positive".into()));
    }
    let n = cell.voxel_count();
    let (lo, hi) = cell.eigen_bounds();
    let sigma0 = 0.5 * (lo + hi);
    let kappa = frequency_directions(cell, options.green);
    let mut fourier = Fourier::new(&cell.shape);
    let zero = Complex64::default();
    let e0v = e0.as_slice();

    let mut e = vec![0.0; n * d];
    for v in 0..n {
        e[v * d..(v + 1) * d].copy_from_slice(e0v);
    }
    let mut e_hat: Vec<Vec<Complex64>> = (0..d)
        .map(|c| {
            let mut b = vec![zero; n];
            b[0] = Complex64::new(n as f64 * e0v[c], 0.0);
            b
        })
        .collect();
    let mut p_hat: Vec<Vec<Complex64>> = vec![vec![zero; n]; d];
    let mut j = vec![0.0; n * d];
    let mut buf = vec![zero; n];
    let mut history = Vec::new();

    loop {
        for v in 0..n {
            let m = &cell.materials[cell.voxel_material[v]];
            let ev = &e[v * d..(v + 1) * d];
            for r in 0..d {
                let s: f64 = (0..d).map(|c| m[r * d + c] * ev[c]).sum();
                j[v * d + r] = s;
                p_hat[r][v] = Complex64::new(s - sigma0 * ev[r], 0.0);
            }
        }
        for p in p_hat.iter_mut() {
            fourier.transform(p, false);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for v in 0..n {
            let k = &kappa[v * d..(v + 1) * d];
            let mut proj = zero;
            for c in 0..d {
                let jc = p_hat[c][v] + e_hat[c][v] * sigma0;
                proj += jc * k[c];
                den += jc.norm_sqr();
            }
            num += proj.norm_sqr();
        }
        let residual = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
        history.push(residual);
        if !residual.is_finite() {
            return Err(Error::NotConverged { history });
        }
        if residual <= options.tolerance {
            break;
        }
        if history.len() > options.max_iterations {
            return Err(Error::NotConverged { history });
        }
        for v in 0..n {
            let k = &kappa[v * d..(v + 1) * d];
            let mut s = zero;
            for c in 0..d {
                s += p_hat[c][v] * k[c];
            }
            for c in 0..d {
                e_hat[c][v] = -(s * (k[c] / sigma0));
            }
        }
        for c in 0..d {
            e_hat[c][0] = Complex64::new(n as f64 * e0v[c], 0.0);
            buf.copy_from_slice(&e_hat[c]);
            fourier.transform(&mut buf, true);
            for v in 0..n {
                e[v * d + c] = buf[v].re / n as f64;
            }
        }
    }

    let potential = spectral_potential(cell, &e, &mut fourier);
    let mean_current = FieldVector::new(component_means(&j, d))?;
    Ok(PeriodicCellSolution {
        shape: cell.shape.clone(),
        lengths: cell.lengths.clone(),
        applied_field: e0.clone(),
        potential,
        e,
        j,
        residual: *history.last().expect("at least one residual"),
        history,
        mean_current,
    })
}

/// Symmetrized effective tensor from one solve per unit applied field.
pub fn effective_tensor(cell: &PeriodicCell, options: &SolverOptions) -> Result<Matrix> {
    let d = cell.dim();
    let mut m = Matrix::zeros(d, d);
    for c in 0..d {
        let sol = solve_periodic(cell, &FieldVector::basis(d, c), options)?;
        for r in 0..d {
            m[(r, c)] = sol.effective_column().as_slice()[r];
        }
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Central difference `(sigma*(eta + d) - sigma*(eta - d)) / (2 d)`.
pub fn finite_difference_sensitivity(
    family: impl Fn(f64) -> Result<PeriodicCell>,
    eta: f64,
    d_eta: f64,
    options: &SolverOptions,
) -> Result<Matrix> {
    if !(d_eta > 0.0 && d_eta.is_finite() && eta.is_finite()) {
        return Err(Error::Domain("finite difference needs finite eta and d_eta > 0".into()));
    }
    let up = effective_tensor(&family(eta + d_eta)?, options)?;
    let down = effective_tensor(&family(eta - d_eta)?, options)?;
    Ok((up - down) / (2.0 * d_eta))
}

fn check_offset(offset: f64) -> Result<()> {
    if offset.is_finite() && offset >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("sampling offset {offset} must be at least one grid cell")))
    }
}

fn sample_point(solution: &PeriodicCellSolution, mesh: &InterfaceMesh, side: Side, offset: f64) -> Result<Vec<SideFields>> {
    let d = solution.dim();
    if let Some(m) = mesh.dim() {
        if m != d {
            return Err(Error::DimensionMismatch { expected: d, found: m });
        }
    }
    let step = solution.lengths.iter().zip(&solution.shape).map(|(l, &n)| l / n as f64).fold(f64::INFINITY, f64::min);
    // The normal points from Plus toward Minus.
    let sign = match side {
        Side::Plus => -1.0,
        Side::Minus => 1.0,
    };
    mesh.patches()
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let x = p.position().as_slice();
            let outside = x.iter().zip(&solution.lengths).any(|(xi, l)| *xi < -1e-9 * l || *xi > l * (1.0 + 1e-9));
            if outside {
                return Err(Error::Patch { index, reason: "patch outside the period cell".into() });
            }
            let point: Vec<f64> =
                x.iter().zip(p.normal().as_slice()).map(|(xi, ni)| xi + sign * offset * step * ni).collect();
            solution.interpolate(&point)
        })
        .collect()
}

fn attach(mesh: &InterfaceMesh, side: Side, samples: Vec<SideFields>) -> Result<InterfaceMesh> {
    let mut out = mesh.clone();
    for (p, fields) in out.patches_mut().iter_mut().zip(samples) {
        let (e_t, _) = decompose_field(&fields.e, p.normal())?;
        let (_, j_n) = decompose_field(&fields.j, p.normal())?;
        p.set_side(side, fields)?;
        p.set_one_sided(OneSided { side, e_t, j_n });
    }
    Ok(out)
}

/// Interpolates `E` and `J` at `offset` grid cells from each patch on the
/// chosen side and attaches the raw and decomposed values.
pub fn sample_interface_fields(
    solution: &PeriodicCellSolution,
    mesh: &InterfaceMesh,
    side: Side,
    offset: f64,
) -> Result<InterfaceMesh> {
    check_offset(offset)?;
    let samples = sample_point(solution, mesh, side, offset)?;
    attach(mesh, side, samples)
}

/// As [`sample_interface_fields`], but linearly extrapolates samples taken
/// at `near` and `far` cells back to the interface.
pub fn sample_interface_fields_extrapolated(
    solution: &PeriodicCellSolution,
    mesh: &InterfaceMesh,
    side: Side,
    near: f64,
    far: f64,
) -> Result<InterfaceMesh> {
    check_offset(near)?;
    if !(far > near && far.is_finite()) {
        return Err(Error::Domain("far offset must exceed near offset".into()));
    }
    let a = sample_point(solution, mesh, side, near)?;
    let b = sample_point(solution, mesh, side, far)?;
    let t = near / (far - near);
    let extrapolate = |x: &FieldVector, y: &FieldVector| &(x * (1.0 + t)) - &(y * t);
    let samples = a.iter().zip(&b).map(|(x, y)| SideFields { e: extrapolate(&x.e, &y.e), j: extrapolate(&x.j, &y.j) });
    attach(mesh, side, samples.collect())
}

/// Samples both sides at the same offset.
pub fn sample_both_sides(solution: &PeriodicCellSolution, mesh: &InterfaceMesh, offset: f64) -> Result<InterfaceMesh> {
    let plus = sample_interface_fields(solution, mesh, Side::Plus, offset)?;
    sample_interface_fields(solution, &plus, Side::Minus, offset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellHeader {
    format: String,
    version: u32,
    shape: Vec<usize>,
    lengths: Vec<f64>,
    phases: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    geometry: Option<CellGeometry>,
    arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SolutionHeader {
    format: String,
    version: u32,
    shape: Vec<usize>,
    lengths: Vec<f64>,
    applied_field: Vec<f64>,
    residual: f64,
    history: Vec<f64>,
    arrays: Vec<ArrayInfo>,
}

fn write_binary<W: Write>(mut w: W, header: &impl Serialize, arrays: &[&[f64]]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for array in arrays {
        let mut bytes = Vec::with_capacity(array.len() * 8);
        for x in array.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("missing IPHASE01 magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(Error::Format(format!("header length {len} too large")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    Ok(json)
}

fn read_arrays<R: Read>(r: &mut R, arrays: &[ArrayInfo], expected: &[(&str, usize)]) -> Result<Vec<Vec<f64>>> {
    if arrays.len() != expected.len() {
        return Err(Error::Format(format!("expected {} arrays, found {}", expected.len(), arrays.len())));
    }
    arrays
        .iter()
        .zip(expected)
        .map(|(info, (name, len))| {
            if info.name != *name || info.len != *len {
                return Err(Error::Format(format!("expected array {name} of length {len}, found {} of length {}", info.name, info.len)));
            }
            let mut bytes = vec![0u8; len * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
        })
        .collect()
}

fn check_format(found: &str, version: u32, expected: &str) -> Result<()> {
    if found != expected || version != FORMAT_VERSION {
        return Err(Error::Format(format!("expected {expected} v{FORMAT_VERSION}, found {found} v{version}")));
    }
    Ok(())
}

pub fn write_cell<W: Write>(cell: &PeriodicCell, w: W) -> Result<()> {
    let phase_map: Vec<f64> = cell.phase_map.iter().map(|&p| p as f64).collect();
    let header = CellHeader {
        format: "periodic-cell".into(),
        version: FORMAT_VERSION,
        shape: cell.shape.clone(),
        lengths: cell.lengths.clone(),
        phases: cell.phases.iter().map(|p| matrix_rows(p.matrix())).collect(),
        geometry: cell.geometry.clone(),
        arrays: vec![ArrayInfo { name: "phase_map".into(), len: phase_map.len() }],
    };
    write_binary(w, &header, &[&phase_map])
}

pub fn read_cell<R: Read>(mut r: R) -> Result<PeriodicCell> {
    let header: CellHeader = serde_json::from_slice(&read_header(&mut r)?)?;
    check_format(&header.format, header.version, "periodic-cell")?;
    let n = validate_grid(&header.shape, &header.lengths)?;
    let arrays = read_arrays(&mut r, &header.arrays, &[("phase_map", n)])?;
    let phase_map = arrays[0]
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(Error::Format(format!("invalid phase index {x}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let phases = header.phases.iter().map(|rows| ConductivityTensor::from_rows(rows)).collect::<Result<Vec<_>>>()?;
    match header.geometry {
        Some(geometry) => {
            let cell = PeriodicCell::from_geometry(header.shape, header.lengths, phases, geometry)?;
            if cell.phase_map != phase_map {
                return Err(Error::Format("phase map disagrees with level sets".into()));
            }
            Ok(cell)
        }
        None => PeriodicCell::from_phase_map(header.shape, header.lengths, phase_map, phases),
    }
}

pub fn write_solution<W: Write>(solution: &PeriodicCellSolution, w: W) -> Result<()> {
    let header = SolutionHeader {
        format: "periodic-solution".into(),
        version: FORMAT_VERSION,
        shape: solution.shape.clone(),
        lengths: solution.lengths.clone(),
        applied_field: solution.applied_field.as_slice().to_vec(),
        residual: solution.residual,
        history: solution.history.clone(),
        arrays: vec![
            ArrayInfo { name: "potential".into(), len: solution.potential.len() },
            ArrayInfo { name: "e".into(), len: solution.e.len() },
            ArrayInfo { name: "j".into(), len: solution.j.len() },
        ],
    };
    write_binary(w, &header, &[&solution.potential, &solution.e, &solution.j])
}

pub fn read_solution<R: Read>(mut r: R) -> Result<PeriodicCellSolution> {
    let header: SolutionHeader = serde_json::from_slice(&read_header(&mut r)?)?;
    check_format(&header.format, header.version, "periodic-solution")?;
    let n = validate_grid(&header.shape, &header.lengths)?;
    let d = header.shape.len();
    if header.applied_field.len() != d || header.history.is_empty() {
        return Err(Error::Format("applied field or history malformed".into()));
    }
    let mut arrays = read_arrays(&mut r, &header.arrays, &[("potential", n), ("e", n * d), ("j", n * d)])?;
    let j = arrays.pop().expect("three arrays");
    let e = arrays.pop().expect("three arrays");
    let potential = arrays.pop().expect("three arrays");
    let mean_current = FieldVector::new(component_means(&j, d))?;
    Ok(PeriodicCellSolution {
        shape: header.shape,
        lengths: header.lengths,
        applied_field: FieldVector::new(header.applied_field)?,
        potential,
        e,
        j,
        residual: header.residual,
        history: header.history,
        mean_current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemblage::{laminate_sigma_star, Orientation};
    use crate::geometry::make_isotropic;
    use approx::assert_relative_eq;

    fn iso(s: f64, d: usize) -> ConductivityTensor {
        make_isotropic(s, d).unwrap()
    }

    fn tight() -> SolverOptions {
        SolverOptions::with_tolerance(1e-11)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(PeriodicCell::homogeneous(vec![3, 8], vec![1.0, 1.0], iso(1.0, 2)).is_err());
        assert!(PeriodicCell::homogeneous(vec![8, 8], vec![1.0, 0.0], iso(1.0, 2)).is_err());
        assert!(PeriodicCell::homogeneous(vec![8, 8], vec![1.0], iso(1.0, 2)).is_err());
        assert!(PeriodicCell::from_phase_map(vec![4, 4], vec![1.0, 1.0], vec![2; 16], vec![iso(1.0, 2)]).is_err());
        assert!(PeriodicCell::from_phase_map(vec![4, 4], vec![1.0, 1.0], vec![0; 15], vec![iso(1.0, 2)]).is_err());
        assert!(PeriodicCell::centered_inclusion(vec![8, 8], vec![1.0, 1.0], 0.6, iso(2.0, 2), iso(1.0, 2)).is_err());
    }

    #[test]
    fn voxel_center_assignment() {
        let lam = PeriodicCell::laminate(vec![16, 4], vec![1.0, 1.0], 0, 0.25, iso(1.0, 2), iso(2.0, 2)).unwrap();
        assert_eq!(lam.phase_fractions(), vec![0.25, 0.75]);
        let board = PeriodicCell::checkerboard(8, 2.0, iso(1.0, 2), iso(4.0, 2)).unwrap();
        assert_eq!(board.phase_fractions(), vec![0.5, 0.5]);
        assert_eq!(board.phase_map()[0], 0);
        assert_eq!(board.phase_map()[7], 1);
        let disk = PeriodicCell::centered_inclusion(vec![128, 128], vec![1.0, 1.0], 0.25, iso(5.0, 2), iso(1.0, 2)).unwrap();
        assert!((disk.phase_fractions()[0] - PI / 16.0).abs() < 2e-3);
        assert_eq!(disk.mixed_voxel_count(), 0);
    }

    #[test]
    fn laminate_mix_reduces_to_means() {
        let a = Matrix::identity(2, 2);
        let b = Matrix::identity(2, 2) * 4.0;
        let m = laminate_mix(&[(0.25, &a), (0.75, &b)], &[1.0, 0.0]);
        assert_relative_eq!(m[(0, 0)], 1.0 / (0.25 + 0.75 / 4.0), max_relative = 1e-14);
        assert_relative_eq!(m[(1, 1)], 0.25 + 3.0, max_relative = 1e-14);
        assert!(m[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn smoothed_slab_fraction_is_exact() {
        let cell = PeriodicCell::laminate(vec![16, 4], vec![1.0, 1.0], 0, 0.3, iso(1.0, 2), iso(3.0, 2))
            .unwrap()
            .with_smoothing(true)
            .unwrap();
        assert!(cell.mixed_voxel_count() > 0);
        let inv: f64 = (0..cell.voxel_count()).map(|v| 1.0 / cell.voxel_tensor(v)[(0, 0)]).sum::<f64>() / 64.0;
        assert_relative_eq!(inv, 0.3 + 0.7 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn homogeneous_cell_is_trivial() {
        let cell = PeriodicCell::homogeneous(vec![8, 6, 4], vec![1.0, 2.0, 0.5], iso(3.0, 3)).unwrap();
        let e0 = FieldVector::from_slice(&[0.3, -1.0, 2.0]).unwrap();
        let sol = solve_periodic(&cell, &e0, &SolverOptions::default()).unwrap();
        assert!(sol.residual() <= 1e-14);
        assert_eq!(sol.iterations(), 0);
        for v in 0..cell.voxel_count() {
            let (e, j) = sol.fields_at_voxel(v);
            for c in 0..3 {
                assert_eq!(e[c], e0.as_slice()[c]);
                assert_relative_eq!(j[c], 3.0 * e0.as_slice()[c], max_relative = 1e-15);
            }
        }
        assert!(sol.potential().iter().all(|u| u.abs() < 1e-14));
        let t = effective_tensor(&cell, &SolverOptions::default()).unwrap();
        assert!((t - Matrix::identity(3, 3) * 3.0).amax() < 1e-14);
    }

    #[test]
    fn laminate_matches_means_for_both_operators() {
        for green in [GreenOperator::Rotated, GreenOperator::Continuous] {
            let cell = PeriodicCell::laminate(vec![32, 8], vec![1.0, 1.0], 0, 0.375, iso(1.0, 2), iso(7.0, 2)).unwrap();
            let options = SolverOptions { green, ..tight() };
            let t = effective_tensor(&cell, &options).unwrap();
            let fr = [0.375, 0.625];
            let perp = laminate_sigma_star(&[1.0, 7.0], &fr, Orientation::Perpendicular).unwrap();
            let par = laminate_sigma_star(&[1.0, 7.0], &fr, Orientation::Parallel).unwrap();
            assert_relative_eq!(t[(0, 0)], perp, max_relative = 1e-9);
            assert_relative_eq!(t[(1, 1)], par, max_relative = 1e-9);
            assert!(t[(0, 1)].abs() < 1e-9);
        }
    }

    #[test]
    fn three_dimensional_laminate_tensor() {
        let cell = PeriodicCell::laminate(vec![4, 16, 4], vec![1.0, 1.0, 1.0], 1, 0.5, iso(2.0, 3), iso(5.0, 3)).unwrap();
        let t = effective_tensor(&cell, &tight()).unwrap();
        assert_relative_eq!(t[(1, 1)], 1.0 / (0.25 + 0.1), max_relative = 1e-9);
        assert_relative_eq!(t[(0, 0)], 3.5, max_relative = 1e-9);
        assert_relative_eq!(t[(2, 2)], 3.5, max_relative = 1e-9);
    }

    #[test]
    fn disk_energy_symmetry_and_bounds() {
        let cell = PeriodicCell::centered_inclusion(vec![64, 64], vec![1.0, 1.0], 0.3, iso(5.0, 2), iso(1.0, 2)).unwrap();
        let options = SolverOptions::with_tolerance(1e-10);
        let e0 = FieldVector::from_slice(&[1.0, 0.5]).unwrap();
        let sol = solve_periodic(&cell, &e0, &options).unwrap();
        let mean = sol.mean_field();
        assert!((mean[0] - 1.0).abs() < 1e-12 && (mean[1] - 0.5).abs() < 1e-12);
        let energy = e0.dot(sol.effective_column());
        assert_relative_eq!(sol.energy(), energy, max_relative = 1e-8);
        let t = effective_tensor(&cell, &options).unwrap();
        assert!(t[(0, 0)] > 1.0 && t[(0, 0)] < 5.0);
        assert_relative_eq!(t[(0, 0)], t[(1, 1)], max_relative = 1e-8);
        let fine = (t[(0, 0)] - 1.0) / 4.0;
        assert!(fine > 0.0 && fine < cell.phase_fractions()[0] * 4.0);
    }

    #[test]
    fn anisotropic_phase_keeps_symmetry() {
        let a = ConductivityTensor::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let cell = PeriodicCell::centered_inclusion(vec![32, 32], vec![1.0, 1.0], 0.3, a, iso(1.0, 2)).unwrap();
        let t = effective_tensor(&cell, &SolverOptions::with_tolerance(1e-10)).unwrap();
        let sol = solve_periodic(&cell, &FieldVector::basis(2, 0), &SolverOptions::with_tolerance(1e-10)).unwrap();
        assert_relative_eq!(sol.effective_column().as_slice()[1], t[(1, 0)], max_relative = 1e-6);
        assert!(t.clone().symmetric_eigenvalues().min() > 1.0 - 1e-9);
    }

    #[test]
    fn non_convergence_reports_history() {
        let cell = PeriodicCell::centered_inclusion(vec![16, 16], vec![1.0, 1.0], 0.3, iso(100.0, 2), iso(1.0, 2)).unwrap();
        let options = SolverOptions { max_iterations: 3, ..tight() };
        match solve_periodic(&cell, &FieldVector::basis(2, 0), &options) {
            Err(Error::NotConverged { history }) => assert_eq!(history.len(), 4),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(solve_periodic(&cell, &FieldVector::basis(3, 0), &options).is_err());
    }

    #[test]
    fn sampling_homogeneous_and_laminate() {
        let cell = PeriodicCell::homogeneous(vec![8, 8], vec![1.0, 1.0], iso(2.0, 2)).unwrap();
        let e0 = FieldVector::from_slice(&[1.0, 2.0]).unwrap();
        let sol = solve_periodic(&cell, &e0, &tight()).unwrap();
        let mesh = InterfaceMesh::circle([0.5, 0.5], 0.25, 16, 1.0).unwrap();
        let sampled = sample_both_sides(&sol, &mesh, DEFAULT_OFFSET).unwrap();
        for p in sampled.patches() {
            let s = p.side(Side::Plus).unwrap();
            assert!((&s.e - &e0).norm() < 1e-14);
            let (e_t, e_n) = decompose_field(&s.e, p.normal()).unwrap();
            assert!((&(&e_t + &e_n) - &s.e).norm() < 1e-14);
        }
        assert!(sample_interface_fields(&sol, &mesh, Side::Plus, 0.5).is_err());
        let far = InterfaceMesh::circle([1.5, 0.5], 0.25, 4, 1.0).unwrap();
        assert!(matches!(sample_interface_fields(&sol, &far, Side::Plus, 1.5), Err(Error::Patch { .. })));

        let lam = PeriodicCell::laminate(vec![64, 8], vec![1.0, 1.0], 0, 0.5, iso(1.0, 2), iso(4.0, 2)).unwrap();
        let sol = solve_periodic(&lam, &FieldVector::basis(2, 0), &tight()).unwrap();
        // Phase 0 occupies x < 0.5, so the normal -e_x at x = 0.5 points from phase 1 to phase 0.
        let plane = InterfaceMesh::plane(&[1.0, 1.0], 0, 0.5, -1.0, 4).unwrap();
        let sampled = sample_both_sides(&sol, &plane, DEFAULT_OFFSET).unwrap();
        for p in sampled.patches() {
            let jp = p.side(Side::Plus).unwrap().j.as_slice()[0];
            let jm = p.side(Side::Minus).unwrap().j.as_slice()[0];
            assert_relative_eq!(jp, jm, max_relative = 1e-8);
            assert!(p.one_sided().unwrap().e_t.norm() < 1e-10);
            assert_relative_eq!(p.side(Side::Plus).unwrap().e.as_slice()[0], jp / 4.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn extrapolation_is_exact_for_linear_fields() {
        let cell = PeriodicCell::homogeneous(vec![8, 8], vec![1.0, 1.0], iso(1.0, 2)).unwrap();
        let mut sol = solve_periodic(&cell, &FieldVector::basis(2, 0), &tight()).unwrap();
        for v in 0..cell.voxel_count() {
            let x = cell.center(v);
            sol.e[2 * v] = 1.0 + 0.1 * x[1];
        }
        let mesh = InterfaceMesh::plane(&[1.0, 1.0], 1, 0.5, 1.0, 4).unwrap();
        let sampled = sample_interface_fields_extrapolated(&sol, &mesh, Side::Plus, 1.0, 2.0).unwrap();
        for p in sampled.patches() {
            assert_relative_eq!(p.side(Side::Plus).unwrap().e.as_slice()[0], 1.05, max_relative = 1e-13);
        }
    }

    #[test]
    fn finite_difference_examples() {
        let options = tight();
        let zero = finite_difference_sensitivity(
            |_| PeriodicCell::homogeneous(vec![8, 8], vec![1.0, 1.0], iso(2.0, 2)),
            0.3,
            0.01,
            &options,
        )
        .unwrap();
        assert!(zero.amax() < 1e-13);
        let (sa, sb, f) = (1.0, 2.0, 0.3);
        let family = |eta: f64| {
            PeriodicCell::laminate(vec![256, 4], vec![1.0, 1.0], 0, eta, iso(sa, 2), iso(sb, 2))?.with_smoothing(true)
        };
        let fd = finite_difference_sensitivity(family, f, 1e-4, &options).unwrap();
        let star = 1.0 / (f / sa + (1.0 - f) / sb);
        let exact = -star * star * (1.0 / sa - 1.0 / sb);
        assert_relative_eq!(fd[(0, 0)], exact, max_relative = 1e-6);
        assert!(fd[(1, 1)].abs() > 0.0);
        assert!(finite_difference_sensitivity(family, f, 0.0, &options).is_err());
    }

    #[test]
    fn binary_round_trips() {
        let cell = PeriodicCell::centered_inclusion(vec![8, 8], vec![1.0, 2.0], 0.4, iso(3.0, 2), iso(1.0, 2))
            .unwrap()
            .with_smoothing(true)
            .unwrap();
        let mut bytes = Vec::new();
        write_cell(&cell, &mut bytes).unwrap();
        let back = read_cell(bytes.as_slice()).unwrap();
        assert_eq!(back.phase_map(), cell.phase_map());
        assert_eq!(back.materials, cell.materials);

        let raw = PeriodicCell::from_phase_map(vec![4, 4], vec![1.0, 1.0], (0..16).map(|v| v % 2).collect(), vec![iso(1.0, 2), iso(2.0, 2)]).unwrap();
        let mut bytes = Vec::new();
        write_cell(&raw, &mut bytes).unwrap();
        assert_eq!(read_cell(bytes.as_slice()).unwrap().phase_map(), raw.phase_map());

        let sol = solve_periodic(&cell, &FieldVector::basis(2, 1), &tight()).unwrap();
        let mut bytes = Vec::new();
        write_solution(&sol, &mut bytes).unwrap();
        assert_eq!(read_solution(bytes.as_slice()).unwrap(), sol);

        bytes[0] = b'X';
        assert!(matches!(read_solution(bytes.as_slice()), Err(Error::Format(_))));
        let mut cell_bytes = Vec::new();
        write_cell(&cell, &mut cell_bytes).unwrap();
        assert!(read_solution(cell_bytes.as_slice()).is_err());
        assert!(read_cell(&cell_bytes[..cell_bytes.len() - 3]).is_err());
    }

    #[test]
    fn description_round_trips_through_json() {
        let cell = PeriodicCell::checkerboard(8, 1.0, iso(1.0, 2), iso(4.0, 2)).unwrap();
        let desc = cell.description().unwrap();
        let json = serde_json::to_string(&desc).unwrap();
        let back = PeriodicCell::from_description(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.phase_map(), cell.phase_map());
    }
}
