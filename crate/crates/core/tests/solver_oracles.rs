//! Periodic-cell solver against microstructures with known effective
//! tensors, and the interface corrections against finite differences.

use interphase_core::assemblage::{laminate_sigma_star, Orientation};
use interphase_core::shift::interface_shift_delta;
use interphase_core::solver::*;
use interphase_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn iso(s: f64, d: usize) -> ConductivityTensor {
    ConductivityTensor::isotropic(s, d).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn laminate_at_256_matches_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let options = SolverOptions::with_tolerance(1e-12);
    for _ in 0..4 {
        let sa = 10f64.powf(rng.gen_range(-1.0..1.0));
        let sb = 10f64.powf(rng.gen_range(-1.0..1.0));
        // Grid-aligned fraction so the voxelization is exact.
        let cells = rng.gen_range(10..246);
        for green in [GreenOperator::Rotated, GreenOperator::Continuous] {
            // The continuous operator drops the Nyquist mode, which a layer of
            // odd voxel count excites.
            let cells = if green == GreenOperator::Continuous { cells & !1 } else { cells };
            let f = cells as f64 / 256.0;
            let cell = PeriodicCell::laminate(vec![256, 4], vec![1.0, 1.0], 0, f, iso(sa, 2), iso(sb, 2)).unwrap();
            let t = effective_tensor(&cell, &SolverOptions { green, ..options }).unwrap();
            let fr = [f, 1.0 - f];
            let perp = laminate_sigma_star(&[sa, sb], &fr, Orientation::Perpendicular).unwrap();
            let par = laminate_sigma_star(&[sa, sb], &fr, Orientation::Parallel).unwrap();
            assert!(rel(t[(0, 0)], perp) <= 1e-8, "{green:?}: {} vs {perp}", t[(0, 0)]);
            assert!(rel(t[(1, 1)], par) <= 1e-8, "{green:?}: {} vs {par}", t[(1, 1)]);
        }
    }
}

#[test]
fn checkerboard_geometric_mean() {
    let cell = PeriodicCell::checkerboard(512, 1.0, iso(1.0, 2), iso(4.0, 2)).unwrap();
    let sol = solve_periodic(&cell, &FieldVector::basis(2, 0), &SolverOptions::default()).unwrap();
    let s = sol.effective_column().as_slice()[0];
    assert!(rel(s, 2.0) <= 0.02, "checkerboard {s}");
}

#[test]
fn two_dimensional_duality() {
    // Square-symmetric 2D cells satisfy sigma*(a, b) sigma*(b, a) = a b.
    let (a, b) = (1.0, 6.0);
    let star = |x: f64, y: f64| {
        let cell = PeriodicCell::centered_inclusion(vec![128, 128], vec![1.0, 1.0], 0.3, iso(x, 2), iso(y, 2)).unwrap();
        effective_tensor(&cell, &SolverOptions::with_tolerance(1e-10)).unwrap()[(0, 0)]
    };
    let product = star(a, b) * star(b, a);
    assert!(rel(product, a * b) <= 1e-2, "{product}");
}

fn disk(n: usize, radius: f64, inside: f64, outside: f64) -> PeriodicCell {
    PeriodicCell::centered_inclusion(vec![n, n], vec![1.0, 1.0], radius, iso(inside, 2), iso(outside, 2))
        .unwrap()
        .with_smoothing(true)
        .unwrap()
}

fn disk_mesh(radius: f64, patches: usize) -> InterfaceMesh {
    InterfaceMesh::circle([0.5, 0.5], radius, patches, 1.0).unwrap().with_continuity_tolerance(1.0)
}

#[test]
fn disk_converges_under_refinement() {
    let options = SolverOptions::with_tolerance(1e-10);
    let values: Vec<f64> =
        [64, 128, 256].iter().map(|&n| effective_tensor(&disk(n, 0.25, 5.0, 1.0), &options).unwrap()[(0, 0)]).collect();
    let (d1, d2) = ((values[1] - values[0]).abs(), (values[2] - values[1]).abs());
    assert!(d2 < d1, "{values:?}");
    // Hashin-Shtrikman bounds for a two-phase 2D isotropic composite.
    let f = std::f64::consts::PI * 0.25 * 0.25;
    let lower = 1.0 + f / (1.0 / 4.0 + (1.0 - f) / 2.0);
    let upper = 5.0 + (1.0 - f) / (1.0 / (1.0 - 5.0) + f / 10.0);
    for v in values {
        assert!(v > lower - 1e-3 && v < upper + 1e-3, "{v} not in [{lower}, {upper}]");
    }
}

#[test]
fn disk_continuity_with_extrapolated_sampling() {
    let sol = solve_periodic(&disk(256, 0.25, 2.0, 1.0), &FieldVector::basis(2, 0), &SolverOptions::with_tolerance(1e-10))
        .unwrap();
    let mesh = disk_mesh(0.25, 512);
    let plus = sample_interface_fields_extrapolated(&sol, &mesh, Side::Plus, 2.0, 4.0).unwrap();
    let both = sample_interface_fields_extrapolated(&sol, &plus, Side::Minus, 2.0, 4.0).unwrap();
    let (e, j) = both.continuity_residual().unwrap();
    assert!(e <= 0.02 && j <= 0.02, "continuity mismatch E_t {e}, J_n {j}");
}

#[test]
fn continuity_mismatch_decreases_under_refinement() {
    let mismatch: Vec<(f64, f64)> = [128, 256]
        .iter()
        .map(|&n| {
            let sol = solve_periodic(&disk(n, 0.25, 5.0, 1.0), &FieldVector::basis(2, 0), &SolverOptions::default())
                .unwrap();
            sample_both_sides(&sol, &disk_mesh(0.25, 512), DEFAULT_OFFSET).unwrap().continuity_residual().unwrap()
        })
        .collect();
    assert!(mismatch[1].0 < mismatch[0].0, "{mismatch:?}");
    assert!(mismatch[1].1 < mismatch[0].1, "{mismatch:?}");
}

#[test]
fn interface_shift_matches_finite_difference_for_disk() {
    let n = 256;
    let options = SolverOptions::with_tolerance(1e-10);
    let family = |r: f64| {
        PeriodicCell::centered_inclusion(vec![n, n], vec![1.0, 1.0], r, iso(5.0, 2), iso(1.0, 2))?.with_smoothing(true)
    };
    let fd = finite_difference_sensitivity(family, 0.25, 2.0 / n as f64, &options).unwrap()[(0, 0)];
    let sol = solve_periodic(&family(0.25).unwrap(), &FieldVector::basis(2, 0), &options).unwrap();
    let sampled = sample_both_sides(&sol, &disk_mesh(0.25, 1024), DEFAULT_OFFSET).unwrap();
    let shift = interface_shift_delta(&sampled, &vec![1.0; sampled.len()]).unwrap().quadratic_form_value;
    assert!(rel(shift, fd) <= 0.02, "shift {shift} vs finite difference {fd}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_cells_respect_wiener_bounds(seed in 0u64..10_000, sa in 0.1f64..10.0, sb in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map: Vec<usize> = (0..64).map(|_| rng.gen_range(0..2)).collect();
        let cell = PeriodicCell::from_phase_map(vec![8, 8], vec![1.0, 1.0], map, vec![iso(sa, 2), iso(sb, 2)]).unwrap();
        let t = effective_tensor(&cell, &SolverOptions::with_tolerance(1e-10)).unwrap();
        let f = cell.phase_fractions();
        let arith = f[0] * sa + f[1] * sb;
        let harm = 1.0 / (f[0] / sa + f[1] / sb);
        let eig = t.clone().symmetric_eigenvalues();
        for v in eig.iter() {
            prop_assert!(*v >= harm * (1.0 - 1e-7) && *v <= arith * (1.0 + 1e-7), "{v} outside [{harm}, {arith}]");
        }
        prop_assert!((t[(0, 1)] - t[(1, 0)]).abs() <= 1e-12 * t.amax());
    }

    #[test]
    fn energy_equals_quadratic_form(seed in 0u64..10_000, angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map: Vec<usize> = (0..256).map(|_| rng.gen_range(0..3)).collect();
        let phases = vec![iso(1.0, 2), iso(3.0, 2), ConductivityTensor::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap()];
        let cell = PeriodicCell::from_phase_map(vec![16, 16], vec![1.0, 2.0], map, phases).unwrap();
        let e0 = FieldVector::from_slice(&[angle.cos(), angle.sin()]).unwrap();
        let sol = solve_periodic(&cell, &e0, &SolverOptions::with_tolerance(1e-11)).unwrap();
        let form = e0.dot(sol.effective_column());
        prop_assert!((sol.energy() - form).abs() <= 1e-8 * form);
    }
}
