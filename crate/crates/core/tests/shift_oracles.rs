//! Surface corrections checked against laminates and the coated sphere,
//! where the fields and the derivatives are known in closed form.

use std::f64::consts::PI;

use interphase_core::assemblage::{delta_sigma_first_order, laminate_sigma_star, Orientation};
use interphase_core::shift::*;
use interphase_core::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(c: Vec<f64>) -> FieldVector {
    FieldVector::new(c).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Two-phase laminate: phase `a` fills `x0 < f * L0`. Returns the mesh on the
/// interface `x0 = f * L0` (normal `+e0`, `a` on the Plus side) carrying the
/// exact fields for a unit applied field along `axis`.
struct Laminate {
    lengths: Vec<f64>,
    f: f64,
    sa: f64,
    sb: f64,
}

impl Laminate {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let d = if rng.gen_bool(0.5) { 2 } else { 3 };
        Self {
            lengths: (0..d).map(|_| rng.gen_range(0.5..2.0)).collect(),
            f: rng.gen_range(0.05..0.95),
            sa: 10f64.powf(rng.gen_range(-2.0..2.0)),
            sb: 10f64.powf(rng.gen_range(-2.0..2.0)),
        }
    }

    fn d(&self) -> usize {
        self.lengths.len()
    }

    fn orientation(axis: usize) -> Orientation {
        if axis == 0 {
            Orientation::Perpendicular
        } else {
            Orientation::Parallel
        }
    }

    fn sigma_star(&self, axis: usize) -> f64 {
        laminate_sigma_star(&[self.sa, self.sb], &[self.f, 1.0 - self.f], Self::orientation(axis)).unwrap()
    }

    fn mesh(&self, axis: usize) -> InterfaceMesh {
        let d = self.d();
        let unit = |s: f64| {
            let mut c = vec![0.0; d];
            c[axis] = s;
            v(c)
        };
        let (plus, minus) = if axis == 0 {
            let j = self.sigma_star(0);
            (SideFields { e: unit(j / self.sa), j: unit(j) }, SideFields { e: unit(j / self.sb), j: unit(j) })
        } else {
            (SideFields { e: unit(1.0), j: unit(self.sa) }, SideFields { e: unit(1.0), j: unit(self.sb) })
        };
        let base = InterfaceMesh::plane(&self.lengths, 0, self.f * self.lengths[0], 1.0, 3).unwrap();
        let patches = base
            .patches()
            .iter()
            .map(|p| {
                let (e_t, _) = decompose_field(&plus.e, p.normal()).unwrap();
                let (_, j_n) = decompose_field(&plus.j, p.normal()).unwrap();
                p.clone()
                    .with_two_sided(plus.clone(), minus.clone(), 1e-12)
                    .unwrap()
                    .with_one_sided(Side::Plus, e_t, j_n)
                    .unwrap()
            })
            .collect();
        InterfaceMesh::new(patches, base.cell_volume()).unwrap()
    }
}

#[test]
fn interface_shift_matches_laminate_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let lam = Laminate::random(&mut rng);
        for axis in [0, 1] {
            let mesh = lam.mesh(axis);
            let got = interface_shift_delta(&mesh, &vec![1.0; mesh.len()]).unwrap().quadratic_form_value;
            let star = lam.sigma_star(axis);
            let d_df = if axis == 0 { -star * star * (1.0 / lam.sa - 1.0 / lam.sb) } else { lam.sa - lam.sb };
            let want = d_df / lam.lengths[0];
            assert!(rel(got, want) <= 1e-10, "axis {axis}: {got} vs {want}");
            // Independent check of the analytic derivative itself.
            let step = 1e-6;
            let shifted = |df: f64| {
                laminate_sigma_star(&[lam.sa, lam.sb], &[lam.f + df, 1.0 - lam.f - df], Laminate::orientation(axis))
                    .unwrap()
            };
            let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
            assert!(rel(fd, d_df) <= 1e-6);
        }
    }
}

#[test]
fn translating_a_laminate_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..50 {
        let lam = Laminate::random(&mut rng);
        let t = rng.gen_range(-0.1..0.1);
        for axis in [0, 1] {
            let at_f = lam.mesh(axis);
            // At x0 = 0 phase a lies on the +x side, so the normal is -e0 and a
            // translation by +t shrinks a there.
            let mut patches = at_f.patches().to_vec();
            for p in at_f.patches() {
                let mut x = p.position().as_slice().to_vec();
                x[0] = 0.0;
                let flipped = InterfacePatch::new(v(x), p.normal().scale(-1.0), p.weight())
                    .unwrap()
                    .with_two_sided(p.side(Side::Plus).unwrap().clone(), p.side(Side::Minus).unwrap().clone(), 1e-12)
                    .unwrap();
                patches.push(flipped);
            }
            let mesh = InterfaceMesh::new(patches, at_f.cell_volume()).unwrap();
            let n = at_f.len();
            let shifts: Vec<f64> = (0..2 * n).map(|i| if i < n { t } else { -t }).collect();
            let got = interface_shift_delta(&mesh, &shifts).unwrap().quadratic_form_value;
            let scale = lam.sa.max(lam.sb) * t.abs();
            assert!(got.abs() <= 1e-12 * scale, "{got}");
        }
    }
}

#[test]
fn thin_interphase_matches_three_phase_laminate() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let lam = Laminate::random(&mut rng);
        let s2 = 10f64.powf(rng.gen_range(-2.0..2.0));
        let h = rng.gen_range(1e-4..1e-1);
        let (s1, s3) = (lam.sa, lam.sb);
        for axis in [0, 1] {
            let mesh = lam.mesh(axis).with_thickness_fn(|_| h).unwrap();
            let three = |eps: f64| {
                laminate_sigma_star(&[s1, s2, s3], &[lam.f - eps, eps, 1.0 - lam.f], Laminate::orientation(axis))
                    .unwrap()
            };
            let star = three(0.0);
            let d_deps = if axis == 0 { -star * star * (1.0 / s2 - 1.0 / s1) } else { s2 - s1 };
            let want = h * d_deps / lam.lengths[0];
            let (t1, t2) = (make_isotropic(s1, lam.d()).unwrap(), make_isotropic(s2, lam.d()).unwrap());
            for side in [None, Some(Side::Plus), Some(Side::Minus)] {
                let got = single_interphase_delta(&mesh, &t1, &t2, side).unwrap().quadratic_form_value;
                assert!(rel(got, want) <= 1e-10, "axis {axis} side {side:?}: {got} vs {want}");
            }
            let step = 1e-5;
            let fd = (-3.0 * three(0.0) + 4.0 * three(step) - three(2.0 * step)) / (2.0 * step);
            // Sanity check on the analytic derivative; curvature is large when s2 is tiny.
            assert!(rel(fd, d_deps) <= 1e-3, "{fd} vs {d_deps}");
        }
    }
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> ConductivityTensor {
    let a = Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let m = &a * a.transpose() + Matrix::identity(d, d) * rng.gen_range(0.05..2.0);
    ConductivityTensor::new((&m + m.transpose()) * 0.5).unwrap()
}

fn random_stack(rng: &mut ChaCha8Rng, d: usize, k: usize) -> InterphaseStack {
    let layers: Vec<ConductivityTensor> = (0..k).map(|_| random_spd(rng, d)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut fractions: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = fractions[..k - 1].iter().sum();
    fractions[k - 1] = 1.0 - head;
    InterphaseStack::new(layers, fractions).unwrap()
}

/// Circle mesh with smooth synthetic one-sided fields and varying thickness.
fn synthetic_mesh(rng: &mut ChaCha8Rng) -> InterfaceMesh {
    let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let base = InterfaceMesh::circle([0.5, 0.5], 0.3, 64, 1.0).unwrap();
    let patches = base
        .patches()
        .iter()
        .map(|p| {
            let n = p.normal().as_slice();
            let t = [-n[1], n[0]];
            let phi = n[1].atan2(n[0]);
            let e_t = v(vec![t[0] * (a + phi.sin()), t[1] * (a + phi.sin())]);
            let j_n = v(vec![n[0] * (b + phi.cos()), n[1] * (b + phi.cos())]);
            p.clone()
                .with_thickness(0.01 * (1.5 + phi.cos()))
                .unwrap()
                .with_one_sided(Side::Plus, e_t, j_n)
                .unwrap()
        })
        .collect();
    InterfaceMesh::new(patches, 1.0).unwrap()
}

#[test]
fn formula_family_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let options = QuadratureOptions::default();
    for trial in 0..40 {
        let mesh = synthetic_mesh(&mut rng);
        let sigma1 = random_spd(&mut rng, 2);
        let k = 1 + trial % 5;
        let stack = random_stack(&mut rng, 2, k);
        let multi = multi_interphase_delta(&mesh, &sigma1, &stack, None).unwrap().quadratic_form_value;
        let profile = GradedProfile::from_stack(&stack).unwrap();
        let graded = graded_interphase_delta(&mesh, &sigma1, &profile, None, &options).unwrap().quadratic_form_value;
        assert!((multi - graded).abs() <= 1e-12 * multi.abs().max(1.0), "{multi} vs {graded}");

        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let permuted = InterphaseStack::new(
            order.iter().map(|&i| stack.conductivities()[i].clone()).collect(),
            order.iter().map(|&i| stack.fractions()[i]).collect(),
        )
        .unwrap();
        let again = multi_interphase_delta(&mesh, &sigma1, &permuted, None).unwrap().quadratic_form_value;
        assert!((multi - again).abs() <= 1e-12 * multi.abs().max(1.0));

        for inverse in [false, true] {
            let tele = stack.telescoped_difference(&sigma1, inverse);
            let (s1, mean) =
                if inverse { (sigma1.inverse(), stack.mean_inverse()) } else { (sigma1.matrix(), stack.mean()) };
            let direct = s1 - mean;
            let scale = direct.amax().max(s1.amax());
            assert!((tele - direct).amax() <= 1e-13 * scale);
        }

        let s2 = stack.conductivities()[0].clone();
        let constant = GradedProfile::rule(interphase_core::shift::ProfileCoordinate::Normalized, move |_| Ok(s2.clone()));
        let single = single_interphase_delta(&mesh, &sigma1, &stack.conductivities()[0], None).unwrap();
        let from_profile = graded_interphase_delta(&mesh, &sigma1, &constant, None, &options).unwrap();
        assert!((single.quadratic_form_value - from_profile.quadratic_form_value).abs() <= 1e-12 * single.quadratic_form_value.abs().max(1.0));
        assert!(single.max_thickness_gradient.unwrap() > 0.0);
    }
}

#[test]
fn graded_linear_profile_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mesh = synthetic_mesh(&mut rng);
    let sigma1 = make_isotropic(2.0, 2).unwrap();
    let (a, b) = (1.0, 4.0);
    let profile = GradedProfile::table(
        ProfileCoordinate::Normalized,
        vec![0.0, 1.0],
        vec![make_isotropic(a, 2).unwrap(), make_isotropic(b, 2).unwrap()],
        Interpolation::PiecewiseLinear,
    )
    .unwrap();
    let graded = graded_interphase_delta(&mesh, &sigma1, &profile, None, &QuadratureOptions::default()).unwrap();
    let mean = 0.5 * (a + b);
    let mean_inv = (b / a).ln() / (b - a);
    let want = (mean - 2.0) * e_t_term(&mesh) - (mean_inv - 0.5) * j_n_term(&mesh);
    assert!(rel(graded.quadratic_form_value, want) <= 1e-10);
}

fn e_t_term(mesh: &InterfaceMesh) -> f64 {
    mesh.patches().iter().map(|p| p.weight() * p.thickness() * p.one_sided().unwrap().e_t.norm().powi(2)).sum::<f64>()
        / mesh.cell_volume()
}

fn j_n_term(mesh: &InterfaceMesh) -> f64 {
    mesh.patches().iter().map(|p| p.weight() * p.thickness() * p.one_sided().unwrap().j_n.norm().powi(2)).sum::<f64>()
        / mesh.cell_volume()
}

/// Singly coated sphere (core `s1` radius `r1`, coating `s3` out to `r3`)
/// embedded in its effective medium under a unit field along x: the core
/// field is uniform.
fn core_field(s1: f64, s3: f64, r1: f64, r3: f64) -> f64 {
    let theta1 = (r1 / r3).powi(3);
    let a3 = 1.0 / (1.0 - (s1 - s3) * theta1 / (s1 + 2.0 * s3));
    a3 * 3.0 * s3 / (s1 + 2.0 * s3)
}

#[test]
fn sphere_interphase_matches_closed_form_delta() {
    let (r1, r3) = (3.0, 4.0);
    for (s1, s2, s3) in [(1.0, 5.0, 10.0), (10.0, 5.0, 1.0), (1.0, 0.3, 100.0), (2.0, 40.0, 3.0)] {
        let a1 = core_field(s1, s3, r1, r3);
        let base = InterfaceMesh::sphere([0.0; 3], r1, 16, 32, 4.0 / 3.0 * PI * r3.powi(3)).unwrap();
        let patches = base
            .patches()
            .iter()
            .map(|p| {
                let e = v(vec![a1, 0.0, 0.0]);
                let (e_t, _) = decompose_field(&e, p.normal()).unwrap();
                let (_, j_n) = decompose_field(&e.scale(s1), p.normal()).unwrap();
                p.clone().with_thickness(1.0).unwrap().with_one_sided(Side::Plus, e_t, j_n).unwrap()
            })
            .collect();
        let mesh = InterfaceMesh::new(patches, base.cell_volume()).unwrap();
        // The interphase grows outward into the coating.
        let coating = make_isotropic(s3, 3).unwrap();
        let interphase = make_isotropic(s2, 3).unwrap();
        let got = single_interphase_delta(&mesh, &coating, &interphase, None).unwrap().quadratic_form_value;
        let want = delta_sigma_first_order(s1, s2, s3, (r1 / r3).powi(3), r1, 1.0).unwrap();
        assert!(rel(got, want) <= 1e-11, "({s1},{s2},{s3}): {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn corrections_scale_linearly_with_thickness(c in 0.01f64..10.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = synthetic_mesh(&mut rng);
        let patches = mesh.patches().iter().map(|p| p.clone().with_thickness(p.thickness() * c).unwrap()).collect();
        let scaled = InterfaceMesh::new(patches, mesh.cell_volume()).unwrap();
        let s1 = random_spd(&mut rng, 2);
        let s2 = random_spd(&mut rng, 2);
        let a = single_interphase_delta(&mesh, &s1, &s2, None).unwrap().quadratic_form_value;
        let b = single_interphase_delta(&scaled, &s1, &s2, None).unwrap().quadratic_form_value;
        prop_assert!((b - c * a).abs() <= 1e-12 * (c * a).abs().max(1e-12));
    }

    #[test]
    fn matching_interphase_gives_zero(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = synthetic_mesh(&mut rng);
        let s1 = random_spd(&mut rng, 2);
        let r = single_interphase_delta(&mesh, &s1, &s1, None).unwrap().quadratic_form_value;
        prop_assert_eq!(r, 0.0);
    }

    #[test]
    fn tangential_normal_form_equals_raw_form(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lam = Laminate::random(&mut rng);
        let h = rng.gen_range(1e-3..1.0);
        for axis in [0, 1] {
            let mesh = lam.mesh(axis).with_thickness_fn(|_| h).unwrap();
            let raw = interface_shift_delta(&mesh, &mesh.thicknesses()).unwrap().quadratic_form_value;
            let (a, b) = (make_isotropic(lam.sa, lam.d()).unwrap(), make_isotropic(lam.sb, lam.d()).unwrap());
            let tn = interface_shift_delta_tn(&mesh, &a, &b, None).unwrap().quadratic_form_value;
            prop_assert!((raw - tn).abs() <= 1e-12 * raw.abs().max(1e-12));
        }
    }
}
