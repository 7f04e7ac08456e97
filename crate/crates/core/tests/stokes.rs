use std::time::Instant;

use flexrb::fem::{FluidModel, PhysicalConstants};
use flexrb::ffd::{FfdLattice, ParameterDomain, ParameterVector, ReferenceBox};
use flexrb::mesh::build_mesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(nx: usize, ny: usize) -> FluidModel {
    let mesh = build_mesh(nx, ny, &ReferenceBox::default()).unwrap();
    FluidModel::new(mesh, FfdLattice::channel_default(), PhysicalConstants::default(), 4).unwrap()
}

#[test]
fn poiseuille_reproduced_at_rest() {
    let m = model(60, 20);
    let start = Instant::now();
    let sol = m.solve_full(&ParameterVector::zeros(6)).unwrap();
    let elapsed = start.elapsed();
    println!("default mesh full solve: {elapsed:?}, {} unknowns", m.system_size());

    let n = m.space().n_p2();
    let mut err: f64 = 0.0;
    for (d, x) in m.space().dof_coords().iter().enumerate() {
        let exact = 30.0 * (1.0 - 4.0 * x[1] * x[1]);
        err = err.max((sol.velocity[d] - exact).abs()).max(sol.velocity[n + d].abs());
    }
    assert!(err <= 1e-9, "velocity error {err}");

    let mesh = m.space().mesh();
    let mut checked = 0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().any(|&v| mesh.nodes[v][1].abs() < 1e-12) {
            let g = m.pressure_gradient(t, &sol.pressure);
            assert!((g[0] + 8.4).abs() <= 1e-6 * 8.4, "dp/dx1 = {}", g[0]);
            checked += 1;
        }
    }
    assert!(checked > 0);

    let summary = m.summary(&sol).unwrap();
    assert!((summary.pressure_drop - 25.2).abs() < 1e-8);
    assert!((summary.flow_rate - 20.0).abs() < 1e-10);
    assert!(summary.mean_pressure.abs() < 1e-12);
    assert!(sol.linear_residual < 1e-10);
}

#[test]
fn traction_at_rest_is_pressure_trace() {
    let m = model(12, 4);
    let sol = m.solve_full(&ParameterVector::zeros(6)).unwrap();
    let tau = m.traction(&sol).unwrap();
    for (t, &v) in tau.iter().zip(m.wall_vertices()) {
        assert!((t - sol.pressure[v]).abs() < 1e-9, "{t} vs {}", sol.pressure[v]);
    }
}

#[test]
fn conservation_and_mean_zero_pressure() {
    let m = model(15, 5);
    let domain = ParameterDomain::uniform(6, -0.1, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mu in domain.sample_n(&mut rng, 5) {
        let sol = m.solve_full(&mu).unwrap();
        assert!(m.boundary_flux(&sol).unwrap().abs() <= 1e-10);
        let mean: f64 = m.pressure_weights().iter().zip(&sol.pressure).map(|(w, p)| w * p).sum();
        assert!(mean.abs() <= 1e-12);
        assert!(sol.linear_residual <= 1e-10);
    }
}

#[test]
fn velocity_differences_shrink_under_refinement() {
    let mu = ParameterVector(vec![0.06, 0.08, -0.04, 0.05, 0.09, -0.02]);
    let probes = [[0.7, 0.1], [1.5, 0.3], [2.2, -0.2], [1.1, -0.35]];
    let sample = |nx: usize| -> Vec<f64> {
        let m = model(nx, nx / 3);
        let sol = m.solve_full(&mu).unwrap();
        let n = m.space().n_p2();
        let mesh = m.space().mesh();
        probes
            .iter()
            .map(|x| {
                // locate the triangle containing x and evaluate u1
                for (t, tri) in mesh.triangles.iter().enumerate() {
                    let p = tri.map(|v| mesh.nodes[v]);
                    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                    let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1])) / det;
                    let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1])) / det;
                    let l0 = 1.0 - l1 - l2;
                    if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                        return m.space().eval_p2(t, [l0, l1, l2], &sol.velocity[..n]).0;
                    }
                }
                panic!("probe outside mesh");
            })
            .collect()
    };
    let (a, b, c) = (sample(21), sample(42), sample(84));
    let d1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d2 = b.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(d2 < d1, "{d2} !< {d1}");
}

#[test]
fn inf_sup_stable_under_refinement() {
    let mu = ParameterVector::zeros(6);
    let b20 = model(20, 7).inf_sup(&mu).unwrap();
    let b40 = model(40, 13).inf_sup(&mu).unwrap();
    assert!(b20 > 0.0 && b40 > 0.0);
    let ratio = b20 / b40;
    assert!((0.5..=2.0).contains(&ratio), "beta_h {b20} vs {b40}");
}
