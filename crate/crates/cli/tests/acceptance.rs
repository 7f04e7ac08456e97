//! End-to-end acceptance run at the default configuration. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use flexrb::coupling::{FullFem, RbSolver};
use flexrb::eim::{EimConfig, TensorEim, TensorEntry};
use flexrb::fem::FluidModel;
use flexrb::ffd::{bernstein, FfdLattice, ParameterDomain, ParameterVector};
use flexrb::mesh::build_mesh;
use flexrb::rb::{greedy_build, relative_error, AffineSystem, GreedyConfig, ReducedModel};
use flexrb_cli::bench::measure;
use flexrb_cli::commands::{run_couple, run_offline, OfflineArtifacts};
use flexrb_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Offline {
    fe: FluidModel,
    art: OfflineArtifacts,
}

fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn poiseuille(config: &RunConfig) -> Outcome {
    let start = Instant::now();
    let fe = config.fluid_model().unwrap();
    let sol = fe.solve_full(&ParameterVector::zeros(6)).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let v0 = config.physics.v0;
    let n = fe.space().n_p2();
    let vel_err = max_abs(fe.space().dof_coords().iter().enumerate().flat_map(|(d, x)| {
        [sol.velocity[d] - v0 * (1.0 - 4.0 * x[1] * x[1]), sol.velocity[n + d]]
    }));
    let mesh = fe.space().mesh();
    let grad_err = max_abs(
        mesh.triangles
            .iter()
            .enumerate()
            .filter(|(_, tri)| tri.iter().any(|&v| mesh.nodes[v][1].abs() < 1e-12))
            .map(|(t, _)| (fe.pressure_gradient(t, &sol.pressure)[0] + 8.4) / 8.4),
    );
    outcome(
        vel_err <= 1e-9 && grad_err <= 1e-6 && seconds <= 10.0,
        format!("velocity error {vel_err:.2e}, centerline dp/dx1 relative error {grad_err:.2e}, {seconds:.2} s"),
    )
}

fn conservation(off: &Offline, domain: &ParameterDomain) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let worst = max_abs(domain.sample_n(&mut rng, 20).iter().map(|mu| {
        let sol = off.fe.solve_full(mu).unwrap();
        off.fe.boundary_flux(&sol).unwrap()
    }));
    outcome(worst <= 1e-10, format!("max |boundary flux| over 20 parameters {worst:.2e}"))
}

fn eim_certification(off: &Offline) -> Outcome {
    let eim = &off.art.eim;
    let tol = eim.config.tol;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for entry in TensorEntry::ALL {
        let b = &eim.entry(entry).basis;
        worst = worst.max(b.achieved_error());
        parts.push(format!("{entry}={}", b.n_terms()));
    }
    let max_m = eim.term_counts().iter().map(|c| c.1).max().unwrap_or(0);
    outcome(
        worst <= tol && max_m <= 50,
        format!("max training error {worst:.2e}, terms {}", parts.join(" ")),
    )
}

fn affine_consistency(off: &Offline, domain: &ParameterDomain) -> Outcome {
    let sys = AffineSystem::build(&off.fe, off.art.eim.clone()).unwrap();
    let tol = off.art.eim.config.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut ea, mut eb) = (0.0_f64, 0.0_f64);
    for mu in domain.sample_n(&mut rng, 5) {
        let (a, b) = sys.consistency(&mu).unwrap();
        ea = ea.max(a);
        eb = eb.max(b);
    }
    outcome(
        ea <= 10.0 * tol && eb <= 10.0 * tol,
        format!("relative max-entry error A {ea:.2e}, B {eb:.2e} (bound {:.0e})", 10.0 * tol),
    )
}

fn reproduction_and_decay(off: &Offline) -> Outcome {
    let sys = AffineSystem::build(&off.fe, off.art.eim.clone()).unwrap();
    let rb = &off.art.rb;
    let reproduction = rb
        .snapshots()
        .iter()
        .map(|mu| relative_error(&off.fe, &sys.solve(mu).unwrap(), &rb.solve_fe(&off.fe, mu).unwrap()))
        .fold(0.0_f64, f64::max);
    let err_at = |n: usize| off.art.decay.iter().find(|r| r.0 == n).map(|r| r.2);
    let (e1, e20) = (err_at(1), err_at(20));
    let ratio = match (e1, e20) {
        (Some(a), Some(b)) => a / b,
        _ => 0.0,
    };
    let monotone = rb.history().windows(2).all(|w| w[1].max_indicator <= w[0].max_indicator);
    outcome(
        reproduction <= 1e-8 && ratio >= 100.0 && monotone,
        format!(
            "snapshot error {reproduction:.2e}, held-out error N=1 {:.2e} N=20 {:.2e} (ratio {ratio:.0}), monotone indicator {monotone}",
            e1.unwrap_or(f64::NAN),
            e20.unwrap_or(f64::NAN)
        ),
    )
}

fn stability(off: &Offline, domain: &ParameterDomain) -> Outcome {
    let sys = AffineSystem::build(&off.fe, off.art.eim.clone()).unwrap();
    let rb = &off.art.rb;
    let mut margin = f64::INFINITY;
    for mu in rb.snapshots() {
        let beta_h = off.fe.inf_sup_with_tensors(&sys.tensors(mu).unwrap()).unwrap();
        margin = margin.min(rb.inf_sup(mu).unwrap() - beta_h);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut min_beta, mut enrichment_ok, mut min_plain) = (f64::INFINITY, true, f64::INFINITY);
    for mu in domain.sample_n(&mut rng, 20) {
        let enriched = rb.inf_sup(&mu).unwrap();
        let plain = rb.inf_sup_without_supremizers(&mu).unwrap();
        min_beta = min_beta.min(enriched);
        min_plain = min_plain.min(plain);
        enrichment_ok &= enriched >= plain;
    }
    outcome(
        margin >= -1e-8 && min_beta > 0.0 && enrichment_ok,
        format!(
            "min(beta_N - beta_h) at snapshots {margin:.2e}, min beta_N at 20 parameters {min_beta:.3e}, without supremizers {min_plain:.2e}"
        ),
    )
}

fn coupling(config: &RunConfig, off: &Offline) -> Outcome {
    let (full, _) = run_couple(config, &off.fe, &FullFem(&off.fe)).unwrap();
    let j = full.final_misfit();
    let default_ok = full.converged && full.iterations() <= 1000 && j <= 1e-6;

    let mut rigid_config = config.clone();
    rigid_config.physics.spring = 1e9;
    let rigid_fe = rigid_config.fluid_model().unwrap();
    let (rigid, projector) = run_couple(&rigid_config, &rigid_fe, &FullFem(&rigid_fe)).unwrap();
    let max_eta = max_abs(projector.displacement(&rigid.mu).unwrap());
    let rigid_ok = rigid.converged && rigid.iterations() <= 3 && max_eta <= 1e-6;

    let (rb, _) = run_couple(config, &off.fe, &RbSolver { fe: &off.fe, rb: &off.art.rb }).unwrap();
    let gap = max_abs(rb.mu.0.iter().zip(&full.mu.0).map(|(a, b)| a - b));
    let agree = rb.converged && gap <= 1e-4;
    let clipped = full.history.iter().filter(|s| s.clipped).count();

    outcome(
        default_ok && rigid_ok && agree,
        format!(
            "default: converged {} in {} iterations, J = {j:.2e} (needs <= 1e-6), {clipped} clipped projections; rigid wall: {} iterations, max|eta| {max_eta:.1e}; rb vs full max gap {gap:.1e}",
            full.converged,
            full.iterations(),
            rigid.iterations()
        ),
    )
}

fn online_model(nx: usize, domain: &ParameterDomain) -> ReducedModel {
    let config = RunConfig::default();
    let mesh = build_mesh(nx, nx / 3, &config.reference_box().unwrap()).unwrap();
    let fe = FluidModel::new(mesh, config.lattice().unwrap(), config.constants().unwrap(), 4).unwrap();
    let eim = TensorEim::train(
        &fe,
        domain,
        &EimConfig {
            train_size: 20,
            ..EimConfig::default()
        },
    )
    .unwrap();
    let sys = AffineSystem::build(&fe, eim).unwrap();
    let rb = greedy_build(
        &sys,
        domain,
        &GreedyConfig {
            n_max: 5,
            tol: 1e-12,
            train_size: 8,
            ..GreedyConfig::default()
        },
    )
    .unwrap();
    rb
}

/// Best per-solve time of each model. Rounds alternate between the models
/// so that slow drift of the machine affects all of them alike.
fn online_times(models: &[ReducedModel], mu: &ParameterVector) -> Vec<f64> {
    let reps = 2000;
    let mut best = vec![f64::INFINITY; models.len()];
    for _ in 0..15 {
        for (rb, t) in models.iter().zip(best.iter_mut()) {
            let start = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(rb.solve(mu).unwrap());
            }
            *t = t.min(start.elapsed().as_secs_f64() / reps as f64);
        }
    }
    best
}

fn cost_regimes(config: &RunConfig, off: &Offline, domain: &ParameterDomain) -> Outcome {
    let costs = measure(config, &off.fe, &off.art.eim, &off.art.rb, &off.art.timings).unwrap();
    use flexrb::coupling::SolverKind::*;
    let (full_offline, full_per) = costs.get(FullFem);
    let (rb_offline, rb_per) = costs.get(Rb);
    let speedup = full_per / rb_per;
    let crossover = costs.crossover(Rb, FullFem);

    let mu = domain.sample(&mut ChaCha8Rng::seed_from_u64(104));
    let models: Vec<ReducedModel> = [20, 40, 60].iter().map(|&nx| online_model(nx, domain)).collect();
    let same_size = models.windows(2).all(|w| w[0].velocity_dim() == w[1].velocity_dim());
    let times = online_times(&models, &mu);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let spread = max_abs(times.iter().map(|t| t / mean - 1.0));

    outcome(
        full_offline == 0.0 && speedup >= 10.0 && crossover.is_some_and(|n| n <= 1000) && same_size && spread <= 0.2,
        format!(
            "full FEM {full_per:.3} s/solve, rb {:.1} us/solve (x{speedup:.0}), rb offline {rb_offline:.1} s, crossover at {} evaluations, online time across nx 20/40/60 {:?} us (spread {:.0}%)",
            rb_per * 1e6,
            crossover.map_or("none".to_string(), |n| n.to_string()),
            times.iter().map(|t| (t * 1e7).round() / 10.0).collect::<Vec<_>>(),
            spread * 100.0
        ),
    )
}

fn geometry_kernel(domain: &ParameterDomain) -> Outcome {
    let start = Instant::now();
    let lattice = FfdLattice::channel_default();
    let bbox = *lattice.reference_box();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let zero = ParameterVector::zeros(6);
    let (mut identity, mut unity, mut linear, mut jac, mut pinned) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..2000 {
        let x = bbox.from_unit([rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)]);
        let y = lattice.map(x, &zero).unwrap();
        identity = identity.max((y[0] - x[0]).abs()).max((y[1] - x[1]).abs());

        let (s, t) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let total: f64 = (0..=9)
            .flat_map(|l| (0..=1).map(move |m| (l, m)))
            .map(|(l, m)| bernstein(9, l, s).unwrap() * bernstein(1, m, t).unwrap())
            .sum();
        unity = unity.max((total - 1.0).abs());

        let (a, b) = (domain.sample(&mut rng), domain.sample(&mut rng));
        let alpha = rng.random_range(-2.0..2.0);
        let combo = ParameterVector(a.0.iter().zip(&b.0).map(|(x, y)| alpha * x + y).collect());
        let lhs = lattice.boundary_displacement(s, &combo).unwrap();
        let rhs = alpha * lattice.boundary_displacement(s, &a).unwrap() + lattice.boundary_displacement(s, &b).unwrap();
        linear = linear.max((lhs - rhs).abs());
        pinned = pinned
            .max(lattice.boundary_displacement(0.0, &a).unwrap().abs())
            .max(lattice.boundary_displacement(1.0, &a).unwrap().abs());

        let xi = bbox.from_unit([rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)]);
        let j = lattice.jacobian(xi, &a).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let (mut xp, mut xm) = (xi, xi);
            xp[c] += h;
            xm[c] -= h;
            let (yp, ym) = (lattice.map(xp, &a).unwrap(), lattice.map(xm, &a).unwrap());
            for r in 0..2 {
                jac = jac.max(((yp[r] - ym[r]) / (2.0 * h) - j[(r, c)]).abs());
            }
        }
    }
    let mut min_det = f64::INFINITY;
    for mu in domain.sample_n(&mut rng, 100) {
        for i in 0..50 {
            for k in 0..50 {
                let x = bbox.from_unit([i as f64 / 49.0, k as f64 / 49.0]);
                min_det = min_det.min(lattice.jacobian(x, &mu).unwrap().determinant());
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    outcome(
        identity <= 1e-14 && unity <= 1e-13 && linear <= 1e-13 && pinned == 0.0 && jac <= 1e-6 && min_det > 0.0 && seconds <= 60.0,
        format!(
            "identity {identity:.1e}, partition of unity {unity:.1e}, linearity {linear:.1e}, end pinning {pinned:.1e}, Jacobian vs differences {jac:.1e}, min det J {min_det:.3}, {seconds:.2} s"
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("aborted: {msg}"))
        }
    }
}

fn main() {
    let mut config = RunConfig::default();
    config.output.dir = std::env::temp_dir().join(format!("flexrb-acceptance-{}", std::process::id()));
    let domain = config.domain().unwrap();

    let start = Instant::now();
    let fe = config.fluid_model().unwrap();
    let art = run_offline(&config, &fe).expect("offline stage");
    println!("offline stage at the default configuration: {:.1} s", start.elapsed().as_secs_f64());
    let off = Offline { fe, art };

    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("poiseuille exactness", Box::new(|| poiseuille(&config))),
        ("conservation", Box::new(|| conservation(&off, &domain))),
        ("eim certification", Box::new(|| eim_certification(&off))),
        ("affine consistency", Box::new(|| affine_consistency(&off, &domain))),
        ("rb reproduction and decay", Box::new(|| reproduction_and_decay(&off))),
        ("stability", Box::new(|| stability(&off, &domain))),
        ("coupling convergence", Box::new(|| coupling(&config, &off))),
        ("cost regimes", Box::new(|| cost_regimes(&config, &off, &domain))),
        ("geometry kernel", Box::new(|| geometry_kernel(&domain))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let o = guarded(run);
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} | {} [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    let _ = std::fs::remove_dir_all(&config.output.dir);
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
