use std::sync::OnceLock;
use std::time::Instant;

use flexrb::eim::{EimConfig, TensorEim, TensorEntry};
use flexrb::fem::{FluidModel, PhysicalConstants};
use flexrb::ffd::{FfdLattice, ParameterDomain, ParameterVector, ReferenceBox, TransformTensors};
use flexrb::mesh::build_mesh;
use flexrb::rb::{greedy_build, relative_error, AffineSystem, GreedyConfig, GreedyIndicator, ReducedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Setup {
    fe: FluidModel,
    eim: TensorEim,
    domain: ParameterDomain,
}

fn fe_model(nx: usize, ny: usize) -> FluidModel {
    let mesh = build_mesh(nx, ny, &ReferenceBox::default()).unwrap();
    FluidModel::new(mesh, FfdLattice::channel_default(), PhysicalConstants::default(), 4).unwrap()
}

fn setup() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| {
        let fe = fe_model(24, 8);
        let domain = ParameterDomain::uniform(6, -0.1, 0.1).unwrap();
        let config = EimConfig {
            train_size: 60,
            ..EimConfig::default()
        };
        let eim = TensorEim::train(&fe, &domain, &config).unwrap();
        Setup { fe, eim, domain }
    })
}

fn greedy_config(n_max: usize) -> GreedyConfig {
    GreedyConfig {
        n_max,
        tol: 1e-12,
        train_size: 40,
        ..GreedyConfig::default()
    }
}

fn reduced(n_max: usize) -> &'static ReducedModel {
    static RB: OnceLock<ReducedModel> = OnceLock::new();
    let rb = RB.get_or_init(|| {
        let s = setup();
        let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
        greedy_build(&sys, &s.domain, &greedy_config(8)).unwrap()
    });
    assert!(n_max <= rb.n());
    rb
}

#[test]
fn affine_operators_match_direct_assembly() {
    let s = setup();
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    let tol = s.eim.config.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for mu in s.domain.sample_n(&mut rng, 5) {
        let (ea, eb) = sys.consistency(&mu).unwrap();
        assert!(ea <= 10.0 * tol && eb <= 10.0 * tol, "{ea:e} {eb:e}");
    }
    // rest configuration against the plain Stokes operators
    let (a, b) = sys.operators(&sys.thetas(&ParameterVector::zeros(6)).unwrap());
    let plain = vec![TransformTensors::identity(); s.fe.space().n_qp()];
    let (ad, bd) = sys.direct_operators(&plain);
    let da = a.values().iter().zip(ad.values()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(da <= tol * ad.max_abs(), "{da:e}");
    for c in 0..2 {
        let db = b[c].values().iter().zip(bd[c].values()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(db <= tol * bd[c].max_abs());
    }

    let count = |f: fn(&TensorEntry) -> bool| -> usize {
        s.eim.term_counts().iter().filter(|(e, _)| f(e)).map(|(_, m)| m).sum()
    };
    assert_eq!(sys.n_a(), count(|e| matches!(e, TensorEntry::Nu(..))));
    assert_eq!(sys.n_b(), count(|e| matches!(e, TensorEntry::Chi(..))));
}

#[test]
fn reduced_fem_is_close_to_full_fem() {
    let s = setup();
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for mu in s.domain.sample_n(&mut rng, 3) {
        let reduced = sys.solve(&mu).unwrap();
        let full = s.fe.solve_full(&mu).unwrap();
        assert!(reduced.linear_residual <= 1e-10);
        let err = relative_error(&s.fe, &full, &reduced);
        assert!(err <= 1e-4, "{err:e}");
    }
}

#[test]
fn supremizer_is_the_riesz_representer() {
    let s = setup();
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mu = s.domain.sample(&mut rng);
    let (nvel, np) = (s.fe.space().n_velocity(), s.fe.space().n_p1());
    let zero = sys.supremizer(&vec![0.0; np], &mu).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));

    let q: Vec<f64> = (0..np).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = sys.supremizer(&q, &mu).unwrap();
    let (_, b) = sys.operators(&sys.thetas(&mu).unwrap());
    let nf = s.fe.space().n_free();
    let form = |v: &[f64]| -> f64 { (0..2).map(|c| b[c].bilinear(&q, &v[c * nf..(c + 1) * nf])).sum() };
    let ratio = |v: &[f64]| form(v) / s.fe.velocity_norm(v);
    let best = ratio(&t);
    for _ in 0..50 {
        let v: Vec<f64> = (0..nvel).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = s.fe.velocity_inner(&t, &v);
        let rhs = form(&v);
        assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
        assert!(ratio(&v).abs() <= best);
    }
}

#[test]
fn snapshots_reproduced_and_bases_orthonormal() {
    let s = setup();
    let rb = reduced(8);
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    assert_eq!(rb.velocity_dim(), 2 * rb.n());
    assert_eq!(rb.pressure_dim(), rb.n());
    let (dv, dp) = rb.orthonormality_defect(&s.fe);
    assert!(dv <= 1e-10 && dp <= 1e-10, "{dv:e} {dp:e}");
    for mu in rb.snapshots() {
        let truth = sys.solve(mu).unwrap();
        let err = relative_error(&s.fe, &truth, &rb.solve_fe(&s.fe, mu).unwrap());
        assert!(err <= 1e-8, "{err:e}");
    }
    let one = rb.truncated(1);
    let mu1 = &rb.snapshots()[0];
    let err = relative_error(&s.fe, &sys.solve(mu1).unwrap(), &one.solve_fe(&s.fe, mu1).unwrap());
    assert!(err <= 1e-8);
}

#[test]
fn greedy_indicator_is_monotone_and_decays() {
    let rb = reduced(8);
    let h = rb.history();
    assert_eq!(h.first().unwrap().n, 1);
    for w in h.windows(2) {
        assert!(w[1].max_indicator <= w[0].max_indicator, "{:?}", h);
    }
    assert!(h.last().unwrap().max_indicator < 0.1 * h[0].max_indicator);
}

#[test]
fn truncation_equals_shorter_greedy_run() {
    let s = setup();
    let rb = reduced(8);
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    let short = greedy_build(&sys, &s.domain, &greedy_config(3)).unwrap();
    let cut = rb.truncated(3);
    assert_eq!(short.snapshots(), cut.snapshots());
    let mu = s.domain.sample(&mut ChaCha8Rng::seed_from_u64(15));
    let a = short.solve(&mu).unwrap();
    let b = cut.solve(&mu).unwrap();
    assert!((a.velocity - b.velocity).amax() <= 1e-12);
    assert!((a.pressure - b.pressure).amax() <= 1e-12);
}

#[test]
fn reduced_inf_sup_with_and_without_supremizers() {
    let s = setup();
    let rb = reduced(8);
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    for mu in rb.snapshots() {
        let beta_n = rb.inf_sup(mu).unwrap();
        let beta_h = s.fe.inf_sup_with_tensors(&sys.tensors(mu).unwrap()).unwrap();
        assert!(beta_n >= beta_h - 1e-8, "{beta_n} < {beta_h}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for mu in s.domain.sample_n(&mut rng, 10) {
        let enriched = rb.inf_sup(&mu).unwrap();
        let plain = rb.inf_sup_without_supremizers(&mu).unwrap();
        assert!(enriched > 0.0);
        assert!(enriched >= plain, "{enriched} < {plain}");
    }
}

#[test]
fn reload_gives_identical_online_solutions() {
    let s = setup();
    let rb = reduced(8);
    let dir = std::env::temp_dir().join(format!("flexrb-rb-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rb.bin");
    rb.save(&path).unwrap();
    let back = ReducedModel::load(&path).unwrap();
    assert_eq!(&back, rb);
    let mu = s.domain.sample(&mut ChaCha8Rng::seed_from_u64(17));
    assert_eq!(back.solve(&mu).unwrap(), rb.solve(&mu).unwrap());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn true_error_greedy_decays() {
    let s = setup();
    let sys = AffineSystem::build(&s.fe, s.eim.clone()).unwrap();
    let config = GreedyConfig {
        indicator: GreedyIndicator::TrueError,
        train_size: 15,
        ..greedy_config(5)
    };
    let rb = greedy_build(&sys, &s.domain, &config).unwrap();
    let h = rb.history();
    assert_eq!(rb.n(), 5);
    assert!(h.last().unwrap().max_indicator < h[0].max_indicator);
}

#[test]
fn online_cost_does_not_grow_with_the_mesh() {
    let domain = ParameterDomain::uniform(6, -0.1, 0.1).unwrap();
    let mu = domain.sample(&mut ChaCha8Rng::seed_from_u64(18));
    let mut times = Vec::new();
    for nx in [20, 40, 60] {
        let fe = fe_model(nx, nx / 3);
        let config = EimConfig {
            train_size: 20,
            ..EimConfig::default()
        };
        let eim = TensorEim::train(&fe, &domain, &config).unwrap();
        let sys = AffineSystem::build(&fe, eim).unwrap();
        let rb = greedy_build(
            &sys,
            &domain,
            &GreedyConfig {
                train_size: 8,
                ..greedy_config(5)
            },
        )
        .unwrap();
        let reps = 200;
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let start = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(rb.solve(&mu).unwrap());
            }
            best = best.min(start.elapsed().as_secs_f64() / reps as f64);
        }
        times.push(best);
    }
    println!("online solve times {times:?}");
    let (lo, hi) = times.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), t| (l.min(*t), h.max(*t)));
    assert!(hi <= 3.0 * lo, "{times:?}");
}
