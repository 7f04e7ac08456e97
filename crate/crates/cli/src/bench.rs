//! Cost of full FEM, reduced FEM and reduced basis solves as the number of
//! parameter evaluations grows, in units of one full FEM solve.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use flexrb::coupling::SolverKind;
use flexrb::eim::TensorEim;
use flexrb::fem::FluidModel;
use flexrb::ffd::ParameterVector;
use flexrb::rb::{AffineSystem, ReducedModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::commands::{load_eim, load_rb, load_timings, OfflineTimings};
use crate::{CliError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Offline,
    Online,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub solver: SolverKind,
    pub phase: Phase,
    pub count: usize,
    pub cumulative_s: f64,
    pub per_solve_s: f64,
    /// `cumulative_s` divided by one full FEM solve.
    pub cumulative_cost: f64,
    pub per_solve_cost: f64,
}

/// Measured per-kind costs from which the records are derived.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    /// `(kind, offline seconds, seconds per online solve)`.
    pub kinds: Vec<(SolverKind, f64, f64)>,
}

impl CostModel {
    pub fn unit(&self) -> f64 {
        self.get(SolverKind::FullFem).1
    }

    pub fn get(&self, kind: SolverKind) -> (f64, f64) {
        self.kinds
            .iter()
            .find(|k| k.0 == kind)
            .map(|k| (k.1, k.2))
            .expect("every solver kind is measured")
    }

    pub fn records(&self, counts: &[usize]) -> Vec<BenchRecord> {
        let unit = self.unit();
        let positive: Vec<usize> = counts.iter().copied().filter(|&n| n > 0).collect();
        let mut out = Vec::new();
        if positive.is_empty() {
            return out;
        }
        for &(solver, offline, per) in &self.kinds {
            out.push(BenchRecord {
                solver,
                phase: Phase::Offline,
                count: 0,
                cumulative_s: offline,
                per_solve_s: per,
                cumulative_cost: offline / unit,
                per_solve_cost: per / unit,
            });
            for &n in &positive {
                let total = offline + n as f64 * per;
                out.push(BenchRecord {
                    solver,
                    phase: Phase::Online,
                    count: n,
                    cumulative_s: total,
                    per_solve_s: per,
                    cumulative_cost: total / unit,
                    per_solve_cost: per / unit,
                });
            }
        }
        out
    }

    /// Smallest evaluation count at which `fast` is cheaper in total than
    /// `slow`, if any.
    pub fn crossover(&self, fast: SolverKind, slow: SolverKind) -> Option<usize> {
        let (of, pf) = self.get(fast);
        let (os, ps) = self.get(slow);
        if pf >= ps {
            return (of < os).then_some(1);
        }
        let n = ((of - os) / (ps - pf)).floor() + 1.0;
        Some(n.max(1.0) as usize)
    }
}

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from("solver,phase,count,cumulative_s,per_solve_s,cumulative_cost,per_solve_cost\n");
    for r in records {
        let phase = match r.phase {
            Phase::Offline => "offline",
            Phase::Online => "online",
        };
        let _ = writeln!(
            s,
            "{},{phase},{},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.solver.name(),
            r.count,
            r.cumulative_s,
            r.per_solve_s,
            r.cumulative_cost,
            r.per_solve_cost
        );
    }
    s
}

/// Mean seconds per call over `mus`, repeating the whole list until at
/// least `min_seconds` have elapsed.
pub fn time_per_solve<F>(mus: &[ParameterVector], min_seconds: f64, mut solve: F) -> Result<f64, CliError>
where
    F: FnMut(&ParameterVector) -> Result<(), CliError>,
{
    let start = Instant::now();
    let mut calls = 0usize;
    loop {
        for mu in mus {
            solve(mu)?;
            calls += 1;
        }
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= min_seconds {
            return Ok(elapsed / calls as f64);
        }
    }
}

/// Times the three solver kinds on `samples` random parameters. Offline
/// costs are the recorded interpolation and greedy times plus a fresh
/// measurement of the affine decomposition; full FEM has none.
pub fn measure(
    config: &RunConfig,
    fe: &FluidModel,
    eim: &TensorEim,
    rb: &ReducedModel,
    timings: &OfflineTimings,
) -> Result<CostModel, CliError> {
    let domain = config.domain()?;
    let mus = domain.sample_n(&mut ChaCha8Rng::seed_from_u64(config.bench.seed), config.bench.samples);

    let full = time_per_solve(&mus, 0.0, |mu| {
        black_box(fe.solve_full(mu)?);
        Ok(())
    })?;

    let start = Instant::now();
    let sys = AffineSystem::build(fe, eim.clone())?;
    let affine_s = start.elapsed().as_secs_f64();
    let reduced = time_per_solve(&mus, 0.0, |mu| {
        black_box(sys.solve(mu)?);
        Ok(())
    })?;

    let online = time_per_solve(&mus, config.bench.min_batch_seconds, |mu| {
        black_box(rb.solve(mu)?);
        Ok(())
    })?;
    if online < 1e-3 {
        log::info!("reduced basis solves take {:.1} us; timed in batches", online * 1e6);
    }

    Ok(CostModel {
        kinds: vec![
            (SolverKind::FullFem, 0.0, full),
            (SolverKind::ReducedFem, timings.eim_s + affine_s, reduced),
            (SolverKind::Rb, timings.eim_s + affine_s + timings.greedy_s, online),
        ],
    })
}

pub struct BenchOutcome {
    pub costs: Option<CostModel>,
    pub records: Vec<BenchRecord>,
}

/// Runs the benchmark from the offline artifacts and writes `bench.csv`.
/// Counts that are all zero give a header-only file without any timing.
pub fn cmd_bench(config: &RunConfig, counts: &[usize]) -> Result<BenchOutcome, CliError> {
    config.validate()?;
    if counts.is_empty() {
        return Err(CliError::Usage("--counts needs at least one value".into()));
    }
    let path = config.output.dir.join("bench.csv");
    if counts.iter().all(|&n| n == 0) {
        std::fs::write(&path, bench_csv(&[]))?;
        return Ok(BenchOutcome {
            costs: None,
            records: Vec::new(),
        });
    }
    let eim = load_eim(config)?;
    let rb = load_rb(config)?;
    let timings = load_timings(config)?;
    let fe = config.fluid_model()?;
    let costs = measure(config, &fe, &eim, &rb, &timings)?;
    let records = costs.records(counts);
    std::fs::write(&path, bench_csv(&records))?;
    Ok(BenchOutcome {
        costs: Some(costs),
        records,
    })
}

pub fn parse_counts(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad count '{}' in --counts", t.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CostModel {
        CostModel {
            kinds: vec![
                (SolverKind::FullFem, 0.0, 0.2),
                (SolverKind::ReducedFem, 3.0, 0.1),
                (SolverKind::Rb, 60.0, 1e-4),
            ],
        }
    }

    #[test]
    fn records_are_normalized_and_monotone() {
        let records = model().records(&[1, 10, 100, 1000]);
        assert_eq!(records.len(), 15);
        for kind in [SolverKind::FullFem, SolverKind::ReducedFem, SolverKind::Rb] {
            let rows: Vec<_> = records.iter().filter(|r| r.solver == kind).collect();
            assert_eq!(rows[0].phase, Phase::Offline);
            for w in rows.windows(2) {
                assert!(w[1].cumulative_s >= w[0].cumulative_s);
            }
        }
        let full = records.iter().find(|r| r.solver == SolverKind::FullFem && r.count == 1).unwrap();
        assert_eq!(full.per_solve_cost, 1.0);
        assert_eq!(full.cumulative_cost, 1.0);
    }

    #[test]
    fn zero_counts_give_no_records() {
        assert!(model().records(&[0]).is_empty());
        assert_eq!(bench_csv(&[]).lines().count(), 1);
    }

    #[test]
    fn crossover_count() {
        let m = model();
        // 60 + n 1e-4 < 0.2 n  <=>  n > 300.15
        assert_eq!(m.crossover(SolverKind::Rb, SolverKind::FullFem), Some(301));
        assert_eq!(m.crossover(SolverKind::ReducedFem, SolverKind::FullFem), Some(31));
        assert_eq!(m.crossover(SolverKind::FullFem, SolverKind::Rb), Some(1));
        let never = CostModel {
            kinds: vec![(SolverKind::FullFem, 0.0, 0.2), (SolverKind::Rb, 1.0, 0.3)],
        };
        assert_eq!(never.crossover(SolverKind::Rb, SolverKind::FullFem), None);
    }

    #[test]
    fn count_parsing() {
        assert_eq!(parse_counts("1, 10,100").unwrap(), vec![1, 10, 100]);
        assert!(parse_counts("1,x").is_err());
    }
}
