//! Acceptance run: one PASS/FAIL line per criterion, with the evidence
//! indented below it. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vacqis::config::{Axis, SimSettings, SolverSettings};
use vacqis::{Validation, VALIDATED_MEASURES, Z_LIMIT};
use vacqis_core::generator::{GeneratorBlocks, Perturbation, TransitionKind};
use vacqis_core::metrics::{compute_metrics, MetricsReport, MEASURE_NAMES};
use vacqis_core::solver::{self, Solution, SolverOptions};
use vacqis_core::statespace::{block_dimension_formula, StateSpace};
use vacqis_core::ModelParams;

type Criterion = Box<dyn FnOnce(&mut Vec<(&'static str, Validation)>) -> Outcome>;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, details: Vec::new() }
    }

    /// Records a check; a false `ok` fails the criterion.
    fn check(&mut self, ok: bool, detail: String) {
        self.pass &= ok;
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, detail: String) {
        self.details.push(format!("     {detail}"));
    }
}

fn baseline() -> ModelParams {
    ModelParams::default()
}

fn desk() -> ModelParams {
    ModelParams { S: 6, s: 2, c: 2, N: 3, M: 4, ..Default::default() }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn generator_conservation() -> Outcome {
    let mut o = Outcome::new();
    let p = baseline();
    let start = Instant::now();
    let space = StateSpace::enumerate(&p);
    let blocks = GeneratorBlocks::build(&space, &p).expect("baseline generator");
    let mut worst: f64 = 0.0;
    for i in 0..=p.M {
        let mut level = blocks.h_diag(i) + blocks.h0();
        if i > 0 {
            level += blocks.h_lower(i);
        }
        worst = worst.max(max_row_sum(&level));
    }
    // levels above M repeat level M with the frozen retrial rate
    worst = worst.max(max_row_sum(&solver::aggregate_hm(&blocks, p.M)));
    let elapsed = start.elapsed();
    o.check(space.block_dim() == 491, format!("block dim by enumeration = {} (expected 491)", space.block_dim()));
    o.check(worst <= 1e-12, format!("max |row sum| over levels 0..={} = {worst:e} (<= 1e-12)", p.M));
    o.check(elapsed < Duration::from_secs(5), format!("enumeration + assembly took {} (< 5s)", secs(elapsed)));
    o
}

fn dimension_formula() -> Outcome {
    let mut o = Outcome::new();
    let mut triples = Vec::new();
    for c in 1..=4u32 {
        for n in c..=c + 3 {
            for big_s in [c.max(2), 5, 8, 12, 20] {
                if big_s >= c && !triples.contains(&(big_s, c, n)) {
                    triples.push((big_s, c, n));
                }
            }
        }
    }
    let mut mismatches = Vec::new();
    for &(big_s, c, n) in &triples {
        let p = ModelParams { S: big_s, s: 0, c, N: n, M: 2, ..Default::default() };
        p.validate().expect("grid points are valid");
        let counted = StateSpace::enumerate(&p).block_dim() as i64;
        let printed = block_dimension_formula(&p);
        if counted != printed {
            mismatches.push(format!("(S,c,N)=({big_s},{c},{n}): enumerated {counted}, formula {printed}"));
        }
    }
    o.check(triples.len() >= 50, format!("{} valid (S,c,N) triples with c in 1..4", triples.len()));
    o.check(mismatches.is_empty(), format!("{} mismatches", mismatches.len()));
    for m in mismatches {
        o.note(m);
    }
    o
}

fn rate_matrix() -> Outcome {
    let mut o = Outcome::new();
    let p = baseline();
    let start = Instant::now();
    let sol = solver::solve(&p, &SolverOptions::default());
    let elapsed = start.elapsed();
    let sol = match sol {
        Ok(s) => s,
        Err(e) => {
            o.check(false, format!("baseline solve failed: {e}"));
            return o;
        }
    };
    let r = &sol.dist.rate.r;
    let b = &sol.blocks;
    let residual = max_abs(&(r * r * b.h_lower(p.M) + r * b.modified_diag(p.M) + b.h0()));
    o.check(residual <= 1e-10, format!("max |R^2 H_M0 + R H_M1 + H0| = {residual:e} (<= 1e-10)"));
    // independent check of sp(R) through the Schur form
    let sp = r.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    o.check(sp < 1.0, format!("sp(R) = {sp:.12} from the eigenvalues (library: {:.12})", sol.dist.rate.spectral_radius));
    o.check(elapsed < Duration::from_secs(10), format!("baseline solve took {} (< 10s)", secs(elapsed)));

    let p0 = ModelParams { p: 0.0, ..p };
    match solver::solve(&p0, &SolverOptions::default()) {
        Ok(s) => {
            let nonzero = s.dist.rate.r.iter().filter(|&&v| v != 0.0).count();
            o.check(nonzero == 0, format!("p = 0: R has {nonzero} nonzero entries (expected exactly 0)"));
        }
        Err(e) => o.check(false, format!("p = 0 solve failed: {e}")),
    }
    o
}

fn stability_equivalence() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut stable, mut unstable, mut worst) = (0, 0, 0.0f64);
    let mut sets = 0;
    while sets < 100 {
        let c = rng.random_range(1..=3u32);
        let s = rng.random_range(1..=4u32);
        let p = ModelParams {
            S: 2 * s + rng.random_range(1..=6u32),
            s,
            c,
            N: c + rng.random_range(0..=2u32),
            M: rng.random_range(2..=8u32),
            lambda: rng.random_range(0.5..6.0),
            mu: rng.random_range(0.5..6.0),
            theta: rng.random_range(0.01..2.0),
            eta: rng.random_range(0.2..4.0),
            beta: rng.random_range(0.2..3.0),
            p: rng.random_range(0.0..1.0),
            ..Default::default()
        };
        if p.validate().is_err() {
            continue;
        }
        sets += 1;
        let space = StateSpace::enumerate(&p);
        let b = GeneratorBlocks::build(&space, &p).unwrap();
        let phi = solver::solve_phi(&solver::aggregate_hm(&b, p.M), &space).unwrap();
        let (mut z1, mut z2) = (0.0, 0.0);
        for (i, (_, st)) in space.states().iter().enumerate() {
            if st.hall == p.N {
                z1 += phi[i];
            } else {
                z2 += phi[i];
            }
        }
        let class_form = z1 * p.p * p.lambda - z2 * f64::from(p.M) * p.theta;
        let ones = DVector::from_element(phi.len(), 1.0);
        let drift_form = phi.dot(&(b.h0() * &ones)) - phi.dot(&(b.h_lower(p.M) * &ones));
        worst = worst.max((class_form - drift_form).abs());
        if class_form < 0.0 {
            stable += 1;
        } else {
            unstable += 1;
        }
    }
    o.check(worst <= 1e-10, format!("max |(z1 p lambda - z2 M theta) - (phi H0 e - phi H_M0 e)| = {worst:e} over {sets} sets"));
    o.check(stable > 0 && unstable > 0, format!("{stable} stable and {unstable} unstable sets"));
    o
}

/// Balance and normalization recomputed from the blocks, independently of
/// the solver's own residual code.
fn stationary_checks(o: &mut Outcome, label: &str, sol: &Solution) {
    let b = &sol.blocks;
    let m = sol.params.M as usize;
    let phi = &sol.dist.levels;
    let r = &sol.dist.rate.r;
    let n = r.nrows();
    let row = |v: &DVector<f64>| v.transpose();
    let mut worst: f64 = 0.0;
    for i in 0..=m {
        let mut lhs = row(&phi[i]) * b.h_diag(i as u32);
        if i > 0 {
            lhs += row(&phi[i - 1]) * b.h0();
        }
        if i < m {
            lhs += row(&phi[i + 1]) * b.h_lower(i as u32 + 1);
        } else {
            // Phi(M+1) = Phi(M) R, and the down block is frozen above M
            lhs += row(&phi[m]) * r * b.h_lower(sol.params.M);
        }
        worst = worst.max(lhs.amax());
    }
    let ones = DVector::from_element(n, 1.0);
    let geometric = (DMatrix::identity(n, n) - r).lu().solve(&ones).expect("I - R is invertible");
    let total: f64 = phi[..m].iter().map(|v| v.sum()).sum::<f64>() + phi[m].dot(&geometric);
    let norm_err = (total - 1.0).abs();
    o.check(norm_err <= 1e-10, format!("{label}: |sum_(i<M) Phi(i) e + Phi(M) (I-R)^-1 e - 1| = {norm_err:e} (<= 1e-10)"));
    o.check(worst <= 1e-8, format!("{label}: max balance residual over levels 0..={m} = {worst:e} (<= 1e-8)"));
}

fn stationary_correctness() -> Outcome {
    let mut o = Outcome::new();
    for (label, p, dim) in [("baseline", baseline(), 491), ("desk", desk(), 59)] {
        match solver::solve(&p, &SolverOptions::default()) {
            Ok(sol) => {
                o.check(sol.space.block_dim() == dim, format!("{label}: block dim {} (expected {dim})", sol.space.block_dim()));
                stationary_checks(&mut o, label, &sol);
            }
            Err(e) => o.check(false, format!("{label}: solve failed: {e}")),
        }
    }
    o
}

fn auto_m() -> SolverSettings {
    SolverSettings { auto_m: true, ..Default::default() }
}

fn oracle_agreement(validations: &mut Vec<(&'static str, Validation)>) -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let sim = SimSettings::default();
    for (label, p) in [("desk", desk()), ("baseline", baseline())] {
        let v = match vacqis::validate(&p, &auto_m(), &sim, None) {
            Ok(v) => v,
            Err(e) => {
                o.check(false, format!("{label}: {e}"));
                continue;
            }
        };
        o.check(
            v.sim.reps == 20 && v.sim.min_events >= 1_000_000,
            format!("{label}: {} replications, fewest events in one replication {}", v.sim.reps, v.sim.min_events),
        );
        o.note(format!("{label}: analytic M = {}, tail mass {:e}", v.analysis.params().M, v.analysis.solution.dist.tail_mass()));
        for name in VALIDATED_MEASURES {
            let i = MEASURE_NAMES.iter().position(|n| *n == name).unwrap();
            let z = v.z[i];
            o.check(
                z.is_some_and(|z| z.abs() <= Z_LIMIT),
                format!(
                    "{label} {name}: analytic {:.6} sim {:.6} +- {:.6} z = {}",
                    v.analysis.report.values()[i].unwrap_or(f64::NAN),
                    v.sim.mean[i].unwrap_or(f64::NAN),
                    v.sim.se[i].unwrap_or(f64::NAN),
                    z.map_or("NA".into(), |z| format!("{z:.2}"))
                ),
            );
        }
        o.note(format!(
            "{label} L9 in flow-balance form: analytic {:.6}, z = {}",
            v.analysis.report.l9_balance,
            v.z_l9_balance.map_or("NA".into(), |z| format!("{z:.2}"))
        ));
        validations.push((label, v));
    }
    let elapsed = start.elapsed();
    o.check(elapsed < Duration::from_secs(300), format!("total runtime {} (< 5 min)", secs(elapsed)));
    o
}

#[derive(Clone, Copy, PartialEq)]
enum Direction {
    Up,
    Down,
}

fn measure(r: &MetricsReport, name: &str) -> Option<f64> {
    MEASURE_NAMES.iter().position(|n| *n == name).and_then(|i| r.values()[i])
}

fn directional_claims() -> Outcome {
    use Direction::{Down, Up};
    let mut o = Outcome::new();
    let grids: [(&str, Vec<f64>); 6] = [
        ("lambda", vec![2.0, 2.25, 2.5, 2.75, 3.0]),
        ("theta", vec![0.5, 0.6, 0.7, 0.8, 0.9]),
        ("mu", vec![4.0, 4.5, 5.0, 5.5, 6.0]),
        ("eta", vec![2.3, 2.5, 2.7, 2.9, 3.1]),
        ("beta", vec![1.1, 1.3, 1.5, 1.7, 1.9]),
        // the hall must hold at least c customers, so c stops at N = 4
        ("c", vec![1.0, 2.0, 3.0, 4.0]),
    ];
    let claims: &[(&str, &str, Direction)] = &[
        ("ETC", "lambda", Up),
        ("ETC", "theta", Up),
        ("ETC", "mu", Down),
        ("ETC", "eta", Down),
        ("ETC", "beta", Down),
        ("L9", "mu", Down),
        ("L9", "eta", Down),
        ("L9", "beta", Down),
        ("L9", "c", Down),
        ("L11", "lambda", Down),
        ("L11", "beta", Down),
        ("L11", "eta", Down),
        ("L10", "lambda", Up),
        ("L10", "theta", Up),
        ("L10", "c", Up),
        ("L15", "lambda", Down),
        ("L15", "theta", Down),
        ("L15", "mu", Up),
        ("L15", "beta", Up),
        ("L15", "eta", Up),
        ("L15", "c", Up),
        ("L5", "mu", Down),
        ("L5", "beta", Down),
        ("L5", "eta", Down),
        ("L5", "c", Down),
        ("L5", "lambda", Up),
        ("L8", "mu", Down),
        ("L8", "beta", Down),
        ("L8", "eta", Down),
        ("L8", "c", Down),
        ("L8", "lambda", Up),
        ("L5", "theta", Down),
    ];
    let settings = SolverSettings::default();
    let mut series = std::collections::BTreeMap::new();
    for (param, values) in &grids {
        let axis = Axis { param: param.to_string(), values: values.clone() };
        let points = vacqis::sweep(&baseline(), &[axis], &settings).expect("sweep runs");
        let failed: Vec<String> = points.iter().filter_map(|p| p.result.as_ref().err().cloned()).collect();
        if !failed.is_empty() {
            o.check(false, format!("{param} sweep: {}", failed.join("; ")));
            continue;
        }
        series.insert(*param, points.into_iter().map(|p| p.result.unwrap()).collect::<Vec<_>>());
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ");
    for &(name, param, dir) in claims {
        let Some(reports) = series.get(param) else { continue };
        let v: Vec<f64> = reports.iter().map(|r| measure(r, name).unwrap_or(f64::NAN)).collect();
        let ok = v.windows(2).all(|w| match dir {
            Up => w[1] > w[0],
            Down => w[1] < w[0],
        });
        let word = if dir == Up { "increasing" } else { "decreasing" };
        o.check(ok, format!("{name} {word} in {param}: [{}]", fmt(&v)));
    }
    // insensitivity: the spread across the theta grid stays at solver precision
    if let Some(reports) = series.get("theta") {
        let v: Vec<f64> = reports.iter().map(|r| r.l8.unwrap_or(f64::NAN)).collect();
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        let rel = spread / v[0].abs();
        o.check(rel <= 1e-8, format!("L8 insensitive to theta: relative spread {rel:e} (<= 1e-8) [{}]", fmt(&v)));
    }
    o
}

fn relative_change(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => ((a - b) / b).abs(),
        (Some(a), Some(b)) if a == b => 0.0,
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

fn truncation_quality() -> Outcome {
    let mut o = Outcome::new();
    let mut tails = Vec::new();
    let mut reports = Vec::new();
    for m in [3, 5, 8, 12] {
        let p = ModelParams { M: m, ..baseline() };
        match solver::solve(&p, &SolverOptions::default()) {
            Ok(sol) => {
                tails.push((m, sol.dist.tail_mass()));
                reports.push(compute_metrics(&sol.dist, &sol.space, &p).expect("normalized"));
            }
            Err(e) => {
                o.check(false, format!("M = {m}: {e}"));
                return o;
            }
        }
    }
    let decreasing = tails.windows(2).all(|w| w[1].1 < w[0].1);
    let listed = tails.iter().map(|(m, t)| format!("M={m}: {t:e}")).collect::<Vec<_>>().join(", ");
    o.check(decreasing, format!("tail mass strictly decreasing: {listed}"));
    let (r8, r12) = (reports[2].values(), reports[3].values());
    for (i, name) in MEASURE_NAMES.iter().enumerate().take(16) {
        let rel = relative_change(r8[i], r12[i]);
        o.check(rel < 1e-3, format!("{name}: relative change M=8 -> M=12 = {rel:e} (< 0.1%)"));
    }
    o
}

fn mutation_detection(validations: &[(&'static str, Validation)]) -> Outcome {
    let mut o = Outcome::new();
    // the baseline comparison is clean, so any flag is caused by the mutation
    let Some((_, reference)) = validations.iter().find(|(l, _)| *l == "baseline") else {
        o.check(false, "baseline validation unavailable".into());
        return o;
    };
    let clean = reference.flagged();
    o.note(format!("unperturbed baseline flags: {}", if clean.is_empty() { "none".into() } else { clean.join(",") }));
    for kind in [TransitionKind::Service, TransitionKind::VacationEnd, TransitionKind::Replenishment] {
        let perturbation = Perturbation { kind, factor: 2.0 };
        match vacqis::analyze(&baseline(), &auto_m(), Some(perturbation)) {
            Ok(a) => {
                let v = vacqis::compare(a, reference.sim.clone());
                let flags: Vec<String> = v
                    .flagged()
                    .iter()
                    .map(|n| format!("{n}(z={:.1})", v.z_of(n).unwrap()))
                    .collect();
                o.check(!flags.is_empty(), format!("{} x2 flagged: {}", kind.name(), if flags.is_empty() { "nothing".into() } else { flags.join(" ") }));
            }
            Err(e) => o.check(false, format!("{} x2: {e}", kind.name())),
        }
    }
    o
}

fn main() -> ExitCode {
    let mut validations = Vec::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("generator conservation", Box::new(|_| generator_conservation())),
        ("dimension formula", Box::new(|_| dimension_formula())),
        ("rate matrix", Box::new(|_| rate_matrix())),
        ("stability equivalence", Box::new(|_| stability_equivalence())),
        ("stationary correctness", Box::new(|_| stationary_correctness())),
        ("oracle agreement", Box::new(oracle_agreement)),
        ("directional claims", Box::new(|_| directional_claims())),
        ("truncation quality", Box::new(|_| truncation_quality())),
        ("mutation detection", Box::new(|v| mutation_detection(v))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run(&mut validations);
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} [{}]",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            secs(start.elapsed())
        );
        for d in &outcome.details {
            println!("    {d}");
        }
    }
    println!("\nacceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
