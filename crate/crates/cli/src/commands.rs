//! Subcommand runners. Each writes CSV tables under its run directory and
//! returns the summaries and checks that go into the manifest.

use homlab::funineq::{extend_field, extension_ratios, korn_constant, poincare_constant, restrict_field, CoefficientField};
use homlab::homog::{averaged_laws, basis_correctors, homogenized_tensor, macro_domain, macro_problem, CellProblem, HomMode};
use homlab::micro::{ConstitutiveLaw, IncrementalProblem, Trajectory};
use homlab::tensor::from_sym_coords;
use homlab::twoscale::{two_scale_distance, unfold, Order, Region, Sampling};
use homlab::{C1Field, C1Space, ExecPolicy, PerforatedDomain, Rational};
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::config::Experiment;
use crate::manifest::{Check, RunSummary};
use crate::CliError;

/// Subcommands that run experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Micro,
    Macro,
    Cell,
    Korn,
    Extend,
    Unfold,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Micro => "micro",
            Command::Macro => "macro",
            Command::Cell => "cell",
            Command::Korn => "korn",
            Command::Extend => "extend",
            Command::Unfold => "unfold",
            Command::Compare => "compare",
        }
    }

    /// Runs that take a single `ε` and can be chained by `sweep`.
    pub fn per_eps(self) -> bool {
        matches!(self, Command::Micro | Command::Korn | Command::Extend | Command::Unfold)
    }
}

/// Euler–Lagrange residual bound for accepted steps.
pub const WEAK_RESIDUAL_BOUND: f64 = 1e-9;
pub const EIGEN_RESIDUAL_BOUND: f64 = 1e-8;
pub const KORN_SPREAD_BOUND: f64 = 1.5;
pub const DET_SPREAD_BOUND: f64 = 2.0;
pub const UNFOLD_BOUND: f64 = 1e-12;
pub const CORRECTOR_BOUND: f64 = 1e-6;
pub const HOM_GAP_BOUND: f64 = 1e-10;
pub const CELL_RESIDUAL_BOUND: f64 = 1e-9;
/// Each `ε` halving must cut the grad distance by at least 10%.
pub const DISTANCE_RATIO_BOUND: f64 = 0.9;

/// Collects CSV tables written below one run directory.
pub struct RunDir {
    pub root: PathBuf,
    pub tables: Vec<String>,
}

impl RunDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        if root.exists() {
            std::fs::remove_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        }
        std::fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self { root, tables: Vec::new() })
    }

    /// Writes `rel` and returns its path relative to the run directory.
    pub fn csv<I>(&mut self, rel: &str, header: &[&str], rows: I) -> Result<String, CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e.into()))?;
        w.write_record(header).map_err(|e| CliError::io(&path, e.into()))?;
        for r in rows {
            w.write_record(&r).map_err(|e| CliError::io(&path, e.into()))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.tables.push(rel.to_string());
        Ok(rel.to_string())
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn int(v: usize) -> String {
    v.to_string()
}

pub fn eps_tag(eps: Rational) -> String {
    format!("eps-{}_{}", eps.numer(), eps.denom())
}

pub fn domain(x: &Experiment, eps: Rational) -> Result<PerforatedDomain, CliError> {
    PerforatedDomain::build(x.cell.clone(), eps, &x.dirichlet).map_err(|e| CliError::config("geometry", e.to_string()))
}

fn solver<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Solver(format!("{what}: {e}"))
}

/// Everything one subcommand contributes to a manifest.
#[derive(Default)]
pub struct Outcome {
    pub runs: Vec<RunSummary>,
    pub checks: Vec<Check>,
}

impl Outcome {
    fn merge(&mut self, other: Outcome) {
        self.runs.extend(other.runs);
        self.checks.extend(other.checks);
    }
}

fn write_state(out: &mut RunDir, rel: &str, u: &C1Field) -> Result<String, CliError> {
    out.csv(
        rel,
        &["node", "component", "k", "value"],
        u.rows().map(|(n, c, k, v)| vec![int(n), int(c), int(k), num(v)]),
    )
}

/// Writes the step table and all states of a trajectory and checks it.
fn record_trajectory<L: ConstitutiveLaw>(
    problem: &IncrementalProblem<'_, L>,
    tr: &Trajectory,
    x: &Experiment,
    out: &mut RunDir,
    prefix: &str,
    label: &str,
    eps: Option<Rational>,
) -> Result<Outcome, CliError> {
    let tau = tr.grid.tau();
    let mut weak = Vec::with_capacity(tr.reports.len());
    for (k, w) in tr.states.windows(2).enumerate() {
        let load = problem.load_at(&x.loads, tr.grid.midpoint(k + 1));
        weak.push(
            problem
                .weak_residual(&w[1], &w[0], tau, &load)
                .map_err(solver(&format!("{label} step {}", k + 1)))?,
        );
    }
    let slack: Vec<f64> = tr.reports.iter().map(|r| r.inequality_slack(x.step.tol_step)).collect();
    let steps = out.csv(
        &format!("{prefix}steps.csv"),
        &[
            "k",
            "time",
            "energy",
            "energy_prev",
            "dissipation",
            "load_work",
            "load_work_prev",
            "rate_norm_sq",
            "det_min",
            "newton_iters",
            "residual_norm",
            "weak_residual",
            "objective_drop",
            "slack",
        ],
        tr.reports.iter().zip(&weak).zip(&slack).map(|((r, w), s)| {
            vec![
                int(r.k),
                num(r.time),
                num(r.energy),
                num(r.energy_prev),
                num(r.dissipation),
                num(r.load_work),
                num(r.load_work_prev),
                num(r.rate_norm_sq),
                num(r.det_min),
                int(r.newton_iters),
                num(r.residual_norm),
                num(*w),
                num(r.objective_drop),
                num(*s),
            ]
        }),
    )?;
    let mut tables = vec![steps];
    for (k, u) in tr.states.iter().enumerate() {
        tables.push(write_state(out, &format!("{prefix}states/step_{k:03}.csv"), u)?);
    }
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    let max_weak = weak.iter().copied().fold(0.0, f64::max);
    let det_min = tr.det_min();
    let mut metrics = BTreeMap::new();
    metrics.insert("dofs".into(), tr.states[0].coeffs.len() as f64);
    metrics.insert("steps".into(), tr.reports.len() as f64);
    if let Some(r) = tr.reports.last() {
        metrics.insert("final_energy".into(), r.energy);
    }
    metrics.insert("det_min".into(), det_min);
    metrics.insert("dissipation_sum".into(), tr.dissipation_sum());
    metrics.insert("min_slack".into(), min_slack);
    metrics.insert("max_weak_residual".into(), max_weak);
    metrics.insert(
        "newton_iters".into(),
        tr.reports.iter().map(|r| r.newton_iters).sum::<usize>() as f64,
    );
    Ok(Outcome {
        runs: vec![RunSummary {
            label: label.to_string(),
            eps: eps.map(|e| e.to_string()),
            metrics,
            tables,
        }],
        checks: vec![
            Check::ge(format!("{label} energy_inequality"), min_slack, 0.0),
            Check::ge(format!("{label} det_floor"), det_min, x.step.det_floor),
            Check::le(format!("{label} weak_residual"), max_weak, WEAK_RESIDUAL_BOUND),
        ],
    })
}

/// Heterogeneous trajectory on `Ω_ε`; also returns the final state.
pub fn micro(x: &Experiment, eps: Rational, policy: ExecPolicy, out: &mut RunDir, prefix: &str) -> Result<(Outcome, C1Field), CliError> {
    let d = domain(x, eps)?;
    let label = format!("micro[eps={eps}]");
    let p = IncrementalProblem::on_domain(&d, &x.bundle, x.step, policy).map_err(solver(&label))?;
    let tr = p.run(&x.loads, &x.grid, p.identity()).map_err(solver(&label))?;
    let o = record_trajectory(&p, &tr, x, out, prefix, &label, Some(eps))?;
    Ok((o, tr.final_state().clone()))
}

fn tensor_rows(t: &nalgebra::Matrix6<f64>) -> Vec<Vec<String>> {
    (0..6)
        .map(|a| std::iter::once(format!("E{a}")).chain((0..6).map(|b| num(t[(a, b)]))).collect())
        .collect()
}

const TENSOR_HEADER: [&str; 7] = ["basis", "E0", "E1", "E2", "E3", "E4", "E5"];

fn tensor_checks(label: &str, t: &nalgebra::Matrix6<f64>) -> (Vec<Check>, f64, f64) {
    let asym = (t - t.transpose()).abs().max();
    let min_eig = t.symmetric_eigenvalues().min();
    (
        vec![
            Check::le(format!("{label} tensor_symmetry"), asym, 1e-10),
            Check::ge(format!("{label} tensor_min_eigenvalue"), min_eig, f64::MIN_POSITIVE),
        ],
        asym,
        min_eig,
    )
}

/// Homogenized trajectory on `(0,1)²`; also returns the final state.
pub fn macro_run(x: &Experiment, policy: ExecPolicy, out: &mut RunDir, prefix: &str) -> Result<(Outcome, C1Field), CliError> {
    let label = "macro".to_string();
    let law = averaged_laws(&x.bundle, &x.cell, x.mode, policy).map_err(solver("homogenized law"))?;
    let d = macro_domain(x.macro_n, &x.dirichlet).map_err(solver("macro domain"))?;
    let p = macro_problem(&d, &law, x.step, policy).map_err(solver("macro problem"))?;
    let tr = p.run(&x.loads, &x.grid, p.identity()).map_err(solver(&label))?;
    let mut o = record_trajectory(&p, &tr, x, out, prefix, &label, None)?;
    let run = &mut o.runs[0];
    run.metrics.insert("solid_fraction".into(), law.solid_fraction);
    run.metrics.insert("gamma_length".into(), law.gamma_length);
    if let Some(t) = law.tensor() {
        run.tables.push(out.csv(&format!("{prefix}tensor.csv"), &TENSOR_HEADER, tensor_rows(t))?);
        let (checks, asym, min_eig) = tensor_checks(&label, t);
        run.metrics.insert("tensor_asymmetry".into(), asym);
        run.metrics.insert("tensor_min_eigenvalue".into(), min_eig);
        o.checks.extend(checks);
    }
    if law.mode() == HomMode::Nested {
        let (solves, hits) = law.cache_stats();
        run.metrics.insert("cell_solves".into(), solves as f64);
        run.metrics.insert("cell_cache_hits".into(), hits as f64);
    }
    Ok((o, tr.final_state().clone()))
}

/// Cell problems at random `G`, plus the tensor and basis correctors for `p = 2`.
pub fn cell(x: &Experiment, policy: ExecPolicy, out: &mut RunDir) -> Result<Outcome, CliError> {
    let cp = CellProblem::new(&x.cell, x.bundle.gradient, policy).map_err(solver("cell problem"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(x.seed);
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    let (mut max_res, mut max_u2, mut max_gap, mut max_excess, mut min_value) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..x.samples.cell {
        let c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let g = from_sym_coords(&c);
        let sol = cp.solve(&g, None).map_err(solver(&format!("cell sample {i}")))?;
        let unrelaxed = cp.unrelaxed_value(&g).map_err(solver("cell average"))?;
        let u2 = sol.u2.norms_sq(&policy).iter().sum::<f64>().sqrt();
        let gap = (sol.value - unrelaxed).abs() / unrelaxed.abs().max(f64::MIN_POSITIVE);
        max_res = max_res.max(sol.residual_norm);
        max_u2 = max_u2.max(u2);
        max_gap = max_gap.max(gap);
        max_excess = max_excess.max((sol.value - unrelaxed) / unrelaxed.abs().max(f64::MIN_POSITIVE));
        min_value = min_value.min(sol.value);
        let mut row = vec![int(i)];
        row.extend(c.iter().map(|v| num(*v)));
        row.extend([num(sol.value), num(unrelaxed), num(u2), num(sol.residual_norm), int(sol.newton_iters)]);
        rows.push(row);
        tables.push(write_state(out, &format!("solutions/sample_{i:03}.csv"), &sol.u2)?);
    }
    tables.insert(
        0,
        out.csv(
            "cell.csv",
            &["sample", "g0", "g1", "g2", "g3", "g4", "g5", "h_hom", "h_unrelaxed", "u2_norm", "residual", "newton_iters"],
            rows,
        )?,
    );
    let mut metrics = BTreeMap::new();
    metrics.insert("max_residual".into(), max_res);
    metrics.insert("max_u2_norm".into(), max_u2);
    metrics.insert("max_relative_gap".into(), max_gap);
    metrics.insert("dofs".into(), cp.space().n_dofs() as f64);
    let mut checks = vec![
        Check::le("cell stationarity", max_res, CELL_RESIDUAL_BOUND),
        Check::le("cell infimum_below_average", max_excess, 1e-12),
        Check::ge("cell nonnegative", min_value, 0.0),
    ];
    let trivial = x.cell.hole().is_none();
    let uniform = x.bundle.gradient.beta.min() == x.bundle.gradient.beta.max();
    if trivial && uniform {
        checks.push(Check::le("cell trivial_corrector", max_u2, CORRECTOR_BOUND));
        checks.push(Check::le("cell trivial_h_hom", max_gap, HOM_GAP_BOUND));
    }
    if x.bundle.gradient.is_quadratic() {
        let t = homogenized_tensor(&cp).map_err(solver("homogenized tensor"))?;
        tables.push(out.csv("tensor.csv", &TENSOR_HEADER, tensor_rows(&t))?);
        let (tc, asym, min_eig) = tensor_checks("cell", &t);
        metrics.insert("tensor_asymmetry".into(), asym);
        metrics.insert("tensor_min_eigenvalue".into(), min_eig);
        checks.extend(tc);
        let basis = basis_correctors(&cp).map_err(solver("basis correctors"))?;
        for (a, s) in basis.iter().enumerate() {
            tables.push(write_state(out, &format!("correctors/basis_{a}.csv"), &s.u2)?);
        }
    }
    Ok(Outcome {
        runs: vec![RunSummary {
            label: "cell".into(),
            eps: None,
            metrics,
            tables,
        }],
        checks,
    })
}

/// Korn constants of the configured coefficient fields, and the Poincaré constant.
pub fn korn(x: &Experiment, eps: Rational, policy: ExecPolicy, out: &mut RunDir, prefix: &str) -> Result<Outcome, CliError> {
    let d = domain(x, eps)?;
    let label = format!("korn[eps={eps}]");
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut metrics = BTreeMap::new();
    for kind in &x.fields {
        let a = CoefficientField::certify(*kind, 1.0, &d, x.certification_grid)
            .map_err(|e| CliError::config("korn.fields", e.to_string()))?;
        let c = korn_constant(&d, &a, &x.eigen, &policy).map_err(solver(&format!("{label} {}", a.name())))?;
        rows.push(vec![
            a.name().to_string(),
            eps.to_string(),
            int(c.dof_count),
            num(c.value),
            num(c.eigenvalue),
            num(c.eigen_residual),
            int(c.iterations),
            num(a.mu0),
        ]);
        metrics.insert(format!("{}_value", a.name()), c.value);
        checks.push(Check::le(format!("{label} {} eigen_residual", a.name()), c.eigen_residual, EIGEN_RESIDUAL_BOUND));
        if a.name() == "identity" {
            checks.push(Check::ge(format!("{label} identity_at_least_one"), c.value, 1.0));
        }
    }
    if x.poincare {
        let c = poincare_constant(&d, &x.eigen, &policy).map_err(solver(&format!("{label} poincare")))?;
        rows.push(vec![
            "poincare".into(),
            eps.to_string(),
            int(c.dof_count),
            num(c.value),
            num(c.eigenvalue),
            num(c.eigen_residual),
            int(c.iterations),
            num(f64::NAN),
        ]);
        metrics.insert("poincare_value".into(), c.value);
        checks.push(Check::le(format!("{label} poincare eigen_residual"), c.eigen_residual, EIGEN_RESIDUAL_BOUND));
    }
    let t = out.csv(
        &format!("{prefix}constants.csv"),
        &["field", "eps", "dof_count", "value", "eigenvalue", "eigen_residual", "iterations", "mu0"],
        rows,
    )?;
    Ok(Outcome {
        runs: vec![RunSummary {
            label,
            eps: Some(eps.to_string()),
            metrics,
            tables: vec![t],
        }],
        checks,
    })
}

fn sample_seed(x: &Experiment, i: usize) -> u64 {
    x.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

/// Extension norm ratios over a random corpus.
pub fn extend(x: &Experiment, eps: Rational, policy: ExecPolicy, out: &mut RunDir, prefix: &str) -> Result<Outcome, CliError> {
    let d = domain(x, eps)?;
    let label = format!("extend[eps={eps}]");
    let sp = C1Space::on_domain(&d);
    let mut rows = Vec::new();
    let mut max = [0.0f64; 3];
    let mut mismatches = 0usize;
    let mut nonfinite = 0usize;
    for i in 0..x.samples.extend {
        let seed = sample_seed(x, i);
        let u = C1Field::random(&sp, seed);
        let e = extend_field(&d, &u, &policy).map_err(solver(&label))?;
        if restrict_field(&d, &e).coeffs != u.coeffs {
            mismatches += 1;
        }
        let r = extension_ratios(&d, &u, &policy).map_err(solver(&label))?;
        nonfinite += r.iter().filter(|v| !v.is_finite()).count();
        for (m, v) in max.iter_mut().zip(r) {
            *m = m.max(v);
        }
        rows.push(vec![int(i), seed.to_string(), num(r[0]), num(r[1]), num(r[2])]);
    }
    let t = out.csv(
        &format!("{prefix}extension.csv"),
        &["sample", "seed", "ratio_l2", "ratio_grad", "ratio_hess"],
        rows,
    )?;
    let mut metrics = BTreeMap::new();
    for (name, v) in ["max_ratio_l2", "max_ratio_grad", "max_ratio_hess"].iter().zip(max) {
        metrics.insert(name.to_string(), v);
    }
    Ok(Outcome {
        runs: vec![RunSummary {
            label: label.clone(),
            eps: Some(eps.to_string()),
            metrics,
            tables: vec![t],
        }],
        checks: vec![
            Check::le(format!("{label} restriction_is_identity"), mismatches as f64, 0.0),
            Check::le(format!("{label} nonfinite_ratios"), nonfinite as f64, 0.0),
        ],
    })
}

/// Unfolding isometry over a random corpus; persists the samples of the first field.
pub fn unfold_run(x: &Experiment, eps: Rational, policy: ExecPolicy, out: &mut RunDir, prefix: &str) -> Result<Outcome, CliError> {
    let d = domain(x, eps)?;
    let label = format!("unfold[eps={eps}]");
    let sp = C1Space::on_domain(&d);
    let sampling = Sampling::default();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut tables = Vec::new();
    for i in 0..x.samples.unfold {
        let seed = sample_seed(x, i);
        let u = C1Field::random(&sp, seed);
        let s = unfold(&d, &u, Order::Value, &sampling, &policy).map_err(solver(&label))?;
        let direct = u.norms_sq(&policy)[0];
        let diff = (s.norm_sq() - direct).abs();
        let scale = direct.max(1.0);
        worst = worst.max(diff / scale);
        rows.push(vec![int(i), seed.to_string(), num(direct), num(s.norm_sq()), num(diff), num(scale)]);
        if i == 0 {
            let g = unfold(&d, &u, Order::Grad, &sampling, &policy).map_err(solver(&label))?;
            tables.push(out.csv(
                &format!("{prefix}samples_grad.csv"),
                &["k1", "k2", "y1", "y2", "d11", "d12", "d21", "d22"],
                g.rows().map(|r| r.into_iter().map(num).collect()),
            )?);
        }
    }
    tables.insert(
        0,
        out.csv(
            &format!("{prefix}unfold.csv"),
            &["sample", "seed", "direct_norm_sq", "unfolded_norm_sq", "abs_diff", "scale"],
            rows,
        )?,
    );
    let mut metrics = BTreeMap::new();
    metrics.insert("max_relative_defect".into(), worst);
    Ok(Outcome {
        runs: vec![RunSummary {
            label: label.clone(),
            eps: Some(eps.to_string()),
            metrics,
            tables,
        }],
        checks: vec![Check::le(format!("{label} isometry"), worst, UNFOLD_BOUND)],
    })
}

/// Micro runs over the `ε` list against one macro run.
pub fn compare(x: &Experiment, policy: ExecPolicy, out: &mut RunDir) -> Result<Outcome, CliError> {
    let mut o = Outcome::default();
    let (mo, macro_final) = macro_run(x, policy, out, "macro/")?;
    o.merge(mo);
    let sampling = Sampling {
        region: Region::Full,
        ..Sampling::default()
    };
    let mut rows = Vec::new();
    let mut grads = Vec::new();
    let mut eps_sorted = x.eps.clone();
    eps_sorted.sort_by(|a, b| b.cmp(a));
    for &eps in &eps_sorted {
        let (mo, u) = micro(x, eps, policy, out, &format!("{}/", eps_tag(eps)))?;
        o.merge(mo);
        let d = domain(x, eps)?;
        let e = extend_field(&d, &u, &policy).map_err(solver("extension"))?;
        let dist = |order| {
            two_scale_distance(&d, &e, &macro_final, None, order, &sampling, &policy).map_err(solver("two-scale distance"))
        };
        let (dv, dg) = (dist(Order::Value)?, dist(Order::Grad)?);
        grads.push(dg);
        rows.push(vec![eps.to_string(), num(eps.to_f64().unwrap_or(f64::NAN)), num(dv), num(dg)]);
    }
    let t = out.csv("distance.csv", &["eps", "eps_value", "value_distance", "grad_distance"], rows)?;
    let worst = grads.windows(2).map(|w| w[1] / w[0]).fold(0.0f64, f64::max);
    let mut metrics = BTreeMap::new();
    for (e, g) in eps_sorted.iter().zip(&grads) {
        metrics.insert(format!("grad_distance[eps={e}]"), *g);
    }
    metrics.insert("max_distance_ratio".into(), worst);
    o.runs.push(RunSummary {
        label: "distance".into(),
        eps: None,
        metrics,
        tables: vec![t],
    });
    if grads.len() > 1 {
        o.checks.push(Check::le("compare grad_distance_decrease", worst, DISTANCE_RATIO_BOUND));
    }
    Ok(o)
}

/// Runs one `ε`-dependent command at `eps`.
pub fn run_at(cmd: Command, x: &Experiment, eps: Rational, policy: ExecPolicy, out: &mut RunDir, prefix: &str) -> Result<Outcome, CliError> {
    match cmd {
        Command::Micro => Ok(micro(x, eps, policy, out, prefix)?.0),
        Command::Korn => korn(x, eps, policy, out, prefix),
        Command::Extend => extend(x, eps, policy, out, prefix),
        Command::Unfold => unfold_run(x, eps, policy, out, prefix),
        other => Err(CliError::config("subcommand", format!("{} does not take an eps value", other.name()))),
    }
}

/// Sweep-level checks over per-`ε` outcomes.
pub fn sweep_checks(cmd: Command, runs: &[RunSummary]) -> (Vec<Check>, BTreeMap<String, f64>) {
    let mut checks = Vec::new();
    let mut metrics = BTreeMap::new();
    let series = |key: &str| -> Vec<f64> { runs.iter().filter_map(|r| r.metrics.get(key).copied()).collect() };
    let spread = |v: &[f64]| {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    };
    match cmd {
        Command::Micro => {
            let det = series("det_min");
            let worst = det.windows(2).map(|w| w[0].max(w[1]) / w[0].min(w[1])).fold(1.0f64, f64::max);
            metrics.insert("det_min_consecutive_ratio".into(), worst);
            metrics.insert("max_dissipation_sum".into(), series("dissipation_sum").into_iter().fold(0.0, f64::max));
            checks.push(Check::le("sweep det_min_spread", worst, DET_SPREAD_BOUND));
        }
        Command::Korn => {
            let mut keys: Vec<&String> = runs.iter().flat_map(|r| r.metrics.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let s = spread(&series(k));
                let name = k.trim_end_matches("_value");
                metrics.insert(format!("{name}_spread"), s);
                if name == "poincare" {
                    continue;
                }
                checks.push(Check::le(format!("sweep {name} max_over_min"), s, KORN_SPREAD_BOUND));
            }
        }
        Command::Extend => {
            for k in ["max_ratio_l2", "max_ratio_grad", "max_ratio_hess"] {
                metrics.insert(format!("sweep_{k}"), series(k).into_iter().fold(0.0, f64::max));
            }
        }
        Command::Unfold => {
            metrics.insert(
                "max_relative_defect".into(),
                series("max_relative_defect").into_iter().fold(0.0, f64::max),
            );
        }
        _ => {}
    }
    (checks, metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(metrics: &[(&str, f64)]) -> RunSummary {
        RunSummary {
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            ..RunSummary::default()
        }
    }

    #[test]
    fn numbers_round_trip_through_tables() {
        for v in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(eps_tag(Rational::new(1, 8)), "eps-1_8");
    }

    #[test]
    fn run_dir_starts_empty_and_records_tables() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        std::fs::create_dir_all(&root).unwrap();
        std::fs::write(root.join("old.csv"), "x\n").unwrap();
        let mut d = RunDir::create(root.clone()).unwrap();
        assert!(!root.join("old.csv").exists());
        let rel = d.csv("a/b.csv", &["x", "y"], [vec![int(1), num(0.5)]]).unwrap();
        assert_eq!(rel, "a/b.csv");
        assert_eq!(std::fs::read_to_string(root.join(rel)).unwrap(), "x,y\n1,5e-1\n");
        assert_eq!(d.tables, ["a/b.csv"]);
    }

    #[test]
    fn korn_sweep_checks_skip_poincare() {
        let runs = [
            summary(&[("identity_value", 2.0), ("poincare_value", 1.0)]),
            summary(&[("identity_value", 2.5), ("poincare_value", 9.0)]),
        ];
        let (checks, metrics) = sweep_checks(Command::Korn, &runs);
        assert_eq!(checks.len(), 1);
        assert!(checks[0].passed);
        assert_eq!(metrics["poincare_spread"], 9.0);
    }

    #[test]
    fn micro_sweep_compares_consecutive_minima() {
        let runs = [summary(&[("det_min", 0.9)]), summary(&[("det_min", 0.3)]), summary(&[("det_min", 0.5)])];
        let (checks, metrics) = sweep_checks(Command::Micro, &runs);
        assert_eq!(metrics["det_min_consecutive_ratio"], 3.0);
        assert!(!checks[0].passed);
    }
}
