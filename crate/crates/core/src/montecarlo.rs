//! Monte Carlo estimates over independent seeded environments, bisection for
//! finite-window critical points, and statistical checks of transition laws.
//!
//! Every trial draws its environment lazily from `derive_seed(master, i)`, so
//! results do not depend on thread count; per-trial values are reduced in
//! trial order.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::clusters::{
    backward_cluster, classify_b_shape, communicating_cluster, interval_chain, Bfs, Orientation, Shape,
};
use crate::duality::{verify_duality, DualLattice};
use crate::error::{DreError, Result};
use crate::lattice::{site_uniform, ArrowSet, LazyEnvironment, Lattice, ModelId, Site, Window};
use crate::rng::derive_seed;
use crate::walks::seoa_path;

/// What a trial measures about the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    /// `C_o` touches the window edge (θ_+).
    BoundaryReachC,
    /// `B_o` touches the window edge (θ_−).
    BoundaryReachB,
    /// `M_o` touches the window edge (θ).
    BoundaryReachM,
    /// `|M_o|`.
    ClusterSizeM,
    /// `B_o` has the given shape.
    Classification(Shape),
    /// Oriented triangular site percolation with open probability `p`:
    /// open sites step to `x−e₁`, `x+e₂`, `x−e₁+e₂`. The origin is taken
    /// open, as `o ∈ B_o` always, and the trial asks whether its cluster
    /// touches the window edge.
    OtspReach,
    Custom(CustomStatistic),
}

#[derive(Debug, Clone, Copy)]
pub struct CustomStatistic {
    pub name: &'static str,
    /// Values are 0/1 and the standard error is binomial.
    pub proportion: bool,
    pub eval: fn(&LazyEnvironment) -> Result<f64>,
}

impl PartialEq for CustomStatistic {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.proportion == other.proportion
    }
}

impl Statistic {
    pub fn name(&self) -> String {
        match self {
            Statistic::BoundaryReachC => "reach_C".into(),
            Statistic::BoundaryReachB => "reach_B".into(),
            Statistic::BoundaryReachM => "reach_M".into(),
            Statistic::ClusterSizeM => "size_M".into(),
            Statistic::Classification(s) => format!("shape_{}", s.name()),
            Statistic::OtspReach => "reach_OTSP".into(),
            Statistic::Custom(c) => c.name.into(),
        }
    }

    pub fn is_proportion(&self) -> bool {
        match self {
            Statistic::ClusterSizeM => false,
            Statistic::Custom(c) => c.proportion,
            _ => true,
        }
    }

    pub fn parse(name: &str) -> Result<Statistic> {
        Ok(match name {
            "reach_C" | "C" | "theta_plus" => Statistic::BoundaryReachC,
            "reach_B" | "B" | "theta_minus" => Statistic::BoundaryReachB,
            "reach_M" | "M" | "theta" => Statistic::BoundaryReachM,
            "size_M" => Statistic::ClusterSizeM,
            "reach_OTSP" | "otsp" => Statistic::OtspReach,
            s => {
                let shape = s.strip_prefix("shape_").and_then(|t| {
                    [Shape::Finite, Shape::FullWindow, Shape::BlockedAbove, Shape::BlockedBelow, Shape::Indeterminate]
                        .into_iter()
                        .find(|sh| sh.name() == t)
                });
                match shape {
                    Some(sh) => Statistic::Classification(sh),
                    None => return Err(DreError::InvalidArgument(format!("unknown statistic {s}"))),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub model: ModelId,
    pub radius: i64,
    pub trials: usize,
    pub master_seed: u64,
    pub statistic: Statistic,
}

impl TrialPlan {
    pub fn new(model: ModelId, radius: i64, trials: usize, master_seed: u64, statistic: Statistic) -> Result<Self> {
        if trials == 0 {
            return Err(DreError::InvalidArgument("trials must be at least 1".into()));
        }
        Window::square(model.dim, radius)?;
        if statistic == Statistic::OtspReach && model.dim != 2 {
            return Err(DreError::UnsupportedDimension(model.dim));
        }
        Ok(TrialPlan { model, radius, trials, master_seed, statistic })
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        let mut model = self.model;
        model.p = p;
        ModelId::parse(&model.name(), p, model.dim)?;
        Ok(TrialPlan { model, ..self.clone() })
    }

    pub fn trial_seed(&self, i: usize) -> u64 {
        derive_seed(self.master_seed, i as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub model: String,
    pub p: f64,
    #[serde(rename = "M")]
    pub radius: i64,
    pub trials: usize,
    pub statistic: String,
    pub estimate: f64,
    pub se: f64,
    pub seed: u64,
    pub seconds: f64,
}

impl EstimateRecord {
    pub const CSV_HEADER: &'static str = "model,p,M,trials,statistic,estimate,se,seed,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{},{:.3}",
            self.model, self.p, self.radius, self.trials, self.statistic, self.estimate, self.se, self.seed, self.seconds
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serialises")
    }

    /// Equality of everything but wall time.
    pub fn same_result(&self, other: &EstimateRecord) -> bool {
        EstimateRecord { seconds: 0.0, ..self.clone() } == EstimateRecord { seconds: 0.0, ..other.clone() }
    }

    /// `estimate ± k·se`.
    pub fn interval(&self, k: f64) -> (f64, f64) {
        (self.estimate - k * self.se, self.estimate + k * self.se)
    }
}

pub fn write_csv<W: Write>(records: &[EstimateRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", EstimateRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

pub fn write_jsonl<W: Write>(records: &[EstimateRecord], out: &mut W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json())?;
    }
    Ok(())
}

/// Observed value against its expectation, with a standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZCheck {
    pub label: String,
    pub observed: f64,
    pub expected: f64,
    pub se: f64,
    pub n: u64,
}

impl ZCheck {
    /// Frequency `hits/n` against `expected`, with the binomial SE under `expected`.
    pub fn proportion(label: impl Into<String>, hits: u64, n: u64, expected: f64) -> Self {
        let observed = if n == 0 { f64::NAN } else { hits as f64 / n as f64 };
        let se = (expected * (1.0 - expected) / n.max(1) as f64).sqrt();
        ZCheck { label: label.into(), observed, expected, se, n }
    }

    /// Sample mean against `expected`, with the sample SE.
    pub fn mean(label: impl Into<String>, values: &[f64], expected: f64) -> Self {
        let (observed, se) = mean_se(values);
        ZCheck { label: label.into(), observed, expected, se, n: values.len() as u64 }
    }

    pub fn z(&self) -> f64 {
        let d = self.observed - self.expected;
        if self.se > 0.0 {
            d / self.se
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, k: f64) -> bool {
        self.z().abs() <= k
    }
}

impl std::fmt::Display for ZCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} observed={:.5} expected={:.5} se={:.5} z={:+.2} n={}",
            self.label,
            self.observed,
            self.expected,
            self.se,
            self.z(),
            self.n
        )
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// Trials

fn otsp_reach(window: &Window, p: f64, seed: u64) -> bool {
    let open = |s: &Site| site_uniform(seed, s) < p;
    let o = Site::origin(2);
    let moves = [(-1, 0), (0, 1), (-1, 1)];
    let mut seen = HashSet::from([(0i64, 0i64)]);
    let mut stack = vec![o];
    while let Some(s) = stack.pop() {
        if window.is_edge(&s) {
            return true;
        }
        for (dx, dy) in moves {
            let t = Site::xy(s.x() + dx, s.y() + dy);
            if window.contains(&t) && open(&t) && seen.insert((t.x(), t.y())) {
                stack.push(t);
            }
        }
    }
    false
}

fn trial_value(plan: &TrialPlan, window: &Window, seed: u64, bfs: &mut Bfs) -> Result<f64> {
    let origin = Site::origin(plan.model.dim);
    if plan.statistic == Statistic::OtspReach {
        return Ok(otsp_reach(window, plan.model.p, seed) as u8 as f64);
    }
    let env = LazyEnvironment::new(plan.model.measure(), window.clone(), seed)?;
    let o = window.index(&origin);
    let all = ArrowSet::full(plan.model.dim);
    Ok(match plan.statistic {
        Statistic::BoundaryReachC => bfs.run(&env, o, Orientation::Forward, all, true) as u8 as f64,
        Statistic::BoundaryReachB => bfs.run(&env, o, Orientation::Backward, all, true) as u8 as f64,
        Statistic::BoundaryReachM => communicating_cluster(&env, &origin)?.touches_boundary as u8 as f64,
        Statistic::ClusterSizeM => communicating_cluster(&env, &origin)?.len() as f64,
        Statistic::Classification(shape) => (classify_b_shape(&env, &origin)?.shape == shape) as u8 as f64,
        Statistic::Custom(c) => (c.eval)(&env)?,
        Statistic::OtspReach => unreachable!(),
    })
}

/// Per-trial values in trial order.
pub fn run_trials(plan: &TrialPlan) -> Result<Vec<f64>> {
    let window = Window::square(plan.model.dim, plan.radius)?;
    (0..plan.trials)
        .into_par_iter()
        .map_init(Bfs::new, |bfs, i| trial_value(plan, &window, plan.trial_seed(i), bfs))
        .collect()
}

pub fn estimate_theta(plan: &TrialPlan) -> Result<EstimateRecord> {
    let start = Instant::now();
    let values = run_trials(plan)?;
    let n = values.len() as f64;
    let estimate = values.iter().sum::<f64>() / n;
    let se = if plan.statistic.is_proportion() {
        (estimate * (1.0 - estimate) / n).sqrt()
    } else {
        mean_se(&values).1
    };
    Ok(EstimateRecord {
        model: plan.model.name(),
        p: plan.model.p,
        radius: plan.radius,
        trials: plan.trials,
        statistic: plan.statistic.name(),
        estimate,
        se,
        seed: plan.master_seed,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub points: Vec<EstimateRecord>,
}

/// `plan` re-run at each `p` of a strictly increasing grid.
pub fn survival_curve(plan: &TrialPlan, grid: &[f64]) -> Result<SurvivalCurve> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DreError::InvalidArgument("p grid must be nonempty and strictly increasing".into()));
    }
    let points = grid.iter().map(|&p| estimate_theta(&plan.with_p(p)?)).collect::<Result<_>>()?;
    Ok(SurvivalCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub theta_plus: EstimateRecord,
    pub theta_minus: EstimateRecord,
    pub lhs: f64,
    pub rhs: f64,
    pub pooled_se: f64,
    pub z: f64,
}

/// `θ̂_+` against `p·θ̂_−` for a model `(A ∅)`, from independent seed streams.
pub fn check_theta_identity(model: &ModelId, radius: i64, trials: usize, seed: u64) -> Result<IdentityCheck> {
    if model.atoms().1 != ArrowSet::EMPTY {
        return Err(DreError::InvalidArgument(format!("{} is not of the form (A 0)", model.name())));
    }
    let plus = estimate_theta(&TrialPlan::new(*model, radius, trials, derive_seed(seed, 1), Statistic::BoundaryReachC)?)?;
    let minus = estimate_theta(&TrialPlan::new(*model, radius, trials, derive_seed(seed, 2), Statistic::BoundaryReachB)?)?;
    let p = model.p;
    let pooled_se = (plus.se.powi(2) + (p * minus.se).powi(2)).sqrt();
    let (lhs, rhs) = (plus.estimate, p * minus.estimate);
    let z = if pooled_se > 0.0 { (lhs - rhs) / pooled_se } else if lhs == rhs { 0.0 } else { f64::INFINITY };
    Ok(IdentityCheck { theta_plus: plus, theta_minus: minus, lhs, rhs, pooled_se, z })
}

// ---------------------------------------------------------------------------
// Bisection

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectResult {
    pub pc: f64,
    pub lo: f64,
    pub hi: f64,
    /// `(p, estimate, se)` in probe order.
    pub probes: Vec<(f64, f64, f64)>,
    pub converged: bool,
}

pub const BISECT_TRIALS: usize = 2000;
pub const BISECT_TOL: f64 = 0.005;
pub const BISECT_MAX_PROBES: usize = 25;

/// Bisects an increasing `f` for `f(p) = target` on `[lo, hi]`.
pub fn bisect_monotone(
    mut f: impl FnMut(f64) -> Result<(f64, f64)>,
    mut lo: f64,
    mut hi: f64,
    target: f64,
    tol: f64,
    max_probes: usize,
) -> Result<BisectResult> {
    if !(lo < hi) || tol <= 0.0 || max_probes < 3 {
        return Err(DreError::InvalidArgument(format!("bad bisection setup lo={lo} hi={hi} tol={tol}")));
    }
    let mut probes = Vec::new();
    let (flo, slo) = f(lo)?;
    probes.push((lo, flo, slo));
    let (fhi, shi) = f(hi)?;
    probes.push((hi, fhi, shi));
    if !(flo < target && fhi >= target) {
        return Err(DreError::InvalidArgument(format!(
            "endpoints do not bracket {target}: f({lo})={flo:.4}, f({hi})={fhi:.4}"
        )));
    }
    while hi - lo > tol && probes.len() < max_probes {
        let mid = 0.5 * (lo + hi);
        let (fm, sm) = f(mid)?;
        probes.push((mid, fm, sm));
        if fm < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BisectResult { pc: 0.5 * (lo + hi), lo, hi, probes, converged: hi - lo <= tol })
}

/// Models whose boundary-reach statistics are monotone in `p`: `(A ∅)`
/// percolation models, and the direct OTSP simulation.
pub fn bisect_allowed(model: &ModelId, statistic: Statistic) -> bool {
    match statistic {
        Statistic::OtspReach => true,
        Statistic::BoundaryReachC | Statistic::BoundaryReachB | Statistic::BoundaryReachM => {
            model.atoms().1 == ArrowSet::EMPTY
        }
        _ => false,
    }
}

/// Finite-window pseudo-critical point: where the plan's statistic crosses
/// `target`. Every probe reuses the plan's seeds, so the estimates are
/// monotone in `p` through the coupling.
pub fn bisect_pc(plan: &TrialPlan, lo: f64, hi: f64, target: f64, tol: f64) -> Result<BisectResult> {
    if !bisect_allowed(&plan.model, plan.statistic) {
        return Err(DreError::InvalidArgument(format!(
            "bisection needs a monotone percolation statistic; {} with {} is not one",
            plan.model.name(),
            plan.statistic.name()
        )));
    }
    bisect_monotone(
        |p| {
            let r = estimate_theta(&plan.with_p(p)?)?;
            Ok((r.estimate, r.se))
        },
        lo,
        hi,
        target,
        tol,
        BISECT_MAX_PROBES,
    )
}

// ---------------------------------------------------------------------------
// Transition laws

/// Runs `per_chain` over chains `0, 1, …` in fixed-size parallel batches
/// until `enough` holds for the merged output, merging in chain order.
fn collect_chains<T: Send>(
    seed: u64,
    mut acc: T,
    per_chain: impl Fn(u64) -> Result<T> + Sync,
    merge: impl Fn(&mut T, T),
    enough: impl Fn(&T) -> bool,
) -> Result<T> {
    const BATCH: u64 = 1024;
    let mut next = 0u64;
    while !enough(&acc) {
        let batch: Vec<Result<T>> = (next..next + BATCH).into_par_iter().map(|i| per_chain(derive_seed(seed, i))).collect();
        for r in batch {
            merge(&mut acc, r?);
            if enough(&acc) {
                break;
            }
        }
        next += BATCH;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnRow {
    pub k: u64,
    pub n: u64,
    pub to_zero: ZCheck,
    pub stay: ZCheck,
    pub grow: ZCheck,
}

/// Row widths `D_n` of `B_o` in `(↔ ↑)` (`p = μ(↔)`) against
/// `α(k) = p^k`, stay `(1−p)²(1−p^k)` and growth `β(k) = (1−p^k)p(2−p)`, for
/// `k ≤ 6`. `samples` counts recorded transitions out of states `k ≤ 6`.
pub fn dn_transition_test(p: f64, samples: u64, seed: u64) -> Result<Vec<DnRow>> {
    let model = ModelId::parse("WE-N", p, 2)?;
    let window = Window::square(2, 40)?;
    const KMAX: usize = 6;
    // counts[k] = [to zero, stay, grow]
    type Counts = [[u64; 3]; KMAX + 1];
    let per_chain = |s: u64| -> Result<Counts> {
        let env = LazyEnvironment::new(model.measure(), window.clone(), s)?;
        let chain = interval_chain(&env, &Site::origin(2), &model)?;
        let mut c = [[0u64; 3]; KMAX + 1];
        for pair in chain.rows.windows(2) {
            let Some((lo, hi)) = pair[0].interval else { break };
            let k = (hi - lo + 1) as usize;
            // Keep states well inside the window so growth is never clipped.
            if k > KMAX || lo - window.lo(0) < 20 || window.hi(0) - hi < 20 {
                continue;
            }
            let next = pair[1].interval.map(|(a, b)| (b - a + 1) as usize).unwrap_or(0);
            let slot = if next == 0 { 0 } else if next == k { 1 } else { 2 };
            c[k][slot] += 1;
        }
        Ok(c)
    };
    let total = |c: &Counts| c.iter().flatten().sum::<u64>();
    let counts = collect_chains(
        seed,
        [[0u64; 3]; KMAX + 1],
        per_chain,
        |acc, c| {
            for k in 0..=KMAX {
                for j in 0..3 {
                    acc[k][j] += c[k][j];
                }
            }
        },
        |acc| total(acc) >= samples,
    )?;
    Ok((1..=KMAX as u64)
        .map(|k| {
            let c = counts[k as usize];
            let n = c.iter().sum();
            let pk = p.powi(k as i32);
            DnRow {
                k,
                n,
                to_zero: ZCheck::proportion(format!("D:{k}->0"), c[0], n, pk),
                stay: ZCheck::proportion(format!("D:{k}->{k}"), c[1], n, (1.0 - p).powi(2) * (1.0 - pk)),
                grow: ZCheck::proportion(format!("D:{k}->more"), c[2], n, (1.0 - pk) * p * (2.0 - p)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LuWalkReport {
    /// `ΔL⁰ = j` for `j` in `−4..=4`.
    pub dl: Vec<ZCheck>,
    /// `ΔU⁰ = j` for `j` in `0..=4`.
    pub du: Vec<ZCheck>,
    pub mean_dl: ZCheck,
    pub mean_du: ZCheck,
    /// Transitions where `(L_{n+1}, U_{n+1})` was compared with the walk step.
    pub coupling_checked: u64,
    pub coupling_mismatches: u64,
}

/// Law of the lower-edge step read off the row below: from an `A` site the
/// edge moves left over a run of `A` sites, otherwise right to the next `A`.
/// `None` if the scan leaves the window.
fn lower_edge_step<L: Lattice + ?Sized>(env: &L, col: i64, row: i64, a: ArrowSet) -> Option<i64> {
    let at = |x: i64| env.arrows(&Site::xy(x, row));
    if at(col)? == a {
        let mut l = col;
        while at(l - 1)? == a {
            l -= 1;
        }
        Some(l - col)
    } else {
        let mut j = col + 1;
        while at(j)? != a {
            j += 1;
        }
        Some(j - col)
    }
}

/// Upper-edge step: the run of non-`A` sites right of `col`.
fn upper_edge_step<L: Lattice + ?Sized>(env: &L, col: i64, row: i64, a: ArrowSet) -> Option<i64> {
    let mut j = col + 1;
    while env.arrows(&Site::xy(j, row))? != a {
        j += 1;
    }
    Some(j - 1 - col)
}

/// `(NE ←)` row edges against the walks `L⁰`, `U⁰` (`p = μ(NE)`), and the
/// exact coupling `(L_{n+1}, U_{n+1}) = (L⁰_{n+1}, U⁰_{n+1})` on survival.
pub fn lu_walk_test(p: f64, samples: u64, seed: u64) -> Result<LuWalkReport> {
    let model = ModelId::parse("NE-W", p, 2)?;
    let ne = ArrowSet::from_letters("NE").unwrap();
    let window = Window::square(2, 60)?;
    #[derive(Default)]
    struct Acc {
        dl: Vec<i64>,
        du: Vec<i64>,
        checked: u64,
        mismatches: u64,
    }
    let per_chain = |s: u64| -> Result<Acc> {
        let env = LazyEnvironment::new(model.measure(), window.clone(), s)?;
        let chain = interval_chain(&env, &Site::origin(2), &model)?;
        let mut acc = Acc::default();
        for pair in chain.rows.windows(2) {
            let Some((l0, u0)) = pair[0].interval else { break };
            if l0 - window.lo(0) < 20 || window.hi(0) - u0 < 20 {
                break;
            }
            let row = -(pair[1].level as i64);
            let (Some(a), Some(b)) = (lower_edge_step(&env, l0, row, ne), upper_edge_step(&env, u0, row, ne)) else {
                break;
            };
            acc.dl.push(a);
            acc.du.push(b);
            let (l, u) = (l0 + a, u0 + b);
            acc.checked += 1;
            let agrees = match pair[1].interval {
                Some(iv) => l <= u0 && iv == (l, u),
                None => l > u0,
            };
            acc.mismatches += (!agrees) as u64;
        }
        Ok(acc)
    };
    let acc = collect_chains(
        seed,
        Acc::default(),
        per_chain,
        |a, b| {
            a.dl.extend(b.dl);
            a.du.extend(b.du);
            a.checked += b.checked;
            a.mismatches += b.mismatches;
        },
        |a| a.dl.len() as u64 >= samples,
    )?;
    let n = acc.dl.len() as u64;
    let count = |v: &[i64], j: i64| v.iter().filter(|&&x| x == j).count() as u64;
    let law_l = |j: i64| if j <= 0 { p.powi((1 - j) as i32) * (1.0 - p) } else { p * (1.0 - p).powi(j as i32) };
    let dl = (-4..=4).map(|j| ZCheck::proportion(format!("dL={j}"), count(&acc.dl, j), n, law_l(j))).collect();
    let du = (0..=4)
        .map(|j| ZCheck::proportion(format!("dU={j}"), count(&acc.du, j), n, p * (1.0 - p).powi(j as i32)))
        .collect();
    let f = |v: &[i64]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    Ok(LuWalkReport {
        dl,
        du,
        mean_dl: ZCheck::mean("E[dL]", &f(&acc.dl), (1.0 - p) / p - p * p / (1.0 - p)),
        mean_du: ZCheck::mean("E[dU]", &f(&acc.du), (1.0 - p) / p),
        coupling_checked: acc.checked,
        coupling_mismatches: acc.mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    /// `(mean X_n, se)` for `n = 0..=n_max`.
    pub means: Vec<(f64, f64)>,
    /// Paired increments `X_{n+1} − X_n` against 0.
    pub increments: Vec<ZCheck>,
}

/// `X_n = #{x : x₁+x₂ = −n, x → o}` in `(↑ →)` (`p = μ(↑)`).
pub fn martingale_test(p: f64, radius: i64, trials: usize, n_max: usize, seed: u64) -> Result<MartingaleReport> {
    if n_max as i64 >= radius {
        return Err(DreError::InvalidArgument(format!("n_max {n_max} must be below the radius {radius}")));
    }
    let model = ModelId::parse("N-E", p, 2)?;
    let window = Window::square(2, radius)?;
    let rows: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let env = LazyEnvironment::new(model.measure(), window.clone(), derive_seed(seed, i as u64))?;
            let b = backward_cluster(&env, &Site::origin(2))?;
            let mut x = vec![0.0; n_max + 1];
            for s in b.sites() {
                let n = -(s.x() + s.y());
                if (0..=n_max as i64).contains(&n) {
                    x[n as usize] += 1.0;
                }
            }
            Ok(x)
        })
        .collect::<Result<_>>()?;
    let column = |n: usize| rows.iter().map(|r| r[n]).collect::<Vec<_>>();
    let means = (0..=n_max).map(|n| mean_se(&column(n))).collect();
    let increments = (0..n_max)
        .map(|n| {
            let d: Vec<f64> = rows.iter().map(|r| r[n + 1] - r[n]).collect();
            ZCheck::mean(format!("X{}-X{}", n + 1, n), &d, 0.0)
        })
        .collect();
    Ok(MartingaleReport { means, increments })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MSizeRow {
    #[serde(rename = "M")]
    pub radius: i64,
    pub trials: usize,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
    pub touch_rate: f64,
    pub touch_se: f64,
}

/// `|M_o|` and its boundary-touch rate at each radius; every radius uses
/// the same seeds, so windows are nested copies of one environment.
pub fn m_size_stats(model: &ModelId, radii: &[i64], trials: usize, seed: u64) -> Result<Vec<MSizeRow>> {
    radii
        .iter()
        .map(|&radius| {
            let window = Window::square(model.dim, radius)?;
            let origin = Site::origin(model.dim);
            let obs: Vec<(f64, bool)> = (0..trials)
                .into_par_iter()
                .map(|i| {
                    let env = LazyEnvironment::new(model.measure(), window.clone(), derive_seed(seed, i as u64))?;
                    let m = communicating_cluster(&env, &origin)?;
                    Ok((m.len() as f64, m.touches_boundary))
                })
                .collect::<Result<_>>()?;
            let mut sizes: Vec<f64> = obs.iter().map(|o| o.0).collect();
            let (mean, se) = mean_se(&sizes);
            sizes.sort_by(f64::total_cmp);
            let q = |f: f64| sizes[((sizes.len() - 1) as f64 * f).round() as usize];
            let touch = obs.iter().filter(|o| o.1).count() as f64 / trials as f64;
            Ok(MSizeRow {
                radius,
                trials,
                mean,
                se,
                median: q(0.5),
                q90: q(0.9),
                q99: q(0.99),
                max: q(1.0),
                touch_rate: touch,
                touch_se: (touch * (1.0 - touch) / trials as f64).sqrt(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WnReport {
    pub trials: usize,
    pub crossings: usize,
    pub frequency: f64,
    pub se: f64,
    /// `ΔW = j` for `j` in `0..=5`.
    pub dw: Vec<ZCheck>,
    pub mean_dw: ZCheck,
}

/// `(NE SW)` (`p = μ(NE)`): the SE path from just left of the N-cluster of
/// the origin against the lower-edge walk `L⁰`; a trial crosses when
/// `W_n ≥ L⁰_n` for some `n ≥ 1` inside the window.
pub fn wn_crossing_test(p: f64, trials: usize, radius: i64, seed: u64) -> Result<WnReport> {
    let model = ModelId::parse("NE-SW", p, 2)?;
    let ne = ArrowSet::from_letters("NE").unwrap();
    let sw = ArrowSet::from_letters("SW").unwrap();
    let window = Window::square(2, radius)?;
    let per_trial: Vec<(bool, Vec<i64>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let env = LazyEnvironment::new(model.measure(), window.clone(), derive_seed(seed, i as u64))?;
            let at = |x: i64, y: i64| env.arrows(&Site::xy(x, y));
            // Row 0 of the N-cluster: NE sites step right into it.
            let mut l = 0;
            while at(l - 1, 0) == Some(ne) {
                l -= 1;
            }
            let mut w = l - 1;
            if at(w, 0).is_none() {
                return Ok((false, Vec::new()));
            }
            let mut steps = Vec::new();
            let mut crossed = false;
            for n in 1..=radius {
                let row = -n;
                if row < window.lo(1) {
                    break;
                }
                let Some(a) = lower_edge_step(&env, l, row, ne) else { break };
                let mut j = w;
                loop {
                    match at(j, row) {
                        Some(g) if g == sw => break,
                        Some(_) => j += 1,
                        None => return Ok((crossed, steps)),
                    }
                }
                steps.push(j - w);
                w = j;
                l += a;
                if w >= l {
                    crossed = true;
                    break;
                }
            }
            Ok((crossed, steps))
        })
        .collect::<Result<_>>()?;
    let crossings = per_trial.iter().filter(|t| t.0).count();
    let all: Vec<i64> = per_trial.iter().flat_map(|t| t.1.iter().copied()).collect();
    let n = all.len() as u64;
    let dw = (0..=5)
        .map(|j| {
            let c = all.iter().filter(|&&x| x == j).count() as u64;
            ZCheck::proportion(format!("dW={j}"), c, n, (1.0 - p) * p.powi(j as i32))
        })
        .collect();
    let vals: Vec<f64> = all.iter().map(|&x| x as f64).collect();
    let frequency = crossings as f64 / trials as f64;
    Ok(WnReport {
        trials,
        crossings,
        frequency,
        se: (frequency * (1.0 - frequency) / trials as f64).sqrt(),
        dw,
        mean_dw: ZCheck::mean("E[dW]", &vals, p / (1.0 - p)),
    })
}

/// Mean SEoA vertical excursion in `(SWE ↑)` (`p = μ(SWE)`) against
/// `−(p³−p²+2p−1)/(p(1−p))`.
pub fn seoa_drift_test(p: f64, samples: usize, seed: u64) -> Result<ZCheck> {
    let model = ModelId::parse("SWE-N", p, 2)?;
    let window = Window::square(2, 1500)?;
    let per_path = |s: u64| -> Result<Vec<i64>> {
        let env = LazyEnvironment::new(model.measure(), window.clone(), s)?;
        Ok(seoa_path(&env, &Site::origin(2))?.1)
    };
    let all = collect_chains(seed, Vec::new(), per_path, |a, b| a.extend(b), |a| a.len() >= samples)?;
    let vals: Vec<f64> = all[..samples].iter().map(|&x| x as f64).collect();
    let expected = -(p * p * p - p * p + 2.0 * p - 1.0) / (p * (1.0 - p));
    Ok(ZCheck::mean(format!("E[W] p={p}"), &vals, expected))
}

/// Share of boundary-reaching `B_o` by shape, plus duality on `BlockedAbove`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeCensus {
    pub trials: usize,
    pub boundary_reaching: usize,
    pub full_window: usize,
    pub blocked_above: usize,
    pub blocked_below: usize,
    pub indeterminate: usize,
    /// `BlockedAbove` with a nonincreasing blocking function whose duality check holds.
    pub blocked_above_dual_ok: usize,
}

impl ShapeCensus {
    pub fn share(&self, count: usize) -> f64 {
        count as f64 / self.boundary_reaching.max(1) as f64
    }
}

/// Classifies `B_o` on full grids of `model` at `radius`.
pub fn shape_census(model: &ModelId, radius: i64, trials: usize, seed: u64) -> Result<ShapeCensus> {
    let window = Window::square(2, radius)?;
    let shapes: Vec<(Shape, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let env = crate::lattice::sample_model(model, &window, derive_seed(seed, i as u64))?;
            let r = classify_b_shape(&env, &Site::origin(2))?;
            let dual_ok = match (&r.shape, &r.blocking) {
                (Shape::BlockedAbove, Some(w)) if w.monotone_decreasing() => {
                    let w = w.uncensored();
                    !w.values.is_empty() && verify_duality(&env, &w, DualLattice::Otsp)?.holds()
                }
                _ => false,
            };
            Ok((r.shape, dual_ok))
        })
        .collect::<Result<_>>()?;
    let count = |s: Shape| shapes.iter().filter(|x| x.0 == s).count();
    Ok(ShapeCensus {
        trials,
        boundary_reaching: trials - count(Shape::Finite),
        full_window: count(Shape::FullWindow),
        blocked_above: count(Shape::BlockedAbove),
        blocked_below: count(Shape::BlockedBelow),
        indeterminate: count(Shape::Indeterminate),
        blocked_above_dual_ok: shapes.iter().filter(|x| x.1).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(name: &str, p: f64, radius: i64, trials: usize, stat: Statistic) -> TrialPlan {
        TrialPlan::new(ModelId::parse(name, p, 2).unwrap(), radius, trials, 7, stat).unwrap()
    }

    #[test]
    fn zero_trials_rejected() {
        let m = ModelId::parse("NE-0", 0.5, 2).unwrap();
        assert!(TrialPlan::new(m, 10, 0, 1, Statistic::BoundaryReachC).is_err());
    }

    #[test]
    fn full_communication_reaches_everywhere() {
        // (NSWE ·) at p close to 1 from a fixed seed: check values are 0/1 and SE is binomial.
        let r = estimate_theta(&plan("NSWE-WE", 0.5, 6, 50, Statistic::BoundaryReachC)).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.se, 0.0);
        let s = estimate_theta(&plan("NSWE-WE", 0.5, 6, 20, Statistic::ClusterSizeM)).unwrap();
        assert!(s.estimate >= 1.0);
    }

    #[test]
    fn standard_error_is_binomial() {
        let r = estimate_theta(&plan("NE-0", 0.7, 20, 400, Statistic::BoundaryReachC)).unwrap();
        let expect = (r.estimate * (1.0 - r.estimate) / 400.0).sqrt();
        assert!((r.se - expect).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&r.estimate));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let p = plan("NE-0", 0.72, 30, 300, Statistic::BoundaryReachB);
        let a = estimate_theta(&p).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| estimate_theta(&p).unwrap());
        assert!(a.same_result(&b));
    }

    #[test]
    fn bisection_finds_a_step() {
        let r = bisect_monotone(|p| Ok((if p >= 0.5 { 1.0 } else { 0.0 }, 0.0)), 0.1, 0.9, 0.5, 0.005, 25).unwrap();
        assert!((r.pc - 0.5).abs() <= 0.005);
        assert!(r.converged);
        assert!(bisect_monotone(|_| Ok((0.0, 0.0)), 0.1, 0.9, 0.5, 0.005, 25).is_err());
    }

    #[test]
    fn bisection_rejects_non_monotone_models() {
        let p = plan("NE-SW", 0.5, 20, 10, Statistic::BoundaryReachM);
        assert!(matches!(bisect_pc(&p, 0.1, 0.9, 0.5, 0.01), Err(DreError::InvalidArgument(_))));
    }

    #[test]
    fn identity_needs_an_empty_atom() {
        let m = ModelId::parse("NE-SW", 0.5, 2).unwrap();
        assert!(check_theta_identity(&m, 10, 10, 0).is_err());
    }

    #[test]
    fn csv_and_json_rows() {
        let r = estimate_theta(&plan("NE-0", 0.6, 10, 20, Statistic::BoundaryReachC)).unwrap();
        let row = r.to_csv();
        assert_eq!(row.split(',').count(), EstimateRecord::CSV_HEADER.split(',').count());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["M"], 10);
        assert_eq!(v["statistic"], "reach_C");
    }

    #[test]
    fn martingale_starts_at_one() {
        let r = martingale_test(0.5, 12, 50, 5, 3).unwrap();
        assert_eq!(r.means[0], (1.0, 0.0));
        assert_eq!(r.increments.len(), 5);
    }

    #[test]
    fn lu_coupling_is_exact() {
        let r = lu_walk_test(0.5, 2000, 5).unwrap();
        assert!(r.coupling_checked >= 2000);
        assert_eq!(r.coupling_mismatches, 0);
    }

    #[test]
    fn survival_grid_must_increase() {
        let p = plan("NE-0", 0.5, 10, 10, Statistic::BoundaryReachC);
        assert!(survival_curve(&p, &[0.5, 0.5]).is_err());
        let c = survival_curve(&p, &[0.3, 0.9]).unwrap();
        assert!(c.points[0].estimate <= c.points[1].estimate);
    }

    #[test]
    fn statistic_names_round_trip() {
        for s in [
            Statistic::BoundaryReachC,
            Statistic::BoundaryReachB,
            Statistic::BoundaryReachM,
            Statistic::ClusterSizeM,
            Statistic::OtspReach,
            Statistic::Classification(Shape::FullWindow),
        ] {
            assert_eq!(Statistic::parse(&s.name()).unwrap(), s);
        }
    }
}
