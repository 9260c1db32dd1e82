use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dre::clusters::{classify_b_shape, communicating_cluster, write_cluster_dump, Side};
use dre::duality::{bounds_report, static_classify_model, verify_duality, DualLattice};
use dre::lattice::{read_snapshot, sample_model, write_snapshot, EnvironmentGrid};
use dre::montecarlo::{
    bisect_pc, check_theta_identity, dn_transition_test, estimate_theta, lu_walk_test, martingale_test,
    seoa_drift_test, survival_curve, wn_crossing_test, write_csv, write_jsonl, EstimateRecord, Statistic, TrialPlan,
    ZCheck, BISECT_TOL,
};
use dre::render::{render, ImageFormat, RenderMode, RenderOptions};
use dre::{DreError, ModelId, Site, Window};

#[derive(Parser)]
#[command(name = "dre", version, about = "Degenerate random environments on Z^d")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Default)]
struct Common {
    /// Catalog model name, e.g. NE-SW
    #[arg(long, global = true)]
    model: Option<String>,
    /// Weight of the first atom
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Window is [-radius, radius]^d
    #[arg(long, global = true)]
    radius: Option<i64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Read the environment from a snapshot instead of sampling
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Root site `x,y` (default: origin)
    #[arg(long, global = true)]
    at: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
    Pgm,
    Svg,
    Txt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Env,
    Cluster,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VerifyKind {
    /// Blocking functions against boundary sequences on many seeds
    Duality,
    /// theta_+ = p theta_- for (A 0) models
    Identity,
    /// Transition laws, drifts and the martingale
    Laws,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample an environment snapshot
    Gen,
    /// List the sites of C_x and B_x
    Cluster,
    /// Classify the shape of B_x
    Classify {
        /// Also write a PGM of the clusters here
        #[arg(long)]
        render: Option<PathBuf>,
    },
    /// Picture of the environment or the clusters of one site
    Render {
        #[arg(long, value_enum, default_value = "cluster")]
        mode: Mode,
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
    /// Monte Carlo estimate of a boundary-reach probability or cluster size
    Estimate {
        #[arg(long, default_value = "reach_B")]
        statistic: String,
        /// Comma-separated increasing p values for a survival curve
        #[arg(long)]
        grid: Option<String>,
    },
    /// Finite-window critical point by bisection
    Bisect {
        #[arg(long, default_value = "reach_B")]
        statistic: String,
        #[arg(long, default_value_t = 0.5)]
        lo: f64,
        #[arg(long, default_value_t = 0.9)]
        hi: f64,
        #[arg(long, default_value_t = 0.5)]
        target: f64,
        #[arg(long, default_value_t = BISECT_TOL)]
        tol: f64,
    },
    /// Closed-form bounds and literature constants
    Bounds,
    /// Statistical and exact self-checks
    Verify {
        #[arg(value_enum)]
        what: VerifyKind,
        /// Seeds for `verify duality`
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
    /// Phase-transition status of a model from its support
    StaticClassify,
}

struct Config {
    model: ModelId,
    radius: i64,
    seed: u64,
    trials: usize,
    out: Option<PathBuf>,
    format: Option<Format>,
    input: Option<PathBuf>,
    at: Site,
}

enum Failure {
    Usage(String),
    Compute(String),
}

impl From<DreError> for Failure {
    fn from(e: DreError) -> Self {
        Failure::Compute(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, Failure> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(s) => s.parse().map_err(|_| usage(format!("config: bad value for {key}: {s}"))),
        None => Ok(default),
    }
}

fn resolve(c: &Common) -> Result<Config, Failure> {
    let file = match &c.config {
        Some(p) => read_config_file(p)?,
        None => BTreeMap::new(),
    };
    for k in file.keys() {
        if !["model", "p", "d", "radius", "seed", "trials", "out", "format", "threads", "input", "at"].contains(&k.as_str()) {
            return Err(usage(format!("config: unknown key {k}")));
        }
    }
    let name: String = pick(c.model.clone(), &file, "model", "NE-SW".into())?;
    let p: f64 = pick(c.p, &file, "p", 0.5)?;
    let d: usize = pick(c.d, &file, "d", 2)?;
    let radius: i64 = pick(c.radius, &file, "radius", 50)?;
    let seed: u64 = pick(c.seed, &file, "seed", 1)?;
    let trials: usize = pick(c.trials, &file, "trials", 1000)?;
    let threads: usize = pick(c.threads, &file, "threads", 0)?;
    let model = ModelId::parse(&name, p, d).map_err(usage)?;
    Window::square(d, radius).map_err(usage)?;
    if trials == 0 {
        return Err(usage("trials must be at least 1"));
    }
    let out = c.out.clone().or_else(|| file.get("out").map(PathBuf::from));
    let input = c.input.clone().or_else(|| file.get("input").map(PathBuf::from));
    let format = match (c.format, file.get("format")) {
        (Some(f), _) => Some(f),
        (None, Some(s)) => Some(Format::from_str(s, true).map_err(|_| usage(format!("config: bad format {s}")))?),
        (None, None) => None,
    };
    let at = match c.at.clone().or_else(|| file.get("at").cloned()) {
        None => Site::origin(d),
        Some(s) => {
            let coords: Result<Vec<i64>, _> = s.split(',').map(|t| t.trim().parse()).collect();
            let coords = coords.map_err(|_| usage(format!("bad site {s}")))?;
            if coords.len() != d {
                return Err(usage(format!("site {s} does not have {d} coordinates")));
            }
            Site::new(&coords)
        }
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(usage)?;
    }
    Ok(Config { model, radius, seed, trials, out, format, input, at })
}

fn provenance(cfg: &Config) {
    if let Some(path) = &cfg.input {
        eprintln!("# dre {} input={}", dre::VERSION, path.display());
        return;
    }
    eprintln!(
        "# dre {} model={} p={} d={} M={} seed={}",
        dre::VERSION,
        cfg.model.name(),
        cfg.model.p,
        cfg.model.dim,
        cfg.radius,
        cfg.seed
    );
}

fn emit(cfg: &Config, bytes: &[u8]) -> Result<(), Failure> {
    match &cfg.out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn format_or(cfg: &Config, default: Format, allowed: &[Format]) -> Result<Format, Failure> {
    let f = cfg.format.unwrap_or(default);
    if !allowed.contains(&f) {
        let name = f.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        return Err(usage(format!("format {name} is not available for this subcommand")));
    }
    Ok(f)
}

fn environment(cfg: &Config) -> Result<EnvironmentGrid, Failure> {
    match &cfg.input {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Ok(read_snapshot(BufReader::new(f))?)
        }
        None => Ok(sample_model(&cfg.model, &Window::square(cfg.model.dim, cfg.radius)?, cfg.seed)?),
    }
}

fn records_out(cfg: &Config, records: &[EstimateRecord]) -> Result<(), Failure> {
    let mut buf = Vec::new();
    match format_or(cfg, Format::Csv, &[Format::Csv, Format::Jsonl])? {
        Format::Jsonl => write_jsonl(records, &mut buf)?,
        _ => write_csv(records, &mut buf)?,
    }
    emit(cfg, &buf)
}

fn checks_text(out: &mut String, checks: &[ZCheck], k: f64) -> bool {
    let mut ok = true;
    for c in checks {
        let pass = c.within(k);
        ok &= pass;
        out.push_str(&format!("{} {}\n", if pass { "ok  " } else { "FAIL" }, c));
    }
    ok
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let cfg = resolve(&cli.common)?;
    provenance(&cfg);
    match cli.cmd {
        Cmd::Gen => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            let env = environment(&cfg)?;
            let mut buf = Vec::new();
            write_snapshot(&env, &mut buf)?;
            emit(&cfg, &buf)?;
        }
        Cmd::Cluster => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            let env = environment(&cfg)?;
            let m = communicating_cluster(&env, &cfg.at)?;
            let mut buf = Vec::new();
            write_cluster_dump(&env, &cfg.at, &mut buf)?;
            eprintln!("|M|={} touches_boundary={}", m.len(), m.touches_boundary);
            emit(&cfg, &buf)?;
        }
        Cmd::Classify { render: pic } => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            let env = environment(&cfg)?;
            let report = classify_b_shape(&env, &cfg.at)?;
            emit(&cfg, report.to_kv().as_bytes())?;
            if let Some(path) = pic {
                let img = render(&env, &RenderOptions { origin: cfg.at, ..Default::default() })?;
                fs::write(path, img.bytes)?;
            }
        }
        Cmd::Render { mode, scale } => {
            let format = match format_or(&cfg, Format::Pgm, &[Format::Pgm, Format::Svg])? {
                Format::Svg => ImageFormat::Svg,
                _ => ImageFormat::Pgm,
            };
            let Some(out) = cfg.out.clone() else {
                return Err(usage("render needs --out"));
            };
            let env = environment(&cfg)?;
            let mode = if mode == Mode::Env { RenderMode::Environment } else { RenderMode::Cluster };
            let img = render(&env, &RenderOptions { mode, format, origin: cfg.at, scale })?;
            fs::write(&out, &img.bytes)?;
            let mut legend = out.into_os_string();
            legend.push(".legend");
            fs::write(legend, img.legend.to_text(mode))?;
        }
        Cmd::Estimate { statistic, grid } => {
            let stat = Statistic::parse(&statistic).map_err(usage)?;
            let plan = TrialPlan::new(cfg.model, cfg.radius, cfg.trials, cfg.seed, stat).map_err(usage)?;
            let records = match grid {
                None => vec![estimate_theta(&plan)?],
                Some(g) => {
                    let ps: Result<Vec<f64>, _> = g.split(',').map(|t| t.trim().parse()).collect();
                    let ps = ps.map_err(|_| usage(format!("bad grid {g}")))?;
                    survival_curve(&plan, &ps).map_err(usage)?.points
                }
            };
            records_out(&cfg, &records)?;
        }
        Cmd::Bisect { statistic, lo, hi, target, tol } => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            let stat = Statistic::parse(&statistic).map_err(usage)?;
            let plan = TrialPlan::new(cfg.model, cfg.radius, cfg.trials, cfg.seed, stat).map_err(usage)?;
            let r = bisect_pc(&plan, lo, hi, target, tol)?;
            let mut s = format!("pc={:.4}\nlo={:.4}\nhi={:.4}\nconverged={}\n", r.pc, r.lo, r.hi, r.converged);
            for (p, e, se) in &r.probes {
                s.push_str(&format!("probe p={p:.5} estimate={e:.4} se={se:.4}\n"));
            }
            emit(&cfg, s.as_bytes())?;
        }
        Cmd::Bounds => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            let s: String = bounds_report().iter().map(|b| format!("{b}\n")).collect();
            emit(&cfg, s.as_bytes())?;
        }
        Cmd::StaticClassify => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            emit(&cfg, static_classify_model(&cfg.model).to_kv().as_bytes())?;
        }
        Cmd::Verify { what, seeds } => {
            format_or(&cfg, Format::Txt, &[Format::Txt])?;
            let (ok, text) = match what {
                VerifyKind::Duality => verify_duality_seeds(&cfg, seeds)?,
                VerifyKind::Identity => {
                    let c = check_theta_identity(&cfg.model, cfg.radius, cfg.trials, cfg.seed).map_err(usage)?;
                    let ok = c.z.abs() <= 3.0;
                    let s = format!(
                        "theta_plus={:.5} se={:.5}\ntheta_minus={:.5} se={:.5}\nlhs={:.5} rhs={:.5} z={:+.2}\n{}\n",
                        c.theta_plus.estimate,
                        c.theta_plus.se,
                        c.theta_minus.estimate,
                        c.theta_minus.se,
                        c.lhs,
                        c.rhs,
                        c.z,
                        if ok { "ok" } else { "FAIL" }
                    );
                    (ok, s)
                }
                VerifyKind::Laws => verify_laws(&cfg)?,
            };
            emit(&cfg, text.as_bytes())?;
            return Ok(ok);
        }
    }
    Ok(true)
}

/// For each seed: the extracted blocking function (if any) and a flat
/// function through the root must each block exactly when their boundary
/// sequence is open.
fn verify_duality_seeds(cfg: &Config, seeds: u64) -> Result<(bool, String), Failure> {
    let lattice = match cfg.model.name().as_str() {
        "NE-SW" => DualLattice::Otsp,
        "SWE-N" => DualLattice::Fsosp,
        other => return Err(usage(format!("duality is defined for NE-SW and SWE-N, not {other}"))),
    };
    let window = Window::square(2, cfg.radius).map_err(usage)?;
    let mut passes = 0;
    let mut s = String::new();
    for k in 0..seeds {
        let seed = cfg.seed.wrapping_add(k);
        let env = sample_model(&cfg.model, &window, seed)?;
        let report = classify_b_shape(&env, &cfg.at)?;
        let mut candidates = Vec::new();
        if let Some(w) = &report.blocking {
            let w = w.uncensored();
            if !w.values.is_empty() && w.side == Side::Upper && (lattice == DualLattice::Fsosp || w.monotone_decreasing()) {
                candidates.push(w);
            }
        }
        let box_ = &report.inspection;
        candidates.push(dre::clusters::BlockingFunction::new(
            Side::Upper,
            box_.lo(0),
            vec![cfg.at.y(); box_.extent(0)],
            box_.lo(1),
            box_.hi(1),
        ));
        let mut ok = true;
        for w in &candidates {
            ok &= verify_duality(&env, w, lattice)?.consistent();
        }
        passes += ok as u64;
        s.push_str(&format!("seed={seed} shape={} checked={} {}\n", report.shape.name(), candidates.len(), if ok { "pass" } else { "FAIL" }));
    }
    s.push_str(&format!("passes={passes}/{seeds}\n"));
    Ok((passes == seeds, s))
}

fn verify_laws(cfg: &Config) -> Result<(bool, String), Failure> {
    let n = cfg.trials as u64;
    let p = cfg.model.p;
    let mut s = String::new();
    let mut ok = true;
    s.push_str("# D_n chain (WE-N)\n");
    for row in dn_transition_test(p, n * 10, cfg.seed)? {
        ok &= checks_text(&mut s, &[row.to_zero, row.stay, row.grow], 3.5);
    }
    s.push_str("# L/U walks (NE-W)\n");
    let lu = lu_walk_test(p, n * 10, cfg.seed)?;
    ok &= checks_text(&mut s, &lu.dl, 3.5);
    ok &= checks_text(&mut s, &lu.du, 3.5);
    ok &= checks_text(&mut s, &[lu.mean_dl, lu.mean_du], 3.0);
    ok &= lu.coupling_mismatches == 0;
    s.push_str(&format!("coupling checked={} mismatches={}\n", lu.coupling_checked, lu.coupling_mismatches));
    s.push_str("# martingale (N-E)\n");
    let mg = martingale_test(p, 60, cfg.trials, 30, cfg.seed)?;
    ok &= checks_text(&mut s, &mg.increments, 3.5);
    s.push_str("# W_n crossing (NE-SW)\n");
    let wn = wn_crossing_test(p, cfg.trials, 200, cfg.seed)?;
    ok &= checks_text(&mut s, &wn.dw, 3.5);
    ok &= checks_text(&mut s, &[wn.mean_dw], 3.0);
    s.push_str(&format!("crossing frequency={:.4} se={:.4}\n", wn.frequency, wn.se));
    s.push_str("# SEoA drift (SWE-N)\n");
    ok &= checks_text(&mut s, &[seoa_drift_test(p, cfg.trials * 10, cfg.seed)?], 3.0);
    Ok((ok, s))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
