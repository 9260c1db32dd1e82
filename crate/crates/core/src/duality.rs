//! Boundary sequences of blocking functions and their percolation duals,
//! closed-form bounds, self-avoiding walk counts and the static classifier.

use std::fmt;

use crate::clusters::{verify_blocking_function, BlockingFunction, Side, Violation};
use crate::error::{DreError, Result};
use crate::lattice::{theta_plus_is_one, ArrowSet, Direction, Lattice, ModelId, Site, SupportMeasure};

/// The two oriented triangular-type site percolation lattices.
///
/// OTSP: an open site `x` connects to `x−e₁`, `x+e₂`, `x−e₁+e₂`.
/// FSOSP: additionally to `x−e₂` and `x−e₁−e₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualLattice {
    Otsp,
    Fsosp,
}

impl DualLattice {
    /// The arrow set that makes a boundary vertex open.
    pub fn open_set(self) -> ArrowSet {
        match self {
            DualLattice::Otsp => ArrowSet::from_letters("NE").unwrap(),
            DualLattice::Fsosp => ArrowSet::from_letters("N").unwrap(),
        }
    }

    /// The other atom of the dual environment model.
    pub fn closed_set(self) -> ArrowSet {
        match self {
            DualLattice::Otsp => ArrowSet::from_letters("SW").unwrap(),
            DualLattice::Fsosp => ArrowSet::from_letters("SWE").unwrap(),
        }
    }

    pub fn moves(self) -> &'static [Transition] {
        match self {
            DualLattice::Otsp => &[Transition::Up, Transition::Left, Transition::DiagNW],
            DualLattice::Fsosp => {
                &[Transition::Up, Transition::Down, Transition::Left, Transition::DiagNW, Transition::DiagSW]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Up,
    Down,
    Left,
    DiagNW,
    DiagSW,
}

impl Transition {
    pub fn delta(self) -> (i64, i64) {
        match self {
            Transition::Up => (0, 1),
            Transition::Down => (0, -1),
            Transition::Left => (-1, 0),
            Transition::DiagNW => (-1, 1),
            Transition::DiagSW => (-1, -1),
        }
    }
}

/// Vertices of `w_≤^c` adjacent to `w_≤`, traversed right to left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualBoundarySequence {
    pub lattice: DualLattice,
    pub vertices: Vec<Site>,
    pub transitions: Vec<Transition>,
}

/// Enumerates the boundary of an upper blocking function from its last
/// column to its first. Column `n` is entered at height
/// `max(w(n+1), w(n)+1)`, descends to `w(n)+1`, then climbs to
/// `max(w(n−1), w(n)+1)`; ends of the range count as having no neighbour.
pub fn boundary_sequence(w: &BlockingFunction, lattice: DualLattice) -> Result<DualBoundarySequence> {
    if w.side != Side::Upper {
        return Err(DreError::InvalidArgument("boundary sequences are defined for upper blocking functions".into()));
    }
    if w.values.is_empty() {
        return Err(DreError::InvalidArgument("empty blocking function".into()));
    }
    if lattice == DualLattice::Otsp && !w.monotone_decreasing() {
        return Err(DreError::InvalidArgument("OTSP duality needs a nonincreasing blocking function".into()));
    }
    let (n0, n1) = (w.first_col, w.last_col());
    let val = |n: i64| w.value(n).expect("column in range");
    let mut vertices = Vec::new();
    let mut transitions = Vec::new();
    let mut n = n1;
    let mut k = val(n1) + 1;
    vertices.push(Site::xy(n, k));
    let mut push = |t: Transition, n: &mut i64, k: &mut i64, v: &mut Vec<Site>| {
        let (dx, dy) = t.delta();
        *n += dx;
        *k += dy;
        transitions.push(t);
        v.push(Site::xy(*n, *k));
    };
    loop {
        // Descent happens only after a DiagSW entry.
        while k > val(n) + 1 {
            push(Transition::Down, &mut n, &mut k, &mut vertices);
        }
        if n == n0 {
            break;
        }
        let left = val(n - 1);
        let top = left.max(val(n) + 1);
        while k < top {
            push(Transition::Up, &mut n, &mut k, &mut vertices);
        }
        let here = val(n);
        let t = if left > here {
            Transition::DiagNW
        } else if left == here {
            Transition::Left
        } else {
            Transition::DiagSW
        };
        push(t, &mut n, &mut k, &mut vertices);
    }
    Ok(DualBoundarySequence { lattice, vertices, transitions })
}

/// Outcome of [`verify_duality`]: both sides of the correspondence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualityCheck {
    pub first_closed: Option<Site>,
    pub violation: Option<Violation>,
}

impl DualityCheck {
    pub fn boundary_open(&self) -> bool {
        self.first_closed.is_none()
    }

    pub fn blocking_holds(&self) -> bool {
        self.violation.is_none()
    }

    /// True when `w` blocks and its boundary sequence is open.
    pub fn holds(&self) -> bool {
        self.boundary_open() && self.blocking_holds()
    }

    /// The two sides agree.
    pub fn consistent(&self) -> bool {
        self.boundary_open() == self.blocking_holds()
    }
}

/// Checks every boundary vertex for the open arrow set and `w` for blocking.
/// Boundary vertices outside the window are skipped; a vertex carrying an
/// arrow set outside the dual model is a model-assumption error.
pub fn verify_duality<L: Lattice + ?Sized>(env: &L, w: &BlockingFunction, lattice: DualLattice) -> Result<DualityCheck> {
    let seq = boundary_sequence(w, lattice)?;
    let mut first_closed = None;
    for v in &seq.vertices {
        let Some(g) = env.arrows(v) else { continue };
        if g == lattice.open_set() {
            continue;
        }
        if g != lattice.closed_set() {
            return Err(DreError::ModelAssumption {
                site: *v,
                reason: format!("arrow set {} is neither {} nor {}", g.letters(), lattice.open_set().letters(), lattice.closed_set().letters()),
            });
        }
        first_closed = Some(*v);
        break;
    }
    let violation = verify_blocking_function(env, w)?;
    Ok(DualityCheck { first_closed, violation })
}

// ---------------------------------------------------------------------------
// Closed-form bounds

/// The two cubic drift conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubicBound {
    /// `p³ − p² + 2p − 1`, with `p = μ(SWE)` in the (SWE ↑) model.
    Fsosp,
    /// `p³ + 2p − 1`, with `p = μ(NE)` in the (NE SW) model.
    Otsp,
}

impl CubicBound {
    pub fn eval(self, p: f64) -> f64 {
        match self {
            CubicBound::Fsosp => p * p * p - p * p + 2.0 * p - 1.0,
            CubicBound::Otsp => p * p * p + 2.0 * p - 1.0,
        }
    }

    /// Lower bound on the dual critical value implied by the root: `1 − root`.
    pub fn pc_lower_bound(self) -> f64 {
        1.0 - cubic_root(self)
    }
}

/// Root in `(0,1)` of the (strictly increasing) cubic, by bisection to `1e-9`.
pub fn cubic_root(kind: CubicBound) -> f64 {
    bisect_increasing(|p| kind.eval(p), 0.0, 1.0, 1e-9)
}

fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaSource {
    RigorousLower,
    RigorousUpper,
    Estimate,
}

/// Self-avoiding walk connective constants: (lower, upper, estimate).
const SIGMA: [(usize, f64, f64, f64); 4] = [
    (2, 2.6256, 2.6792, 2.63816),
    (3, 4.5721, 4.7114, 4.68404),
    (4, 6.7429, 6.8040, 6.77404),
    (5, 8.8285, 8.8602, 8.83854),
];

pub fn sigma(d: usize, source: SigmaSource) -> Result<f64> {
    let row = SIGMA.iter().find(|r| r.0 == d).ok_or(DreError::UnsupportedDimension(d))?;
    Ok(match source {
        SigmaSource::RigorousLower => row.1,
        SigmaSource::RigorousUpper => row.2,
        SigmaSource::Estimate => row.3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    pub sigma: f64,
    pub sigma_inv_sq: f64,
    pub eps0: f64,
}

/// `ε⁰ = ½(1 − √(1 − 4/σ²))`.
pub fn eps0_from_sigma(sigma: f64) -> f64 {
    0.5 * (1.0 - (1.0 - 4.0 / (sigma * sigma)).sqrt())
}

pub fn epsilon_d0(d: usize, source: SigmaSource) -> Result<EpsilonReport> {
    let s = sigma(d, source)?;
    Ok(EpsilonReport { sigma: s, sigma_inv_sq: 1.0 / (s * s), eps0: eps0_from_sigma(s) })
}

/// Largest walk length accepted by [`saw_counts`].
pub const SAW_MAX_LEN: usize = 16;

/// `c_1 … c_{n_max}` for the square lattice by backtracking. The first step
/// is fixed to `+e₁` and counts are multiplied by 4.
pub fn saw_counts(d: usize, n_max: usize) -> Result<Vec<u64>> {
    if d != 2 {
        return Err(DreError::UnsupportedDimension(d));
    }
    if n_max == 0 || n_max > SAW_MAX_LEN {
        return Err(DreError::InvalidArgument(format!("walk length must be in 1..={SAW_MAX_LEN}")));
    }
    let side = 2 * n_max + 3;
    let mut visited = vec![false; side * side];
    let centre = (n_max + 1) * side + (n_max + 1);
    let steps = [1isize, -1, side as isize, -(side as isize)];
    let mut counts = vec![0u64; n_max];
    fn go(pos: usize, len: usize, n_max: usize, steps: &[isize; 4], visited: &mut [bool], counts: &mut [u64]) {
        counts[len - 1] += 1;
        if len == n_max {
            return;
        }
        for s in steps {
            let next = (pos as isize + s) as usize;
            if !visited[next] {
                visited[next] = true;
                go(next, len + 1, n_max, steps, visited, counts);
                visited[next] = false;
            }
        }
    }
    visited[centre] = true;
    visited[centre + 1] = true;
    go(centre + 1, 1, n_max, &steps, &mut visited, &mut counts);
    Ok(counts.into_iter().map(|c| 4 * c).collect())
}

/// Closed-form one-step drifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drifts {
    /// `(1−p)/p − p²/(1−p)`, lower edge of the (NE ←) row intervals.
    pub delta_l0: f64,
    /// `(1−p)/p`, upper edge of the (NE ←) row intervals.
    pub delta_u0: f64,
    /// `p/(1−p)`, down-step column process of the (NE SW) SE path.
    pub delta_w: f64,
    /// `−(p³−p²+2p−1)/(p(1−p))`, vertical excursion of the SEoA path.
    pub seoa_mean_w: f64,
}

pub fn drift_formulas(p: f64) -> Result<Drifts> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DreError::InvalidArgument(format!("p = {p} not in (0,1)")));
    }
    let q = 1.0 - p;
    Ok(Drifts {
        delta_l0: q / p - p * p / q,
        delta_u0: q / p,
        delta_w: p / q,
        seoa_mean_w: -CubicBound::Fsosp.eval(p) / (p * q),
    })
}

/// One `key=value` entry of the bounds report.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundEntry {
    pub key: String,
    pub value: f64,
    pub decimals: usize,
    pub source: &'static str,
}

impl fmt::Display for BoundEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={:.*}", self.key, self.decimals, self.value)
    }
}

/// All named constants: computed roots and thresholds plus literature values.
pub fn bounds_report() -> Vec<BoundEntry> {
    let mut out = Vec::new();
    let mut add = |key: &str, value: f64, decimals: usize, source: &'static str| {
        out.push(BoundEntry { key: key.to_string(), value, decimals, source });
    };
    let fr = cubic_root(CubicBound::Fsosp);
    let or = cubic_root(CubicBound::Otsp);
    add("fsosp.cubic_root", fr, 6, "root of p^3-p^2+2p-1");
    add("fsosp.lower_bound.derived", 1.0 - fr, 6, "1 - fsosp.cubic_root");
    add("fsosp.lower_bound.quoted", 0.4311, 4, "quoted");
    add("fsosp.lower_bound.prior", 0.3205, 4, "1 - p_c(site)");
    add("fsosp.upper_bound", 0.7491, 4, "literature");
    add("otsp.cubic_root", or, 6, "root of p^3+2p-1");
    add("otsp.lower_bound.derived", 1.0 - or, 6, "1 - otsp.cubic_root");
    add("otsp.lower_bound.quoted", 0.5466, 4, "quoted");
    add("otsp.lower_bound.tsp", 0.5, 4, "triangular site percolation");
    add("otsp.upper_bound", 0.7491, 4, "literature");
    add("otsp.estimate", 0.5956, 4, "literature");
    add("ne.lower_bound", 0.6882, 4, "literature");
    add("ne.upper_bound", 0.7491, 4, "literature");
    add("ne.estimate", 0.7055, 4, "literature");
    add("swe.lower_bound", 0.5972, 4, "literature");
    add("swe.upper_bound", 0.7491, 4, "literature");
    add("swe.estimate", 0.6317, 4, "literature");
    add("site.lower_bound", 0.5416, 4, "literature");
    add("site.upper_bound", 0.6795, 4, "literature");
    add("site.estimate", 0.5927, 4, "literature");
    for &(d, lo, hi, est) in &SIGMA {
        add(&format!("sigma.d{d}.lower"), lo, 4, "literature");
        add(&format!("sigma.d{d}.upper"), hi, 4, "literature");
        add(&format!("sigma.d{d}.estimate"), est, 5, "literature");
        let e = epsilon_d0(d, SigmaSource::RigorousUpper).expect("tabulated d");
        add(&format!("sigma_inv_sq.d{d}"), e.sigma_inv_sq, 5, "1/sigma_upper^2");
        add(&format!("eps0.d{d}"), e.eps0, 5, "(1-sqrt(1-4/sigma_upper^2))/2");
        add(&format!("orthant.m_finite_above.d{d}"), 1.0 - e.eps0, 5, "1 - eps0");
        let es = epsilon_d0(d, SigmaSource::Estimate).expect("tabulated d");
        add(&format!("eps0.d{d}.estimate"), es.eps0, 5, "eps0 from sigma estimate");
    }
    out
}

// ---------------------------------------------------------------------------
// Static classifier

/// Status of one of `θ_+`, `θ_−`, `θ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Theta {
    Zero,
    One,
    Positive,
    PhaseTransition(String),
    Unknown,
}

impl Theta {
    pub fn label(&self) -> &'static str {
        match self {
            Theta::Zero => "0",
            Theta::One => "1",
            Theta::Positive => ">0",
            Theta::PhaseTransition(_) => "phase-transition",
            Theta::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::PhaseTransition(d) => write!(f, "phase-transition ({d})"),
            other => write!(f, "{}", other.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticClassification {
    pub model: String,
    pub theta_plus: Theta,
    pub theta_minus: Theta,
    pub theta: Theta,
    pub notes: Vec<String>,
}

impl StaticClassification {
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "model={}\ntheta_plus={}\ntheta_minus={}\ntheta={}\n",
            self.model, self.theta_plus, self.theta_minus, self.theta
        );
        for n in &self.notes {
            s.push_str(&format!("note={n}\n"));
        }
        s
    }
}

/// One of the 8 symmetries of the square, acting on directions.
#[derive(Debug, Clone, Copy)]
struct Symmetry(u8);

impl Symmetry {
    fn all() -> impl Iterator<Item = Symmetry> {
        (0..8).map(Symmetry)
    }

    fn dir(self, d: Direction) -> Direction {
        let axis = if self.0 & 1 == 1 { 1 - d.axis } else { d.axis };
        let flip = (axis == 0 && self.0 & 2 != 0) || (axis == 1 && self.0 & 4 != 0);
        Direction { axis, positive: d.positive != flip }
    }

    fn set(self, a: ArrowSet) -> ArrowSet {
        a.map(2, |d| self.dir(d))
    }
}

fn letters(s: &str) -> ArrowSet {
    ArrowSet::from_letters(s).expect("valid letters")
}

/// Maps a two-atom plane measure onto `(a, b)` up to symmetry, returning the
/// input atom playing the role of `a`.
fn match_pair(atoms: (ArrowSet, ArrowSet), a: &str, b: &str, subset: bool) -> Option<ArrowSet> {
    let (ta, tb) = (letters(a), letters(b));
    for g in Symmetry::all() {
        for (x, y) in [(atoms.0, atoms.1), (atoms.1, atoms.0)] {
            let (gx, gy) = (g.set(x), g.set(y));
            let hit = if subset { ta.is_subset(gx) && tb.is_subset(gy) } else { gx == ta && gy == tb };
            if hit {
                return Some(x);
            }
        }
    }
    None
}

/// θ for rows whose value no general lemma settles. `{a}` names the input
/// atom matching the row's first atom.
const THETA_ROWS: &[(&str, &str, &str)] = &[
    ("NSWE", "0", "PT:theta>0 iff theta_+>0, i.e. mu({a})>p_c(site)"),
    ("WE", "NS", "Positive"),
    ("NE", "SW", "PT:gigantic M for 1-p_c(OTSP)<=mu({a})<=p_c(OTSP); M finite for mu({a})<eps0 or >1-eps0"),
    ("SWE", "N", "PT:gigantic M for mu({a})>=1-p_c(FSOSP); B blocked for mu({a})<1-p_c(FSOSP)"),
    ("SWE", "NS", "One"),
    ("SWE", "NE", "PT:M=Z^2 for mu({a})>=1-p_c(OTSP); B blocked for mu({a})<1-p_c(OTSP)"),
    ("SWE", "NSE", "One"),
    ("NSWE", "N", "PT:M=Z^2 for mu({a})>=1-p_c(FSOSP); B blocked for mu({a})<1-p_c(FSOSP)"),
    ("NSWE", "NE", "PT:M=Z^2 for mu({a})>=1-p_c(OTSP); B blocked for mu({a})<1-p_c(OTSP)"),
];

fn percolation_name(a: ArrowSet) -> &'static str {
    match a.len() {
        2 => "p_c(NE)",
        3 => "p_c(SWE)",
        4 => "p_c(site)",
        _ => "p_c",
    }
}

fn theta_from_row(code: &str, atom: ArrowSet) -> Theta {
    match code {
        "One" => Theta::One,
        "Zero" => Theta::Zero,
        "Positive" => Theta::Positive,
        pt => Theta::PhaseTransition(pt.trim_start_matches("PT:").replace("{a}", &atom.letters())),
    }
}

pub fn static_classify_model(model: &ModelId) -> StaticClassification {
    let mut c = static_classify(&model.measure());
    c.model = model.name();
    c
}

/// Applies the general lemmas in order and falls back to the table of
/// phase-transition rows for two-valued planar models.
pub fn static_classify(measure: &SupportMeasure) -> StaticClassification {
    let d = measure.dim();
    let atoms: Vec<ArrowSet> = measure.atoms().iter().map(|(a, _)| *a).collect();
    let union = measure.support_union();
    let mut notes = Vec::new();
    let model = atoms.iter().map(|a| if d == 2 { a.letters() } else { format!("{:#x}", a.0) }).collect::<Vec<_>>().join("-");

    let one_dimensional = (0..d).any(|axis| {
        let line = ArrowSet::from_dirs(d, [Direction::new(axis, true), Direction::new(axis, false)]);
        union.is_subset(line)
    });
    let percolation_atom = if atoms.len() == 2 && atoms.contains(&ArrowSet::EMPTY) {
        atoms.iter().copied().find(|a| !a.is_empty())
    } else {
        None
    };
    let pair = (atoms.len() == 2 && d == 2).then(|| (atoms[0], atoms[1]));

    let theta_plus = if let Some(v) = theta_plus_is_one(measure) {
        let names: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        notes.push(format!("every atom meets the orthogonal set {{{}}}", names.join(",")));
        Theta::One
    } else if one_dimensional {
        notes.push("one-dimensional".into());
        Theta::Zero
    } else if let Some(a) = percolation_atom {
        Theta::PhaseTransition(format!("theta_+>0 iff mu({})>{}", a.letters(), percolation_name(a)))
    } else {
        Theta::Unknown
    };

    let half_line = Direction::all(d).find(|e| measure.mass_where(|a| a.contains(*e, d)) >= 1.0 - 1e-12);
    let single_arrows = atoms.iter().all(|a| a.len() == 1)
        && union.len() == 2
        && !(0..d).any(|axis| union.contains(Direction::new(axis, true), d) && union.contains(Direction::new(axis, false), d));
    let theta_minus = if let Some(e) = half_line {
        notes.push(format!("every atom contains {e}: B contains a half line"));
        Theta::One
    } else if one_dimensional {
        Theta::Zero
    } else if percolation_atom.is_some() {
        Theta::PhaseTransition("theta_+ = p theta_-".into())
    } else if single_arrows {
        notes.push("coalescing single arrows: backward cluster is a vanishing martingale".into());
        Theta::Zero
    } else if let Some(pr) = pair {
        if match_pair(pr, "WE", "N", true).is_some() || match_pair(pr, "NE", "W", true).is_some() {
            notes.push("contains a (WE N) or (NE W) submodel".into());
            Theta::Positive
        } else {
            Theta::Unknown
        }
    } else {
        Theta::Unknown
    };

    let bidirectional = (0..d).find(|&axis| {
        let both = ArrowSet::from_dirs(d, [Direction::new(axis, true), Direction::new(axis, false)]);
        atoms.iter().all(|a| both.is_subset(*a))
    });
    let trivially_confined = Direction::all(d).find(|e| {
        measure.mass_where(|a| a.contains(*e, d)) > 0.0 && measure.mass_where(|a| a.contains(e.negate(), d)) == 0.0
    });
    let theta = if let Some(axis) = bidirectional {
        notes.push(format!("every atom contains ±e{}", axis + 1));
        Theta::One
    } else if let Some(e) = trivially_confined {
        notes.push(format!("{e} occurs but {} never does: M lies in a hyperplane", e.negate()));
        Theta::Zero
    } else if one_dimensional {
        Theta::Zero
    } else if let Some(row) = pair.and_then(|pr| {
        THETA_ROWS.iter().find_map(|(a, b, code)| match_pair(pr, a, b, false).map(|atom| theta_from_row(code, atom)))
    }) {
        row
    } else {
        if atoms.len() == 2 && atoms.contains(&ArrowSet::positive_orthant(d)) && atoms.contains(&ArrowSet::negative_orthant(d)) {
            if let Ok(e) = epsilon_d0(d, SigmaSource::RigorousUpper) {
                notes.push(format!("M finite when p<{:.5} or p>{:.5}", e.eps0, 1.0 - e.eps0));
            }
        }
        Theta::Unknown
    };

    StaticClassification { model, theta_plus, theta_minus, theta, notes }
}
