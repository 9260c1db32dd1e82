//! Directed paths: quadrant paths with random tie-breaks, SEoA/SWoA paths,
//! coalescence of paths, and open cycles enclosing a box.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Write;

use rayon::prelude::*;

use crate::clusters::{backward_cluster, communicating_cluster, forward_cluster};
use crate::error::{DreError, Result};
use crate::lattice::{theta_plus_is_one, ArrowGrid, ArrowSet, Direction, LazyEnvironment, Lattice, ModelId, Site, Window};
use crate::rng::{derive_seed, hash_coords, mix64, stream, unit_f64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quadrant {
    NE,
    NW,
    SE,
    SW,
}

impl Quadrant {
    /// The vertical arrow is listed first, then the horizontal one.
    pub fn arrows(self) -> (Direction, Direction) {
        match self {
            Quadrant::NE => (Direction::NORTH, Direction::EAST),
            Quadrant::NW => (Direction::NORTH, Direction::WEST),
            Quadrant::SE => (Direction::SOUTH, Direction::EAST),
            Quadrant::SW => (Direction::SOUTH, Direction::WEST),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    /// The next step would leave the window, or could not be decided inside it.
    HitBoundary,
    /// Met another trace at the given index of this trace.
    Coalesced(usize),
    ClosedCycle,
    StepLimit,
    /// A caller-supplied stopping condition held.
    ReachedTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub sites: Vec<Site>,
    pub exit: ExitReason,
}

impl PathTrace {
    pub fn last(&self) -> Site {
        *self.sites.last().expect("trace has a start")
    }

    pub fn steps(&self) -> impl Iterator<Item = Direction> + '_ {
        self.sites.windows(2).map(|w| step_direction(&w[0], &w[1]).expect("unit steps"))
    }

    /// First step that is not open in `env`, if any.
    pub fn first_closed_step<L: Lattice + ?Sized>(&self, env: &L) -> Option<usize> {
        first_closed_step(env, &self.sites)
    }

    /// `step <i> <x> <y> <dir>` per site; the last site has dir `-`.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (i, s) in self.sites.iter().enumerate() {
            let dir = self.sites.get(i + 1).and_then(|t| step_direction(s, t)).map(|d| d.to_string());
            writeln!(out, "step {i} {} {} {}", s.x(), s.y(), dir.as_deref().unwrap_or("-"))?;
        }
        Ok(())
    }
}

pub fn step_direction(a: &Site, b: &Site) -> Option<Direction> {
    Direction::all(a.dim()).find(|d| a.step(*d) == *b)
}

fn first_closed_step<L: Lattice + ?Sized>(env: &L, sites: &[Site]) -> Option<usize> {
    sites.windows(2).position(|w| {
        let ok = step_direction(&w[0], &w[1]).zip(env.arrows(&w[0])).is_some_and(|(d, g)| g.contains(d, 2));
        !ok
    })
}

/// Vertical displacement between consecutive sideways steps, one sample per
/// sideways step.
pub fn vertical_excursions(trace: &PathTrace) -> Vec<i64> {
    let mut out = Vec::new();
    let mut acc = 0;
    for d in trace.steps() {
        if d.axis == 1 {
            acc += d.sign();
        } else {
            out.push(acc);
            acc = 0;
        }
    }
    out
}

/// How a path picks its next step.
#[derive(Debug, Clone, Copy)]
pub enum Rule {
    /// Both quadrant arrows open: the vertical one with probability `q`,
    /// decided by a hash of `(seed, site)` so that paths sharing a seed
    /// coalesce when they meet.
    Quadrant { quadrant: Quadrant, q: f64, seed: u64 },
    /// (SWE ↑): from SWE go ↓ if the site below is SWE, else →; from ↑ go ↑.
    Seoa,
    /// Mirror image of [`Rule::Seoa`].
    Swoa,
}

fn swe() -> ArrowSet {
    ArrowSet::from_letters("SWE").unwrap()
}

fn up() -> ArrowSet {
    ArrowSet::from_letters("N").unwrap()
}

impl Rule {
    fn next<L: Lattice + ?Sized>(&self, env: &L, s: &Site) -> Result<Option<Direction>> {
        let g = env.arrows(s).ok_or(DreError::OutsideWindow(*s))?;
        match *self {
            Rule::Quadrant { quadrant, q, seed } => {
                let (v, h) = quadrant.arrows();
                match (g.contains(v, 2), g.contains(h, 2)) {
                    (true, true) => {
                        let u = unit_f64(hash_coords(seed, stream::TIEBREAK, s.coords()));
                        Ok(Some(if u < q { v } else { h }))
                    }
                    (true, false) => Ok(Some(v)),
                    (false, true) => Ok(Some(h)),
                    (false, false) => Err(DreError::ModelAssumption {
                        site: *s,
                        reason: format!("no {quadrant:?} arrow in {}", g.letters()),
                    }),
                }
            }
            Rule::Seoa | Rule::Swoa => {
                let side = if matches!(self, Rule::Seoa) { Direction::EAST } else { Direction::WEST };
                if g == up() {
                    Ok(Some(Direction::NORTH))
                } else if g == swe() {
                    match env.arrows(&s.step(Direction::SOUTH)) {
                        None => Ok(None),
                        Some(b) if b == swe() => Ok(Some(Direction::SOUTH)),
                        Some(_) => Ok(Some(side)),
                    }
                } else {
                    Err(DreError::ModelAssumption {
                        site: *s,
                        reason: format!("arrow set {} is neither SWE nor N", g.letters()),
                    })
                }
            }
        }
    }
}

/// Step limit used by every path: 16 times the window perimeter.
pub fn step_limit(w: &Window) -> usize {
    16 * 2 * (w.extent(0) + w.extent(1))
}

/// Follows `rule` from `start` until `stop` holds, the window is left, or the
/// step limit is reached.
pub fn follow<L: Lattice + ?Sized>(
    env: &L,
    start: &Site,
    rule: Rule,
    stop: &dyn Fn(&Site) -> bool,
) -> Result<PathTrace> {
    let w = env.window();
    if w.dim() != 2 {
        return Err(DreError::UnsupportedDimension(w.dim()));
    }
    w.checked_index(start)?;
    let limit = step_limit(w);
    let mut sites = vec![*start];
    let mut cur = *start;
    loop {
        if stop(&cur) {
            return Ok(PathTrace { sites, exit: ExitReason::ReachedTarget });
        }
        if sites.len() > limit {
            return Ok(PathTrace { sites, exit: ExitReason::StepLimit });
        }
        let Some(dir) = rule.next(env, &cur)? else {
            return Ok(PathTrace { sites, exit: ExitReason::HitBoundary });
        };
        let next = cur.step(dir);
        if !w.contains(&next) {
            return Ok(PathTrace { sites, exit: ExitReason::HitBoundary });
        }
        sites.push(next);
        cur = next;
    }
}

pub fn quadrant_path<L: Lattice + ?Sized>(env: &L, start: &Site, quadrant: Quadrant, q: f64, seed: u64) -> Result<PathTrace> {
    if !(0.0..=1.0).contains(&q) {
        return Err(DreError::InvalidArgument(format!("tie-break probability {q} not in [0,1]")));
    }
    follow(env, start, Rule::Quadrant { quadrant, q, seed }, &|_| false)
}

/// SEoA trace with the vertical excursion before each sideways step.
pub fn seoa_path<L: Lattice + ?Sized>(env: &L, start: &Site) -> Result<(PathTrace, Vec<i64>)> {
    let t = follow(env, start, Rule::Seoa, &|_| false)?;
    let w = vertical_excursions(&t);
    Ok((t, w))
}

pub fn swoa_path<L: Lattice + ?Sized>(env: &L, start: &Site) -> Result<(PathTrace, Vec<i64>)> {
    let t = follow(env, start, Rule::Swoa, &|_| false)?;
    let w = vertical_excursions(&t);
    Ok((t, w))
}

/// Marks both traces with the first common site; after it they agree.
pub fn coalesce(a: &mut PathTrace, b: &mut PathTrace) -> Option<Site> {
    let index: HashMap<Site, usize> = a.sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let (jb, ia) = b.sites.iter().enumerate().find_map(|(j, s)| index.get(s).map(|&i| (j, i)))?;
    let meet = b.sites[jb];
    a.exit = ExitReason::Coalesced(ia);
    b.exit = ExitReason::Coalesced(jb);
    Some(meet)
}

/// Ensemble statistics for two paths of one quadrant.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalescenceStats {
    pub trials: usize,
    pub met: usize,
    /// Meeting time (steps of the first path) ↦ count.
    pub meeting_times: BTreeMap<usize, usize>,
    /// Changes in the first-coordinate difference over synchronous steps
    /// taken while the paths are apart: `[+1, −1, 0]`.
    pub difference_steps: [u64; 3],
}

impl CoalescenceStats {
    pub fn frequency(&self) -> f64 {
        self.met as f64 / self.trials as f64
    }

    pub fn step_total(&self) -> u64 {
        self.difference_steps.iter().sum()
    }
}

/// Runs two `quadrant` paths from `x` and `y` in independent environments of
/// `model` on `[−radius, radius]²`, one environment per trial.
pub fn coalescence_stats(
    model: &ModelId,
    x: &Site,
    y: &Site,
    quadrant: Quadrant,
    radius: i64,
    trials: usize,
    master_seed: u64,
) -> Result<CoalescenceStats> {
    let window = Window::square(2, radius)?;
    window.checked_index(x)?;
    window.checked_index(y)?;
    let measure = model.measure();
    let per_trial: Vec<Result<(Option<usize>, [u64; 3])>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i as u64);
            let env = LazyEnvironment::new(measure.clone(), window.clone(), seed)?;
            let mut a = quadrant_path(&env, x, quadrant, 0.5, seed)?;
            let mut b = quadrant_path(&env, y, quadrant, 0.5, seed)?;
            let meet = coalesce(&mut a, &mut b);
            let met_at = meet.map(|_| match a.exit {
                ExitReason::Coalesced(i) => i,
                _ => unreachable!(),
            });
            let horizon = met_at.unwrap_or(usize::MAX).min(a.sites.len()).min(b.sites.len());
            let mut diff = [0u64; 3];
            for t in 1..horizon {
                let da = a.sites[t].x() - a.sites[t - 1].x();
                let db = b.sites[t].x() - b.sites[t - 1].x();
                match da - db {
                    1 => diff[0] += 1,
                    -1 => diff[1] += 1,
                    _ => diff[2] += 1,
                }
            }
            Ok((met_at, diff))
        })
        .collect();
    let mut stats = CoalescenceStats { trials, met: 0, meeting_times: BTreeMap::new(), difference_steps: [0; 3] };
    for r in per_trial {
        let (met_at, diff) = r?;
        if let Some(t) = met_at {
            stats.met += 1;
            *stats.meeting_times.entry(t).or_default() += 1;
        }
        for k in 0..3 {
            stats.difference_steps[k] += diff[k];
        }
    }
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Open cycles

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleStrategy {
    /// (↔ ↕): spiral of SW, SE, NE, NW paths.
    SpiralLrud,
    /// (SWE ↑): spiral of SEoA, NE, NW, SWoA paths.
    SpiralSweN,
    /// (NE SW): SE and NW paths closed through N-clusters.
    Orthant,
}

impl CycleStrategy {
    pub fn for_model(model: &ModelId) -> Option<CycleStrategy> {
        if model.is("WE", "NS") {
            Some(CycleStrategy::SpiralLrud)
        } else if model.is("SWE", "N") {
            Some(CycleStrategy::SpiralSweN)
        } else if model.is("NE", "SW") {
            Some(CycleStrategy::Orthant)
        } else {
            None
        }
    }
}

/// A closed open path `x_0 … x_N = x_0` enclosing `[−box_m, box_m]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenCycle {
    pub sites: Vec<Site>,
    pub box_m: i64,
}

impl OpenCycle {
    pub fn distinct_sites(&self) -> Vec<Site> {
        let mut v = self.sites.clone();
        v.sort();
        v.dedup();
        v
    }

    pub fn write_dump<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let trace = PathTrace { sites: self.sites.clone(), exit: ExitReason::ClosedCycle };
        trace.write_dump(out)?;
        let s = self.sites[0];
        writeln!(out, "close {} {}", s.x(), s.y())?;
        writeln!(out, "box {}", self.box_m)
    }
}

/// Winding number of the closed lattice polygon around `p` (`p` off the polygon).
pub fn winding_number(cycle: &[Site], p: (i64, i64)) -> i64 {
    let mut wn = 0;
    for e in cycle.windows(2) {
        let (ax, ay, bx, by) = (e[0].x(), e[0].y(), e[1].x(), e[1].y());
        let left = (bx - ax) * (p.1 - ay) - (p.0 - ax) * (by - ay);
        if ay <= p.1 {
            if by > p.1 && left > 0 {
                wn += 1;
            }
        } else if by <= p.1 && left < 0 {
            wn -= 1;
        }
    }
    wn
}

/// Every box point off the cycle has nonzero winding number.
pub fn encloses_box(cycle: &[Site], m: i64) -> bool {
    let on: HashSet<(i64, i64)> = cycle.iter().map(|s| (s.x(), s.y())).collect();
    (-m..=m).all(|x| (-m..=m).all(|y| on.contains(&(x, y)) || winding_number(cycle, (x, y)) != 0))
}

fn verified<L: Lattice + ?Sized>(env: &L, sites: Vec<Site>, m: i64) -> Option<OpenCycle> {
    if sites.len() < 3 || sites.first() != sites.last() {
        return None;
    }
    if first_closed_step(env, &sites).is_some() || !encloses_box(&sites, m) {
        return None;
    }
    Some(OpenCycle { sites, box_m: m })
}

/// A growing spiral that notices when a leg returns to an earlier site.
struct Spiral {
    sites: Vec<Site>,
    first: HashMap<Site, usize>,
}

impl Spiral {
    fn new(start: Site) -> Self {
        Spiral { sites: vec![start], first: HashMap::from([(start, 0)]) }
    }

    fn end(&self) -> Site {
        *self.sites.last().unwrap()
    }

    /// Appends a leg; returns a closed cycle at the first revisit that encloses the box.
    fn extend<L: Lattice + ?Sized>(&mut self, env: &L, leg: &PathTrace, m: i64) -> Option<OpenCycle> {
        for s in leg.sites.iter().skip(1) {
            let j = self.sites.len();
            self.sites.push(*s);
            if let Some(&i) = self.first.get(s) {
                if let Some(c) = verified(env, self.sites[i..=j].to_vec(), m) {
                    return Some(c);
                }
            } else {
                self.first.insert(*s, j);
            }
        }
        None
    }
}

fn leg<L: Lattice + ?Sized>(env: &L, start: &Site, rule: Rule, stop: &dyn Fn(&Site) -> bool) -> Result<Option<PathTrace>> {
    let t = follow(env, start, rule, stop)?;
    Ok((t.exit == ExitReason::ReachedTarget).then_some(t))
}

/// Breadth-first tree of sites that reach one of `targets` using steps in
/// `allowed`; `next[y]` is the following site on a path to a target.
fn backward_tree<L: Lattice + ?Sized>(env: &L, targets: &[usize], allowed: ArrowSet, skip: &dyn Fn(&Site) -> bool) -> Vec<usize> {
    let w = env.window();
    let mut next = vec![usize::MAX; w.len()];
    let mut queue = VecDeque::new();
    for &t in targets {
        if next[t] == usize::MAX {
            next[t] = t;
            queue.push_back(t);
        }
    }
    while let Some(z) = queue.pop_front() {
        let s = w.site(z);
        for dir in allowed.iter(2) {
            if let Some(y) = w.neighbor(z, &s, dir.negate()) {
                if next[y] == usize::MAX && env.arrows_at(y).contains(dir, 2) && !skip(&w.site(y)) {
                    next[y] = z;
                    queue.push_back(y);
                }
            }
        }
    }
    next
}

fn box_interior(m: i64) -> impl Fn(&Site) -> bool {
    move |s: &Site| s.x().abs() < m && s.y().abs() < m
}

fn tree_path(w: &Window, next: &[usize], from: usize) -> Vec<Site> {
    let mut out = vec![w.site(from)];
    let mut cur = from;
    while next[cur] != cur {
        cur = next[cur];
        out.push(w.site(cur));
    }
    out
}

/// Closes a spiral whose inner part is `sites[..inner_end]` and outer part
/// `sites[outer_start..]`: an open path from an outer site to an inner site,
/// kept out of `avoid`, turns the spiral segment between them into a cycle.
fn splice<L: Lattice + ?Sized>(
    env: &L,
    spiral: &Spiral,
    inner_end: usize,
    outer_start: usize,
    m: i64,
    avoid: &dyn Fn(&Site) -> bool,
) -> Option<OpenCycle> {
    let w = env.window();
    let inner: Vec<usize> = spiral.sites[..inner_end].iter().filter(|s| !avoid(s)).map(|s| w.index(s)).collect();
    let next = backward_tree(env, &inner, ArrowSet::full(2), avoid);
    let inner_pos: HashMap<Site, usize> =
        spiral.sites[..inner_end].iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut outer: Vec<(Site, usize)> =
        spiral.sites.iter().enumerate().skip(outer_start).map(|(j, s)| (*s, j)).collect();
    outer.sort();
    for (z, j) in outer {
        let zi = w.index(&z);
        if next[zi] == usize::MAX {
            continue;
        }
        let path = tree_path(w, &next, zi);
        let landing = *path.last().unwrap();
        let i = inner_pos[&landing];
        if i >= j {
            continue;
        }
        let mut sites = spiral.sites[i..=j].to_vec();
        sites.extend_from_slice(&path[1..]);
        if let Some(c) = verified(env, sites, m) {
            return Some(c);
        }
    }
    None
}

/// Attempts the cycle construction for `strategy`; `None` when a leg leaves
/// the window or no closure is found.
pub fn build_open_cycle<L: Lattice + ?Sized>(env: &L, model: &ModelId, m: i64, strategy: CycleStrategy) -> Result<Option<OpenCycle>> {
    if env.window().dim() != 2 {
        return Err(DreError::UnsupportedDimension(env.window().dim()));
    }
    if CycleStrategy::for_model(model) != Some(strategy) {
        return Err(DreError::InvalidArgument(format!("strategy {strategy:?} does not apply to model {}", model.name())));
    }
    let w = env.window();
    if m < 1 || w.lo(0) > -m - 1 || w.hi(0) < m + 1 || w.lo(1) > -m - 1 || w.hi(1) < m + 1 {
        return Err(DreError::InvalidArgument(format!("box [-{m},{m}]^2 does not fit strictly inside the window")));
    }
    match strategy {
        CycleStrategy::SpiralLrud => spiral_lrud(env, m),
        CycleStrategy::SpiralSweN => spiral_swe_n(env, m),
        CycleStrategy::Orthant => {
            // These keep {NE, SW} in place, possibly trading the two atoms.
            let syms = Symmetry::all().filter(|t| t.sx == t.sy);
            under_symmetries(env, m, syms, orthant_cycle)
        }
    }
}

fn quad(q: Quadrant) -> Rule {
    Rule::Quadrant { quadrant: q, q: 0.5, seed: 0 }
}

/// One of the eight symmetries of the square: optional diagonal swap, then signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Symmetry {
    swap: bool,
    sx: i64,
    sy: i64,
}

impl Symmetry {
    const IDENTITY: Symmetry = Symmetry { swap: false, sx: 1, sy: 1 };

    fn all() -> impl Iterator<Item = Symmetry> {
        [false, true].into_iter().flat_map(|swap| {
            [(1, 1), (-1, 1), (1, -1), (-1, -1)].into_iter().map(move |(sx, sy)| Symmetry { swap, sx, sy })
        })
    }

    fn apply(self, x: i64, y: i64) -> (i64, i64) {
        let (a, b) = if self.swap { (y, x) } else { (x, y) };
        (self.sx * a, self.sy * b)
    }

    fn invert(self, x: i64, y: i64) -> (i64, i64) {
        let (a, b) = (self.sx * x, self.sy * y);
        if self.swap {
            (b, a)
        } else {
            (a, b)
        }
    }

    fn dir(self, d: Direction) -> Direction {
        let v = d.sign();
        let (u, w) = if d.axis == 0 { self.apply(v, 0) } else { self.apply(0, v) };
        Direction::new(if u != 0 { 0 } else { 1 }, u + w > 0)
    }

    fn grid<L: Lattice + ?Sized>(self, env: &L) -> Result<ArrowGrid> {
        let w = env.window();
        let a = self.apply(w.lo(0), w.lo(1));
        let b = self.apply(w.hi(0), w.hi(1));
        let window = Window::new(&[(a.0.min(b.0), a.0.max(b.0)), (a.1.min(b.1), a.1.max(b.1))])?;
        let arrows = (0..window.len())
            .map(|i| {
                let s = window.site(i);
                let (x, y) = self.invert(s.x(), s.y());
                env.arrows(&Site::xy(x, y)).expect("image site inside").map(2, |d| self.dir(d))
            })
            .collect();
        ArrowGrid::new(window, arrows)
    }
}

/// The spiral from each corner of the box in each turning sense; the
/// model is invariant under all of these.
fn spiral_lrud<L: Lattice + ?Sized>(env: &L, m: i64) -> Result<Option<OpenCycle>> {
    under_symmetries(env, m, Symmetry::all(), spiral_lrud_once)
}

/// Runs `build` on each transformed copy of `env` and maps the first
/// verified cycle back.
fn under_symmetries<L: Lattice + ?Sized>(
    env: &L,
    m: i64,
    syms: impl Iterator<Item = Symmetry>,
    build: fn(&ArrowGrid, i64) -> Result<Option<OpenCycle>>,
) -> Result<Option<OpenCycle>> {
    for sym in syms {
        let g = sym.grid(env)?;
        if let Some(c) = build(&g, m)? {
            let sites = c.sites.iter().map(|s| {
                let (x, y) = sym.invert(s.x(), s.y());
                Site::xy(x, y)
            });
            if let Some(c) = verified(env, sites.collect(), m) {
                return Ok(Some(c));
            }
        }
    }
    Ok(None)
}

fn spiral_lrud_once(env: &ArrowGrid, m: i64) -> Result<Option<OpenCycle>> {
    let legs: [(Quadrant, fn(&Site, i64) -> bool); 7] = [
        (Quadrant::SW, |s, m| s.y() == -m),
        (Quadrant::SE, |s, m| s.x() == m),
        (Quadrant::NE, |s, m| s.y() == m),
        (Quadrant::NW, |s, m| s.x() == -m),
        (Quadrant::SW, |s, m| s.y() == -m),
        (Quadrant::SE, |s, m| s.x() == m),
        (Quadrant::NE, |s, m| s.y() == m),
    ];
    let mut spiral = Spiral::new(Site::xy(-m, m));
    let mut marks = Vec::new();
    for (k, (q, stop)) in legs.iter().enumerate() {
        let start = spiral.end();
        // Each leg must move before its stopping line counts.
        let first = if k == 0 { None } else { Some(start) };
        let t = follow(env, &start, quad(*q), &|s| Some(*s) != first && stop(s, m))?;
        if let Some(c) = spiral.extend(env, &t, m) {
            return Ok(Some(c));
        }
        let complete = t.exit == ExitReason::ReachedTarget;
        marks.push(spiral.sites.len());
        // From the third leg on, try closing back onto the first leg early;
        // a leg that left the window can still be spliced from what it traced.
        if k >= 2 {
            if let Some(c) = splice(env, &spiral, marks[0], marks[1] - 1, m, &box_interior(m)) {
                return Ok(Some(c));
            }
        }
        if !complete {
            return Ok(None);
        }
    }
    // Inner part y0..y3, outer part y4..y7.
    Ok(splice(env, &spiral, marks[2], marks[3] - 1, m, &box_interior(m)))
}

/// The spiral and its mirror image; SEoA and SWoA trade places.
fn spiral_swe_n<L: Lattice + ?Sized>(env: &L, m: i64) -> Result<Option<OpenCycle>> {
    let mirror = Symmetry { swap: false, sx: -1, sy: 1 };
    under_symmetries(env, m, [Symmetry::IDENTITY, mirror].into_iter(), spiral_swe_n_once)
}

fn spiral_swe_n_once(env: &ArrowGrid, m: i64) -> Result<Option<OpenCycle>> {
    let w = env.window();
    // SEoA paths z^i from (−i, M) to the column x = M with the box above them.
    let mut admissible: HashSet<Site> = HashSet::new();
    let mut first_start = None;
    for i in (m + 1)..=(-w.lo(0)) {
        let Some(z) = leg(env, &Site::xy(-i, m), Rule::Seoa, &|s| s.x() == m)? else { continue };
        let below_box = z.sites.iter().filter(|s| s.x().abs() <= m).all(|s| s.y() < -m);
        if below_box {
            first_start.get_or_insert(z.sites[0]);
            admissible.extend(z.sites.iter().copied());
        }
    }
    let Some(y1) = first_start else { return Ok(None) };
    let on_z = move |s: &Site, _: i64| admissible.contains(s);
    let plan: [(Rule, &dyn Fn(&Site, i64) -> bool); 6] = [
        (Rule::Seoa, &|s, m| s.x() == m),
        (quad(Quadrant::NE), &|s, m| s.y() == m),
        (quad(Quadrant::NW), &|s, m| s.x() == -m),
        (Rule::Swoa, &on_z),
        (Rule::Seoa, &|s, m| s.x() == m),
        (quad(Quadrant::NE), &|s, m| s.y() == m),
    ];
    let mut spiral = Spiral::new(y1);
    let mut marks = Vec::new();
    for (k, (rule, stop)) in plan.into_iter().enumerate() {
        let start = spiral.end();
        let t = follow(env, &start, rule, &|s| *s != start && stop(s, m))?;
        if let Some(c) = spiral.extend(env, &t, m) {
            return Ok(Some(c));
        }
        marks.push(spiral.sites.len());
        if k >= 1 {
            // Over the top only: the strip through and below the box is off limits.
            let strip = |s: &Site| s.x().abs() <= m && s.y() < m;
            if let Some(c) = splice(env, &spiral, marks[0], marks[0] - 1, m, &strip) {
                return Ok(Some(c));
            }
        }
        if t.exit != ExitReason::ReachedTarget {
            return Ok(None);
        }
    }
    Ok(splice(env, &spiral, marks[1], marks[2] - 1, m, &box_interior(m)))
}

/// Sites reaching `target` with steps in `allowed`, as a membership vector.
fn restricted_cluster<L: Lattice + ?Sized>(env: &L, target: &Site, allowed: ArrowSet) -> Vec<usize> {
    let w = env.window();
    backward_tree(env, &[w.index(target)], allowed, &|_| false)
}

fn orthant_cycle(env: &ArrowGrid, m: i64) -> Result<Option<OpenCycle>> {
    let w = env.window();
    let up_moves = ArrowSet::from_letters("NWE").unwrap();
    let down_moves = ArrowSet::from_letters("SWE").unwrap();
    let band = |s: &Site| s.y().abs() <= m;
    // N-cluster at (j, M) reaching the bottom edge with the box to its left.
    let mut found_n = None;
    for j in (m + 1)..=w.hi(0) {
        let next = restricted_cluster(env, &Site::xy(j, m), up_moves);
        let members = || (0..w.len()).filter(|&i| next[i] != usize::MAX).map(|i| w.site(i));
        if members().any(|s| s.y() == w.lo(1)) && members().filter(band).all(|s| s.x() > m) {
            found_n = Some((Site::xy(j, m), next));
            break;
        }
    }
    let Some((top, n_next)) = found_n else { return Ok(None) };
    let mut found_t = None;
    for j in (w.lo(0)..=(-m - 1)).rev() {
        let next = restricted_cluster(env, &Site::xy(j, -m), down_moves);
        let members = || (0..w.len()).filter(|&i| next[i] != usize::MAX).map(|i| w.site(i));
        if members().any(|s| s.y() == w.hi(1)) && members().filter(band).all(|s| s.x() < -m) {
            found_t = Some((Site::xy(j, -m), next));
            break;
        }
    }
    let Some((bottom, t_next)) = found_t else { return Ok(None) };
    let in_n = |s: &Site| n_next[w.index(s)] != usize::MAX;
    let in_t = |s: &Site| t_next[w.index(s)] != usize::MAX;
    let Some(se) = leg(env, &bottom, quad(Quadrant::SE), &in_n)? else { return Ok(None) };
    let mut sites = se.sites.clone();
    sites.extend_from_slice(&tree_path(w, &n_next, w.index(&se.last()))[1..]);
    let Some(nw) = leg(env, &top, quad(Quadrant::NW), &in_t)? else { return Ok(None) };
    sites.extend_from_slice(&nw.sites[1..]);
    sites.extend_from_slice(&tree_path(w, &t_next, w.index(&nw.last()))[1..]);
    Ok(verified(env, sites, m))
}

/// Result of [`detect_gigantic_m`]; `found = false` may be a false negative.
#[derive(Debug, Clone, PartialEq)]
pub struct GiganticReport {
    pub found: bool,
    pub cycle: Option<OpenCycle>,
    pub theta_plus_one: bool,
    pub strategy: Option<CycleStrategy>,
    /// Every cycle site lies in `M_{x_0}`.
    pub mutual_communication: bool,
    /// Sampled box sites `y` with `C_y ⊇ cycle`, out of `sampled`.
    pub forward_contains: usize,
    pub sampled: usize,
    /// `B_y ⊇ cycle` for every cycle site `y` checked.
    pub backward_contains: bool,
    pub note: String,
}

impl GiganticReport {
    pub fn checks_pass(&self) -> bool {
        self.found && self.mutual_communication && self.forward_contains == self.sampled && self.backward_contains
    }

    pub fn to_kv(&self) -> String {
        format!(
            "found={}\ntheta_plus_one={}\nstrategy={}\ncycle_length={}\nmutual_communication={}\nforward_contains={}/{}\nbackward_contains={}\nnote={}\n",
            self.found,
            self.theta_plus_one,
            self.strategy.map(|s| format!("{s:?}")).unwrap_or_else(|| "none".into()),
            self.cycle.as_ref().map(|c| c.sites.len() - 1).unwrap_or(0),
            self.mutual_communication,
            self.forward_contains,
            self.sampled,
            self.backward_contains,
            self.note
        )
    }
}

/// Searches for an open cycle around `[−m, m]²` and checks that it behaves as
/// part of a gigantic communicating component inside the window.
pub fn detect_gigantic_m<L: Lattice + ?Sized>(env: &L, model: &ModelId, m: i64, seed: u64) -> Result<GiganticReport> {
    let mut report = GiganticReport {
        found: false,
        cycle: None,
        theta_plus_one: theta_plus_is_one(&model.measure()).is_some(),
        strategy: CycleStrategy::for_model(model),
        mutual_communication: false,
        forward_contains: 0,
        sampled: 0,
        backward_contains: false,
        note: String::new(),
    };
    if !report.theta_plus_one {
        report.note = "theta_+ < 1: no cycle construction applies".into();
        return Ok(report);
    }
    let Some(strategy) = report.strategy else {
        report.note = format!("no cycle construction for model {}", model.name());
        return Ok(report);
    };
    let Some(cycle) = build_open_cycle(env, model, m, strategy)? else {
        report.note = "no cycle found inside the window".into();
        return Ok(report);
    };
    let sites = cycle.distinct_sites();
    let x0 = cycle.sites[0];
    let mx = communicating_cluster(env, &x0)?;
    report.mutual_communication = sites.iter().all(|s| mx.contains(s));
    let side = 2 * m + 1;
    report.sampled = 10;
    for k in 0..report.sampled {
        let h = mix64(seed ^ mix64(k as u64 + 1));
        let y = Site::xy(-m + (h % side as u64) as i64, -m + ((h >> 32) % side as u64) as i64);
        let c = forward_cluster(env, &y)?;
        if sites.iter().all(|s| c.contains(s)) {
            report.forward_contains += 1;
        }
    }
    report.backward_contains = [sites[0], sites[sites.len() / 2]].iter().all(|y| {
        backward_cluster(env, y).map(|b| sites.iter().all(|s| b.contains(s))).unwrap_or(false)
    });
    report.found = true;
    report.note = "cycle verified".into();
    report.cycle = Some(cycle);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{reflect_horizontal, sample_model};

    fn l(s: &str) -> ArrowSet {
        ArrowSet::from_letters(s).unwrap()
    }

    fn assert_open<L: Lattice + ?Sized>(env: &L, t: &PathTrace) {
        assert_eq!(t.first_closed_step(env), None);
    }

    #[test]
    fn crw_ne_path_is_unique_open_path() {
        let model = ModelId::parse("N-E", 0.5, 2).unwrap();
        let g = sample_model(&model, &Window::square(2, 10).unwrap(), 3).unwrap();
        let a = quadrant_path(&g, &Site::origin(2), Quadrant::NE, 0.5, 1).unwrap();
        let b = quadrant_path(&g, &Site::origin(2), Quadrant::NE, 0.9, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.exit, ExitReason::HitBoundary);
        assert_open(&g, &a);
        assert!(a.steps().all(|d| d == Direction::NORTH || d == Direction::EAST));
    }

    #[test]
    fn orthant_se_path_is_deterministic() {
        let model = ModelId::parse("NE-SW", 0.5, 2).unwrap();
        let g = sample_model(&model, &Window::square(2, 10).unwrap(), 8).unwrap();
        let t = quadrant_path(&g, &Site::origin(2), Quadrant::SE, 0.5, 0).unwrap();
        for (s, d) in t.sites.iter().zip(t.steps()) {
            let expect = if g.arrows(s) == Some(l("NE")) { Direction::EAST } else { Direction::SOUTH };
            assert_eq!(d, expect);
        }
    }

    #[test]
    fn missing_quadrant_arrow_is_reported() {
        let g = ArrowGrid::filled(Window::square(2, 3).unwrap(), l("W"));
        let e = quadrant_path(&g, &Site::origin(2), Quadrant::NE, 0.5, 0).unwrap_err();
        assert!(matches!(e, DreError::ModelAssumption { site, .. } if site == Site::origin(2)));
    }

    #[test]
    fn tie_breaks_follow_q() {
        let g = ArrowGrid::filled(Window::square(2, 60).unwrap(), l("NE"));
        let t = quadrant_path(&g, &Site::xy(-60, -60), Quadrant::NE, 0.3, 5).unwrap();
        let n = t.steps().filter(|d| *d == Direction::NORTH).count() as f64;
        let total = t.steps().count() as f64;
        let se = (0.3f64 * 0.7 / total).sqrt();
        assert!((n / total - 0.3).abs() < 4.0 * se, "{}", n / total);
    }

    #[test]
    fn paths_sharing_a_seed_agree_after_meeting() {
        let g = ArrowGrid::filled(Window::square(2, 30).unwrap(), l("NE"));
        for seed in 0..20 {
            let mut a = quadrant_path(&g, &Site::xy(-3, 0), Quadrant::NE, 0.5, seed).unwrap();
            let mut b = quadrant_path(&g, &Site::xy(0, -3), Quadrant::NE, 0.5, seed).unwrap();
            if coalesce(&mut a, &mut b).is_some() {
                let (ExitReason::Coalesced(i), ExitReason::Coalesced(j)) = (a.exit, b.exit) else { panic!() };
                assert_eq!(a.sites[i..], b.sites[j..]);
            }
        }
    }

    #[test]
    fn identical_starts_meet_at_time_zero() {
        let model = ModelId::parse("N-E", 0.5, 2).unwrap();
        let s = coalescence_stats(&model, &Site::origin(2), &Site::origin(2), Quadrant::NE, 10, 20, 1).unwrap();
        assert_eq!(s.met, 20);
        assert_eq!(s.meeting_times.get(&0), Some(&20));
    }

    #[test]
    fn seoa_descends_swe_column() {
        let mut g = ArrowGrid::filled(Window::square(2, 5).unwrap(), l("N"));
        for y in -5..=0 {
            g.set(&Site::xy(0, y), l("SWE"));
        }
        let (t, _) = seoa_path(&g, &Site::origin(2)).unwrap();
        assert_eq!(t.last(), Site::xy(0, -5));
        assert_eq!(t.exit, ExitReason::HitBoundary);
        let (t2, _) = swoa_path(&g, &Site::origin(2)).unwrap();
        assert_eq!(t2.sites, t.sites);
    }

    #[test]
    fn seoa_excursions_read_off_the_path() {
        // Origin ↑, (0,1) SWE over ↑: one excursion of +1, then sideways.
        let mut g = ArrowGrid::filled(Window::square(2, 4).unwrap(), l("N"));
        g.set(&Site::xy(0, 1), l("SWE"));
        let (t, w) = seoa_path(&g, &Site::origin(2)).unwrap();
        assert_eq!(&t.sites[..3], &[Site::xy(0, 0), Site::xy(0, 1), Site::xy(1, 1)]);
        assert_eq!(w, vec![1]);
    }

    #[test]
    fn seoa_rejects_foreign_arrows() {
        let g = ArrowGrid::filled(Window::square(2, 3).unwrap(), l("NE"));
        assert!(matches!(seoa_path(&g, &Site::origin(2)), Err(DreError::ModelAssumption { .. })));
    }

    #[test]
    fn winding_of_unit_square() {
        let sq: Vec<Site> = [(0, 0), (2, 0), (2, 2), (0, 2), (0, 0)]
            .iter()
            .flat_map(|&(x, y)| [Site::xy(x, y)])
            .collect();
        // Expand to unit steps.
        let mut cyc = vec![sq[0]];
        for w in sq.windows(2) {
            let mut c = w[0];
            while c != w[1] {
                let d = Direction::all(2).find(|d| {
                    let n = c.step(*d);
                    (n.x() - w[1].x()).abs() + (n.y() - w[1].y()).abs() < (c.x() - w[1].x()).abs() + (c.y() - w[1].y()).abs()
                });
                c = c.step(d.unwrap());
                cyc.push(c);
            }
        }
        assert_eq!(winding_number(&cyc, (1, 1)), 1);
        assert_eq!(winding_number(&cyc, (3, 1)), 0);
        let rev: Vec<Site> = cyc.iter().rev().copied().collect();
        assert_eq!(winding_number(&rev, (1, 1)), -1);
    }

    #[test]
    fn symmetries_move_arrows_with_sites() {
        let model = ModelId::parse("NE-SW", 0.5, 2).unwrap();
        let g = sample_model(&model, &Window::new(&[(-4, 6), (-5, 3)]).unwrap(), 4).unwrap();
        for sym in Symmetry::all() {
            let h = sym.grid(&g).unwrap();
            for s in g.window().sites() {
                let (x, y) = sym.apply(s.x(), s.y());
                let img = Site::xy(x, y);
                for d in g.arrows(&s).unwrap().iter(2) {
                    let (a, b) = sym.apply(s.step(d).x(), s.step(d).y());
                    assert_eq!(img.step(sym.dir(d)), Site::xy(a, b));
                }
                assert_eq!(sym.invert(x, y), (s.x(), s.y()));
                assert_eq!(h.arrows(&img).unwrap().len(), g.arrows(&s).unwrap().len());
            }
        }
    }

    #[test]
    fn all_horizontal_environment_has_no_cycle() {
        let model = ModelId::parse("WE-NS", 0.5, 2).unwrap();
        let g = ArrowGrid::filled(Window::square(2, 20).unwrap(), l("WE"));
        assert_eq!(build_open_cycle(&g, &model, 3, CycleStrategy::SpiralLrud).unwrap(), None);
    }

    #[test]
    fn strategy_must_match_model() {
        let model = ModelId::parse("NE-SW", 0.5, 2).unwrap();
        let g = sample_model(&model, &Window::square(2, 20).unwrap(), 1).unwrap();
        assert!(matches!(build_open_cycle(&g, &model, 3, CycleStrategy::SpiralLrud), Err(DreError::InvalidArgument(_))));
    }

    #[test]
    fn lrud_cycles_are_open_and_enclosing() {
        let model = ModelId::parse("WE-NS", 0.5, 2).unwrap();
        let mut found = 0;
        for seed in 0..30 {
            let g = sample_model(&model, &Window::square(2, 40).unwrap(), seed).unwrap();
            if let Some(c) = build_open_cycle(&g, &model, 5, CycleStrategy::SpiralLrud).unwrap() {
                found += 1;
                assert_eq!(first_closed_step(&g, &c.sites), None);
                assert!(encloses_box(&c.sites, 5));
                let m0 = communicating_cluster(&g, &c.sites[0]).unwrap();
                assert!(c.sites.iter().all(|s| m0.contains(s)));
            }
        }
        assert!(found >= 20, "{found}");
    }

    #[test]
    fn swe_n_and_orthant_cycles_verify() {
        for (name, p) in [("SWE-N", 0.8), ("NE-SW", 0.5)] {
            let model = ModelId::parse(name, p, 2).unwrap();
            let strategy = CycleStrategy::for_model(&model).unwrap();
            let mut found = 0;
            for seed in 0..20 {
                let g = sample_model(&model, &Window::square(2, 40).unwrap(), seed).unwrap();
                if let Some(c) = build_open_cycle(&g, &model, 4, strategy).unwrap() {
                    found += 1;
                    assert_eq!(first_closed_step(&g, &c.sites), None);
                    assert!(encloses_box(&c.sites, 4));
                }
            }
            assert!(found > 0, "{name}");
        }
    }

    #[test]
    fn horizontal_line_model_is_never_gigantic() {
        // (SWE ↔) has no construction: M_x is a horizontal line.
        let model = ModelId::parse("SWE-WE", 0.5, 2).unwrap();
        let g = sample_model(&model, &Window::square(2, 20).unwrap(), 2).unwrap();
        let r = detect_gigantic_m(&g, &model, 3, 0).unwrap();
        assert!(!r.found);
        assert!(r.to_kv().starts_with("found=false\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn seoa_and_swoa_are_mirror_images(seed in any::<u64>(), p in 0.2f64..0.9, x in -5i64..5, y in -5i64..5) {
                let model = ModelId::parse("SWE-N", p, 2).unwrap();
                let g = sample_model(&model, &Window::new(&[(-12, 12), (-12, 12)]).unwrap(), seed).unwrap();
                let r = reflect_horizontal(&g).unwrap();
                let (a, wa) = swoa_path(&g, &Site::xy(x, y)).unwrap();
                let (b, wb) = seoa_path(&r, &Site::xy(-x, y)).unwrap();
                let mirrored: Vec<Site> = b.sites.iter().map(|s| Site::xy(-s.x(), s.y())).collect();
                prop_assert_eq!(a.sites.clone(), mirrored);
                prop_assert_eq!(wa, wb);
                prop_assert!(a.steps().all(|d| d != Direction::EAST));
                prop_assert!(b.steps().all(|d| d != Direction::WEST));
                prop_assert_eq!(a.first_closed_step(&g), None);
            }

            #[test]
            fn quadrant_steps_are_open_and_in_quadrant(seed in any::<u64>(), p in 0.05f64..0.95, which in 0usize..4) {
                let q = [Quadrant::NE, Quadrant::NW, Quadrant::SE, Quadrant::SW][which];
                let model = ModelId::parse("NSWE-WE", p, 2).unwrap();
                let g = sample_model(&model, &Window::square(2, 8).unwrap(), seed).unwrap();
                let t = quadrant_path(&g, &Site::origin(2), q, 0.5, seed).unwrap();
                let (v, h) = q.arrows();
                prop_assert!(t.steps().all(|d| d == v || d == h));
                prop_assert_eq!(t.first_closed_step(&g), None);
            }
        }
    }
}
