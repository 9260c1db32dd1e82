//! Forward, backward and communicating clusters; `B_o` shape classification;
//! blocking functions; row interval chains.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{DreError, Result};
use crate::lattice::{ArrowSet, Direction, Lattice, ModelId, Site, Window};

/// Which cluster a search computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterKind {
    Forward,
    Backward,
    Communicating,
}

/// Edge orientation followed by a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Forward,
    Backward,
}

/// Reusable breadth-first search state. Visited marks are generation stamps,
/// so repeated searches on one window never clear the whole array.
#[derive(Debug, Default, Clone)]
pub struct Bfs {
    stamp: Vec<u32>,
    generation: u32,
    order: Vec<usize>,
}

impl Bfs {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, n: usize) {
        if self.stamp.len() != n || self.generation == u32::MAX {
            self.stamp.clear();
            self.stamp.resize(n, 0);
            self.generation = 0;
        }
        self.generation += 1;
        self.order.clear();
    }

    #[inline]
    fn mark(&mut self, idx: usize) -> bool {
        if self.stamp[idx] == self.generation {
            false
        } else {
            self.stamp[idx] = self.generation;
            self.order.push(idx);
            true
        }
    }

    /// Runs a search from `start` using only edges whose direction is in
    /// `allowed`. Returns whether a window edge site was reached. With
    /// `stop_at_edge` the search ends as soon as that happens.
    pub fn run<L: Lattice + ?Sized>(
        &mut self,
        env: &L,
        start: usize,
        orientation: Orientation,
        allowed: ArrowSet,
        stop_at_edge: bool,
    ) -> bool {
        let w = env.window();
        let dim = w.dim();
        self.reset(w.len());
        self.mark(start);
        let mut touches = false;
        let mut head = 0;
        while head < self.order.len() {
            let idx = self.order[head];
            head += 1;
            let s = w.site(idx);
            if w.is_edge(&s) {
                touches = true;
                if stop_at_edge {
                    return true;
                }
            }
            match orientation {
                Orientation::Forward => {
                    let g = env.arrows_at(idx);
                    for dir in ArrowSet(g.0 & allowed.0).iter(dim) {
                        if let Some(t) = w.neighbor(idx, &s, dir) {
                            self.mark(t);
                        }
                    }
                }
                Orientation::Backward => {
                    for dir in allowed.iter(dim) {
                        if let Some(t) = w.neighbor(idx, &s, dir.negate()) {
                            if env.arrows_at(t).contains(dir, dim) {
                                self.mark(t);
                            }
                        }
                    }
                }
            }
        }
        touches
    }

    /// Sites reached by the last search, in visiting order.
    pub fn visited(&self) -> &[usize] {
        &self.order
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.stamp.get(idx).is_some_and(|&g| g == self.generation)
    }
}

/// A cluster as a sorted list of flat window indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub kind: ClusterKind,
    pub origin: Site,
    pub touches_boundary: bool,
    window: Window,
    indices: Vec<usize>,
}

impl ClusterResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn contains_index(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    pub fn contains(&self, s: &Site) -> bool {
        self.window.contains(s) && self.contains_index(self.window.index(s))
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.indices.iter().map(|&i| self.window.site(i))
    }
}

fn search<L: Lattice + ?Sized>(env: &L, x: &Site, orientation: Orientation) -> Result<ClusterResult> {
    let w = env.window();
    let start = w.checked_index(x)?;
    let mut bfs = Bfs::new();
    let touches = bfs.run(env, start, orientation, ArrowSet::full(w.dim()), false);
    let mut indices = bfs.visited().to_vec();
    indices.sort_unstable();
    let kind = match orientation {
        Orientation::Forward => ClusterKind::Forward,
        Orientation::Backward => ClusterKind::Backward,
    };
    Ok(ClusterResult { kind, origin: *x, touches_boundary: touches, window: w.clone(), indices })
}

/// `C_x`: every site reachable from `x` along open steps inside the window.
pub fn forward_cluster<L: Lattice + ?Sized>(env: &L, x: &Site) -> Result<ClusterResult> {
    search(env, x, Orientation::Forward)
}

/// `B_y`: every site from which `y` is reachable inside the window.
pub fn backward_cluster<L: Lattice + ?Sized>(env: &L, y: &Site) -> Result<ClusterResult> {
    search(env, y, Orientation::Backward)
}

/// `M_x = C_x ∩ B_x`; truncated when either side touches the boundary.
pub fn communicating_cluster<L: Lattice + ?Sized>(env: &L, x: &Site) -> Result<ClusterResult> {
    let c = forward_cluster(env, x)?;
    let b = backward_cluster(env, x)?;
    let mut indices = Vec::with_capacity(c.len().min(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < c.indices.len() && j < b.indices.len() {
        match c.indices[i].cmp(&b.indices[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                indices.push(c.indices[i]);
                i += 1;
                j += 1;
            }
        }
    }
    Ok(ClusterResult {
        kind: ClusterKind::Communicating,
        origin: *x,
        touches_boundary: indices.iter().any(|&i| c.window.is_edge(&c.window.site(i))),
        window: c.window,
        indices,
    })
}

/// Does `B_x` reach a window edge site? Stops at the first one.
pub fn backward_touches_boundary<L: Lattice + ?Sized>(env: &L, x: &Site, bfs: &mut Bfs) -> Result<bool> {
    let w = env.window();
    let start = w.checked_index(x)?;
    Ok(bfs.run(env, start, Orientation::Backward, ArrowSet::full(w.dim()), true))
}

/// Does `C_x` reach a window edge site? Stops at the first one.
pub fn forward_touches_boundary<L: Lattice + ?Sized>(env: &L, x: &Site, bfs: &mut Bfs) -> Result<bool> {
    let w = env.window();
    let start = w.checked_index(x)?;
    Ok(bfs.run(env, start, Orientation::Forward, ArrowSet::full(w.dim()), true))
}

/// Reachability by bit-matrix transitive closure, independent of the BFS code.
pub mod oracle {
    use crate::lattice::Lattice;

    /// Row `i` holds the set of sites reachable from site `i` (including `i`).
    pub struct Reachability {
        n: usize,
        words: usize,
        bits: Vec<u64>,
    }

    impl Reachability {
        pub fn new<L: Lattice + ?Sized>(env: &L) -> Self {
            let w = env.window();
            let dim = w.dim();
            let n = w.len();
            let words = n.div_ceil(64);
            let mut bits = vec![0u64; n * words];
            for i in 0..n {
                bits[i * words + i / 64] |= 1 << (i % 64);
                let s = w.site(i);
                for dir in env.arrows_at(i).iter(dim) {
                    let t = s.step(dir);
                    if w.contains(&t) {
                        let j = w.index(&t);
                        bits[i * words + j / 64] |= 1 << (j % 64);
                    }
                }
            }
            // Warshall: after pass k, paths through intermediates < k+1 are closed.
            for k in 0..n {
                let row_k: Vec<u64> = bits[k * words..(k + 1) * words].to_vec();
                for i in 0..n {
                    if bits[i * words + k / 64] >> (k % 64) & 1 == 1 {
                        for (dst, src) in bits[i * words..(i + 1) * words].iter_mut().zip(&row_k) {
                            *dst |= src;
                        }
                    }
                }
            }
            Reachability { n, words, bits }
        }

        pub fn reaches(&self, from: usize, to: usize) -> bool {
            self.bits[from * self.words + to / 64] >> (to % 64) & 1 == 1
        }

        pub fn forward(&self, x: usize) -> Vec<usize> {
            (0..self.n).filter(|&y| self.reaches(x, y)).collect()
        }

        pub fn backward(&self, y: usize) -> Vec<usize> {
            (0..self.n).filter(|&x| self.reaches(x, y)).collect()
        }

        /// Strongly connected component of `x`.
        pub fn component(&self, x: usize) -> Vec<usize> {
            (0..self.n).filter(|&y| self.reaches(x, y) && self.reaches(y, x)).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Blocking functions

/// Which side of the graph of `w` holds the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Cluster below: `w_≤ = {(n,k): k ≤ w(n)}`, nothing enters it from above.
    Upper,
    /// Cluster above: `w_≥`, nothing enters it from below.
    Lower,
}

/// An integer function on a column range, with the row band whose far-side
/// sites are checked during verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockingFunction {
    pub side: Side,
    pub first_col: i64,
    pub values: Vec<i64>,
    pub row_lo: i64,
    pub row_hi: i64,
}

impl BlockingFunction {
    pub fn new(side: Side, first_col: i64, values: Vec<i64>, row_lo: i64, row_hi: i64) -> Self {
        BlockingFunction { side, first_col, values, row_lo, row_hi }
    }

    pub fn last_col(&self) -> i64 {
        self.first_col + self.values.len() as i64 - 1
    }

    pub fn value(&self, n: i64) -> Option<i64> {
        if n < self.first_col {
            return None;
        }
        self.values.get((n - self.first_col) as usize).copied()
    }

    /// The longest prefix of columns whose values lie in `row_lo..row_hi`,
    /// dropping columns censored outside the inspection rows. Boundary
    /// vertices of the result then sit inside the checked band.
    pub fn uncensored(&self) -> BlockingFunction {
        let n = self.values.iter().take_while(|v| (self.row_lo..self.row_hi).contains(v)).count();
        BlockingFunction { values: self.values[..n].to_vec(), ..self.clone() }
    }

    pub fn monotone_decreasing(&self) -> bool {
        self.values.windows(2).all(|p| p[1] <= p[0])
    }

    /// In `w_≤` (upper) or `w_≥` (lower).
    pub fn near_side(&self, s: &Site) -> Option<bool> {
        let v = self.value(s.x())?;
        Some(match self.side {
            Side::Upper => s.y() <= v,
            Side::Lower => s.y() >= v,
        })
    }
}

/// An open edge from the far side into the near side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub from: Site,
    pub dir: Direction,
}

/// Checks that no far-side site of the band has an open step into the near
/// side. Targets outside the window or outside the column range are ignored.
pub fn verify_blocking_function<L: Lattice + ?Sized>(env: &L, w: &BlockingFunction) -> Result<Option<Violation>> {
    let win = env.window();
    if win.dim() != 2 {
        return Err(DreError::UnsupportedDimension(win.dim()));
    }
    let c0 = w.first_col.max(win.lo(0));
    let c1 = w.last_col().min(win.hi(0));
    let r0 = w.row_lo.max(win.lo(1));
    let r1 = w.row_hi.min(win.hi(1));
    for n in c0..=c1 {
        for k in r0..=r1 {
            let y = Site::xy(n, k);
            if w.near_side(&y) != Some(false) {
                continue;
            }
            let g = env.arrows(&y).expect("inside window");
            for dir in g.iter(2) {
                let z = y.step(dir);
                if win.contains(&z) && w.near_side(&z) == Some(true) {
                    return Ok(Some(Violation { from: y, dir }));
                }
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Shape classification

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Finite,
    FullWindow,
    BlockedAbove,
    BlockedBelow,
    Indeterminate,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Finite => "Finite",
            Shape::FullWindow => "FullWindow",
            Shape::BlockedAbove => "BlockedAbove",
            Shape::BlockedBelow => "BlockedBelow",
            Shape::Indeterminate => "Indeterminate",
        }
    }
}

/// Maximal runs `[lo, hi]` of `B^c` in one column of the inspection box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnComplement {
    pub col: i64,
    pub runs: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BShapeReport {
    pub shape: Shape,
    pub blocking: Option<BlockingFunction>,
    pub complement: Vec<ColumnComplement>,
    pub cluster_size: usize,
    /// The window shrunk by the margin; shapes are read inside it.
    pub inspection: Window,
    pub margin: i64,
}

impl BShapeReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "shape={}", self.shape.name());
        let _ = writeln!(s, "size={}", self.cluster_size);
        let _ = writeln!(s, "margin={}", self.margin);
        let _ = writeln!(s, "inspection={}", self.inspection.spec_string());
        if let Some(w) = &self.blocking {
            let _ = writeln!(s, "side={}", if w.side == Side::Upper { "upper" } else { "lower" });
            let _ = writeln!(s, "monotone_decreasing={}", w.monotone_decreasing());
            for (i, v) in w.values.iter().enumerate() {
                let _ = writeln!(s, "w[{}]={}", w.first_col + i as i64, v);
            }
        }
        s
    }
}

/// Default margin between the window edge and the inspection box: a fifth
/// of the shortest side. Holes of `B_o^c` cut off by the window edge reach
/// well inside it; at `M = 100` an eighth still left about 4% of
/// boundary-reaching `(NE SW)` clusters at `p = 0.5` looking blocked.
pub fn default_margin(w: &Window) -> i64 {
    let ext = (0..w.dim()).map(|a| w.extent(a)).min().unwrap_or(0) as i64;
    (ext / 5).max(1)
}

pub fn classify_b_shape<L: Lattice + ?Sized>(env: &L, x: &Site) -> Result<BShapeReport> {
    classify_b_shape_with_margin(env, x, default_margin(env.window()))
}

/// `Finite` when `B_x` avoids the window edge; otherwise the complement of
/// `B_x` is scanned column by column inside the inspection box.
pub fn classify_b_shape_with_margin<L: Lattice + ?Sized>(env: &L, x: &Site, margin: i64) -> Result<BShapeReport> {
    let win = env.window();
    if win.dim() != 2 {
        return Err(DreError::UnsupportedDimension(win.dim()));
    }
    let inner = win
        .shrink(margin)
        .map_err(|_| DreError::InvalidArgument(format!("margin {margin} leaves no inspection box")))?;
    let b = backward_cluster(env, x)?;
    let mut report = BShapeReport {
        shape: Shape::Finite,
        blocking: None,
        complement: Vec::new(),
        cluster_size: b.len(),
        inspection: inner.clone(),
        margin,
    };
    if !b.touches_boundary {
        return Ok(report);
    }
    let (r0, r1) = (inner.lo(1), inner.hi(1));
    let in_b = |n: i64, k: i64| b.contains_index(win.index(&Site::xy(n, k)));
    for n in inner.lo(0)..=inner.hi(0) {
        let mut runs = Vec::new();
        let mut k = r0;
        while k <= r1 {
            if in_b(n, k) {
                k += 1;
                continue;
            }
            let lo = k;
            while k <= r1 && !in_b(n, k) {
                k += 1;
            }
            runs.push((lo, k - 1));
        }
        report.complement.push(ColumnComplement { col: n, runs });
    }
    if report.complement.iter().all(|c| c.runs.is_empty()) {
        report.shape = Shape::FullWindow;
        return Ok(report);
    }
    let above = report.complement.iter().all(|c| c.runs.is_empty() || (c.runs.len() == 1 && c.runs[0].1 == r1));
    let below = report.complement.iter().all(|c| c.runs.is_empty() || (c.runs.len() == 1 && c.runs[0].0 == r0));
    let blocking = if above {
        let values = report
            .complement
            .iter()
            .map(|c| match c.runs.first() {
                None => r1,
                Some(&(lo, _)) if lo > r0 => lo - 1,
                // Whole column free inside the box: highest cluster site below it.
                Some(_) => (win.lo(1)..r0).rev().find(|&k| in_b(c.col, k)).unwrap_or(win.lo(1) - 1),
            })
            .collect();
        Some(BlockingFunction::new(Side::Upper, inner.lo(0), values, r0, r1))
    } else if below {
        let values = report
            .complement
            .iter()
            .map(|c| match c.runs.first() {
                None => r0,
                Some(&(_, hi)) if hi < r1 => hi + 1,
                Some(_) => (r1 + 1..=win.hi(1)).find(|&k| in_b(c.col, k)).unwrap_or(win.hi(1) + 1),
            })
            .collect();
        Some(BlockingFunction::new(Side::Lower, inner.lo(0), values, r0, r1))
    } else {
        None
    };
    match blocking {
        Some(w) => {
            if let Some(v) = verify_blocking_function(env, &w)? {
                return Err(DreError::Internal(format!(
                    "extracted blocking function violated at {} step {}",
                    v.from, v.dir
                )));
            }
            report.shape = if w.side == Side::Upper { Shape::BlockedAbove } else { Shape::BlockedBelow };
            report.blocking = Some(w);
        }
        None => report.shape = Shape::Indeterminate,
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Interval chains

/// Row `n` of `B_x` on the line `Z × {x₂ − n}`; `None` once extinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalRow {
    pub level: usize,
    pub interval: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalChain {
    pub model: ModelId,
    pub rows: Vec<IntervalRow>,
    /// A row reached the left or right window edge, or the window bottom was hit while alive.
    pub truncated: bool,
}

impl IntervalChain {
    pub fn extinct(&self) -> bool {
        self.rows.last().is_some_and(|r| r.interval.is_none())
    }
}

/// Builds the rows of `B_x` level by level: seeds of row `n+1` are its `↑`
/// sites below row `n`, closed under horizontal steps within the row.
pub fn interval_chain<L: Lattice + ?Sized>(env: &L, x: &Site, model: &ModelId) -> Result<IntervalChain> {
    let win = env.window();
    if win.dim() != 2 {
        return Err(DreError::UnsupportedDimension(win.dim()));
    }
    let nested = model.is("WE", "N");
    if !nested && !model.is("NE", "W") {
        return Err(DreError::InvalidArgument(format!(
            "interval chains need model WE-N or NE-W, got {}",
            model.name()
        )));
    }
    win.checked_index(x)?;
    let (c0, c1) = (win.lo(0), win.hi(0));
    let width = (c1 - c0 + 1) as usize;
    let arrows = |n: i64, k: i64| env.arrows(&Site::xy(n, k)).expect("inside window");
    let mut member = vec![false; width];
    let mut truncated = false;
    let close_row = |member: &mut Vec<bool>, k: i64| {
        // Horizontal closure: a site joins when one of its horizontal arrows lands on a member.
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..width {
                if member[i] {
                    continue;
                }
                let g = arrows(c0 + i as i64, k);
                let east = i + 1 < width && member[i + 1] && g.contains(Direction::EAST, 2);
                let west = i > 0 && member[i - 1] && g.contains(Direction::WEST, 2);
                if east || west {
                    member[i] = true;
                    changed = true;
                }
            }
        }
    };
    let interval_of = |member: &[bool], level: usize| -> Result<Option<(i64, i64)>> {
        let first = member.iter().position(|&m| m);
        let Some(first) = first else { return Ok(None) };
        let last = member.iter().rposition(|&m| m).unwrap();
        if member[first..=last].iter().any(|&m| !m) {
            return Err(DreError::Internal(format!("row {level} of the backward cluster is not an interval")));
        }
        Ok(Some((c0 + first as i64, c0 + last as i64)))
    };
    member[(x.x() - c0) as usize] = true;
    close_row(&mut member, x.y());
    let mut rows = Vec::new();
    let mut level = 0usize;
    let mut k = x.y();
    loop {
        let iv = interval_of(&member, level)?;
        if let (Some((lo, hi)), Some(prev)) = (iv, rows.last().and_then(|r: &IntervalRow| r.interval)) {
            if nested && !(lo <= prev.0 && hi >= prev.1) {
                return Err(DreError::Internal(format!("row {level} does not contain the row above")));
            }
        }
        rows.push(IntervalRow { level, interval: iv });
        let Some((lo, hi)) = iv else { break };
        if lo == c0 || hi == c1 {
            truncated = true;
        }
        if k == win.lo(1) {
            truncated = true;
            break;
        }
        let below = k - 1;
        let mut next = vec![false; width];
        for i in 0..width {
            if member[i] && arrows(c0 + i as i64, below).contains(Direction::NORTH, 2) {
                next[i] = true;
            }
        }
        close_row(&mut next, below);
        member = next;
        k = below;
        level += 1;
    }
    Ok(IntervalChain { model: *model, rows, truncated })
}

/// `D_n = (U_n − L_n + 1)_+` along the chain.
pub fn dn_trajectory(chain: &IntervalChain) -> Vec<u64> {
    chain
        .rows
        .iter()
        .map(|r| r.interval.map(|(lo, hi)| (hi - lo + 1) as u64).unwrap_or(0))
        .collect()
}

/// `site <x> <y> <in_C> <in_B>` for every site of `C_x ∪ B_x`.
pub fn write_cluster_dump<L: Lattice + ?Sized, W: Write>(env: &L, x: &Site, out: &mut W) -> Result<()> {
    if env.window().dim() != 2 {
        return Err(DreError::UnsupportedDimension(env.window().dim()));
    }
    let c = forward_cluster(env, x)?;
    let b = backward_cluster(env, x)?;
    let mut all: Vec<usize> = c.indices().iter().chain(b.indices()).copied().collect();
    all.sort_unstable();
    all.dedup();
    for i in all {
        let s = env.window().site(i);
        writeln!(out, "site {} {} {} {}", s.x(), s.y(), c.contains_index(i) as u8, b.contains_index(i) as u8)?;
    }
    Ok(())
}
