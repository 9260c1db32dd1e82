//! Directions, arrow sets, measures and sampled environments.

use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{DreError, Result};
use crate::rng::{hash_coords, stream, unit_f64};

/// Largest supported dimension.
pub const MAX_DIM: usize = 5;

/// Tolerance on the total mass of a measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A signed unit vector `±e_{axis+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    pub axis: u8,
    pub positive: bool,
}

impl Direction {
    pub const EAST: Direction = Direction { axis: 0, positive: true };
    pub const NORTH: Direction = Direction { axis: 1, positive: true };
    pub const WEST: Direction = Direction { axis: 0, positive: false };
    pub const SOUTH: Direction = Direction { axis: 1, positive: false };

    pub fn new(axis: usize, positive: bool) -> Self {
        Direction { axis: axis as u8, positive }
    }

    pub fn negate(self) -> Self {
        Direction { axis: self.axis, positive: !self.positive }
    }

    /// Bit position in an [`ArrowSet`] mask: `+e_i` at `i-1`, `-e_i` at `d+i-1`.
    pub fn bit(self, dim: usize) -> u32 {
        if self.positive {
            self.axis as u32
        } else {
            (dim + self.axis as usize) as u32
        }
    }

    pub fn from_bit(bit: u32, dim: usize) -> Self {
        let b = bit as usize;
        if b < dim {
            Direction::new(b, true)
        } else {
            Direction::new(b - dim, false)
        }
    }

    /// All `2d` directions in bit order.
    pub fn all(dim: usize) -> impl Iterator<Item = Direction> {
        (0..2 * dim as u32).map(move |b| Direction::from_bit(b, dim))
    }

    pub fn sign(self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    /// Compass letter in two dimensions.
    pub fn letter(self) -> Option<char> {
        match (self.axis, self.positive) {
            (0, true) => Some('E'),
            (1, true) => Some('N'),
            (0, false) => Some('W'),
            (1, false) => Some('S'),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.letter() {
            Some(c) => write!(f, "{c}"),
            None => write!(f, "{}e{}", if self.positive { '+' } else { '-' }, self.axis + 1),
        }
    }
}

/// The local environment `G_x`: a set of directions stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ArrowSet(pub u16);

impl ArrowSet {
    pub const EMPTY: ArrowSet = ArrowSet(0);

    pub fn from_dirs<I: IntoIterator<Item = Direction>>(dim: usize, dirs: I) -> Self {
        let mut mask = 0u16;
        for d in dirs {
            mask |= 1 << d.bit(dim);
        }
        ArrowSet(mask)
    }

    /// `{+e_1, …, +e_d}`.
    pub fn positive_orthant(dim: usize) -> Self {
        ArrowSet((1u16 << dim) - 1)
    }

    /// `{-e_1, …, -e_d}`.
    pub fn negative_orthant(dim: usize) -> Self {
        ArrowSet(((1u16 << dim) - 1) << dim)
    }

    pub fn full(dim: usize) -> Self {
        ArrowSet((1u16 << (2 * dim)) - 1)
    }

    #[inline]
    pub fn contains(self, dir: Direction, dim: usize) -> bool {
        self.0 & (1 << dir.bit(dim)) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn intersects(self, other: ArrowSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: ArrowSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ArrowSet) -> ArrowSet {
        ArrowSet(self.0 | other.0)
    }

    pub fn iter(self, dim: usize) -> impl Iterator<Item = Direction> {
        Direction::all(dim).filter(move |d| self.contains(*d, dim))
    }

    /// Image under a map of directions.
    pub fn map(self, dim: usize, f: impl Fn(Direction) -> Direction) -> ArrowSet {
        ArrowSet::from_dirs(dim, self.iter(dim).map(f))
    }

    /// Parse compass letters (`N`, `S`, `E`, `W`; `0` for the empty set).
    pub fn from_letters(s: &str) -> Option<ArrowSet> {
        if s == "0" || s == "." {
            return Some(ArrowSet::EMPTY);
        }
        if s.is_empty() {
            return None;
        }
        let mut mask = 0u16;
        for c in s.chars() {
            let d = match c.to_ascii_uppercase() {
                'E' => Direction::EAST,
                'N' => Direction::NORTH,
                'W' => Direction::WEST,
                'S' => Direction::SOUTH,
                _ => return None,
            };
            let bit = 1 << d.bit(2);
            if mask & bit != 0 {
                return None;
            }
            mask |= bit;
        }
        Some(ArrowSet(mask))
    }

    /// Compass letters in `N S W E` order, `0` when empty. Two dimensions only.
    pub fn letters(self) -> String {
        if self.is_empty() {
            return "0".to_string();
        }
        [Direction::NORTH, Direction::SOUTH, Direction::WEST, Direction::EAST]
            .iter()
            .filter(|d| self.contains(**d, 2))
            .map(|d| d.letter().unwrap())
            .collect()
    }
}

/// A lattice site; only the first `dim` coordinates are meaningful.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    coords: [i64; MAX_DIM],
    dim: u8,
}

impl Site {
    pub fn new(coords: &[i64]) -> Self {
        assert!(!coords.is_empty() && coords.len() <= MAX_DIM, "site dimension out of range");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site { coords: c, dim: coords.len() as u8 }
    }

    pub fn xy(x: i64, y: i64) -> Self {
        Site::new(&[x, y])
    }

    pub fn origin(dim: usize) -> Self {
        Site::new(&vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim as usize]
    }

    pub fn coord(&self, axis: usize) -> i64 {
        self.coords[axis]
    }

    pub fn x(&self) -> i64 {
        self.coords[0]
    }

    pub fn y(&self) -> i64 {
        self.coords[1]
    }

    pub fn step(&self, dir: Direction) -> Site {
        let mut s = *self;
        s.coords[dir.axis as usize] += dir.sign();
        s
    }

    pub fn offset(&self, delta: &[i64]) -> Site {
        let mut s = *self;
        for (c, d) in s.coords.iter_mut().zip(delta) {
            *c += d;
        }
        s
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A finite box `∏ [lo_i, hi_i]` of `Z^d` containing the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    dim: usize,
    lo: [i64; MAX_DIM],
    hi: [i64; MAX_DIM],
    strides: [usize; MAX_DIM],
    len: usize,
}

impl Window {
    pub fn new(ranges: &[(i64, i64)]) -> Result<Self> {
        let dim = ranges.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(DreError::InvalidWindow(format!("dimension {dim} not in [2, {MAX_DIM}]")));
        }
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        let mut strides = [0; MAX_DIM];
        let mut len: usize = 1;
        for (axis, &(a, b)) in ranges.iter().enumerate() {
            if b - a + 1 < 3 {
                return Err(DreError::InvalidWindow(format!(
                    "axis {} range {a}:{b} has fewer than 3 sites",
                    axis + 1
                )));
            }
            if a > 0 || b < 0 {
                return Err(DreError::InvalidWindow(format!(
                    "axis {} range {a}:{b} does not contain the origin",
                    axis + 1
                )));
            }
            lo[axis] = a;
            hi[axis] = b;
            strides[axis] = len;
            len = len
                .checked_mul((b - a + 1) as usize)
                .filter(|&l| l <= (u32::MAX as usize))
                .ok_or_else(|| DreError::InvalidWindow("window too large".into()))?;
        }
        Ok(Window { dim, lo, hi, strides, len })
    }

    /// `[-radius, radius]^dim`.
    pub fn square(dim: usize, radius: i64) -> Result<Self> {
        Window::new(&vec![(-radius, radius); dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self, axis: usize) -> i64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> i64 {
        self.hi[axis]
    }

    pub fn extent(&self, axis: usize) -> usize {
        (self.hi[axis] - self.lo[axis] + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn contains(&self, s: &Site) -> bool {
        (0..self.dim).all(|a| s.coords[a] >= self.lo[a] && s.coords[a] <= self.hi[a])
    }

    #[inline]
    pub fn contains_xy(&self, x: i64, y: i64) -> bool {
        x >= self.lo[0] && x <= self.hi[0] && y >= self.lo[1] && y <= self.hi[1]
    }

    /// On the outer face of the box.
    pub fn is_edge(&self, s: &Site) -> bool {
        (0..self.dim).any(|a| s.coords[a] == self.lo[a] || s.coords[a] == self.hi[a])
    }

    #[inline]
    pub fn index(&self, s: &Site) -> usize {
        let mut i = 0;
        for a in 0..self.dim {
            i += (s.coords[a] - self.lo[a]) as usize * self.strides[a];
        }
        i
    }

    pub fn checked_index(&self, s: &Site) -> Result<usize> {
        if s.dim() != self.dim || !self.contains(s) {
            return Err(DreError::OutsideWindow(*s));
        }
        Ok(self.index(s))
    }

    #[inline]
    pub fn site(&self, mut idx: usize) -> Site {
        let mut c = [0; MAX_DIM];
        for a in 0..self.dim {
            let ext = self.extent(a);
            c[a] = self.lo[a] + (idx % ext) as i64;
            idx /= ext;
        }
        Site { coords: c, dim: self.dim as u8 }
    }

    /// Neighbour index in direction `dir`, if inside.
    #[inline]
    pub fn neighbor(&self, idx: usize, s: &Site, dir: Direction) -> Option<usize> {
        let a = dir.axis as usize;
        let c = s.coords[a] + dir.sign();
        if c < self.lo[a] || c > self.hi[a] {
            None
        } else if dir.positive {
            Some(idx + self.strides[a])
        } else {
            Some(idx - self.strides[a])
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len).map(move |i| self.site(i))
    }

    /// Window shrunk by `margin` on every side, if still valid.
    pub fn shrink(&self, margin: i64) -> Result<Window> {
        let ranges: Vec<_> = (0..self.dim).map(|a| (self.lo[a] + margin, self.hi[a] - margin)).collect();
        Window::new(&ranges)
    }

    /// `x0:x1,y0:y1,...`
    pub fn spec_string(&self) -> String {
        (0..self.dim).map(|a| format!("{}:{}", self.lo[a], self.hi[a])).collect::<Vec<_>>().join(",")
    }

    pub fn parse_spec(s: &str) -> Result<Window> {
        let mut ranges = Vec::new();
        for part in s.split(',') {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| DreError::InvalidWindow(format!("bad range `{part}`")))?;
            let a: i64 = a.trim().parse().map_err(|_| DreError::InvalidWindow(format!("bad bound `{a}`")))?;
            let b: i64 = b.trim().parse().map_err(|_| DreError::InvalidWindow(format!("bad bound `{b}`")))?;
            ranges.push((a, b));
        }
        Window::new(&ranges)
    }
}

/// A finite probability measure on arrow sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMeasure {
    dim: usize,
    atoms: Vec<(ArrowSet, f64)>,
    cumulative: Vec<f64>,
}

impl SupportMeasure {
    pub fn new(dim: usize, atoms: Vec<(ArrowSet, f64)>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(DreError::InvalidMeasure(format!("dimension {dim} not in [1, {MAX_DIM}]")));
        }
        if atoms.is_empty() {
            return Err(DreError::InvalidMeasure("no atoms".into()));
        }
        let full = ArrowSet::full(dim);
        let mut total = 0.0;
        let mut cumulative = Vec::with_capacity(atoms.len());
        for (i, &(a, w)) in atoms.iter().enumerate() {
            if !(w > 0.0 && w <= 1.0) {
                return Err(DreError::InvalidMeasure(format!("atom {} has probability {w} outside (0,1]", a.0)));
            }
            if !a.is_subset(full) {
                return Err(DreError::InvalidMeasure(format!("atom mask {:#x} uses bits beyond d={dim}", a.0)));
            }
            if atoms[..i].iter().any(|(b, _)| *b == a) {
                return Err(DreError::InvalidMeasure(format!("atom mask {:#x} listed twice", a.0)));
            }
            total += w;
            cumulative.push(total);
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(DreError::InvalidMeasure(format!("probabilities sum to {total}, not 1")));
        }
        // Guard the last bucket against rounding.
        *cumulative.last_mut().unwrap() = f64::INFINITY;
        Ok(SupportMeasure { dim, atoms, cumulative })
    }

    /// Two-valued measure `(a b)` with `μ(a) = p`.
    pub fn two_valued(dim: usize, a: ArrowSet, b: ArrowSet, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DreError::InvalidMeasure(format!("p = {p} not in (0,1)")));
        }
        SupportMeasure::new(dim, vec![(a, p), (b, 1.0 - p)])
    }

    pub fn deterministic(dim: usize, a: ArrowSet) -> Self {
        SupportMeasure::new(dim, vec![(a, 1.0)]).expect("single atom of mass one")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[(ArrowSet, f64)] {
        &self.atoms
    }

    pub fn in_support(&self, a: ArrowSet) -> bool {
        self.atoms.iter().any(|(b, _)| *b == a)
    }

    /// Atom selected by a uniform `u ∈ [0,1)`; atom `i` covers `[F_{i-1}, F_i)`.
    #[inline]
    pub fn pick(&self, u: f64) -> ArrowSet {
        for (i, &c) in self.cumulative.iter().enumerate() {
            if u < c {
                return self.atoms[i].0;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }

    /// `μ({A : pred(A)})`.
    pub fn mass_where(&self, pred: impl Fn(ArrowSet) -> bool) -> f64 {
        self.atoms.iter().filter(|(a, _)| pred(*a)).map(|(_, w)| w).sum()
    }

    /// Union of all atoms.
    pub fn support_union(&self) -> ArrowSet {
        self.atoms.iter().fold(ArrowSet::EMPTY, |u, (a, _)| u.union(*a))
    }
}

/// Searches the `3^d - 1` candidate sets of mutually orthogonal unit vectors
/// for one that every support atom meets. Returns the first witness.
pub fn theta_plus_is_one(measure: &SupportMeasure) -> Option<Vec<Direction>> {
    let dim = measure.dim();
    let total = 3usize.pow(dim as u32);
    for code in 0..total {
        // Axis 0 is the most significant digit; digit 0 = +, 1 = -, 2 = omit.
        let mut v = Vec::new();
        let mut rem = code;
        let mut digits = vec![0; dim];
        for axis in (0..dim).rev() {
            digits[axis] = rem % 3;
            rem /= 3;
        }
        for (axis, &dg) in digits.iter().enumerate() {
            match dg {
                0 => v.push(Direction::new(axis, true)),
                1 => v.push(Direction::new(axis, false)),
                _ => {}
            }
        }
        if v.is_empty() {
            continue;
        }
        let vset = ArrowSet::from_dirs(dim, v.iter().copied());
        if measure.atoms().iter().all(|(a, _)| a.intersects(vset)) {
            return Some(v);
        }
    }
    None
}

/// A catalog model: a two-valued `(A₁ A₂)` in the plane or the orthant model
/// `(E₊ E₋)` in any dimension, with `p = μ(A₁)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelId {
    pub kind: ModelKind,
    pub p: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    TwoValued(ArrowSet, ArrowSet),
    Orthant,
}

/// Named rows of the connectivity table plus the general-dimension orthant model.
pub const CATALOG: &[&str] = &[
    "N-0", "WE-0", "NE-0", "SWE-0", "NSWE-0", "N-E", "N-S", "WE-N", "WE-E", "WE-NS", "NE-N", "NE-NW",
    "NE-WE", "NE-W", "NE-SW", "SWE-S", "SWE-E", "SWE-N", "SWE-WE", "SWE-NS", "SWE-NE", "SWE-SW",
    "SWE-NSE", "SWE-NWE", "NSWE-N", "NSWE-NE", "NSWE-WE", "NSWE-SWE", "orthant",
];

/// Short names accepted on input.
const ALIASES: &[(&str, &str)] = &[("osp", "NE-0"), ("posp", "SWE-0"), ("sp", "NSWE-0")];

impl ModelId {
    /// Parse `A-B` (compass letters, `0` for the empty set), `orthant`, or an alias.
    pub fn parse(name: &str, p: f64, dim: usize) -> Result<Self> {
        let unknown = || DreError::UnknownModel { name: name.to_string(), catalog: CATALOG.join(", ") };
        if !(p > 0.0 && p < 1.0) {
            return Err(DreError::InvalidArgument(format!("p = {p} must lie strictly inside (0,1)")));
        }
        let lower = name.to_ascii_lowercase();
        let resolved = ALIASES.iter().find(|(a, _)| *a == lower).map(|(_, n)| *n).unwrap_or(name);
        if resolved.eq_ignore_ascii_case("orthant") {
            if !(2..=MAX_DIM).contains(&dim) {
                return Err(DreError::UnsupportedDimension(dim));
            }
            return Ok(ModelId { kind: ModelKind::Orthant, p, dim });
        }
        let (a, b) = resolved.split_once('-').ok_or_else(unknown)?;
        let a = ArrowSet::from_letters(a).ok_or_else(unknown)?;
        let b = ArrowSet::from_letters(b).ok_or_else(unknown)?;
        if a == b {
            return Err(unknown());
        }
        if dim != 2 {
            return Err(DreError::UnsupportedDimension(dim));
        }
        Ok(ModelId { kind: ModelKind::TwoValued(a, b), p, dim: 2 })
    }

    pub fn two_valued(a: ArrowSet, b: ArrowSet, p: f64) -> Self {
        ModelId { kind: ModelKind::TwoValued(a, b), p, dim: 2 }
    }

    pub fn atoms(&self) -> (ArrowSet, ArrowSet) {
        match self.kind {
            ModelKind::TwoValued(a, b) => (a, b),
            ModelKind::Orthant => (ArrowSet::positive_orthant(self.dim), ArrowSet::negative_orthant(self.dim)),
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            ModelKind::TwoValued(a, b) => format!("{}-{}", a.letters(), b.letters()),
            ModelKind::Orthant => "orthant".to_string(),
        }
    }

    pub fn measure(&self) -> SupportMeasure {
        let (a, b) = self.atoms();
        SupportMeasure::two_valued(self.dim, a, b, self.p).expect("catalog model is valid")
    }

    /// True when the model is `(a b)` for the given letters.
    pub fn is(&self, a: &str, b: &str) -> bool {
        self.dim == 2 && self.atoms() == (ArrowSet::from_letters(a).unwrap(), ArrowSet::from_letters(b).unwrap())
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.p)
    }
}

/// Read access to an environment on a window.
pub trait Lattice: Sync {
    fn window(&self) -> &Window;
    /// `G_x` for the site at flat index `idx`.
    fn arrows_at(&self, idx: usize) -> ArrowSet;

    fn dim(&self) -> usize {
        self.window().dim()
    }

    fn arrows(&self, s: &Site) -> Option<ArrowSet> {
        let w = self.window();
        if w.contains(s) {
            Some(self.arrows_at(w.index(s)))
        } else {
            None
        }
    }
}

/// A dense table of arrow sets over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrowGrid {
    window: Window,
    arrows: Vec<ArrowSet>,
}

impl ArrowGrid {
    pub fn new(window: Window, arrows: Vec<ArrowSet>) -> Result<Self> {
        if arrows.len() != window.len() {
            return Err(DreError::InvalidArgument(format!(
                "{} arrow sets for a window of {} sites",
                arrows.len(),
                window.len()
            )));
        }
        Ok(ArrowGrid { window, arrows })
    }

    pub fn filled(window: Window, a: ArrowSet) -> Self {
        let n = window.len();
        ArrowGrid { window, arrows: vec![a; n] }
    }

    pub fn from_lattice(env: &dyn Lattice) -> Self {
        let window = env.window().clone();
        let arrows = (0..window.len()).map(|i| env.arrows_at(i)).collect();
        ArrowGrid { window, arrows }
    }

    pub fn set(&mut self, s: &Site, a: ArrowSet) {
        let i = self.window.index(s);
        self.arrows[i] = a;
    }

    pub fn get(&self, s: &Site) -> ArrowSet {
        self.arrows[self.window.index(s)]
    }

    pub fn as_slice(&self) -> &[ArrowSet] {
        &self.arrows
    }
}

impl Lattice for ArrowGrid {
    fn window(&self) -> &Window {
        &self.window
    }

    #[inline]
    fn arrows_at(&self, idx: usize) -> ArrowSet {
        self.arrows[idx]
    }
}

/// Where the measure of a grid came from.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureSource {
    Model(ModelId),
    Raw,
}

/// A sampled environment with the metadata needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentGrid {
    grid: ArrowGrid,
    measure: SupportMeasure,
    source: MeasureSource,
    seed: u64,
}

impl EnvironmentGrid {
    pub fn grid(&self) -> &ArrowGrid {
        &self.grid
    }

    pub fn measure(&self) -> &SupportMeasure {
        &self.measure
    }

    pub fn source(&self) -> &MeasureSource {
        &self.source
    }

    pub fn model(&self) -> Option<&ModelId> {
        match &self.source {
            MeasureSource::Model(m) => Some(m),
            MeasureSource::Raw => None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Lattice for EnvironmentGrid {
    fn window(&self) -> &Window {
        &self.grid.window
    }

    #[inline]
    fn arrows_at(&self, idx: usize) -> ArrowSet {
        self.grid.arrows[idx]
    }
}

/// Environment evaluated on demand from `(seed, site)`; never materialised.
#[derive(Debug, Clone)]
pub struct LazyEnvironment {
    window: Window,
    measure: SupportMeasure,
    seed: u64,
}

impl LazyEnvironment {
    pub fn new(measure: SupportMeasure, window: Window, seed: u64) -> Result<Self> {
        if measure.dim() != window.dim() {
            return Err(DreError::InvalidArgument(format!(
                "measure dimension {} differs from window dimension {}",
                measure.dim(),
                window.dim()
            )));
        }
        Ok(LazyEnvironment { window, measure, seed })
    }

    pub fn measure(&self) -> &SupportMeasure {
        &self.measure
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn at_site(&self, s: &Site) -> ArrowSet {
        site_arrows(&self.measure, self.seed, s)
    }
}

impl Lattice for LazyEnvironment {
    fn window(&self) -> &Window {
        &self.window
    }

    #[inline]
    fn arrows_at(&self, idx: usize) -> ArrowSet {
        let s = self.window.site(idx);
        site_arrows(&self.measure, self.seed, &s)
    }
}

/// The uniform variate that decides site `s` under `seed`.
#[inline]
pub fn site_uniform(seed: u64, s: &Site) -> f64 {
    unit_f64(hash_coords(seed, stream::ENVIRONMENT, s.coords()))
}

#[inline]
pub fn site_arrows(measure: &SupportMeasure, seed: u64, s: &Site) -> ArrowSet {
    measure.pick(site_uniform(seed, s))
}

/// Draws every site of `window` independently from `measure`, keyed on
/// `(seed, coordinates)`.
pub fn sample_environment(measure: &SupportMeasure, window: &Window, seed: u64) -> Result<EnvironmentGrid> {
    sample_with_source(measure, MeasureSource::Raw, window, seed)
}

/// [`sample_environment`] for a catalog model.
pub fn sample_model(model: &ModelId, window: &Window, seed: u64) -> Result<EnvironmentGrid> {
    sample_with_source(&model.measure(), MeasureSource::Model(*model), window, seed)
}

fn sample_with_source(
    measure: &SupportMeasure,
    source: MeasureSource,
    window: &Window,
    seed: u64,
) -> Result<EnvironmentGrid> {
    if measure.dim() != window.dim() {
        return Err(DreError::InvalidArgument(format!(
            "measure dimension {} differs from window dimension {}",
            measure.dim(),
            window.dim()
        )));
    }
    let arrows: Vec<ArrowSet> =
        (0..window.len()).into_par_iter().map(|i| site_arrows(measure, seed, &window.site(i))).collect();
    Ok(EnvironmentGrid {
        grid: ArrowGrid { window: window.clone(), arrows },
        measure: measure.clone(),
        source,
        seed,
    })
}

/// Explicit edge reversal: site `z` carries `-e` exactly when `e ∈ G_{z-e}`
/// and `z - e` lies in the window.
pub fn reverse_environment(env: &dyn Lattice) -> ArrowGrid {
    let window = env.window().clone();
    let dim = window.dim();
    let mut arrows = vec![ArrowSet::EMPTY; window.len()];
    for idx in 0..window.len() {
        let s = window.site(idx);
        let g = env.arrows_at(idx);
        for dir in g.iter(dim) {
            if let Some(t) = window.neighbor(idx, &s, dir) {
                arrows[t].0 |= 1 << dir.negate().bit(dim);
            }
        }
    }
    ArrowGrid { window, arrows }
}

/// Mirror image about the vertical axis: `x ↦ (-x₁, x₂)` with `E ↔ W`.
pub fn reflect_horizontal(env: &dyn Lattice) -> Result<ArrowGrid> {
    let w = env.window();
    if w.dim() != 2 {
        return Err(DreError::UnsupportedDimension(w.dim()));
    }
    let window = Window::new(&[(-w.hi(0), -w.lo(0)), (w.lo(1), w.hi(1))])?;
    let mut arrows = vec![ArrowSet::EMPTY; window.len()];
    for (idx, slot) in arrows.iter_mut().enumerate() {
        let s = window.site(idx);
        let src = Site::xy(-s.x(), s.y());
        *slot = env.arrows(&src).expect("mirror site inside").map(2, reflect_dir);
    }
    ArrowGrid::new(window, arrows)
}

pub fn reflect_dir(d: Direction) -> Direction {
    if d.axis == 0 {
        d.negate()
    } else {
        d
    }
}

// ---------------------------------------------------------------------------
// Snapshot files

fn digits_per_site(dim: usize) -> usize {
    (2 * dim).div_ceil(4)
}

fn source_field(source: &MeasureSource, measure: &SupportMeasure) -> String {
    match source {
        MeasureSource::Model(m) => format!("{}:{}", m.name(), m.p),
        MeasureSource::Raw => {
            let atoms: Vec<String> = measure.atoms().iter().map(|(a, w)| format!("{:x}@{}", a.0, w)).collect();
            format!("raw:{}", atoms.join("/"))
        }
    }
}

/// Writes the `DRE 1` text snapshot.
pub fn write_snapshot<W: Write>(env: &EnvironmentGrid, out: &mut W) -> Result<()> {
    let w = env.window();
    let dim = w.dim();
    writeln!(
        out,
        "DRE 1 d={} seed={} win={} model={}",
        dim,
        env.seed,
        w.spec_string(),
        source_field(&env.source, &env.measure)
    )?;
    let per = digits_per_site(dim);
    let slice = w.len() / w.extent(dim - 1);
    let mut line = String::with_capacity(slice * per);
    for (k, chunk) in env.grid.arrows.chunks(slice).enumerate() {
        let _ = k;
        line.clear();
        for a in chunk {
            let mut m = a.0;
            for _ in 0..per {
                line.push(char::from_digit((m & 0xf) as u32, 16).unwrap());
                m >>= 4;
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn snapshot_string(env: &EnvironmentGrid) -> String {
    let mut buf = Vec::new();
    write_snapshot(env, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

/// Reads a snapshot written by [`write_snapshot`].
pub fn read_snapshot<R: BufRead>(input: R) -> Result<EnvironmentGrid> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(DreError::Parse { line: 1, msg: "empty file".into() })??;
    let perr = |msg: String| DreError::Parse { line: 1, msg };
    let mut fields = header.split_whitespace();
    if fields.next() != Some("DRE") || fields.next() != Some("1") {
        return Err(perr("missing `DRE 1` magic".into()));
    }
    let (mut dim, mut seed, mut win, mut model) = (None, None, None, None);
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| perr(format!("bad field `{f}`")))?;
        match k {
            "d" => dim = Some(v.parse::<usize>().map_err(|_| perr(format!("bad d `{v}`")))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| perr(format!("bad seed `{v}`")))?),
            "win" => win = Some(Window::parse_spec(v)?),
            "model" => model = Some(v.to_string()),
            _ => return Err(perr(format!("unknown field `{k}`"))),
        }
    }
    let dim = dim.ok_or_else(|| perr("missing d".into()))?;
    let seed = seed.ok_or_else(|| perr("missing seed".into()))?;
    let window = win.ok_or_else(|| perr("missing win".into()))?;
    let model = model.ok_or_else(|| perr("missing model".into()))?;
    if window.dim() != dim {
        return Err(perr("window dimension differs from d".into()));
    }
    let (name, rest) = model.split_once(':').ok_or_else(|| perr(format!("bad model `{model}`")))?;
    let (measure, source) = if name == "raw" {
        let mut atoms = Vec::new();
        for a in rest.split('/') {
            let (m, w) = a.split_once('@').ok_or_else(|| perr(format!("bad atom `{a}`")))?;
            let m = u16::from_str_radix(m, 16).map_err(|_| perr(format!("bad mask `{m}`")))?;
            let w: f64 = w.parse().map_err(|_| perr(format!("bad weight `{w}`")))?;
            atoms.push((ArrowSet(m), w));
        }
        (SupportMeasure::new(dim, atoms)?, MeasureSource::Raw)
    } else {
        let p: f64 = rest.parse().map_err(|_| perr(format!("bad p `{rest}`")))?;
        let m = ModelId::parse(name, p, dim)?;
        (m.measure(), MeasureSource::Model(m))
    };
    let per = digits_per_site(dim);
    let slice = window.len() / window.extent(dim - 1);
    let mut arrows = Vec::with_capacity(window.len());
    for row in 0..window.extent(dim - 1) {
        let lineno = row + 2;
        let line = lines.next().ok_or(DreError::Parse { line: lineno, msg: "missing row".into() })??;
        let line = line.trim_end();
        if line.len() != slice * per {
            return Err(DreError::Parse {
                line: lineno,
                msg: format!("expected {} hex digits, found {}", slice * per, line.len()),
            });
        }
        let bytes = line.as_bytes();
        for site in 0..slice {
            let mut m = 0u16;
            for k in 0..per {
                let c = bytes[site * per + k] as char;
                let v = c.to_digit(16).ok_or(DreError::Parse { line: lineno, msg: format!("bad digit `{c}`") })?;
                m |= (v as u16) << (4 * k);
            }
            let a = ArrowSet(m);
            if !measure.in_support(a) {
                return Err(DreError::Parse { line: lineno, msg: format!("arrow set {m:#x} outside the support") });
            }
            arrows.push(a);
        }
    }
    Ok(EnvironmentGrid { grid: ArrowGrid { window, arrows }, measure, source, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> ArrowSet {
        ArrowSet::from_letters(s).unwrap()
    }

    #[test]
    fn directions_are_distinct_and_negation_is_involution() {
        for d in 2..=MAX_DIM {
            let all: Vec<_> = Direction::all(d).collect();
            assert_eq!(all.len(), 2 * d);
            let set: std::collections::HashSet<_> = all.iter().collect();
            assert_eq!(set.len(), 2 * d);
            for dir in all {
                assert_eq!(dir.negate().negate(), dir);
                assert_ne!(dir.negate(), dir);
                assert_eq!(Direction::from_bit(dir.bit(d), d), dir);
            }
        }
    }

    #[test]
    fn bit_layout_in_the_plane() {
        assert_eq!(l("E").0, 1);
        assert_eq!(l("N").0, 2);
        assert_eq!(l("W").0, 4);
        assert_eq!(l("S").0, 8);
        assert_eq!(ArrowSet::positive_orthant(2), l("NE"));
        assert_eq!(ArrowSet::negative_orthant(2), l("SW"));
    }

    #[test]
    fn measure_validation() {
        assert!(SupportMeasure::new(2, vec![(l("N"), 0.5), (l("E"), 0.4)]).is_err());
        assert!(SupportMeasure::new(2, vec![(l("N"), 0.5), (l("N"), 0.5)]).is_err());
        assert!(SupportMeasure::new(2, vec![(ArrowSet(0x10), 1.0)]).is_err());
        assert!(SupportMeasure::new(2, vec![(l("N"), 0.5), (l("E"), 0.5 + 1e-13)]).is_ok());
        assert!(SupportMeasure::new(2, vec![(l("N"), 0.5), (l("E"), 0.5 + 1e-10)]).is_err());
    }

    #[test]
    fn deterministic_measure_fills_window() {
        let w = Window::square(3, 2).unwrap();
        let m = SupportMeasure::deterministic(3, ArrowSet::positive_orthant(3));
        let g = sample_environment(&m, &w, 99).unwrap();
        assert!(g.grid().as_slice().iter().all(|a| *a == ArrowSet::positive_orthant(3)));
    }

    #[test]
    fn sampling_is_deterministic_and_subwindow_consistent() {
        let model = ModelId::parse("NE-SW", 0.5, 2).unwrap();
        let w = Window::new(&[(-5, 4), (-4, 5)]).unwrap();
        let a = sample_model(&model, &w, 42).unwrap();
        let b = sample_model(&model, &w, 42).unwrap();
        assert_eq!(a, b);
        let big = sample_model(&model, &Window::square(2, 9).unwrap(), 42).unwrap();
        for s in w.sites() {
            assert_eq!(a.arrows(&s), big.arrows(&s));
        }
    }

    #[test]
    fn empirical_fraction_is_binomial() {
        let model = ModelId::parse("NE-0", 0.75, 2).unwrap();
        let w = Window::new(&[(-50, 49), (-50, 49)]).unwrap();
        let g = sample_model(&model, &w, 3).unwrap();
        let n = w.len() as f64;
        let k = g.grid().as_slice().iter().filter(|a| **a == l("NE")).count() as f64;
        let se = (0.75 * 0.25 / n).sqrt();
        assert!((k / n - 0.75).abs() < 3.0 * se, "fraction {}", k / n);
        assert!(g.grid().as_slice().iter().all(|a| g.measure().in_support(*a)));
    }

    #[test]
    fn theta_plus_witnesses() {
        let ne_sw = ModelId::parse("NE-SW", 0.3, 2).unwrap().measure();
        assert_eq!(theta_plus_is_one(&ne_sw), Some(vec![Direction::EAST, Direction::SOUTH]));
        let sp = ModelId::parse("NSWE-0", 0.6, 2).unwrap().measure();
        assert_eq!(theta_plus_is_one(&sp), None);
        let crw = ModelId::parse("N-E", 0.5, 2).unwrap().measure();
        assert_eq!(theta_plus_is_one(&crw), Some(vec![Direction::EAST, Direction::NORTH]));
    }

    #[test]
    fn reversal_of_single_edge() {
        let w = Window::square(2, 2).unwrap();
        let mut g = ArrowGrid::filled(w, ArrowSet::EMPTY);
        g.set(&Site::xy(0, 0), l("E"));
        let r = reverse_environment(&g);
        assert_eq!(r.get(&Site::xy(1, 0)), l("W"));
        assert_eq!(r.as_slice().iter().filter(|a| !a.is_empty()).count(), 1);
    }

    #[test]
    fn undirected_model_is_self_reverse_on_interior() {
        let model = ModelId::parse("WE-NS", 0.5, 2).unwrap();
        let w = Window::square(2, 6).unwrap();
        let g = sample_model(&model, &w, 5).unwrap();
        let r = reverse_environment(&g);
        // Reversal of {←,→} at z is contributed by the two horizontal neighbours.
        for s in w.sites().filter(|s| !w.is_edge(s)) {
            let mut expect = ArrowSet::EMPTY;
            for d in Direction::all(2) {
                let n = s.step(d);
                if g.arrows(&n).unwrap().contains(d.negate(), 2) {
                    expect = expect.union(ArrowSet::from_dirs(2, [d]));
                }
            }
            assert_eq!(r.get(&s), expect);
        }
    }

    #[test]
    fn snapshot_round_trip_d2_and_d3() {
        let model = ModelId::parse("SWE-N", 0.4, 2).unwrap();
        let g = sample_model(&model, &Window::new(&[(-3, 5), (-2, 2)]).unwrap(), 11).unwrap();
        let text = snapshot_string(&g);
        assert!(text.starts_with("DRE 1 d=2 seed=11 win=-3:5,-2:2 model=SWE-N:0.4\n"));
        assert_eq!(text.lines().count(), 1 + 5);
        assert_eq!(read_snapshot(text.as_bytes()).unwrap(), g);

        let m3 = ModelId::parse("orthant", 0.5, 3).unwrap();
        let g3 = sample_model(&m3, &Window::square(3, 1).unwrap(), 1).unwrap();
        let text3 = snapshot_string(&g3);
        assert_eq!(text3.lines().nth(1).unwrap().len(), 9 * 2);
        assert_eq!(read_snapshot(text3.as_bytes()).unwrap(), g3);

        let raw = SupportMeasure::new(2, vec![(l("N"), 0.25), (l("WE"), 0.75)]).unwrap();
        let gr = sample_environment(&raw, &Window::square(2, 2).unwrap(), 8).unwrap();
        assert_eq!(read_snapshot(snapshot_string(&gr).as_bytes()).unwrap(), gr);
    }

    #[test]
    fn snapshot_digit_encoding() {
        let w = Window::new(&[(-1, 1), (-1, 1)]).unwrap();
        let m = SupportMeasure::deterministic(2, l("NE"));
        let g = sample_environment(&m, &w, 0).unwrap();
        let text = snapshot_string(&g);
        assert_eq!(text.lines().nth(1), Some("333"));
    }

    #[test]
    fn model_parsing() {
        assert!(ModelId::parse("NE-SW", 1.5, 2).is_err());
        assert!(matches!(ModelId::parse("XY-Z", 0.5, 2), Err(DreError::UnknownModel { .. })));
        assert_eq!(ModelId::parse("osp", 0.5, 2).unwrap().name(), "NE-0");
        assert_eq!(ModelId::parse("EW-N", 0.5, 2).unwrap().name(), "WE-N");
        assert!(ModelId::parse("NE-SW", 0.5, 3).is_err());
        for name in CATALOG {
            let d = if *name == "orthant" { 4 } else { 2 };
            assert_eq!(ModelId::parse(name, 0.5, d).unwrap().name(), *name);
        }
    }

    #[test]
    fn window_validation() {
        assert!(Window::new(&[(0, 1), (-1, 1)]).is_err());
        assert!(Window::new(&[(1, 4), (-1, 1)]).is_err());
        assert!(Window::new(&[(-1, 1)]).is_err());
        let w = Window::new(&[(-2, 3), (-1, 1), (0, 2)]).unwrap();
        for i in 0..w.len() {
            assert_eq!(w.index(&w.site(i)), i);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn theta_plus_matches_brute_force(dim in 2usize..=4, masks in proptest::collection::vec(0u16..256, 1..5)) {
                let full = ArrowSet::full(dim).0;
                let mut atoms: Vec<ArrowSet> = masks.iter().map(|m| ArrowSet(m & full)).collect();
                atoms.sort();
                atoms.dedup();
                let w = 1.0 / atoms.len() as f64;
                let measure = SupportMeasure::new(dim, atoms.iter().map(|a| (*a, w)).collect()).unwrap();
                // Brute force over every subset of E that has no antipodal pair.
                let mut brute = false;
                for sub in 1u32..(1 << (2 * dim)) {
                    let v = ArrowSet(sub as u16);
                    if (0..dim).any(|a| v.contains(Direction::new(a, true), dim) && v.contains(Direction::new(a, false), dim)) {
                        continue;
                    }
                    if atoms.iter().all(|a| a.intersects(v)) {
                        brute = true;
                        break;
                    }
                }
                let got = theta_plus_is_one(&measure);
                prop_assert_eq!(got.is_some(), brute);
                if let Some(v) = got {
                    let vs = ArrowSet::from_dirs(dim, v);
                    prop_assert!(atoms.iter().all(|a| a.intersects(vs)));
                }
            }

            #[test]
            fn double_reversal_is_identity_on_interior(seed in any::<u64>(), p in 0.05f64..0.95) {
                let model = ModelId::parse("NE-SW", p, 2).unwrap();
                let w = Window::square(2, 4).unwrap();
                let g = sample_model(&model, &w, seed).unwrap();
                let rr = reverse_environment(&reverse_environment(&g));
                for s in w.sites().filter(|s| !w.is_edge(s)) {
                    prop_assert_eq!(rr.get(&s), g.arrows(&s).unwrap());
                }
            }

            #[test]
            fn nested_windows_agree(seed in any::<u64>(), r in 1i64..6) {
                let model = ModelId::parse("SWE-N", 0.5, 2).unwrap();
                let small = sample_model(&model, &Window::square(2, r).unwrap(), seed).unwrap();
                let big = sample_model(&model, &Window::square(2, r + 3).unwrap(), seed).unwrap();
                for s in small.window().sites() {
                    prop_assert_eq!(small.arrows(&s), big.arrows(&s));
                }
            }
        }
    }
}
