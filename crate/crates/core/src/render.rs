//! Flat PGM and SVG pictures of a 2-d environment or of the clusters of one site.
//!
//! Row `y = hi` is drawn at the top. Output bytes depend only on the
//! environment and the options.

use std::fmt::Write as _;

use crate::clusters::{backward_cluster, forward_cluster};
use crate::error::{DreError, Result};
use crate::lattice::{ArrowSet, Direction, Lattice, Site, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Grey level per arrow set.
    Environment,
    /// Membership of each site in `C_x`, `B_x`, `M_x` or neither.
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Svg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub mode: RenderMode,
    pub format: ImageFormat,
    /// Cluster root in [`RenderMode::Cluster`].
    pub origin: Site,
    /// Pixels per site side.
    pub scale: u32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { mode: RenderMode::Cluster, format: ImageFormat::Pgm, origin: Site::origin(2), scale: 4 }
    }
}

/// Site counts by class. In cluster mode `forward_only + communicating = |C_x|`
/// and `backward_only + communicating = |B_x|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Legend {
    pub forward_only: usize,
    pub backward_only: usize,
    pub communicating: usize,
    pub complement: usize,
}

impl Legend {
    pub fn forward(&self) -> usize {
        self.forward_only + self.communicating
    }

    pub fn backward(&self) -> usize {
        self.backward_only + self.communicating
    }

    pub fn to_text(&self, mode: RenderMode) -> String {
        match mode {
            RenderMode::Cluster => format!(
                "M {} grey={}\nC_only {} grey={}\nB_only {} grey={}\nother {} grey={}\nC {}\nB {}\n",
                self.communicating,
                CLASS_GREY[3],
                self.forward_only,
                CLASS_GREY[1],
                self.backward_only,
                CLASS_GREY[2],
                self.complement,
                CLASS_GREY[0],
                self.forward(),
                self.backward()
            ),
            RenderMode::Environment => "grey = arrow_grey(G_x); empty set = 255\n".into(),
        }
    }
}

// other, C only, B only, M
const CLASS_GREY: [u8; 4] = [255, 190, 120, 0];
const CLASS_RGB: [&str; 4] = ["#ffffff", "#f2a65a", "#5a8ff2", "#222222"];

/// Fixed grey level of an arrow set; the empty set is white.
pub fn arrow_grey(a: ArrowSet) -> u8 {
    if a.is_empty() {
        255
    } else {
        (20 + (a.0 as u32 * 53) % 200) as u8
    }
}

pub struct Image {
    pub bytes: Vec<u8>,
    pub legend: Legend,
}

fn site_classes<L: Lattice + ?Sized>(env: &L, opts: &RenderOptions) -> Result<(Vec<u8>, Legend)> {
    let w = env.window();
    let mut class = vec![0u8; w.len()];
    let mut legend = Legend::default();
    if opts.mode == RenderMode::Cluster {
        for i in forward_cluster(env, &opts.origin)?.indices() {
            class[*i] |= 1;
        }
        for i in backward_cluster(env, &opts.origin)?.indices() {
            class[*i] |= 2;
        }
        for c in &class {
            match c {
                0 => legend.complement += 1,
                1 => legend.forward_only += 1,
                2 => legend.backward_only += 1,
                _ => legend.communicating += 1,
            }
        }
    } else {
        legend.complement = w.len();
    }
    Ok((class, legend))
}

fn grey_at<L: Lattice + ?Sized>(env: &L, opts: &RenderOptions, class: &[u8], s: &Site) -> u8 {
    let w = env.window();
    match opts.mode {
        RenderMode::Cluster => CLASS_GREY[class[w.index(s)] as usize],
        RenderMode::Environment => arrow_grey(env.arrows(s).unwrap_or(ArrowSet::EMPTY)),
    }
}

fn check<L: Lattice + ?Sized>(env: &L, opts: &RenderOptions) -> Result<Window> {
    let w = env.window().clone();
    if w.dim() != 2 {
        return Err(DreError::UnsupportedDimension(w.dim()));
    }
    if opts.scale == 0 {
        return Err(DreError::InvalidArgument("scale must be at least 1".into()));
    }
    if opts.mode == RenderMode::Cluster {
        w.checked_index(&opts.origin)?;
    }
    Ok(w)
}

pub fn render<L: Lattice + ?Sized>(env: &L, opts: &RenderOptions) -> Result<Image> {
    let w = check(env, opts)?;
    let (class, legend) = site_classes(env, opts)?;
    let bytes = match opts.format {
        ImageFormat::Pgm => pgm(env, opts, &w, &class),
        ImageFormat::Svg => svg(env, opts, &w, &class),
    };
    Ok(Image { bytes, legend })
}

fn pgm<L: Lattice + ?Sized>(env: &L, opts: &RenderOptions, w: &Window, class: &[u8]) -> Vec<u8> {
    let k = opts.scale as usize;
    let (nx, ny) = (w.extent(0), w.extent(1));
    let mut out = format!("P5\n{} {}\n255\n", nx * k, ny * k).into_bytes();
    for y in (w.lo(1)..=w.hi(1)).rev() {
        let row: Vec<u8> = (w.lo(0)..=w.hi(0))
            .flat_map(|x| std::iter::repeat_n(grey_at(env, opts, class, &Site::xy(x, y)), k))
            .collect();
        for _ in 0..k {
            out.extend_from_slice(&row);
        }
    }
    out
}

fn svg<L: Lattice + ?Sized>(env: &L, opts: &RenderOptions, w: &Window, class: &[u8]) -> Vec<u8> {
    let k = opts.scale as i64;
    let (nx, ny) = (w.extent(0) as i64, w.extent(1) as i64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        nx * k,
        ny * k,
        nx * k,
        ny * k
    );
    let px = |x: i64| (x - w.lo(0)) * k;
    let py = |y: i64| (w.hi(1) - y) * k;
    for y in (w.lo(1)..=w.hi(1)).rev() {
        for x in w.lo(0)..=w.hi(0) {
            let site = Site::xy(x, y);
            let fill = match opts.mode {
                RenderMode::Cluster => CLASS_RGB[class[w.index(&site)] as usize].to_string(),
                RenderMode::Environment => {
                    let g = grey_at(env, opts, class, &site);
                    format!("#{g:02x}{g:02x}{g:02x}")
                }
            };
            let _ = writeln!(s, r#"<rect x="{}" y="{}" width="{k}" height="{k}" fill="{fill}"/>"#, px(x), py(y));
        }
    }
    if opts.mode == RenderMode::Environment && k >= 4 {
        let _ = writeln!(s, r##"<g stroke="#000000" stroke-width="{}">"##, (k as f64 / 8.0).max(0.5));
        for site in w.sites() {
            let a = env.arrows(&site).unwrap_or(ArrowSet::EMPTY);
            let (cx, cy) = (px(site.x()) * 2 + k, py(site.y()) * 2 + k);
            for d in Direction::all(2).filter(|d| a.contains(*d, 2)) {
                let (dx, dy) = if d.axis == 0 { (d.sign() * k, 0) } else { (0, -d.sign() * k) };
                let _ = writeln!(
                    s,
                    r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                    cx as f64 / 2.0,
                    cy as f64 / 2.0,
                    (cx + dx) as f64 / 2.0,
                    (cy + dy) as f64 / 2.0
                );
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::{backward_cluster, forward_cluster};
    use crate::lattice::{sample_model, ArrowGrid, ModelId};

    #[test]
    fn empty_environment_is_uniform() {
        let w = Window::square(2, 3).unwrap();
        let env = ArrowGrid::filled(w, ArrowSet::EMPTY);
        for mode in [RenderMode::Environment, RenderMode::Cluster] {
            let img = render(&env, &RenderOptions { mode, scale: 2, ..Default::default() }).unwrap();
            let header = b"P5\n14 14\n255\n";
            assert_eq!(&img.bytes[..header.len()], header);
            let body = &img.bytes[header.len()..];
            assert_eq!(body.len(), 14 * 14);
            let first = body[0];
            assert!(body.iter().all(|&b| b == first) || mode == RenderMode::Cluster);
        }
        let img = render(&env, &RenderOptions { mode: RenderMode::Environment, ..Default::default() }).unwrap();
        assert!(img.bytes[13..].iter().all(|&b| b == 255));
    }

    #[test]
    fn rerender_is_identical_and_legend_counts_match() {
        let m = ModelId::parse("NE-SW", 0.5, 2).unwrap();
        let w = Window::square(2, 12).unwrap();
        let env = sample_model(&m, &w, 4).unwrap();
        for format in [ImageFormat::Pgm, ImageFormat::Svg] {
            let opts = RenderOptions { format, ..Default::default() };
            let a = render(&env, &opts).unwrap();
            let b = render(&env, &opts).unwrap();
            assert_eq!(a.bytes, b.bytes);
            let o = Site::origin(2);
            assert_eq!(a.legend.forward(), forward_cluster(&env, &o).unwrap().len());
            assert_eq!(a.legend.backward(), backward_cluster(&env, &o).unwrap().len());
            assert_eq!(
                a.legend.forward_only + a.legend.backward_only + a.legend.communicating + a.legend.complement,
                w.len()
            );
        }
    }

    #[test]
    fn rejects_three_dimensions() {
        let w = Window::square(3, 2).unwrap();
        let env = ArrowGrid::filled(w, ArrowSet::EMPTY);
        assert!(matches!(render(&env, &RenderOptions::default()), Err(DreError::UnsupportedDimension(3))));
    }
}
