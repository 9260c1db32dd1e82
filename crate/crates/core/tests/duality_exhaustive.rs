use dre::clusters::{BlockingFunction, Side};
use dre::duality::{boundary_sequence, verify_duality, DualLattice};
use dre::lattice::ArrowGrid;
use dre::{ArrowSet, Site, Window};

fn nonincreasing(len: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    fn rec(prefix: &mut Vec<i64>, len: usize, lo: i64, cap: i64, out: &mut Vec<Vec<i64>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for v in lo..=cap {
            prefix.push(v);
            rec(prefix, len, lo, v, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), len, lo, hi, &mut out);
    out
}

fn all_functions(len: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    let span = (hi - lo + 1) as usize;
    (0..span.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let v = lo + (code % span) as i64;
                    code /= span;
                    v
                })
                .collect()
        })
        .collect()
}

/// Every environment of a `cols × rows` block with sites drawn from
/// `{open, closed}`, checked against every function in `ws`.
fn sweep(lattice: DualLattice, cols: i64, rows: i64, ws: &[Vec<i64>]) -> (usize, usize, usize) {
    let window = Window::new(&[(-1, cols), (-1, rows)]).unwrap();
    let mut grid = ArrowGrid::filled(window, lattice.open_set());
    let sites: Vec<Site> = (0..rows).flat_map(|k| (0..cols).map(move |n| Site::xy(n, k))).collect();
    let (mut checked, mut holds, mut mismatches) = (0, 0, 0);
    for mask in 0u32..(1 << sites.len()) {
        for (i, s) in sites.iter().enumerate() {
            let a = if mask >> i & 1 == 1 { lattice.closed_set() } else { lattice.open_set() };
            grid.set(s, a);
        }
        for w in ws {
            let bf = BlockingFunction::new(Side::Upper, 0, w.clone(), 0, rows - 1);
            let c = verify_duality(&grid, &bf, lattice).unwrap();
            checked += 1;
            holds += c.holds() as usize;
            if !c.consistent() {
                mismatches += 1;
            }
        }
    }
    (checked, holds, mismatches)
}

#[test]
fn otsp_duality_is_exact_on_a_four_by_four_block() {
    let ws = nonincreasing(4, -1, 2);
    assert_eq!(ws.len(), 35);
    let (checked, holds, mismatches) = sweep(DualLattice::Otsp, 4, 4, &ws);
    assert_eq!(checked, 35 << 16);
    assert!(holds > 0 && holds < checked);
    assert_eq!(mismatches, 0);
}

#[test]
fn fsosp_duality_is_exact_on_a_three_column_block() {
    let ws = all_functions(3, -1, 2);
    assert_eq!(ws.len(), 64);
    let (checked, holds, mismatches) = sweep(DualLattice::Fsosp, 3, 4, &ws);
    assert_eq!(checked, 64 << 12);
    assert!(holds > 0 && holds < checked);
    assert_eq!(mismatches, 0);
}

#[test]
fn boundary_vertices_stay_in_the_band() {
    for w in all_functions(3, -1, 2) {
        let bf = BlockingFunction::new(Side::Upper, 0, w.clone(), 0, 3);
        let s = boundary_sequence(&bf, DualLattice::Fsosp).unwrap();
        for v in &s.vertices {
            assert!((0..3).contains(&v.x()) && (0..4).contains(&v.y()), "{w:?} {v}");
            assert!(v.y() > w[v.x() as usize]);
        }
    }
}

#[test]
fn open_set_constants() {
    assert_eq!(DualLattice::Otsp.open_set(), ArrowSet::from_letters("NE").unwrap());
    assert_eq!(DualLattice::Fsosp.closed_set(), ArrowSet::from_letters("SWE").unwrap());
}
