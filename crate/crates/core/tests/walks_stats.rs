use dre::duality::{cubic_root, CubicBound};
use dre::lattice::LazyEnvironment;
use dre::rng::derive_seed;
use dre::walks::{coalescence_stats, seoa_path, Quadrant};
use dre::{ModelId, Site, Window};

/// Exact probability that NE paths in (↑ →) from `(a0, -a0)` and `(b0, -b0)`
/// meet before either trace ends in `[−r, r]²`; `p` is the weight of ↑.
///
/// Both paths sit on the anti-diagonal `x + y = t` at time `t`, so the state
/// is the pair of first coordinates.
fn meeting_probability(p: f64, r: i64, a0: i64, b0: i64) -> f64 {
    let side = (2 * r + 1) as usize;
    let idx = |a: i64, b: i64| (a + r) as usize * side + (b + r) as usize;
    let inside = |x: i64, t: i64| x.abs() <= r && (t - x).abs() <= r;
    let mut cur = vec![0.0; side * side];
    cur[idx(a0, b0)] = 1.0;
    let mut met = 0.0;
    let moves = [(0, 0, p * p), (0, 1, p * (1.0 - p)), (1, 0, (1.0 - p) * p), (1, 1, (1.0 - p) * (1.0 - p))];
    for t in 0..(4 * r) {
        let mut next = vec![0.0; side * side];
        let mut alive = false;
        for a in -r..=r {
            for b in -r..=r {
                let mass = cur[idx(a, b)];
                if mass == 0.0 {
                    continue;
                }
                for &(da, db, w) in &moves {
                    let (na, nb) = (a + da, b + db);
                    if !inside(na, t + 1) || !inside(nb, t + 1) {
                        continue;
                    }
                    if na == nb {
                        met += mass * w;
                    } else {
                        next[idx(na, nb)] += mass * w;
                        alive = true;
                    }
                }
            }
        }
        cur = next;
        if !alive {
            break;
        }
    }
    met
}

#[test]
fn dp_oracle_sanity() {
    assert_eq!(meeting_probability(1.0, 10, 0, 1), 0.0);
    let near = meeting_probability(0.5, 20, 0, 1);
    let far = meeting_probability(0.5, 20, -3, 3);
    assert!(near > far && near < 1.0 && far > 0.0);
}

#[test]
fn neighbours_on_an_anti_diagonal_meet_in_window_200() {
    let model = ModelId::parse("N-E", 0.5, 2).unwrap();
    let exact = meeting_probability(0.5, 200, 0, 1);
    assert!(exact >= 0.9, "{exact}");
    let trials = 2000;
    let s = coalescence_stats(&model, &Site::xy(0, 0), &Site::xy(1, -1), Quadrant::NE, 200, trials, 11).unwrap();
    let f = s.frequency();
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    assert!(f >= 0.9, "{f}");
    assert!((f - exact).abs() <= 3.0 * se, "freq {f} exact {exact} se {se}");
}

#[test]
fn symmetric_starts_coalesce_in_a_large_window() {
    let model = ModelId::parse("N-E", 0.5, 2).unwrap();
    let s = coalescence_stats(&model, &Site::xy(1, -1), &Site::xy(-1, 1), Quadrant::NE, 3000, 1000, 12).unwrap();
    assert!(s.frequency() >= 0.95, "{}", s.frequency());
}

#[test]
fn difference_steps_follow_the_product_law() {
    for p in [0.3, 0.5] {
        let model = ModelId::parse("N-E", p, 2).unwrap();
        let s = coalescence_stats(&model, &Site::xy(4, -4), &Site::xy(-4, 4), Quadrant::NE, 150, 400, 13).unwrap();
        let n = s.step_total() as f64;
        let target = p * (1.0 - p);
        let se = (target * (1.0 - target) / n).sqrt();
        for k in 0..2 {
            let f = s.difference_steps[k] as f64 / n;
            assert!((f - target).abs() <= 3.0 * se, "p={p} sign {k}: {f} vs {target}");
        }
    }
}

fn excursion_samples(p: f64, want: usize, seed: u64) -> Vec<i64> {
    let model = ModelId::parse("SWE-N", p, 2).unwrap();
    let window = Window::square(2, 3000).unwrap();
    let mut out = Vec::new();
    let mut k = 0;
    while out.len() < want {
        let env = LazyEnvironment::new(model.measure(), window.clone(), derive_seed(seed, k)).unwrap();
        let (_, w) = seoa_path(&env, &Site::origin(2)).unwrap();
        out.extend(w);
        k += 1;
    }
    out.truncate(want);
    out
}

fn mean_and_se(v: &[i64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<i64>() as f64 / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn seoa_excursion_mean_matches_the_cubic() {
    let p: f64 = 0.5;
    let formula = -(p * p * p - p * p + 2.0 * p - 1.0) / (p * (1.0 - p));
    assert!((formula - 0.5).abs() < 1e-12);
    let (mean, se) = mean_and_se(&excursion_samples(p, 100_000, 21));
    assert!((mean - formula).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn seoa_excursion_mean_vanishes_at_the_cubic_root() {
    let root = cubic_root(CubicBound::Fsosp);
    assert!((root - 0.569840).abs() < 1e-6);
    let (mean, se) = mean_and_se(&excursion_samples(root, 100_000, 22));
    assert!(mean.abs() <= 3.0 * se, "{mean} ± {se}");
}
