use dre::duality::{static_classify_model, Theta};
use dre::lattice::CATALOG;
use dre::ModelId;

// (model, θ_+, θ_−, θ) with "pt" for a phase transition in p.
const TABLE: &[(&str, &str, &str, &str)] = &[
    ("N-0", "0", "0", "0"),
    ("WE-0", "0", "0", "0"),
    ("NE-0", "pt", "pt", "0"),
    ("SWE-0", "pt", "pt", "0"),
    ("NSWE-0", "pt", "pt", "pt"),
    ("N-E", "1", "0", "0"),
    ("N-S", "0", "0", "0"),
    ("WE-N", "1", ">0", "0"),
    ("WE-E", "1", "1", "0"),
    ("WE-NS", "1", ">0", ">0"),
    ("NE-N", "1", "1", "0"),
    ("NE-NW", "1", "1", "0"),
    ("NE-WE", "1", "1", "0"),
    ("NE-W", "1", ">0", "0"),
    ("NE-SW", "1", ">0", "pt"),
    ("SWE-S", "1", "1", "0"),
    ("SWE-E", "1", "1", "0"),
    ("SWE-N", "1", ">0", "pt"),
    ("SWE-WE", "1", "1", "1"),
    ("SWE-NS", "1", "1", "1"),
    ("SWE-NE", "1", "1", "pt"),
    ("SWE-SW", "1", "1", "0"),
    ("SWE-NSE", "1", "1", "1"),
    ("SWE-NWE", "1", "1", "1"),
    ("NSWE-N", "1", "1", "pt"),
    ("NSWE-NE", "1", "1", "pt"),
    ("NSWE-WE", "1", "1", "1"),
    ("NSWE-SWE", "1", "1", "1"),
];

fn code(t: &Theta) -> &'static str {
    match t {
        Theta::Zero => "0",
        Theta::One => "1",
        Theta::Positive => ">0",
        Theta::PhaseTransition(_) => "pt",
        Theta::Unknown => "?",
    }
}

#[test]
fn every_row_matches() {
    for &(name, tp, tm, t) in TABLE {
        for p in [0.2, 0.5, 0.8] {
            let c = static_classify_model(&ModelId::parse(name, p, 2).unwrap());
            assert_eq!(
                (code(&c.theta_plus), code(&c.theta_minus), code(&c.theta)),
                (tp, tm, t),
                "{name} at p={p}"
            );
        }
    }
}

#[test]
fn catalog_covers_the_table() {
    for &(name, ..) in TABLE {
        assert!(CATALOG.contains(&name), "{name}");
    }
    assert_eq!(CATALOG.len(), TABLE.len() + 1);
}

#[test]
fn rotations_and_reflections_preserve_rows() {
    // Quarter turn counterclockwise: E→N→W→S→E.
    fn rotate(s: &str) -> String {
        if s == "0" {
            return s.to_string();
        }
        s.chars()
            .map(|c| match c {
                'E' => 'N',
                'N' => 'W',
                'W' => 'S',
                'S' => 'E',
                o => o,
            })
            .collect()
    }
    for &(name, tp, tm, t) in TABLE {
        let (a, b) = name.split_once('-').unwrap();
        let mut a = a.to_string();
        let mut b = b.to_string();
        for _ in 0..3 {
            a = rotate(&a);
            b = rotate(&b);
            let c = static_classify_model(&ModelId::parse(&format!("{a}-{b}"), 0.5, 2).unwrap());
            assert_eq!((code(&c.theta_plus), code(&c.theta_minus), code(&c.theta)), (tp, tm, t), "{a}-{b}");
            let swapped = static_classify_model(&ModelId::parse(&format!("{b}-{a}"), 0.5, 2).unwrap());
            assert_eq!(code(&swapped.theta), t, "{b}-{a}");
        }
    }
}
