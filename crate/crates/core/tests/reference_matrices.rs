//! Metric arithmetic on the reference confusion matrices.

use mcgid::eval::{metrics, ConfusionMatrix};

fn names(s: &str) -> Vec<String> {
    s.chars().map(String::from).collect()
}

fn pp(x: Option<f64>) -> f64 {
    100.0 * x.expect("defined")
}

#[test]
fn binary_identification_table() {
    let cm = ConfusionMatrix::from_counts(vec![vec![149, 0], vec![2, 140]], names("AB")).unwrap();
    let r = metrics(&cm).unwrap();
    assert!((pp(r.classes[1].precision) - 98.6).abs() < 0.05);
    assert!((pp(r.classes[0].recall) - 98.7).abs() < 0.05);
    assert!((pp(r.macro_f1) - 99.31).abs() <= 0.01);
}

#[test]
fn five_subject_table() {
    let counts = vec![
        vec![173, 0, 1, 2, 3],
        vec![1, 138, 0, 3, 1],
        vec![0, 0, 30, 0, 0],
        vec![0, 1, 0, 163, 1],
        vec![5, 0, 1, 1, 151],
    ];
    let cm = ConfusionMatrix::from_counts(counts, names("ABCDE")).unwrap();
    assert_eq!(cm.total(), 675);
    assert_eq!(cm.trace(), 655);
    let r = metrics(&cm).unwrap();
    let printed = [96.65, 96.50, 100.00, 98.79, 95.57];
    for (c, want) in r.classes.iter().zip(printed) {
        assert!((pp(c.precision) - want).abs() <= 0.005, "{} precision {}", c.label, pp(c.precision));
    }
    assert_eq!(r.accuracy, 655.0 / 675.0);
    assert!((100.0 * r.accuracy - 97.04).abs() <= 0.005);
    // Macro-F1 from the counts differs from the accuracy.
    assert!((pp(r.macro_f1) - 97.02).abs() < 0.01);
    let table = r.to_table();
    assert!(table.contains("96.65%") && table.contains("97.04%"));
}
