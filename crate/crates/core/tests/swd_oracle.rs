use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wassalign::autodiff::Tape;
use wassalign::losses::{class_conditional_swd, sample_projections, swd_distance, ProjectionSet};
use wassalign::{DType, Tensor};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_1d(a: &[f64], b: &[f64]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| a.iter().zip(p).map(|(x, &j)| (x - b[j]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn unit_1d() -> ProjectionSet {
    ProjectionSet::from_directions(Tensor::new(&[1, 1], vec![1.0], DType::F64).unwrap(), 0).unwrap()
}

fn swd(a: &[f64], b: &[f64], d: usize, proj: &ProjectionSet) -> f64 {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[a.len() / d, d], a.to_vec(), DType::F64).unwrap());
    let y = tape.constant(Tensor::new(&[b.len() / d, d], b.to_vec(), DType::F64).unwrap());
    let v = swd_distance(&mut tape, x, y, proj).unwrap();
    tape.item(v).unwrap()
}

#[test]
fn hand_values() {
    let p = unit_1d();
    assert_eq!(swd(&[0.0, 1.0], &[2.0, 3.0], 1, &p), 8.0);
    assert_eq!(swd(&[1.0, 0.0], &[3.0, 2.0], 1, &p), 8.0);
    assert_eq!(swd(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0], 1, &p), 0.0);
}

#[test]
fn five_hundred_instances_match_brute_force() {
    let p = unit_1d();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let started = std::time::Instant::now();
    for _ in 0..500 {
        let m = rng.random_range(1..=6);
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = swd(&a, &b, 1, &p);
        let want = brute_1d(&a, &b);
        assert!((got - want).abs() < 1e-10, "{a:?} {b:?}: {got} vs {want}");
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn multi_dimensional_value_is_average_of_projected_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (m, d) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let a: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let proj = sample_projections(7, d, rng.random()).unwrap();
        let dirs = proj.directions().data();
        let project = |pts: &[f64], l: usize| -> Vec<f64> {
            pts.chunks(d)
                .map(|row| row.iter().zip(&dirs[l * d..(l + 1) * d]).map(|(x, g)| x * g).sum())
                .collect()
        };
        let want = (0..7).map(|l| brute_1d(&project(&a, l), &project(&b, l))).sum::<f64>() / 7.0;
        let got = swd(&a, &b, d, &proj);
        assert!((got - want).abs() < 1e-10 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn class_conditional_is_sum_of_per_class_distances() {
    let p = unit_1d();
    let src = [0.0, 10.0, 1.0, 11.0];
    let tgt = [2.0, 12.0, 3.0, 13.0];
    let labels = [0, 1, 0, 1];
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[4, 1], src.to_vec(), DType::F64).unwrap());
    let y = tape.constant(Tensor::new(&[4, 1], tgt.to_vec(), DType::F64).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = class_conditional_swd(&mut tape, x, &labels, y, &labels, &p, 2, &mut rng).unwrap();
    let want = brute_1d(&[0.0, 1.0], &[2.0, 3.0]) + brute_1d(&[10.0, 11.0], &[12.0, 13.0]);
    assert_eq!(tape.item(v).unwrap(), want);
}

fn pair_of_sets() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|m| {
        (
            prop::collection::vec(-100.0f64..100.0, m),
            prop::collection::vec(-100.0f64..100.0, m),
        )
    })
}

proptest! {
    #[test]
    fn matches_brute_force((a, b) in pair_of_sets()) {
        let got = swd(&a, &b, 1, &unit_1d());
        let want = brute_1d(&a, &b);
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1.0));
    }

    #[test]
    fn symmetric_and_order_free((a, b) in pair_of_sets(), seed in any::<u64>()) {
        let p = unit_1d();
        let ab = swd(&a, &b, 1, &p);
        prop_assert_eq!(ab, swd(&b, &a, 1, &p));
        let mut shuffled = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(ab, swd(&shuffled, &b, 1, &p));
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(swd(&a, &a, 1, &p), 0.0);
    }

    #[test]
    fn translation_cost_is_shift_squared(a in prop::collection::vec(-10.0f64..10.0, 1..6), c in -5.0f64..5.0) {
        let b: Vec<f64> = a.iter().map(|x| x + c).collect();
        let got = swd(&a, &b, 1, &unit_1d());
        prop_assert!((got - a.len() as f64 * c * c).abs() < 1e-9);
    }
}
