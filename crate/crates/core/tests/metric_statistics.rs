use ndarray::{concatenate, Array2, Axis};
use skipstep::forward::RandomSource;
use skipstep::metrics::{energy_distance, sliced_wasserstein};

fn permutation_p_value(a: &Array2<f64>, b: &Array2<f64>, perms: usize, rng: &mut RandomSource) -> f64 {
    let observed = energy_distance(a.view(), b.view()).unwrap();
    let pooled = concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
    let n = pooled.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut hits = 0;
    for _ in 0..perms {
        for i in (1..n).rev() {
            idx.swap(i, rng.below(i + 1));
        }
        let pa = pooled.select(Axis(0), &idx[..a.nrows()]);
        let pb = pooled.select(Axis(0), &idx[a.nrows()..]);
        if energy_distance(pa.view(), pb.view()).unwrap() >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (perms + 1) as f64
}

#[test]
fn energy_distance_permutation_null() {
    let mut rng = RandomSource::new(3);
    let a = rng.normal_batch(150, 2);
    let b = rng.normal_batch(150, 2);
    let mut shifted = rng.normal_batch(150, 2);
    shifted.column_mut(0).mapv_inplace(|v| v + 0.6);
    let same = permutation_p_value(&a, &b, 199, &mut rng);
    let diff = permutation_p_value(&a, &shifted, 199, &mut rng);
    assert!(same > 0.05, "same-law p = {same}");
    assert!(diff <= 0.01, "shifted p = {diff}");
}

#[test]
fn sliced_wasserstein_of_a_shift() {
    // N(0, I) vs N(μ, I) in 2-D: each projection gives W1 = |μ·θ|, whose
    // average over the circle is 2|μ|/π.
    let mut rng = RandomSource::new(8);
    let n = 20_000;
    let a = rng.normal_batch(n, 2);
    let mut b = rng.normal_batch(n, 2);
    b.column_mut(0).mapv_inplace(|v| v + 0.6);
    b.column_mut(1).mapv_inplace(|v| v - 0.8);
    let sw = sliced_wasserstein(a.view(), b.view(), 2000, &mut rng).unwrap();
    let expected = 2.0 / std::f64::consts::PI;
    assert!((sw - expected).abs() < 0.02, "{sw} vs {expected}");
}
