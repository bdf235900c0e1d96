use emi_core::econ::{ols_fe, vif, FixedEffects, PanelFrame, RegressionSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Synthetic {
    frame: PanelFrame<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    countries: usize,
    years: usize,
}

fn synthetic(seed: u64, countries: usize, years: usize, noise: f64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let alpha: Vec<f64> = (0..countries).map(|_| std.sample(&mut rng)).collect();
    let gamma: Vec<f64> = (0..years).map(|_| 0.5 * std.sample(&mut rng)).collect();
    let (mut cs, mut ys, mut x, mut y) = (vec![], vec![], vec![], vec![]);
    for c in 0..countries {
        for t in 0..years {
            let xv = std.sample(&mut rng) + 0.3 * alpha[c];
            let e = noise * std.sample(&mut rng);
            cs.push(format!("K{c}"));
            ys.push(1990 + t as i32);
            x.push(xv);
            y.push(0.5 * xv + alpha[c] + gamma[t] + e);
        }
    }
    let frame = PanelFrame::new(cs, ys)
        .unwrap()
        .with_column("x", x.iter().map(|&v| Some(v)).collect())
        .unwrap()
        .with_column("y", y.iter().map(|&v| Some(v)).collect())
        .unwrap();
    Synthetic { frame, x, y, countries, years }
}

/// Solves X'X b = X'y by Gaussian elimination with partial pivoting.
fn normal_equations(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = cols[i].iter().zip(&cols[j]).map(|(p, q)| p * q).sum();
        }
        a[i][k] = cols[i].iter().zip(y).map(|(p, q)| p * q).sum();
    }
    for c in 0..k {
        let p = (c..k).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

fn two_way_demean(v: &[f64], countries: usize, years: usize) -> Vec<f64> {
    let at = |c: usize, t: usize| v[c * years + t];
    let grand = v.iter().sum::<f64>() / v.len() as f64;
    let cm: Vec<f64> = (0..countries).map(|c| (0..years).map(|t| at(c, t)).sum::<f64>() / years as f64).collect();
    let tm: Vec<f64> = (0..years).map(|t| (0..countries).map(|c| at(c, t)).sum::<f64>() / countries as f64).collect();
    (0..countries).flat_map(|c| (0..years).map(move |t| (c, t))).map(|(c, t)| at(c, t) - cm[c] - tm[t] + grand).collect()
}

#[test]
fn dummy_estimate_matches_normal_equations_and_within_transform() {
    let s = synthetic(42, 7, 30, 0.1);
    let fit = ols_fe(&s.frame, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)).unwrap();
    let slope = fit.coef("x").unwrap();

    let n = s.x.len();
    let mut cols = vec![vec![1.0; n], s.x.clone()];
    for c in 1..s.countries {
        cols.push((0..n).map(|i| if i / s.years == c { 1.0 } else { 0.0 }).collect());
    }
    for t in 1..s.years {
        cols.push((0..n).map(|i| if i % s.years == t { 1.0 } else { 0.0 }).collect());
    }
    let b = normal_equations(&cols, &s.y);
    assert!((b[1] - slope.estimate).abs() < 1e-8, "{} vs {}", b[1], slope.estimate);

    let xd = two_way_demean(&s.x, s.countries, s.years);
    let yd = two_way_demean(&s.y, s.countries, s.years);
    let within = xd.iter().zip(&yd).map(|(a, b)| a * b).sum::<f64>() / xd.iter().map(|a| a * a).sum::<f64>();
    assert!((within - slope.estimate).abs() < 1e-8);

    assert!((slope.estimate - 0.5).abs() < 3.0 * slope.std_error);
}

#[test]
fn zero_noise_recovers_coefficient() {
    let s = synthetic(3, 5, 12, 0.0);
    let fit = ols_fe(&s.frame, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)).unwrap();
    assert!((fit.coef("x").unwrap().estimate - 0.5).abs() < 1e-8);
}

#[test]
fn residuals_orthogonal_to_design() {
    let s = synthetic(11, 4, 15, 0.3);
    let fit = ols_fe(&s.frame, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)).unwrap();
    let n = fit.residuals.len();
    let mut cols = vec![vec![1.0; n], s.x.clone()];
    for c in 0..s.countries {
        cols.push((0..n).map(|i| if i / s.years == c { 1.0 } else { 0.0 }).collect());
    }
    for t in 0..s.years {
        cols.push((0..n).map(|i| if i % s.years == t { 1.0 } else { 0.0 }).collect());
    }
    for c in cols {
        let g: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
        assert!(g.abs() < 1e-8);
    }
}

#[test]
fn shifting_one_predictor_leaves_other_slopes() {
    let s = synthetic(5, 4, 20, 0.2);
    let z: Vec<Option<f64>> = (0..s.x.len()).map(|i| Some(((i * 37) % 17) as f64 / 17.0)).collect();
    let shifted: Vec<Option<f64>> = z.iter().map(|v| v.map(|v| v + 1000.0)).collect();
    let f1 = s.frame.clone().with_column("z", z).unwrap();
    let f2 = s.frame.clone().with_column("z", shifted).unwrap();
    let spec = RegressionSpec::new("m", "y", &["x", "z"], FixedEffects::BOTH);
    let a = ols_fe(&f1, &spec).unwrap();
    let b = ols_fe(&f2, &spec).unwrap();
    assert!((a.coef("x").unwrap().estimate - b.coef("x").unwrap().estimate).abs() < 1e-8);
    assert!((a.coef("z").unwrap().estimate - b.coef("z").unwrap().estimate).abs() < 1e-8);
}

#[test]
fn vif_matches_auxiliary_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let std = Normal::new(0.0, 1.0).unwrap();
    let n = 80;
    let a: Vec<f64> = (0..n).map(|_| std.sample(&mut rng)).collect();
    let b: Vec<f64> = a.iter().map(|v| 0.6 * v + 0.8 * std.sample(&mut rng)).collect();
    let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.3 * x - 0.5 * y + std.sample(&mut rng)).collect();
    let v = vif(&[("a".into(), a.clone()), ("b".into(), b.clone()), ("c".into(), c.clone())]).unwrap();
    let oracle = |t: &[f64], o1: &[f64], o2: &[f64]| {
        let beta = normal_equations(&[vec![1.0; n], o1.to_vec(), o2.to_vec()], t);
        let mean = t.iter().sum::<f64>() / n as f64;
        let tss: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        let rss: f64 = (0..n).map(|i| (t[i] - beta[0] - beta[1] * o1[i] - beta[2] * o2[i]).powi(2)).sum();
        1.0 / (rss / tss)
    };
    assert!((v["a"] - oracle(&a, &b, &c)).abs() < 1e-9);
    assert!((v["b"] - oracle(&b, &a, &c)).abs() < 1e-9);
    assert!((v["c"] - oracle(&c, &a, &b)).abs() < 1e-9);
}

#[test]
fn f32_pipeline_agrees_with_f64() {
    let s = synthetic(9, 4, 10, 0.1);
    let f32_frame = PanelFrame::<f32>::new(s.frame.countries().to_vec(), s.frame.years().to_vec())
        .unwrap()
        .with_column("x", s.x.iter().map(|&v| Some(v as f32)).collect())
        .unwrap()
        .with_column("y", s.y.iter().map(|&v| Some(v as f32)).collect())
        .unwrap();
    let spec = RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH);
    let a = ols_fe(&s.frame, &spec).unwrap().coef("x").unwrap().estimate;
    let b = ols_fe(&f32_frame, &spec).unwrap().coef("x").unwrap().estimate;
    assert!((a - b as f64).abs() < 1e-3);
}
