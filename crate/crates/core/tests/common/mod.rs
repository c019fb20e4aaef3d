#![allow(dead_code)]

use gee_core::data::{ClusteredDataset, Record, Value};
use gee_core::simulate::{generate, CovariateDistribution, CovariateSpec, SimProfile};

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                let pivot_row = a[col].clone();
                for (v, p) in a[i].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// One cluster for the oracle: covariate rows (with intercept) and 0/1 responses.
pub struct OracleCluster {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// `Σ D'V⁻¹(y − μ)` for a logit model with exchangeable working
/// correlation `alpha` and φ = 1, written out element by element.
pub fn logit_exchangeable_ee(clusters: &[OracleCluster], beta: &[f64], alpha: f64) -> Vec<f64> {
    let p = beta.len();
    let mut u = vec![0.0; p];
    for c in clusters {
        let n = c.y.len();
        let mu: Vec<f64> = c
            .x
            .iter()
            .map(|row| {
                let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
                1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let v: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|k| w[j].sqrt() * w[k].sqrt() * if j == k { 1.0 } else { alpha }).collect())
            .collect();
        let vinv = invert(&v);
        let r: Vec<f64> = c.y.iter().zip(&mu).map(|(y, m)| y - m).collect();
        for a in 0..p {
            for j in 0..n {
                let d_ja = w[j] * c.x[j][a];
                for k in 0..n {
                    u[a] += d_ja * vinv[j][k] * r[k];
                }
            }
        }
    }
    u
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Every sign change of `f` on a uniform grid, each refined by bisection.
pub fn grid_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let h = (hi - lo) / steps as f64;
    let mut roots = Vec::new();
    let mut prev = f(lo);
    for i in 1..=steps {
        let x = lo + i as f64 * h;
        let cur = f(x);
        if (prev < 0.0) != (cur < 0.0) {
            roots.push(bisect(&f, x - h, x));
        }
        prev = cur;
    }
    roots
}

/// Roots of a two-coefficient estimating function: the inner grid solves
/// `U₁ = 0` for β₁ at each β₀, the outer grid solves `U₀ = 0` along that
/// curve.
pub fn brute_force_root_2d(ee: impl Fn(f64, f64) -> [f64; 2], range: f64, steps: usize) -> Vec<[f64; 2]> {
    let inner = |b0: f64| -> Option<f64> {
        let r = grid_roots(|b1| ee(b0, b1)[1], -range, range, steps);
        (r.len() == 1).then(|| r[0])
    };
    let outer = |b0: f64| inner(b0).map(|b1| ee(b0, b1)[0]).unwrap_or(f64::NAN);
    grid_roots(outer, -range, range, steps)
        .into_iter()
        .filter_map(|b0| inner(b0).map(|b1| [b0, b1]))
        .collect()
}

pub fn binary_covariate(name: &str, cluster_constant: bool) -> CovariateSpec {
    CovariateSpec {
        name: name.into(),
        distribution: CovariateDistribution::Categorical { levels: vec![(0.0, 0.5), (1.0, 0.5)] },
        cluster_constant,
    }
}

/// Balanced clusters with one within-varying binary covariate X.
pub fn simple_profile(n_clusters: usize, size: usize, alpha: f64, beta: [f64; 2], seed: u64) -> SimProfile {
    SimProfile {
        n_clusters,
        size_distribution: vec![(size, 1.0)],
        covariates: vec![binary_covariate("X", false)],
        derived: vec![],
        intercept: beta[0],
        coefficients: vec![("X".into(), beta[1])],
        alpha,
        seed,
        cluster_name: "ID".into(),
        response_name: "Y".into(),
        within_name: Some("T".into()),
        max_position: size,
    }
}

/// Three strong binary signals A, B, C plus noise columns N1, N2 that are
/// exactly balanced within every (A, B, C, Y) cell, so under independence
/// they add nothing to the quasi-likelihood.
pub fn three_signal_dataset(seed: u64) -> ClusteredDataset {
    let profile = SimProfile {
        n_clusters: 300,
        size_distribution: vec![(4, 1.0)],
        covariates: vec![binary_covariate("A", false), binary_covariate("B", false), binary_covariate("C", false)],
        derived: vec![],
        intercept: -0.2,
        coefficients: vec![("A".into(), 1.1), ("B".into(), -1.0), ("C".into(), 0.9)],
        alpha: 0.15,
        seed,
        cluster_name: "ID".into(),
        response_name: "Y".into(),
        within_name: Some("T".into()),
        max_position: 4,
    };
    let ds = generate(&profile).unwrap();
    let mut seen = std::collections::HashMap::<[u8; 4], usize>::new();
    let mut records = Vec::new();
    for c in ds.clusters() {
        for r in &c.rows {
            let v: Vec<f64> = r.values.iter().map(|v| v.as_f64().unwrap()).collect();
            let key = [v[0] as u8, v[1] as u8, v[2] as u8, r.response as u8];
            let k = seen.entry(key).or_insert(0);
            let (n1, n2) = ((*k % 2) as f64, ((*k / 2) % 2) as f64);
            *k += 1;
            let mut values: Vec<Value> = v.into_iter().map(Value::Number).collect();
            values.push(Value::Number(n1));
            values.push(Value::Number(n2));
            records.push(Record { cluster: c.id.clone(), position: Some(r.position), response: r.response, values });
        }
    }
    let names = ["A", "B", "C", "N1", "N2"].map(String::from).to_vec();
    ClusteredDataset::from_records("ID", "Y", Some("T"), names, records).unwrap()
}
