//! The full cost on a tiny instance, recomputed with plain nested loops over
//! `Vec<Vec<f64>>` and compared against the library.

use ladder_core::gradcheck::{random_instance, GradCheckConfig};
use ladder_core::numerics::Matrix;
use ladder_core::training::{forward_cost, NoiseSource};

type M = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> M {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mul(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Column means and `sqrt(biased var + 1e-6)`.
fn stats(a: &M) -> (Vec<f64>, Vec<f64>) {
    let b = a.len() as f64;
    let cols = a[0].len();
    let mut mean = vec![0.0; cols];
    let mut sd = vec![0.0; cols];
    for j in 0..cols {
        mean[j] = a.iter().map(|r| r[j]).sum::<f64>() / b;
        let var = a.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / b;
        sd[j] = (var + 1e-6).sqrt();
    }
    (mean, sd)
}

fn norm_with(a: &M, (mean, sd): &(Vec<f64>, Vec<f64>)) -> M {
    a.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) / sd[j]).collect()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn g(z: f64, u: f64, a: &[f64]) -> f64 {
    let mu = a[0] * sig(a[1] * u + a[2]) + a[3] * u + a[4];
    let v = a[5] * sig(a[6] * u + a[7]) + a[8] * u + a[9];
    (z - mu) * v + mu
}

#[test]
fn straight_line_cost_matches_library() {
    let mut cfg = GradCheckConfig::new(vec![2, 3, 2], 7);
    cfg.batch = 4;
    cfg.lambdas = vec![1.0, 0.5, 2.0];
    let (params, batch, noise) = random_instance(&cfg).unwrap();
    let (cost, _) = forward_cost(&params, &batch, &cfg.lambdas, &[], NoiseSource::Frozen(&noise)).unwrap();

    let enc = &params.encoder.layers;
    let w1 = rows(&enc[0].w);
    let w2 = rows(&enc[1].w);
    let beta1 = enc[0].beta.clone().unwrap();
    let gamma2 = enc[1].gamma.clone().unwrap();
    let beta2 = enc[1].beta.clone().unwrap();
    let n: Vec<M> = noise.iter().map(rows).collect();
    let x = rows(&batch.x);
    let b = x.len();

    // Clean pass.
    let z1_pre = mul(&x, &w1);
    let s1 = stats(&z1_pre);
    let z1 = norm_with(&z1_pre, &s1);
    let h1: M = z1.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v + beta1[j]).max(0.0)).collect()).collect();
    let z2_pre = mul(&h1, &w2);
    let s2 = stats(&z2_pre);
    let z2 = norm_with(&z2_pre, &s2);

    // Corrupted pass.
    let zt0: M = (0..b).map(|r| (0..2).map(|j| x[r][j] + n[0][r][j]).collect()).collect();
    let p1 = mul(&zt0, &w1);
    let zt1: M = norm_with(&p1, &stats(&p1)).iter().enumerate().map(|(r, row)| row.iter().enumerate().map(|(j, v)| v + n[1][r][j]).collect()).collect();
    let ht1: M = zt1.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v + beta1[j]).max(0.0)).collect()).collect();
    let p2 = mul(&ht1, &w2);
    let zt2: M = norm_with(&p2, &stats(&p2)).iter().enumerate().map(|(r, row)| row.iter().enumerate().map(|(j, v)| v + n[2][r][j]).collect()).collect();
    let mut yt = vec![vec![0.0; 2]; b];
    for r in 0..b {
        let s: Vec<f64> = (0..2).map(|j| gamma2[j] * (zt2[r][j] + beta2[j])).collect();
        let m = s[0].max(s[1]);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let tot: f64 = e.iter().sum();
        for j in 0..2 {
            yt[r][j] = e[j] / tot;
        }
    }

    // Supervised cost over labeled rows.
    let mut c_sup = 0.0;
    let mut n_lab = 0.0;
    for r in 0..b {
        if batch.labeled[r] {
            c_sup -= yt[r][batch.targets[r]].max(1e-15).ln();
            n_lab += 1.0;
        }
    }
    c_sup /= n_lab;

    // Decoder, top to bottom.
    let dec = &params.decoder.layers;
    let unit = |l: usize, i: usize| -> Vec<f64> { dec[l].as_ref().unwrap().g[i * 10..(i + 1) * 10].to_vec() };
    let decode = |zt: &M, u: &M, l: usize| -> M { zt.iter().zip(u).map(|(zr, ur)| (0..zr.len()).map(|i| g(zr[i], ur[i], &unit(l, i))).collect()).collect() };
    let u2 = norm_with(&yt, &stats(&yt));
    let zh2 = decode(&zt2, &u2, 2);
    let v2 = rows(dec[1].as_ref().unwrap().v.as_ref().unwrap());
    let q1 = mul(&zh2, &v2);
    let zh1 = decode(&zt1, &norm_with(&q1, &stats(&q1)), 1);
    let v1 = rows(dec[0].as_ref().unwrap().v.as_ref().unwrap());
    let q0 = mul(&zh1, &v1);
    let zh0 = decode(&zt0, &norm_with(&q0, &stats(&q0)), 0);

    let sq = |a: &M, c: &M| -> f64 { a.iter().zip(c).flat_map(|(ra, rc)| ra.iter().zip(rc).map(|(p, q)| (p - q).powi(2))).sum() };
    let cd0 = cfg.lambdas[0] / (b as f64 * 2.0) * sq(&x, &zh0);
    let cd1 = cfg.lambdas[1] / (b as f64 * 3.0) * sq(&z1, &norm_with(&zh1, &s1));
    let cd2 = cfg.lambdas[2] / (b as f64 * 2.0) * sq(&z2, &norm_with(&zh2, &s2));
    let total = c_sup + cd0 + cd1 + cd2;

    assert!((cost.c_supervised - c_sup).abs() < 1e-12, "{} vs {c_sup}", cost.c_supervised);
    for (got, want) in cost.c_denoise_per_layer.iter().zip([cd0, cd1, cd2]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((cost.total - total).abs() < 1e-12, "{} vs {total}", cost.total);
    assert!(cd0 > 0.0 && cd1 > 0.0 && cd2 > 0.0);
}

#[test]
fn frozen_noise_replay_is_bit_exact() {
    let cfg = GradCheckConfig::new(vec![4, 5, 3], 9);
    let (params, batch, noise) = random_instance(&cfg).unwrap();
    let a = forward_cost(&params, &batch, &cfg.lambdas, &[], NoiseSource::Frozen(&noise)).unwrap();
    let b = forward_cost(&params, &batch, &cfg.lambdas, &[], NoiseSource::Frozen(&noise)).unwrap();
    assert_eq!(a, b);
}
