//! Brute-force reference implementations, written independently of the library.

use ctg_ssl::features::N_FEATURES;
use ctg_ssl::quantizer::Quantizer;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn features(fhr: &[f64], fv: &[bool], ua: &[f64], uv: &[bool]) -> [f64; N_FEATURES] {
    let n = fhr.len();
    let mut out = [0.0; N_FEATURES];
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    for t in 0..n {
        if fv[t] {
            xs.push(fhr[t]);
            ts.push(t as f64);
        }
    }
    let k = xs.len();
    if k < 2 {
        let fill: f64 = fhr.iter().sum::<f64>() / n as f64;
        out[0] = fill;
        out[2] = fill;
        out[3] = fill;
    } else {
        let m = xs.iter().sum::<f64>() / k as f64;
        let mut var = 0.0;
        for x in &xs {
            var += (x - m) * (x - m);
        }
        out[0] = m;
        out[1] = (var / k as f64).sqrt();
        let mut lo = xs[0];
        let mut hi = xs[0];
        for &x in &xs {
            if x < lo {
                lo = x;
            }
            if x > hi {
                hi = x;
            }
        }
        out[2] = lo;
        out[3] = hi;
        out[4] = hi - lo;
        let mut sum_abs = 0.0;
        let mut sum_sq = 0.0;
        let mut pairs = 0;
        for t in 1..n {
            if fv[t] && fv[t - 1] {
                let d = fhr[t] - fhr[t - 1];
                sum_abs += d.abs();
                sum_sq += d * d;
                pairs += 1;
            }
        }
        if pairs > 0 {
            out[5] = sum_abs / pairs as f64;
            out[6] = (sum_sq / pairs as f64).sqrt();
        }
        // normal equations
        let kf = k as f64;
        let st: f64 = ts.iter().sum();
        let sx: f64 = xs.iter().sum();
        let stt: f64 = ts.iter().map(|t| t * t).sum();
        let stx: f64 = ts.iter().zip(&xs).map(|(t, x)| t * x).sum();
        let den = kf * stt - st * st;
        let slope = if den.abs() > 0.0 { (kf * stx - st * sx) / den } else { 0.0 };
        let icpt = (sx - slope * st) / kf;
        let signs: Vec<i32> = ts
            .iter()
            .zip(&xs)
            .map(|(t, x)| {
                let r = x - icpt - slope * t;
                if r > 1e-9 {
                    1
                } else if r < -1e-9 {
                    -1
                } else {
                    0
                }
            })
            .filter(|&s| s != 0)
            .collect();
        out[7] = signs.windows(2).filter(|w| w[0] != w[1]).count() as f64;
        out[8] = slope * 60.0;
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = if k % 2 == 1 { sorted[k / 2] } else { (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0 };
        out[9] = xs.iter().filter(|&&x| x > med + 15.0).count() as f64;
        out[10] = xs.iter().filter(|&&x| x < med - 15.0).count() as f64;
    }
    let valid_total = fv.iter().filter(|&&b| b).count() + uv.iter().filter(|&&b| b).count();
    out[11] = 1.0 - valid_total as f64 / (2 * n) as f64;

    let us: Vec<f64> = (0..n).filter(|&t| uv[t]).map(|t| ua[t]).collect();
    let (um, usd) = if us.len() < 2 {
        let fill = ua.iter().sum::<f64>() / n as f64;
        out[12] = fill;
        out[14] = fill;
        (fill, 0.0)
    } else {
        let m = us.iter().sum::<f64>() / us.len() as f64;
        let sd = (us.iter().map(|x| (x - m).powi(2)).sum::<f64>() / us.len() as f64).sqrt();
        out[12] = m;
        out[13] = sd;
        out[14] = us.iter().cloned().fold(f64::MIN, f64::max);
        (m, sd)
    };
    if us.len() >= 2 && usd > 1e-12 {
        let mut peaks = 0;
        let mut last: i64 = -1_000_000;
        for t in 1..n - 1 {
            let ok = uv[t - 1] && uv[t] && uv[t + 1];
            if ok && ua[t] > um + 0.5 * usd && ua[t] > ua[t - 1] && ua[t] >= ua[t + 1] && t as i64 - last >= 20 {
                peaks += 1;
                last = t as i64;
            }
        }
        out[15] = peaks as f64;
    }
    let idx: Vec<usize> = (0..n).filter(|&t| fv[t] && uv[t]).collect();
    if idx.len() >= 2 {
        let c = idx.len() as f64;
        let ma = idx.iter().map(|&t| fhr[t]).sum::<f64>() / c;
        let mb = idx.iter().map(|&t| ua[t]).sum::<f64>() / c;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for &t in &idx {
            sab += (fhr[t] - ma) * (ua[t] - mb);
            saa += (fhr[t] - ma).powi(2);
            sbb += (ua[t] - mb).powi(2);
        }
        if (saa / c).sqrt() > 1e-12 && (sbb / c).sqrt() > 1e-12 {
            out[16] = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
        }
    }
    out
}

pub fn random_patch(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<bool>) {
    let n = 60;
    let miss = rng.gen_range(0.0..0.4);
    let mut x: f64 = rng.gen_range(100.0..170.0);
    let mut fhr = Vec::with_capacity(n);
    for _ in 0..n {
        x += rng.gen_range(-4.0..4.0);
        if rng.gen_bool(0.05) {
            x += rng.gen_range(-25.0..25.0);
        }
        fhr.push(x);
    }
    let mut ua = Vec::with_capacity(n);
    let phase = rng.gen_range(0.0..6.3);
    for t in 0..n {
        ua.push(20.0 + 15.0 * ((t as f64) / 7.0 + phase).sin() + rng.gen_range(-2.0..2.0));
    }
    let fv: Vec<bool> = (0..n).map(|_| !rng.gen_bool(miss)).collect();
    let uv: Vec<bool> = (0..n).map(|_| !rng.gen_bool(miss)).collect();
    (fhr, fv, ua, uv)
}

pub fn pair_auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut total) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                total += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

pub fn scan_label(q: &Quantizer, x: &[f64]) -> usize {
    let (d_in, d_lat) = (q.spec.d_in, q.spec.d_lat);
    let mut z = vec![0.0; d_lat];
    for j in 0..d_lat {
        for i in 0..d_in {
            z[j] += x[i] * q.projection[i * d_lat + j] as f64;
        }
    }
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut best = (f64::INFINITY, 0);
    for k in 0..q.spec.codebook_size {
        let mut d = 0.0;
        for j in 0..d_lat {
            let u = if norm > 0.0 { z[j] / norm } else { 0.0 };
            d += (q.codebook[k * d_lat + j] as f64 - u).powi(2);
        }
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}
