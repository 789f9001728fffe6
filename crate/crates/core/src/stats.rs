//! Small statistics helpers for the Monte Carlo estimators.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64
}

/// Mean and standard error treating `xs` as independent batch means.
pub fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
    (mean(xs), (variance(xs) / xs.len() as f64).sqrt())
}

/// Lag-one autocorrelation of a sequence.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return 0.0;
    }
    let mu = mean(xs);
    let den: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum();
    num / den
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Wilson score interval for `hits` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let phat = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log P(Z > x) for a standard normal, accurate deep in the tail.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < 5.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills ratio continued fraction
        let mut f = x;
        for k in (1..=60).rev() {
            f = x + k as f64 / f;
        }
        -0.5 * x * x - (2.0 * std::f64::consts::PI).sqrt().ln() - f.ln()
    }
}

/// Complementary error function (W. J. Cody's rational approximations).
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 0.5 {
        return 1.0 - erf_small(x);
    }
    let (p, q): (&[f64], &[f64]) = if x < 4.0 {
        (
            &[
                3.004_592_610_201_616e2,
                4.519_189_537_118_729e2,
                3.393_208_167_343_437e2,
                1.529_892_850_469_404_e2,
                4.316_222_722_205_674e1,
                7.211_758_250_883_094,
                5.641_955_174_789_74e-1,
                -1.368_648_573_827_167e-7,
            ],
            &[
                3.004_592_609_569_833e2,
                7.909_509_253_278_98e2,
                9.313_540_948_506_096e2,
                6.389_802_644_656_312e2,
                2.775_854_447_439_876e2,
                7.700_015_293_522_947e1,
                1.278_272_731_962_942e1,
                1.0,
            ],
        )
    } else {
        let z = 1.0 / (x * x);
        let p = [
            -2.996_107_077_035_422e-3,
            -4.947_309_106_232_507e-2,
            -2.269_565_935_396_869e-1,
            -2.786_613_086_096_478e-1,
            -2.231_924_597_341_847e-2,
        ];
        let q = [
            1.062_092_305_284_679e-2,
            1.913_089_261_078_298e-1,
            1.051_675_107_067_932,
            1.987_332_018_171_353,
            1.0,
        ];
        let num = p.iter().rev().fold(0.0, |acc, c| acc * z + c);
        let den = q.iter().rev().fold(0.0, |acc, c| acc * z + c);
        let r = (1.0 / std::f64::consts::PI.sqrt() + z * num / den) / x;
        return (-x * x).exp() * r;
    };
    let num = p.iter().rev().fold(0.0, |acc, c| acc * x + c);
    let den = q.iter().rev().fold(0.0, |acc, c| acc * x + c);
    (-x * x).exp() * num / den
}

fn erf_small(x: f64) -> f64 {
    let p = [
        3.209_377_589_138_469_4e3,
        3.774_852_376_853_020_2e2,
        1.138_641_541_510_501_6e2,
        3.161_123_743_870_565_6,
        1.857_777_061_846_031_5e-1,
    ];
    let q = [
        2.844_236_833_439_170_6e3,
        1.282_616_526_077_372_3e3,
        2.440_246_379_344_441_7e2,
        2.360_129_095_234_412_1e1,
        1.0,
    ];
    let z = x * x;
    let num = p.iter().rev().fold(0.0, |acc, c| acc * z + c);
    let den = q.iter().rev().fold(0.0, |acc, c| acc * z + c);
    x * num / den
}
