//! Independent numerical references used by the verification suites:
//! adaptive quadrature, grid search, the Kolmogorov–Smirnov statistic,
//! and a rational-approximation normal CDF. None of these call back into
//! the implementation paths they are used to check.

/// Adaptive Simpson quadrature of `f` over `[a, b]` to tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 40)
}

/// Argmax of `f` over a uniform grid on `[lo, hi]` with step `step`.
pub fn grid_argmax(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let mut best_x = lo;
    let mut best = f(lo);
    let n = ((hi - lo) / step).ceil() as usize;
    for i in 1..=n {
        let x = (lo + i as f64 * step).min(hi);
        let v = f(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    best_x
}

/// One-sample Kolmogorov–Smirnov statistic against a CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let c = cdf(x);
        let hi = (i + 1) as f64 / n - c;
        let lo = c - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Asymptotic KS critical value at significance `alpha` for sample size n
/// (valid for the α levels used here).
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    // c(α) = sqrt(−ln(α/2)/2)
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c / (n as f64).sqrt()
}

/// Standard normal CDF via the Abramowitz–Stegun 7.1.26 error-function
/// approximation (|error| < 1.5e-7, ample for distributional tests).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        let x = ra[i] - mean;
        let y = rb[i] - mean;
        num += x * y;
        da += x * x;
        db += y * y;
    }
    num / (da.sqrt() * db.sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let v = adaptive_simpson(&|x| 3.0 * x * x, 0.0, 2.0, 1e-10);
        assert!((v - 8.0).abs() < 1e-10);
        let v = adaptive_simpson(&|x| x.sin(), 0.0, std::f64::consts::PI, 1e-10);
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-9);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_543).abs() < 1e-6);
        assert!((normal_cdf(-1.96) - 0.024_997_895_148_220_43).abs() < 1e-6);
    }

    #[test]
    fn ks_detects_wrong_distribution() {
        // Uniform samples against the uniform CDF: small statistic.
        let mut u: Vec<f64> = (0..5000).map(|i| (i as f64 + 0.5) / 5000.0).collect();
        let d = ks_statistic(&mut u, &|x| x.clamp(0.0, 1.0));
        assert!(d < ks_critical(0.01, 5000));
        // Same samples against a skewed CDF: rejected.
        let mut u2 = u.clone();
        let d2 = ks_statistic(&mut u2, &|x| (x * x).clamp(0.0, 1.0));
        assert!(d2 > ks_critical(0.01, 5000));
    }

    #[test]
    fn spearman_handles_monotone_and_ties() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 30.0, 40.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [40.0, 30.0, 20.0, 10.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
        let tied = [1.0, 1.0, 2.0, 2.0];
        let r = spearman(&tied, &b);
        assert!(r > 0.8);
    }
}
