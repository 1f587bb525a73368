//! Central-finite-difference gradient oracle.
//!
//! These checks are the independent route against which analytic tape
//! gradients are verified; they never call `backward` for the numeric side.

use crate::diffcore::tape::{Tape, Var};
use crate::error::Result;

fn eval<F>(f: &F, point: &[f64]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|&x| tape.scalar(x)).collect();
    Ok(f(&tape, &leaves)?.value())
}

fn analytic_grad<F>(f: &F, point: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|&x| tape.scalar(x)).collect();
    let out = f(&tape, &leaves)?;
    let grads = tape.backward(out)?;
    let g = leaves.iter().map(|&v| grads.wrt(v)).collect();
    Ok((out.value(), g))
}

/// Max over coordinates of `|analytic − central| / (|analytic| + 1e-12)`
/// with a plain central difference of step `h`.
pub fn finite_diff_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let (_, analytic) = analytic_grad(&f, point)?;
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let x0 = x[i];
        x[i] = x0 + h;
        let fp = eval(&f, &x)?;
        x[i] = x0 - h;
        let fm = eval(&f, &x)?;
        x[i] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Same check with per-coordinate scaled steps and a Ridders tableau of
/// central differences (shrinking steps + Richardson extrapolation with a
/// built-in error estimate). Used for composites whose coordinates span
/// many magnitudes (e.g. resistances near 10³ next to compliances near
/// 10⁻³), where a single fixed step either truncates or drowns in f64
/// roundoff. The numeric side remains purely central differences.
pub fn finite_diff_check_scaled<F>(f: F, point: &[f64], _h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;

    let (_, analytic) = analytic_grad(&f, point)?;
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let x0 = x[i];
        // Open with a step large enough to dominate f64 roundoff but
        // small relative to the coordinate, so positivity-bounded
        // quantities stay in their smooth regime.
        let mut hh = if x0.abs() > 1e-6 {
            (0.02 * x0.abs().max(0.1)).min(0.05 * x0.abs())
        } else {
            2e-3
        };
        let central = |step: f64, x: &mut Vec<f64>| -> Result<f64> {
            x[i] = x0 + step;
            let fp = eval(&f, x)?;
            x[i] = x0 - step;
            let fm = eval(&f, x)?;
            x[i] = x0;
            Ok((fp - fm) / (2.0 * step))
        };
        let mut tab = [[0.0f64; NTAB]; NTAB];
        // Shrink the opening step until both sided evaluations stay inside
        // the function's domain (positivity guards etc.).
        let first = loop {
            match central(hh, &mut x) {
                Ok(v) => break v,
                Err(e) => {
                    hh /= CON;
                    if hh < 1e-14 * x0.abs().max(1.0) {
                        return Err(e);
                    }
                }
            }
        };
        tab[0][0] = first;
        let mut best = tab[0][0];
        let mut best_err = f64::MAX;
        'tableau: for col in 1..NTAB {
            hh /= CON;
            tab[0][col] = central(hh, &mut x)?;
            let mut fac = CON2;
            for row in 1..=col {
                tab[row][col] =
                    (tab[row - 1][col] * fac - tab[row - 1][col - 1]) / (fac - 1.0);
                fac *= CON2;
                let errt = (tab[row][col] - tab[row - 1][col])
                    .abs()
                    .max((tab[row][col] - tab[row - 1][col - 1]).abs());
                if errt <= best_err {
                    best_err = errt;
                    best = tab[row][col];
                }
            }
            if (tab[col][col] - tab[col - 1][col - 1]).abs() >= SAFE * best_err {
                break 'tableau;
            }
        }
        let err = (analytic[i] - best).abs() / (analytic[i].abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
