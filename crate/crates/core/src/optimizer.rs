//! Derivative-free coefficient fitting.
//!
//! Powell's direction-set method over an L1 objective, with a golden-section
//! bracketing step and Brent refinement for each line minimization. No
//! gradients anywhere: the objective is only ever sampled.

use crate::error::{Error, Result};
use crate::expr::{evaluate, ExpressionTree};
use rand::Rng;
use serde::{Deserialize, Serialize};

const GOLD: f64 = 1.618033988749895;
const CGOLD: f64 = 0.3819660112501051;
const TINY: f64 = 1e-20;

/// Inner-loop parameters for [`powell_minimize`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowellConfig {
    /// Outer direction-sweep iterations.
    pub max_outer: usize,
    /// Relative decrease below which the outer loop stops.
    pub f_tol: f64,
    /// Brent interval tolerance.
    pub line_tol: f64,
    /// Brent iteration cap per line search.
    pub max_line_iters: usize,
    /// Golden-expansion cap while hunting for a bracket.
    pub max_bracket_steps: usize,
}

impl Default for PowellConfig {
    fn default() -> Self {
        PowellConfig {
            max_outer: 200,
            f_tol: 1e-10,
            line_tol: 1e-8,
            max_line_iters: 100,
            max_bracket_steps: 50,
        }
    }
}

/// Multi-start wrapper parameters for [`fit_coefficients`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitConfig {
    pub powell: PowellConfig,
    /// Random restarts tried after the deterministic all-ones start.
    pub n_restarts: usize,
    /// Half-width of the uniform restart box.
    pub init_scale: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            powell: PowellConfig::default(),
            n_restarts: 2,
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowellResult {
    pub x: Vec<f64>,
    pub fmin: f64,
    pub converged: bool,
}

/// Result of fitting a tree's coefficients to a series.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub coeffs: Vec<f64>,
    /// Total absolute error of the fitted expression on the series;
    /// `f64::INFINITY` when every start failed to produce finite output.
    pub abs_error: f64,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Bracket a minimum of `phi` starting from the interval `(0, step)`.
/// Returns `(a, b, c)` with `b` between `a` and `c` and `phi(b)` below both
/// ends, or `None` if no bracket was found within the expansion cap.
fn bracket_minimum<F: FnMut(f64) -> f64>(
    phi: &mut F,
    step: f64,
    cfg: &PowellConfig,
) -> Option<(f64, f64, f64, f64)> {
    let mut ax = 0.0;
    let mut bx = step;
    let mut fa = sanitize(phi(ax));
    let mut fb = sanitize(phi(bx));
    if fb > fa {
        // Walk downhill; this flips the search to the negative direction.
        std::mem::swap(&mut ax, &mut bx);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut cx = bx + GOLD * (bx - ax);
    let mut fc = sanitize(phi(cx));
    let mut steps = 0;
    while fc < fb {
        steps += 1;
        if steps > cfg.max_bracket_steps {
            return None;
        }
        ax = bx;
        fa = fb;
        bx = cx;
        fb = fc;
        cx = bx + GOLD * (bx - ax);
        fc = sanitize(phi(cx));
    }
    if fb <= fa && fb <= fc && fb.is_finite() {
        Some((ax, bx, cx, fb))
    } else {
        None
    }
}

/// Brent's parabolic-interpolation minimizer on a bracketed interval.
fn brent_refine<F: FnMut(f64) -> f64>(
    phi: &mut F,
    ax: f64,
    bx: f64,
    cx: f64,
    fbx: f64,
    cfg: &PowellConfig,
) -> (f64, f64) {
    let mut a = ax.min(cx);
    let mut b = ax.max(cx);
    let mut x = bx;
    let mut w = bx;
    let mut v = bx;
    let mut fx = fbx;
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..cfg.max_line_iters {
        let xm = 0.5 * (a + b);
        let tol1 = cfg.line_tol * x.abs() + TINY;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // Fit a parabola through (v, w, x).
            let r = (x - w) * (fx - fv);
            let q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            let mut q2 = 2.0 * (q - r);
            if q2 > 0.0 {
                p = -p;
            }
            q2 = q2.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q2 * etemp).abs() && p > q2 * (a - x) && p < q2 * (b - x) {
                d = p / q2;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm - x >= 0.0 { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d >= 0.0 { tol1 } else { -tol1 }
        };
        let fu = sanitize(phi(u));
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Minimize along `dir` from `p`, updating `p` in place. Returns the new
/// objective value (unchanged when no bracket exists).
fn line_minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    p: &mut [f64],
    dir: &[f64],
    f_at_p: f64,
    cfg: &PowellConfig,
) -> f64 {
    let mut phi = |alpha: f64| {
        let trial: Vec<f64> = p.iter().zip(dir).map(|(pi, di)| pi + alpha * di).collect();
        f(&trial)
    };
    let Some((ax, bx, cx, fbx)) = bracket_minimum(&mut phi, 1.0, cfg) else {
        return f_at_p;
    };
    let (alpha, f_alpha) = brent_refine(&mut phi, ax, bx, cx, fbx, cfg);
    if f_alpha < f_at_p {
        for (pi, di) in p.iter_mut().zip(dir) {
            *pi += alpha * di;
        }
        f_alpha
    } else {
        f_at_p
    }
}

/// Powell's method from a single starting point. NaN objective values are
/// treated as `+inf`, so domain violations just steer the search away.
pub fn powell_minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    cfg: &PowellConfig,
) -> Result<PowellResult> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::EmptyProblem);
    }
    let mut p = x0.to_vec();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect();
    let mut fret = sanitize(f(&p));
    for _ in 0..cfg.max_outer {
        let fp = fret;
        let pt = p.clone();
        let mut del = 0.0;
        let mut ibig = 0;
        for (i, dir) in dirs.iter().enumerate() {
            let fptt = fret;
            fret = line_minimize(&mut f, &mut p, dir, fret, cfg);
            if fptt - fret > del {
                del = fptt - fret;
                ibig = i;
            }
        }
        if 2.0 * (fp - fret) <= cfg.f_tol * (fp.abs() + fret.abs()) + TINY {
            return Ok(PowellResult {
                x: p,
                fmin: fret,
                converged: true,
            });
        }
        // Consider replacing the direction of largest decrease with the
        // overall displacement of this sweep.
        let ptt: Vec<f64> = p.iter().zip(&pt).map(|(pi, pti)| 2.0 * pi - pti).collect();
        let xit: Vec<f64> = p.iter().zip(&pt).map(|(pi, pti)| pi - pti).collect();
        let fptt = sanitize(f(&ptt));
        if fptt < fp {
            let t = 2.0 * (fp - 2.0 * fret + fptt) * (fp - fret - del).powi(2)
                - del * (fp - fptt).powi(2);
            if t < 0.0 {
                fret = line_minimize(&mut f, &mut p, &xit, fret, cfg);
                dirs[ibig] = dirs[n - 1].clone();
                dirs[n - 1] = xit;
            }
        }
    }
    Ok(PowellResult {
        x: p,
        fmin: fret,
        converged: false,
    })
}

/// Total absolute error of `tree(coeffs)` against `(times, values)`;
/// `+inf` when any prediction is non-finite.
pub fn l1_error(tree: &ExpressionTree, coeffs: &[f64], times: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(times.len(), values.len());
    let mut err = 0.0;
    for (&t, &v) in times.iter().zip(values) {
        let pred = match evaluate(tree, coeffs, t) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        if !pred.is_finite() {
            return f64::INFINITY;
        }
        err += (v - pred).abs();
    }
    sanitize(err)
}

/// Fit the tree's coefficient slots to a series by minimizing total absolute
/// error. Restart starting points are drawn from `rng`, so fits are
/// reproducible under a fixed seed. Trees without slots skip optimization.
pub fn fit_coefficients<R: Rng>(
    tree: &ExpressionTree,
    times: &[f64],
    values: &[f64],
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<FitOutcome> {
    if times.len() != values.len() {
        return Err(Error::Shape(format!(
            "times ({}) and values ({}) differ in length",
            times.len(),
            values.len()
        )));
    }
    if times.is_empty() {
        return Err(Error::InsufficientData("empty fitting window".into()));
    }
    let n = tree.n_slots();
    if n == 0 {
        return Ok(FitOutcome {
            coeffs: Vec::new(),
            abs_error: l1_error(tree, &[], times, values),
        });
    }
    let objective = |c: &[f64]| l1_error(tree, c, times, values);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start_idx in 0..=cfg.n_restarts {
        let x0: Vec<f64> = if start_idx == 0 {
            vec![1.0; n]
        } else {
            (0..n)
                .map(|_| rng.gen_range(-cfg.init_scale..=cfg.init_scale))
                .collect()
        };
        let res = powell_minimize(objective, &x0, &cfg.powell)?;
        let better = match &best {
            None => true,
            Some((_, f)) => res.fmin < *f,
        };
        if better {
            best = Some((res.x, res.fmin));
        }
    }
    let (coeffs, abs_error) = best.expect("at least one start always runs");
    Ok(FitOutcome { coeffs, abs_error })
}
