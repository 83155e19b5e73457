//! Limited-memory BFGS with a strong-Wolfe line search over flat parameter
//! vectors. The line search follows the bracketing/zoom scheme with cubic
//! interpolation used by common deep-learning libraries.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    /// Number of `(s, y)` pairs kept.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Loss evaluations allowed per line search.
    pub max_line_search: usize,
    /// Pairs with `sᵀy` at or below this are discarded.
    pub curvature_eps: f64,
    /// A gradient with max-norm at or below this counts as stationary.
    pub tolerance_grad: f64,
    /// Bracket width below which the zoom phase stops.
    pub tolerance_change: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 50,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            curvature_eps: 1e-10,
            tolerance_grad: 1e-12,
            tolerance_change: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    /// Strong-Wolfe step along the quasi-Newton direction.
    Wolfe,
    /// Line search failed; a backtracking steepest-descent step was taken.
    Fallback,
    /// Gradient already zero; nothing moved.
    Stationary,
    /// Neither search found a decrease; nothing moved.
    Failed,
}

/// Line-search data of an accepted step, enough to re-check both Wolfe
/// inequalities: `f(α) ≤ f(0) + c₁ α f'(0)` and `|f'(α)| ≤ c₂ |f'(0)|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WolfeRecord {
    pub f0: f64,
    pub slope0: f64,
    pub alpha: f64,
    pub f_alpha: f64,
    pub slope_alpha: f64,
}

impl WolfeRecord {
    pub fn armijo(&self, c1: f64) -> bool {
        self.f_alpha <= self.f0 + c1 * self.alpha * self.slope0
    }

    pub fn curvature(&self, c2: f64) -> bool {
        self.slope_alpha.abs() <= c2 * self.slope0.abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub status: StepStatus,
    pub loss_before: f64,
    pub loss: f64,
    pub evaluations: usize,
    pub wolfe: Option<WolfeRecord>,
}

/// Loss and gradient at a parameter vector.
pub type Evaluation = (f64, Vec<f64>);

#[derive(Clone, Debug)]
pub struct Lbfgs {
    config: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn moved(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizer of the cubic interpolating `(x1, f1, g1)` and `(x2, f2, g2)`,
/// clamped to the bracket; the midpoint if the cubic has no real minimizer.
pub(super) fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64) -> f64 {
    let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_square = d1 * d1 - g1 * g2;
    if d2_square >= 0.0 {
        let d2 = d2_square.sqrt();
        let pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if pos.is_finite() {
            return pos.clamp(lo, hi);
        }
    }
    (lo + hi) / 2.0
}

#[derive(Clone)]
struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

impl Lbfgs {
    pub fn new(config: LbfgsConfig) -> Self {
        Self {
            config,
            s: VecDeque::new(),
            y: VecDeque::new(),
            iterations: 0,
        }
    }

    pub fn config(&self) -> &LbfgsConfig {
        &self.config
    }

    pub fn history_len(&self) -> usize {
        self.s.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Vec<f64>, &Vec<f64>)> {
        self.s.iter().zip(&self.y)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
    }

    /// Two-loop recursion: `−H g` for the inverse-Hessian estimate `H` built
    /// from the stored pairs. With no pairs this is `−g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = self.s.len();
        let rho: Vec<f64> = self.pairs().map(|(s, y)| 1.0 / dot(s, y)).collect();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho[i] * dot(&self.s[i], &q);
            axpy(-alpha[i], &self.y[i], &mut q);
        }
        if let (Some(s), Some(y)) = (self.s.back(), self.y.back()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..m {
            let beta = rho[i] * dot(&self.y[i], &q);
            axpy(alpha[i] - beta, &self.s[i], &mut q);
        }
        q
    }

    pub(super) fn store_pair(&mut self, s: Vec<f64>, y: Vec<f64>) {
        if dot(&s, &y) > self.config.curvature_eps {
            if self.s.len() == self.config.history {
                self.s.pop_front();
                self.y.pop_front();
            }
            self.s.push_back(s);
            self.y.push_back(y);
        }
    }

    /// One iteration from `x` with loss `f` and gradient `g`. On return `x`,
    /// `f` and `g` describe the new iterate.
    pub fn step<E>(
        &mut self,
        x: &mut Vec<f64>,
        f: &mut f64,
        g: &mut Vec<f64>,
        mut eval: impl FnMut(&[f64]) -> Result<Evaluation, E>,
    ) -> Result<StepReport, E> {
        let loss_before = *f;
        if max_abs(g) <= self.config.tolerance_grad {
            return Ok(StepReport {
                status: StepStatus::Stationary,
                loss_before,
                loss: *f,
                evaluations: 0,
                wolfe: None,
            });
        }
        self.iterations += 1;
        let mut d = self.direction(g);
        let mut slope = dot(g, &d);
        if !(slope < 0.0) {
            // not a descent direction: drop the curvature information
            self.reset();
            d = g.iter().map(|v| -v).collect();
            slope = dot(g, &d);
        }
        let alpha0 = if self.s.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let mut evaluations = 0;
        let search = self.strong_wolfe(x, *f, g, &d, slope, alpha0, &mut eval, &mut evaluations)?;
        if let Some(p) = search {
            let record = WolfeRecord {
                f0: *f,
                slope0: slope,
                alpha: p.alpha,
                f_alpha: p.f,
                slope_alpha: p.slope,
            };
            if record.armijo(self.config.c1) && record.curvature(self.config.c2) {
                let x_new = moved(x, p.alpha, &d);
                let s: Vec<f64> = d.iter().map(|v| v * p.alpha).collect();
                let y: Vec<f64> = p.g.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
                self.store_pair(s, y);
                *x = x_new;
                *f = p.f;
                *g = p.g;
                return Ok(StepReport {
                    status: StepStatus::Wolfe,
                    loss_before,
                    loss: *f,
                    evaluations,
                    wolfe: Some(record),
                });
            }
        }

        // steepest descent with backtracking on the sufficient-decrease condition
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let slope = dot(g, &d);
        let mut alpha = (1.0 / max_abs(g)).min(1.0);
        for _ in 0..60 {
            let candidate = moved(x, alpha, &d);
            let (fc, gc) = eval(&candidate)?;
            evaluations += 1;
            if fc.is_finite() && fc <= *f + self.config.c1 * alpha * slope {
                let s: Vec<f64> = d.iter().map(|v| v * alpha).collect();
                let y: Vec<f64> = gc.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
                self.store_pair(s, y);
                *x = candidate;
                *f = fc;
                *g = gc;
                return Ok(StepReport {
                    status: StepStatus::Fallback,
                    loss_before,
                    loss: *f,
                    evaluations,
                    wolfe: None,
                });
            }
            alpha *= 0.5;
        }
        Ok(StepReport {
            status: StepStatus::Failed,
            loss_before,
            loss: *f,
            evaluations,
            wolfe: None,
        })
    }

    /// Bracketing phase then zoom. Returns the last probe of a successful
    /// search, or the best point found if the budget runs out.
    #[allow(clippy::too_many_arguments)]
    fn strong_wolfe<E>(
        &self,
        x: &[f64],
        f0: f64,
        g0: &[f64],
        d: &[f64],
        slope0: f64,
        alpha0: f64,
        eval: &mut impl FnMut(&[f64]) -> Result<Evaluation, E>,
        evaluations: &mut usize,
    ) -> Result<Option<Probe>, E> {
        let c = &self.config;
        let mut probe = |alpha: f64, evaluations: &mut usize| -> Result<Probe, E> {
            let (f, g) = eval(&moved(x, alpha, d))?;
            *evaluations += 1;
            let slope = dot(&g, d);
            Ok(Probe { alpha, f, g, slope })
        };
        let d_norm = max_abs(d);

        let mut prev = Probe {
            alpha: 0.0,
            f: f0,
            g: g0.to_vec(),
            slope: slope0,
        };
        let mut alpha = alpha0;
        let mut cur = probe(alpha, evaluations)?;
        let mut bracket: Option<(Probe, Probe)> = None;
        let mut ls_iter = 0;
        while ls_iter < c.max_line_search {
            if !cur.f.is_finite() {
                // shrink into the finite region
                bracket = Some((prev, cur.clone()));
                break;
            }
            if cur.f > f0 + c.c1 * alpha * slope0 || (ls_iter > 1 && cur.f >= prev.f) {
                bracket = Some((prev, cur.clone()));
                break;
            }
            if cur.slope.abs() <= -c.c2 * slope0 {
                return Ok(Some(cur));
            }
            if cur.slope >= 0.0 {
                bracket = Some((prev, cur.clone()));
                break;
            }
            let min_step = alpha + 0.01 * (alpha - prev.alpha);
            let max_step = alpha * 10.0;
            let next = cubic_interpolate(prev.alpha, prev.f, prev.slope, alpha, cur.f, cur.slope);
            let next = next.clamp(min_step, max_step);
            prev = cur;
            alpha = next;
            cur = probe(alpha, evaluations)?;
            ls_iter += 1;
        }
        let Some((a, b)) = bracket else {
            return Ok(Some(cur));
        };

        // zoom: keep (low, high) with low the better end
        let (mut low, mut high) = if a.f <= b.f || !b.f.is_finite() { (a, b) } else { (b, a) };
        let mut insufficient_progress = false;
        while ls_iter < c.max_line_search {
            if (high.alpha - low.alpha).abs() * d_norm < c.tolerance_change {
                break;
            }
            let mut t = if high.f.is_finite() {
                cubic_interpolate(low.alpha, low.f, low.slope, high.alpha, high.f, high.slope)
            } else {
                (low.alpha + high.alpha) / 2.0
            };
            // keep the trial away from the bracket ends
            let (lo, hi) = (low.alpha.min(high.alpha), low.alpha.max(high.alpha));
            let eps = 0.1 * (hi - lo);
            if (hi - t).min(t - lo) < eps {
                if insufficient_progress || t >= hi || t <= lo {
                    t = if (hi - t).abs() < (t - lo).abs() { hi - eps } else { lo + eps };
                    insufficient_progress = false;
                } else {
                    insufficient_progress = true;
                }
            } else {
                insufficient_progress = false;
            }
            let p = probe(t, evaluations)?;
            ls_iter += 1;
            if !p.f.is_finite() || p.f > f0 + c.c1 * t * slope0 || p.f >= low.f {
                high = p;
            } else {
                if p.slope.abs() <= -c.c2 * slope0 {
                    return Ok(Some(p));
                }
                if p.slope * (high.alpha - low.alpha) >= 0.0 {
                    high = low;
                }
                low = p;
            }
        }
        if low.alpha == 0.0 {
            return Ok(None);
        }
        Ok(Some(low))
    }
}
