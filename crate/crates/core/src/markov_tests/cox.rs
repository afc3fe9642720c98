//! Cox partial-likelihood machinery for score tests with left-truncated
//! at-risk intervals `(start, stop]` and Breslow handling of ties.

use nalgebra::{DMatrix, DVector};

/// Rows of a counting-process survival table with nuisance covariates.
#[derive(Debug, Clone)]
pub(crate) struct SurvivalTable {
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
    pub event: Vec<bool>,
    /// Row-major `n x p`.
    pub x: Vec<f64>,
    pub p: usize,
}

/// Risk-set bookkeeping: at the `e`-th distinct event time, rows
/// `by_start[..add[e]]` have entered and rows `by_stop[..remove[e]]` have left.
struct Schedule {
    by_start: Vec<usize>,
    by_stop: Vec<usize>,
    add: Vec<usize>,
    remove: Vec<usize>,
    /// Rows with an event at each distinct event time.
    events: Vec<Vec<usize>>,
}

impl Schedule {
    fn new(t: &SurvivalTable) -> Self {
        let n = t.start.len();
        let mut by_start: Vec<usize> = (0..n).collect();
        by_start.sort_by(|&a, &b| t.start[a].total_cmp(&t.start[b]).then(a.cmp(&b)));
        let mut by_stop: Vec<usize> = (0..n).collect();
        by_stop.sort_by(|&a, &b| t.stop[a].total_cmp(&t.stop[b]).then(a.cmp(&b)));
        let mut ev: Vec<usize> = (0..n).filter(|&i| t.event[i] && t.stop[i] > t.start[i]).collect();
        ev.sort_by(|&a, &b| t.stop[a].total_cmp(&t.stop[b]).then(a.cmp(&b)));
        let mut events: Vec<Vec<usize>> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        for i in ev {
            if times.last() == Some(&t.stop[i]) {
                events.last_mut().expect("non-empty").push(i);
            } else {
                times.push(t.stop[i]);
                events.push(vec![i]);
            }
        }
        let add = times
            .iter()
            .map(|&u| by_start.partition_point(|&i| t.start[i] < u))
            .collect();
        let remove = times
            .iter()
            .map(|&u| by_stop.partition_point(|&i| t.stop[i] < u))
            .collect();
        Self {
            by_start,
            by_stop,
            add,
            remove,
            events,
        }
    }

    fn len(&self) -> usize {
        self.events.len()
    }
}

/// Null-model fit (no test covariate) and the quantities the efficient score needs.
pub(crate) struct NullFit {
    schedule: Schedule,
    weights: Vec<f64>,
    x: Vec<f64>,
    p: usize,
    /// Inverse nuisance information, `p x p`.
    info_inv: DMatrix<f64>,
}

/// Score statistic for one test covariate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Score {
    pub u: f64,
    pub info: f64,
}

impl Score {
    /// `U^2 / I`, or `None` when the information vanishes.
    pub fn chi2(&self) -> Option<f64> {
        (self.info > 1e-12).then(|| self.u * self.u / self.info)
    }

    pub fn z(&self) -> Option<f64> {
        (self.info > 1e-12).then(|| self.u / self.info.sqrt())
    }
}

struct Derivatives {
    loglik: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
}

fn derivatives(t: &SurvivalTable, sch: &Schedule, beta: &[f64]) -> Derivatives {
    let p = t.p;
    let n = t.start.len();
    let eta: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|c| t.x[i * p + c] * beta[c]).sum())
        .collect();
    let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = vec![0.0; p * p];
    let update = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut [f64]| {
        let wi = sign * w[i];
        *s0 += wi;
        let xi = &t.x[i * p..(i + 1) * p];
        for a in 0..p {
            s1[a] += wi * xi[a];
            for b in 0..p {
                s2[a * p + b] += wi * xi[a] * xi[b];
            }
        }
    };
    let (mut ai, mut ri) = (0, 0);
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for e in 0..sch.len() {
        while ai < sch.add[e] {
            update(sch.by_start[ai], 1.0, &mut s0, &mut s1, &mut s2);
            ai += 1;
        }
        while ri < sch.remove[e] {
            update(sch.by_stop[ri], -1.0, &mut s0, &mut s1, &mut s2);
            ri += 1;
        }
        let d = sch.events[e].len() as f64;
        for &i in &sch.events[e] {
            loglik += eta[i];
            for a in 0..p {
                grad[a] += t.x[i * p + a];
            }
        }
        loglik -= d * s0.ln();
        for a in 0..p {
            let ma = s1[a] / s0;
            grad[a] -= d * ma;
            for b in 0..p {
                info[(a, b)] += d * (s2[a * p + b] / s0 - ma * s1[b] / s0);
            }
        }
    }
    Derivatives { loglik, grad, info }
}

fn solve(info: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let p = info.nrows();
    let mut ridge = 0.0;
    loop {
        let m = info + DMatrix::identity(p, p) * ridge;
        if let Some(ch) = m.cholesky() {
            return ch.solve(rhs);
        }
        ridge = if ridge == 0.0 { 1e-10 * (1.0 + info.diagonal().amax()) } else { ridge * 10.0 };
    }
}

fn inverse(info: &DMatrix<f64>) -> DMatrix<f64> {
    let p = info.nrows();
    let mut out = DMatrix::zeros(p, p);
    for c in 0..p {
        let mut e = DVector::zeros(p);
        e[c] = 1.0;
        out.set_column(c, &solve(info, &e));
    }
    out
}

/// Newton-Raphson fit of the nuisance coefficients with step halving.
pub(crate) fn fit_null(table: SurvivalTable) -> NullFit {
    let p = table.p;
    let sch = Schedule::new(&table);
    let mut beta = vec![0.0; p];
    let mut cur = derivatives(&table, &sch, &beta);
    if p > 0 {
        for _ in 0..50 {
            let step = solve(&cur.info, &cur.grad);
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
                let next = derivatives(&table, &sch, &trial);
                if next.loglik.is_finite() && next.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() {
                    beta = trial;
                    cur = next;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted || step.amax() * scale < 1e-10 {
                break;
            }
        }
    }
    let weights = (0..table.start.len())
        .map(|i| (0..p).map(|c| table.x[i * p + c] * beta[c]).sum::<f64>().exp())
        .collect();
    let info_inv = if p > 0 { inverse(&cur.info) } else { DMatrix::zeros(0, 0) };
    NullFit {
        schedule: sch,
        weights,
        x: table.x,
        p,
        info_inv,
    }
}

impl NullFit {
    /// Efficient score and information for test covariate `z` given the
    /// fitted nuisance coefficients.
    pub fn score(&self, z: &[f64]) -> Score {
        let p = self.p;
        let sch = &self.schedule;
        let w = &self.weights;
        let (mut s0, mut sz, mut szz) = (0.0, 0.0, 0.0);
        let mut s1 = vec![0.0; p];
        let mut szx = vec![0.0; p];
        let (mut ai, mut ri) = (0, 0);
        let mut u = 0.0;
        let mut izz = 0.0;
        let mut izx = DVector::zeros(p);
        for e in 0..sch.len() {
            let mut apply = |i: usize, sign: f64| {
                let wi = sign * w[i];
                s0 += wi;
                sz += wi * z[i];
                szz += wi * z[i] * z[i];
                for a in 0..p {
                    let xa = self.x[i * p + a];
                    s1[a] += wi * xa;
                    szx[a] += wi * z[i] * xa;
                }
            };
            while ai < sch.add[e] {
                apply(sch.by_start[ai], 1.0);
                ai += 1;
            }
            while ri < sch.remove[e] {
                apply(sch.by_stop[ri], -1.0);
                ri += 1;
            }
            let d = sch.events[e].len() as f64;
            let zbar = sz / s0;
            u += sch.events[e].iter().map(|&i| z[i]).sum::<f64>() - d * zbar;
            izz += d * (szz / s0 - zbar * zbar);
            for a in 0..p {
                izx[a] += d * (szx[a] / s0 - zbar * s1[a] / s0);
            }
        }
        let info = if p > 0 {
            izz - (izx.transpose() * &self.info_inv * &izx)[(0, 0)]
        } else {
            izz
        };
        Score { u, info }
    }
}
