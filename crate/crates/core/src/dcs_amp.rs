//! Sparse recovery of masked beamspace subchannels.
//!
//! [`bg_amp`] is a scalar-variance GAMP solver with a Bernoulli-Gaussian
//! denoiser for one `N x N` plane observed through a [`CsOperator`].
//! [`em_bg_amp`] wraps it with EM learning of the prior (the "standard AMP"
//! baseline). [`dcs_amp`] couples the planes of one station along the
//! subarray index with a binary Markov chain on the support and a
//! Gauss-Markov chain on the amplitudes, running sum-product sweeps in both
//! directions with AMP as the within-plane solver.
#[allow(unused_imports)]
use num_traits::Float;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::acquisition::CsOperator;
use crate::codebook::SpectralMask;
use crate::error::{invalid, Error};
use crate::fft::fft2;
use crate::{CMatrix, CVector, Result, C64};

const EPS_MIN: f64 = 1e-4;
const EPS_MAX: f64 = 0.5;
const KAPPA_MAX: f64 = 0.99;
const RHO_MIN: f64 = 1e-12;
const PI_OUT_FLOOR: f64 = 1e-3;

/// Bernoulli-Gaussian prior with Markov dynamics across planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BgPrior {
    /// Stationary activity probability.
    pub eps: f64,
    /// Amplitude mean.
    pub zeta: C64,
    /// Amplitude variance.
    pub rho: f64,
    /// Lag-1 amplitude correlation.
    pub kappa: f64,
    /// `P(active | inactive on the previous plane)`.
    pub p_act: f64,
    pub noise_var: f64,
}

impl BgPrior {
    /// Weakly informative defaults; `rho` from the measurement energy.
    pub fn initial(y: &CVector, noise_var: f64) -> Self {
        let eps = 0.05;
        let m = y.len().max(1) as f64;
        BgPrior {
            eps,
            zeta: C64::new(0.0, 0.0),
            rho: (y.norm_squared() / (m * eps)).max(RHO_MIN),
            kappa: 0.5,
            p_act: 0.05,
            noise_var,
        }
        .clipped()
    }

    /// Deactivation probability that keeps `eps` stationary.
    pub fn p_deact(&self) -> f64 {
        if self.eps <= 0.0 {
            return 1.0;
        }
        (self.p_act * (1.0 - self.eps) / self.eps).clamp(0.0, 1.0)
    }

    pub fn clipped(mut self) -> Self {
        self.eps = self.eps.clamp(EPS_MIN, EPS_MAX);
        self.kappa = self.kappa.clamp(0.0, KAPPA_MAX);
        self.rho = self.rho.max(RHO_MIN);
        self.p_act = self.p_act.clamp(0.0, self.eps / (1.0 - self.eps));
        self
    }
}

/// Per-coefficient prior: activity, active-amplitude mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefPrior {
    pub pi: DMatrix<f64>,
    pub mean: CMatrix,
    pub var: DMatrix<f64>,
}

impl CoefPrior {
    pub fn uniform(n: usize, p: &BgPrior) -> Self {
        CoefPrior {
            pi: DMatrix::from_element(n, n, p.eps),
            mean: CMatrix::from_element(n, n, p.zeta),
            var: DMatrix::from_element(n, n, p.rho),
        }
    }

    pub fn grouped(n: usize, groups: &Groups, priors: &[BgPrior]) -> Self {
        let g = |i: usize| &priors[groups.assignment[i]];
        CoefPrior {
            pi: DMatrix::from_fn(n, n, |r, c| g(r + n * c).eps),
            mean: CMatrix::from_fn(n, n, |r, c| g(r + n * c).zeta),
            var: DMatrix::from_fn(n, n, |r, c| g(r + n * c).rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Weight on the new iterate; `None` means undamped.
    pub damping: Option<f64>,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig { max_iters: 25, tol: 1e-6, damping: None }
    }
}

/// Posterior of one plane plus the AMP pseudo-observation `r ~ CN(x, tau_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpOutput {
    pub mean: CMatrix,
    pub var: DMatrix<f64>,
    /// Posterior activity probability.
    pub pi_post: DMatrix<f64>,
    /// Active-conditional posterior mean and variance.
    pub active_mean: CMatrix,
    pub active_var: DMatrix<f64>,
    pub r: CMatrix,
    pub tau_r: f64,
    /// Onsager-corrected residual state, used for warm starts.
    pub s_hat: CVector,
    pub iterations: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Denoised {
    pi_post: f64,
    m: C64,
    v: f64,
    mean: C64,
    var: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Log likelihood ratio `ln CN(r; xi, psi + tau) - ln CN(r; 0, tau)`.
fn log_lr(r: C64, tau: f64, xi: C64, psi: f64) -> f64 {
    (tau / (psi + tau)).ln() - (r - xi).norm_sqr() / (psi + tau) + r.norm_sqr() / tau
}

/// Bernoulli-Gaussian denoiser. `lpi = logit(pi)`, `inv = 1 / (psi + tau)`
/// and `log_ratio = ln(tau * inv)` are precomputed by the caller.
#[allow(clippy::too_many_arguments)]
fn denoise_with(r: C64, tau: f64, inv_tau: f64, pi: f64, lpi: f64, xi: C64, psi: f64, inv: f64, log_ratio: f64) -> Denoised {
    let pi_post = if pi <= 0.0 {
        0.0
    } else if pi >= 1.0 {
        1.0
    } else {
        sigmoid(lpi + log_ratio - (r - xi).norm_sqr() * inv + r.norm_sqr() * inv_tau)
    };
    let m = (r * psi + xi * tau) * inv;
    let v = psi * tau * inv;
    let mean = m * pi_post;
    let var = (pi_post * (v + m.norm_sqr()) - mean.norm_sqr()).max(0.0);
    Denoised { pi_post, m, v, mean, var }
}

/// Exact posterior when the operator is unitary and noise-free.
fn exact_solution(y: &CVector, op: &CsOperator) -> AmpOutput {
    let n = op.n;
    let x = op.adjoint(y);
    let pi_post = x.map(|c| if c == C64::new(0.0, 0.0) { 0.0 } else { 1.0 });
    AmpOutput {
        mean: x.clone(),
        var: DMatrix::zeros(n, n),
        pi_post,
        active_mean: x.clone(),
        active_var: DMatrix::zeros(n, n),
        r: x,
        tau_r: 0.0,
        s_hat: CVector::zeros(y.len()),
        iterations: 0,
        diverged: false,
    }
}

fn blend(new: f64, old: f64, beta: f64) -> f64 {
    beta * new + (1.0 - beta) * old
}

/// One AMP run. Divergence (residual ten times above its running minimum)
/// stops the run early with `diverged` set and the best iterate returned.
pub fn bg_amp(
    y: &CVector,
    op: &CsOperator,
    prior: &CoefPrior,
    noise_var: f64,
    cfg: &AmpConfig,
    warm: Option<&AmpOutput>,
) -> Result<AmpOutput> {
    let n = op.n;
    let m = op.m();
    if m == 0 || y.len() != m {
        return Err(Error::Dimension("measurement length does not match the operator".into()));
    }
    if prior.pi.shape() != (n, n) {
        return Err(Error::Dimension("prior shape does not match the operator".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(invalid("noise variance must be nonnegative"));
    }
    if noise_var == 0.0 && op.is_complete() {
        return Ok(exact_solution(y, op));
    }
    let n2 = (n * n) as f64;
    let beta = cfg.damping.unwrap_or(1.0);
    let floor = 1e-14 * y.norm_squared() / m as f64 + 1e-300;

    let (mut x, mut tau_x, mut s_hat) = match warm {
        Some(w) => (w.mean.clone(), w.var.clone(), w.s_hat.clone()),
        None => {
            let mut x = CMatrix::zeros(n, n);
            let mut v = DMatrix::zeros(n, n);
            for i in 0..n * n {
                let (p, xi, psi) = (prior.pi[i], prior.mean[i], prior.var[i]);
                x[i] = xi * p;
                v[i] = (p * (psi + xi.norm_sqr()) - x[i].norm_sqr()).max(0.0);
            }
            (x, v, CVector::zeros(m))
        }
    };

    let lpi: Vec<f64> = prior.pi.iter().map(|&p| if p > 0.0 && p < 1.0 { logit(p) } else { 0.0 }).collect();
    let mut best: Option<AmpOutput> = None;
    let mut best_res = f64::INFINITY;
    let mut prev_res = f64::NAN;
    let mut out: Option<AmpOutput> = None;
    let mut diverged = false;

    for it in 0..cfg.max_iters {
        let ax = op.forward(&x);
        let res = (y - &ax).norm();
        if !res.is_finite() || res > 10.0 * best_res {
            diverged = true;
            break;
        }
        if res <= best_res {
            best_res = res;
            // `out` is overwritten below, so the best iterate can be moved out
            best = out.take();
        }
        if it > 1 && (res - prev_res).abs() <= cfg.tol * prev_res.max(1e-300) {
            break;
        }
        prev_res = res;

        let tau_p = tau_x.mean();
        let p_hat = &ax - &s_hat * C64::new(tau_p, 0.0);
        let denom = (tau_p + noise_var).max(floor);
        let s_new = (y - p_hat) / C64::new(denom, 0.0);
        s_hat = if beta < 1.0 {
            s_new * C64::new(beta, 0.0) + &s_hat * C64::new(1.0 - beta, 0.0)
        } else {
            s_new
        };
        let tau_r = n2 * denom / m as f64;
        let r = &x + op.adjoint(&s_hat) * C64::new(tau_r, 0.0);

        let mut pi_post = DMatrix::zeros(n, n);
        let mut am = CMatrix::zeros(n, n);
        let mut av = DMatrix::zeros(n, n);
        let inv_tau = 1.0 / tau_r;
        let mut cached_psi = f64::NAN;
        let (mut inv, mut log_ratio) = (0.0, 0.0);
        for i in 0..n * n {
            let psi = prior.var[i];
            if psi != cached_psi {
                cached_psi = psi;
                inv = 1.0 / (psi + tau_r);
                log_ratio = (tau_r * inv).ln();
            }
            let d = denoise_with(r[i], tau_r, inv_tau, prior.pi[i], lpi[i], prior.mean[i], psi, inv, log_ratio);
            x[i] = d.mean * beta + x[i] * (1.0 - beta);
            tau_x[i] = blend(d.var, tau_x[i], beta);
            pi_post[i] = d.pi_post;
            am[i] = d.m;
            av[i] = d.v;
        }
        out = Some(AmpOutput {
            mean: x.clone(),
            var: tau_x.clone(),
            pi_post,
            active_mean: am,
            active_var: av,
            r,
            tau_r,
            s_hat: s_hat.clone(),
            iterations: it + 1,
            diverged: false,
        });
    }
    let mut result = if diverged { best.or(out) } else { out.or(best) }.ok_or_else(|| {
        Error::Numerical("AMP produced no iterate".into())
    })?;
    result.diverged = diverged;
    Ok(result)
}

/// Runs [`bg_amp`] and, if it diverges, retries from scratch with damping 0.5.
pub fn bg_amp_with_retry(
    y: &CVector,
    op: &CsOperator,
    prior: &CoefPrior,
    noise_var: f64,
    cfg: &AmpConfig,
    warm: Option<&AmpOutput>,
) -> Result<AmpOutput> {
    let first = bg_amp(y, op, prior, noise_var, cfg, warm)?;
    if !first.diverged || cfg.damping.is_some() {
        return Ok(first);
    }
    let damped = AmpConfig { damping: Some(0.5), ..*cfg };
    bg_amp(y, op, prior, noise_var, &damped, None)
}

/// Coefficient grouping shared by every plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    /// Group id per flat (column-major) coefficient index.
    pub assignment: Vec<usize>,
    pub n_groups: usize,
}

impl Groups {
    pub fn single(n2: usize) -> Self {
        Groups { assignment: vec![0; n2], n_groups: 1 }
    }

    pub fn members(&self, g: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == g).collect()
    }
}

/// Splits coefficient locations by pooled energy: `S1` is the smallest set
/// of strongest locations holding at least `delta_e` of the total energy.
pub fn group_active(estimates: &[CMatrix], delta_e: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(delta_e > 0.0 && delta_e <= 1.0) {
        return Err(invalid("delta_E must lie in (0, 1]"));
    }
    let first = estimates.first().ok_or_else(|| invalid("no estimates to group"))?;
    let n2 = first.len();
    let mut energy = vec![0.0; n2];
    for s in estimates {
        if s.len() != n2 {
            return Err(Error::Dimension("estimates differ in size".into()));
        }
        for (e, c) in energy.iter_mut().zip(s.iter()) {
            *e += c.norm_sqr();
        }
    }
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| energy[i]).sum();
    let mut s1 = Vec::new();
    if total > 0.0 {
        let mut cum = 0.0;
        for &i in &order {
            if energy[i] == 0.0 {
                break;
            }
            s1.push(i);
            cum += energy[i];
            if cum >= delta_e * total {
                break;
            }
        }
    }
    s1.sort_unstable();
    let mut in_s1 = vec![false; n2];
    for &i in &s1 {
        in_s1[i] = true;
    }
    let s2 = (0..n2).filter(|&i| !in_s1[i]).collect();
    Ok((s1, s2))
}

impl Groups {
    /// Two-group assignment: group 0 is `S1`, group 1 is `S2`.
    pub fn from_split(n2: usize, s1: &[usize]) -> Self {
        let mut assignment = vec![1; n2];
        for &i in s1 {
            assignment[i] = 0;
        }
        Groups { assignment, n_groups: 2 }
    }
}

/// Sufficient statistics of one plane's posterior for EM.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePosterior {
    pub pi: DMatrix<f64>,
    pub mean: CMatrix,
    pub var: DMatrix<f64>,
}

impl From<&AmpOutput> for PlanePosterior {
    fn from(o: &AmpOutput) -> Self {
        PlanePosterior { pi: o.pi_post.clone(), mean: o.active_mean.clone(), var: o.active_var.clone() }
    }
}

/// Closed-form EM re-estimates per group. Planes are ordered along the
/// Markov chain; `kappa` and `p_act` need at least two planes and are left
/// unchanged otherwise. The noise variance is never re-estimated.
pub fn em_update(posteriors: &[PlanePosterior], groups: &Groups, priors: &[BgPrior]) -> Vec<BgPrior> {
    let mut out = priors.to_vec();
    let k_planes = posteriors.len();
    if k_planes == 0 {
        return out;
    }
    for (g, prior) in out.iter_mut().enumerate().take(groups.n_groups) {
        let members = groups.members(g);
        if members.is_empty() {
            continue;
        }
        let mut s_pi = 0.0;
        let mut s_pm = C64::new(0.0, 0.0);
        for p in posteriors {
            for &i in &members {
                s_pi += p.pi[i];
                s_pm += p.mean[i] * p.pi[i];
            }
        }
        let count = (k_planes * members.len()) as f64;
        let mut next = *prior;
        next.eps = s_pi / count;
        if s_pi > 1e-12 {
            next.zeta = s_pm / s_pi;
            let mut s_var = 0.0;
            for p in posteriors {
                for &i in &members {
                    s_var += p.pi[i] * ((p.mean[i] - next.zeta).norm_sqr() + p.var[i]);
                }
            }
            next.rho = s_var / s_pi;
        }
        if k_planes >= 2 {
            let (mut num01, mut den01) = (0.0, 0.0);
            let (mut cross, mut e_prev, mut e_cur) = (0.0, 0.0, 0.0);
            for w in posteriors.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                for &i in &members {
                    num01 += (1.0 - a.pi[i]) * b.pi[i];
                    den01 += 1.0 - a.pi[i];
                    let wt = a.pi[i] * b.pi[i];
                    let da = a.mean[i] - next.zeta;
                    let db = b.mean[i] - next.zeta;
                    cross += wt * (db * da.conj()).re;
                    e_prev += wt * (da.norm_sqr() + a.var[i]);
                    e_cur += wt * (db.norm_sqr() + b.var[i]);
                }
            }
            if den01 > 1e-12 {
                next.p_act = num01 / den01;
            }
            if e_prev > 0.0 && e_cur > 0.0 {
                next.kappa = cross / (e_prev * e_cur).sqrt();
            }
        }
        *prior = next.clipped();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub rounds: usize,
    /// Stop once every parameter moves by less than this relative amount.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { rounds: 20, tol: 1e-4 }
    }
}

fn prior_moved(a: &BgPrior, b: &BgPrior, tol: f64) -> bool {
    let rel = |x: f64, y: f64| (x - y).abs() > tol * x.abs().max(y.abs()).max(1e-300);
    rel(a.eps, b.eps) || rel(a.rho, b.rho) || (a.zeta - b.zeta).norm() > tol * a.rho.sqrt()
}

/// Standard AMP: one plane, one group, prior learned by EM with warm starts.
pub fn em_bg_amp(
    y: &CVector,
    op: &CsOperator,
    noise_var: f64,
    amp: &AmpConfig,
    em: &EmConfig,
) -> Result<(AmpOutput, BgPrior)> {
    let n = op.n;
    let groups = Groups::single(n * n);
    let mut prior = BgPrior::initial(y, noise_var);
    let mut warm: Option<AmpOutput> = None;
    let mut last = None;
    for _ in 0..em.rounds.max(1) {
        let coef = CoefPrior::uniform(n, &prior);
        let out = bg_amp_with_retry(y, op, &coef, noise_var, amp, warm.as_ref())?;
        if out.tau_r == 0.0 {
            return Ok((out, prior));
        }
        let next = em_update(&[PlanePosterior::from(&out)], &groups, &[prior])[0];
        let moved = prior_moved(&prior, &next, em.tol);
        prior = next;
        warm = if out.diverged { None } else { Some(out.clone()) };
        last = Some(out);
        if !moved {
            break;
        }
    }
    let out = last.ok_or_else(|| Error::Numerical("EM produced no estimate".into()))?;
    Ok((out, prior))
}

/// Posterior means per plane plus the learned per-group priors.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamspaceEstimate {
    pub s_hat: Vec<CMatrix>,
    pub var: Vec<DMatrix<f64>>,
    pub priors: Vec<BgPrior>,
    /// Planes whose final AMP run diverged.
    pub diverged: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcsConfig {
    pub passes: usize,
    pub amp: AmpConfig,
    /// Re-estimate the group priors by EM after every pass.
    pub learn: bool,
    /// Start each plane's inner AMP from its state in the previous visit.
    pub warm_start: bool,
}

impl Default for DcsConfig {
    fn default() -> Self {
        DcsConfig { passes: 12, amp: AmpConfig::default(), learn: true, warm_start: false }
    }
}

/// Gaussian message `CN(mean, var)`; `var = inf` is uninformative.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Gauss {
    mean: C64,
    var: f64,
}

impl Gauss {
    const FLAT: Gauss = Gauss { mean: C64 { re: 0.0, im: 0.0 }, var: f64::INFINITY };

    fn product(self, o: Gauss) -> Gauss {
        if self.var.is_infinite() {
            return o;
        }
        if o.var.is_infinite() {
            return self;
        }
        if self.var == 0.0 {
            return self;
        }
        if o.var == 0.0 {
            return o;
        }
        let var = self.var * o.var / (self.var + o.var);
        let mean = (self.mean * o.var + o.mean * self.var) / (self.var + o.var);
        Gauss { mean, var }
    }
}

fn norm_product(a: f64, b: f64) -> f64 {
    let on = a * b;
    let off = (1.0 - a) * (1.0 - b);
    if on + off <= 0.0 {
        0.5
    } else {
        on / (on + off)
    }
}

/// Messages leaving a plane toward its neighbours, computed from the AMP
/// pseudo-observation and the combined incoming prior.
fn outgoing(out: &AmpOutput, prior: &CoefPrior) -> (Vec<f64>, Vec<Gauss>) {
    let n2 = out.r.len();
    let mut pi_out = vec![0.5; n2];
    let mut amp = vec![Gauss::FLAT; n2];
    if out.diverged {
        return (pi_out, amp);
    }
    let tau = out.tau_r;
    for i in 0..n2 {
        if tau == 0.0 {
            let active = out.r[i] != C64::new(0.0, 0.0);
            pi_out[i] = if active { 1.0 } else { 0.0 };
            amp[i] = Gauss { mean: out.r[i], var: 0.0 };
            continue;
        }
        pi_out[i] = sigmoid(log_lr(out.r[i], tau, prior.mean[i], prior.var[i]));
        let w = out.pi_post[i].max(PI_OUT_FLOOR);
        amp[i] = Gauss { mean: out.r[i], var: tau / w };
    }
    (pi_out, amp)
}

/// EM update of `P(active | inactive)` per group from the pairwise support
/// posteriors of adjacent planes: the forward message and plane evidence on
/// one side, the transition, and the plane evidence and backward message on
/// the other. `None` for groups without inactive mass.
fn support_transitions(
    fwd_pi: &[Vec<f64>],
    bwd_pi: &[Vec<f64>],
    pi_outs: &[Vec<f64>],
    groups: &Groups,
    priors: &[BgPrior],
) -> Vec<Option<f64>> {
    let mut num = vec![0.0; groups.n_groups];
    let mut den = vec![0.0; groups.n_groups];
    for k in 0..pi_outs.len().saturating_sub(1) {
        for (i, &g) in groups.assignment.iter().enumerate() {
            let p = priors[g];
            let (p01, p10) = (p.p_act, p.p_deact());
            let a1 = norm_product(fwd_pi[k][i], pi_outs[k][i]);
            let b1 = norm_product(pi_outs[k + 1][i], bwd_pi[k + 1][i]);
            let (a0, b0) = (1.0 - a1, 1.0 - b1);
            let j00 = a0 * (1.0 - p01) * b0;
            let j01 = a0 * p01 * b1;
            let j10 = a1 * p10 * b0;
            let j11 = a1 * (1.0 - p10) * b1;
            let z = j00 + j01 + j10 + j11;
            if z > 0.0 {
                num[g] += j01 / z;
                den[g] += (j00 + j01) / z;
            }
        }
    }
    num.iter().zip(&den).map(|(n, d)| (*d > 1e-12).then(|| n / d)).collect()
}

/// Dynamic compressive sensing over the planes of one station.
pub fn dcs_amp(
    ys: &[CVector],
    ops: &[CsOperator],
    groups: &Groups,
    init: &[BgPrior],
    noise_var: f64,
    cfg: &DcsConfig,
) -> Result<BeamspaceEstimate> {
    let k_planes = ys.len();
    if k_planes < 2 || ops.len() != k_planes {
        return Err(invalid("DCS-AMP needs at least two planes with one operator each"));
    }
    let n = ops[0].n;
    let n2 = n * n;
    if groups.assignment.len() != n2 || init.len() < groups.n_groups {
        return Err(Error::Dimension("groups or priors do not match the plane size".into()));
    }
    let mut priors: Vec<BgPrior> = init.iter().map(|p| p.clipped()).collect();
    let stationary = |priors: &[BgPrior], i: usize| priors[groups.assignment[i]];

    let mut fwd_pi = vec![vec![0.0; n2]; k_planes];
    let mut fwd_amp = vec![vec![Gauss::FLAT; n2]; k_planes];
    let mut bwd_pi = vec![vec![0.5; n2]; k_planes];
    let mut bwd_amp = vec![vec![Gauss::FLAT; n2]; k_planes];
    let mut outputs: Vec<Option<AmpOutput>> = vec![None; k_planes];
    let mut pi_outs = vec![vec![0.5; n2]; k_planes];

    let combined = |fp: &[f64], fa: &[Gauss], bp: &[f64], ba: &[Gauss]| {
        let mut c = CoefPrior {
            pi: DMatrix::zeros(n, n),
            mean: CMatrix::zeros(n, n),
            var: DMatrix::zeros(n, n),
        };
        for i in 0..n2 {
            c.pi[i] = norm_product(fp[i], bp[i]);
            let g = fa[i].product(ba[i]);
            c.mean[i] = g.mean;
            c.var[i] = g.var.max(RHO_MIN);
        }
        c
    };

    for _pass in 0..cfg.passes.max(1) {
        for i in 0..n2 {
            let p = stationary(&priors, i);
            fwd_pi[0][i] = p.eps;
            fwd_amp[0][i] = Gauss { mean: p.zeta, var: p.rho };
        }
        // forward sweep
        for k in 0..k_planes {
            let prior = combined(&fwd_pi[k], &fwd_amp[k], &bwd_pi[k], &bwd_amp[k]);
            let warm = if cfg.warm_start { outputs[k].as_ref().filter(|o| !o.diverged) } else { None };
            let out = bg_amp_with_retry(&ys[k], &ops[k], &prior, noise_var, &cfg.amp, warm)?;
            let (pi_out, amp_out) = outgoing(&out, &prior);
            if k + 1 < k_planes {
                for i in 0..n2 {
                    let p = stationary(&priors, i);
                    let (p01, p10) = (p.p_act, p.p_deact());
                    let b = norm_product(fwd_pi[k][i], pi_out[i]);
                    fwd_pi[k + 1][i] = b * (1.0 - p10) + (1.0 - b) * p01;
                    let g = fwd_amp[k][i].product(amp_out[i]);
                    fwd_amp[k + 1][i] = if g.var.is_infinite() {
                        Gauss { mean: p.zeta, var: p.rho }
                    } else {
                        Gauss {
                            mean: p.zeta + (g.mean - p.zeta) * p.kappa,
                            var: p.kappa * p.kappa * g.var + (1.0 - p.kappa * p.kappa) * p.rho,
                        }
                    };
                }
            }
            outputs[k] = Some(out);
        }
        // backward sweep
        for k in (0..k_planes).rev() {
            let prior = combined(&fwd_pi[k], &fwd_amp[k], &bwd_pi[k], &bwd_amp[k]);
            let warm = if cfg.warm_start { outputs[k].as_ref().filter(|o| !o.diverged) } else { None };
            let out = bg_amp_with_retry(&ys[k], &ops[k], &prior, noise_var, &cfg.amp, warm)?;
            let (pi_out, amp_out) = outgoing(&out, &prior);
            pi_outs[k].clone_from(&pi_out);
            if k > 0 {
                for i in 0..n2 {
                    let p = stationary(&priors, i);
                    let (p01, p10) = (p.p_act, p.p_deact());
                    let e = norm_product(bwd_pi[k][i], pi_out[i]);
                    let on = (1.0 - p10) * e + p10 * (1.0 - e);
                    let off = p01 * e + (1.0 - p01) * (1.0 - e);
                    bwd_pi[k - 1][i] = if on + off > 0.0 { on / (on + off) } else { 0.5 };
                    let g = bwd_amp[k][i].product(amp_out[i]);
                    bwd_amp[k - 1][i] = if g.var.is_infinite() || p.kappa <= 0.0 {
                        Gauss::FLAT
                    } else {
                        Gauss {
                            mean: p.zeta + (g.mean - p.zeta) / p.kappa,
                            var: (g.var + (1.0 - p.kappa * p.kappa) * p.rho) / (p.kappa * p.kappa),
                        }
                    };
                }
            }
            outputs[k] = Some(out);
        }
        if cfg.learn {
            let posts: Vec<PlanePosterior> =
                outputs.iter().flatten().filter(|o| !o.diverged).map(PlanePosterior::from).collect();
            if posts.len() == k_planes {
                let next = em_update(&posts, groups, &priors);
                let p_act = support_transitions(&fwd_pi, &bwd_pi, &pi_outs, groups, &priors);
                priors = next
                    .into_iter()
                    .zip(p_act)
                    .map(|(mut p, a)| {
                        if let Some(a) = a {
                            p.p_act = a;
                        }
                        p.clipped()
                    })
                    .collect();
            }
        }
        if outputs.iter().flatten().all(|o| o.tau_r == 0.0) {
            break;
        }
    }

    let outputs: Vec<AmpOutput> = outputs.into_iter().flatten().collect();
    Ok(BeamspaceEstimate {
        s_hat: outputs.iter().map(|o| o.mean.clone()).collect(),
        var: outputs.iter().map(|o| o.var.clone()).collect(),
        diverged: outputs.iter().map(|o| o.diverged).collect(),
        priors,
    })
}

/// `X = Lambda^{-1} S Lambda^{-1}` and `H = U X U` for every plane.
pub fn unmask_reconstruct(s_hat: &[CMatrix], mask: &SpectralMask) -> (Vec<CMatrix>, Vec<CMatrix>) {
    let xs: Vec<CMatrix> = s_hat.iter().map(|s| mask.unapply(s)).collect();
    let hs = xs.iter().map(fft2).collect();
    (xs, hs)
}

/// `||est - truth||_F^2 / ||truth||_F^2`.
pub fn nmse(est: &CMatrix, truth: &CMatrix) -> f64 {
    (est - truth).norm_squared() / truth.norm_squared()
}
