//! Executable versions of the structural claims about causal-invariant
//! prediction. Each claim is checked by exact enumeration over a small set of
//! deterministic test predictors, feature maps and parameter points.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    bayes_predictor, exact_loss, fuse, internal_table, is_causal_invariant, label_marginal, optimal_causal_faithful,
    random_simplex, support_condition, PredictorTable,
};
use crate::cld::{CldFamily, DomainSpec, Variant};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClaimId {
    P1,
    P2,
    T1,
    T2,
    T3,
    P4,
    P5,
    P6,
    P7,
    P8,
    T5,
}

pub const CLAIMS: [ClaimId; 11] = [
    ClaimId::P1,
    ClaimId::P2,
    ClaimId::T1,
    ClaimId::T2,
    ClaimId::T3,
    ClaimId::P4,
    ClaimId::P5,
    ClaimId::P6,
    ClaimId::P7,
    ClaimId::P8,
    ClaimId::T5,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClaimStatus {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
    #[serde(rename = "NOT-APPLICABLE")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResult {
    pub id: ClaimId,
    pub status: ClaimStatus,
    pub deviation: f64,
    pub witness: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub claims: Vec<ClaimResult>,
}

impl TheoremReport {
    pub fn get(&self, id: ClaimId) -> &ClaimResult {
        self.claims.iter().find(|c| c.id == id).expect("every claim is reported")
    }

    pub fn any_fail(&self) -> bool {
        self.claims.iter().any(|c| c.status == ClaimStatus::Fail)
    }

    /// Largest deviation among claims that ran.
    pub fn max_deviation(&self, id: ClaimId) -> f64 {
        self.get(id).deviation
    }
}

/// Finite-difference tolerance for the gradient-invariance claim.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const N_TEST_TABLES: u64 = 6;

/// Running maximum that remembers where it was attained (first wins).
struct Worst {
    value: f64,
    witness: Option<Vec<usize>>,
}

impl Worst {
    fn new() -> Self {
        Self { value: 0.0, witness: None }
    }

    fn see(&mut self, value: f64, witness: impl FnOnce() -> Vec<usize>) {
        if value > self.value || (value.is_nan() && !self.value.is_nan()) {
            self.value = value;
            self.witness = Some(witness());
        }
    }

    fn finish(self, id: ClaimId, tol: f64) -> ClaimResult {
        let pass = self.value <= tol;
        ClaimResult {
            id,
            status: if pass { ClaimStatus::Pass } else { ClaimStatus::Fail },
            deviation: self.value,
            witness: if pass { None } else { self.witness },
        }
    }
}

fn not_applicable(id: ClaimId) -> ClaimResult {
    ClaimResult { id, status: ClaimStatus::NotApplicable, deviation: 0.0, witness: None }
}

struct Ctx<'a> {
    family: &'a CldFamily,
    classes: Vec<usize>,
    n_classes_inv: usize,
    stream: Stream,
}

impl Ctx<'_> {
    /// Random causal-invariant tables: one random row per invariance class.
    fn invariant_tables(&self) -> Vec<PredictorTable> {
        let s = self.family.spaces();
        let k = s.n_classes;
        let mut out = vec![PredictorTable::uniform(s.n_obs, k)];
        for t in 0..N_TEST_TABLES {
            let mut rng = self.stream.named("invariant-table").at(t);
            let rows: Vec<Vec<f64>> = (0..self.n_classes_inv).map(|_| random_simplex(&mut rng, k)).collect();
            let probs = self.classes.iter().flat_map(|&g| rows[g].iter().copied()).collect();
            out.push(internal_table(s.n_obs, k, probs));
        }
        out
    }

    fn constant_tables(&self) -> Vec<PredictorTable> {
        let s = self.family.spaces();
        (0..N_TEST_TABLES)
            .map(|t| {
                let mut rng = self.stream.named("constant-table").at(t);
                let row = random_simplex(&mut rng, s.n_classes);
                internal_table(s.n_obs, s.n_classes, row.iter().copied().cycle().take(s.n_obs * s.n_classes).collect())
            })
            .collect()
    }

    /// Random feature maps that factor through the invariance classes.
    fn feature_maps(&self) -> Vec<Vec<usize>> {
        let width = self.n_classes_inv.max(2);
        (0..3u64)
            .map(|t| {
                let mut rng = self.stream.named("feature-map").at(t);
                let g: Vec<usize> =
                    (0..self.n_classes_inv).map(|_| (rng.random::<u64>() % width as u64) as usize).collect();
                self.classes.iter().map(|&c| g[c]).collect()
            })
            .collect()
    }

    /// Core values reachable from each observation's class; the core each
    /// reachable row of an invariant table stands for.
    fn class_of_core(&self, c: usize) -> usize {
        let s = self.family.spaces();
        for n in 0..s.n_noncore {
            if let Some(x) = self.family.p_x(c, n).iter().position(|&p| p > 0.0) {
                return self.classes[x];
            }
        }
        unreachable!("generation rows are distributions")
    }
}

/// Runs every claim. `domains` may mix variants: the first two non-CLD3
/// domains act as source and target, the CLD2-tagged domains form the
/// risk/gradient/feature-matching group and the CLD3-tagged domains the
/// class-conditional group.
pub fn verify_theorems(family: &CldFamily, domains: &[DomainSpec], tol: f64) -> TheoremReport {
    let classes = family.invariance_classes();
    let n_classes_inv = classes.iter().copied().max().map_or(0, |m| m + 1);
    let ctx = Ctx { family, classes, n_classes_inv, stream: Stream::new(0x0c1d_1ab0).named("oracle") };
    let causal: Vec<&DomainSpec> = domains.iter().filter(|d| d.variant() != Variant::Cld3).collect();
    let cld2: Vec<&DomainSpec> = domains.iter().filter(|d| d.variant() == Variant::Cld2).collect();
    let cld3: Vec<&DomainSpec> = domains.iter().filter(|d| d.variant() == Variant::Cld3).collect();
    let source = causal.first().copied();
    let target = causal.get(1).copied();

    let claims = vec![
        claim_p1(&ctx, tol),
        claim_p2(&ctx, tol),
        source.map_or(not_applicable(ClaimId::T1), |s| claim_t1(&ctx, s, tol)),
        source.map_or(not_applicable(ClaimId::T2), |s| claim_t2(&ctx, s, tol)),
        match (source, target) {
            (Some(s), Some(t)) => claim_t3(&ctx, s, t, tol),
            _ => not_applicable(ClaimId::T3),
        },
        claim_p4(&ctx, &cld2, tol),
        claim_p5(&ctx, &cld2),
        claim_p6(&ctx, &cld2, tol),
        claim_p7(&ctx, &cld3, tol),
        claim_p8(&ctx, &cld2, tol),
        source.map_or(not_applicable(ClaimId::T5), |s| claim_t5(&ctx, s, target, tol)),
    ];
    TheoremReport { claims }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Invariant prediction ⇒ fused rows do not depend on the non-core factor.
fn claim_p1(ctx: &Ctx, tol: f64) -> ClaimResult {
    let s = ctx.family.spaces();
    let mut worst = Worst::new();
    for (t, table) in ctx.invariant_tables().iter().enumerate() {
        debug_assert!(is_causal_invariant(ctx.family, table, 1e-12).invariant);
        let fused = fuse(ctx.family, table);
        for c in 0..s.n_core {
            for n in 0..s.n_noncore {
                for nt in 0..s.n_noncore {
                    worst.see(max_abs(fused.row(c, n), fused.row(c, nt)), || vec![t, c, n, nt]);
                }
            }
        }
    }
    worst.finish(ClaimId::P1, tol)
}

/// Invariant prediction factors through the core: mixing the fused rows with
/// a full-support reference domain reproduces every reachable row.
fn claim_p2(ctx: &Ctx, tol: f64) -> ClaimResult {
    let s = ctx.family.spaces();
    let k = s.n_classes;
    let ref_weight = 1.0 / s.n_noncore as f64;
    let mut worst = Worst::new();
    for (t, table) in ctx.invariant_tables().iter().enumerate() {
        let fused = fuse(ctx.family, table);
        for c in 0..s.n_core {
            let mut p0 = vec![0.0; k];
            for n in 0..s.n_noncore {
                for (o, &f) in p0.iter_mut().zip(fused.row(c, n)) {
                    *o += ref_weight * f;
                }
            }
            for n in 0..s.n_noncore {
                for (x, &px) in ctx.family.p_x(c, n).iter().enumerate() {
                    if px > 0.0 {
                        worst.see(max_abs(table.row(x), &p0), || vec![t, c, n, x]);
                    }
                }
            }
        }
    }
    worst.finish(ClaimId::P2, tol)
}

/// A domain with the same core marginal as `domain` and a different
/// non-core conditional.
fn shifted_noncore(ctx: &Ctx, domain: &DomainSpec) -> DomainSpec {
    let s = ctx.family.spaces();
    let nn = s.n_noncore;
    let p_c = domain.p_c();
    let mut p_cn = Vec::with_capacity(s.n_core * nn);
    for (c, &pc) in p_c.iter().enumerate() {
        let raw: Vec<f64> = (0..nn).map(|n| (1 + (n + c) % nn) as f64).collect();
        let total: f64 = raw.iter().sum();
        p_cn.extend(raw.iter().map(|r| pc * r / total));
    }
    let total: f64 = p_cn.iter().sum();
    p_cn.iter_mut().for_each(|p| *p /= total);
    DomainSpec::joint_flat(s, usize::MAX, Variant::Cld1, p_cn, 1e-9).expect("normalised")
}

/// Causal-faithful loss depends only on the core marginal and equals the
/// core-level cross-entropy.
fn claim_t1(ctx: &Ctx, source: &DomainSpec, tol: f64) -> ClaimResult {
    let other = shifted_noncore(ctx, source);
    let p_c = source.p_c();
    let mut worst = Worst::new();
    for (t, table) in ctx.invariant_tables().iter().enumerate() {
        let a = exact_loss(ctx.family, source, table);
        let b = exact_loss(ctx.family, &other, table);
        let mut formula = 0.0;
        for (c, &pc) in p_c.iter().enumerate() {
            if pc == 0.0 {
                continue;
            }
            let row =
                table.row(ctx.classes.iter().position(|&g| g == ctx.class_of_core(c)).expect("class has a member"));
            for (y, &py) in ctx.family.p_y(c).iter().enumerate() {
                if py > 0.0 {
                    formula -= pc * py * libm::log(row[y]);
                }
            }
        }
        worst.see((a - b).abs().max((a - formula).abs()), || vec![t]);
    }
    worst.finish(ClaimId::T1, tol)
}

/// The source-optimal causal-faithful predictor equals `P*(Y|x^c)` on the
/// source core support, and no causal-faithful table beats it.
fn claim_t2(ctx: &Ctx, source: &DomainSpec, tol: f64) -> ClaimResult {
    let s = ctx.family.spaces();
    let opt = optimal_causal_faithful(ctx.family, source);
    let l_opt = exact_loss(ctx.family, source, &opt.table);
    let mut worst = Worst::new();
    if opt.degenerate {
        for (t, q) in ctx.constant_tables().iter().enumerate() {
            worst.see(l_opt - exact_loss(ctx.family, source, q), || vec![t]);
        }
        return worst.finish(ClaimId::T2, tol);
    }
    let p_c = source.p_c();
    for c in 0..s.n_core {
        if p_c[c] == 0.0 {
            continue;
        }
        for n in 0..s.n_noncore {
            for (x, &px) in ctx.family.p_x(c, n).iter().enumerate() {
                if px > 0.0 {
                    worst.see(max_abs(opt.table.row(x), ctx.family.p_y(c)), || vec![c, n, x]);
                }
            }
        }
    }
    let bayes = bayes_predictor(ctx.family, source);
    worst.see(l_opt - exact_loss(ctx.family, source, &bayes.table), Vec::new);
    for (t, q) in ctx.invariant_tables().iter().enumerate() {
        worst.see(l_opt - exact_loss(ctx.family, source, q), || vec![t]);
    }
    worst.finish(ClaimId::T2, tol)
}

/// Under core-support containment the source-optimal causal-faithful
/// predictor is also target-optimal.
fn claim_t3(ctx: &Ctx, source: &DomainSpec, target: &DomainSpec, tol: f64) -> ClaimResult {
    if !support_condition(source, target).cond3 {
        return not_applicable(ClaimId::T3);
    }
    let opt = optimal_causal_faithful(ctx.family, source);
    let l_opt = exact_loss(ctx.family, target, &opt.table);
    let mut worst = Worst::new();
    if opt.degenerate {
        let ls = label_marginal(ctx.family, source);
        let lt = label_marginal(ctx.family, target);
        if max_abs(&ls, &lt) > tol {
            return not_applicable(ClaimId::T3);
        }
        for (t, q) in ctx.constant_tables().iter().enumerate() {
            worst.see(l_opt - exact_loss(ctx.family, target, q), || vec![t]);
        }
        return worst.finish(ClaimId::T3, tol);
    }
    for (t, q) in ctx.invariant_tables().iter().enumerate() {
        worst.see(l_opt - exact_loss(ctx.family, target, q), || vec![t]);
    }
    let bayes_t = bayes_predictor(ctx.family, target);
    worst.see((l_opt - exact_loss(ctx.family, target, &bayes_t.table)).abs(), Vec::new);
    worst.finish(ClaimId::T3, tol)
}

/// Invariant prediction ⇒ equal losses across CLD2 domains.
fn claim_p4(ctx: &Ctx, group: &[&DomainSpec], tol: f64) -> ClaimResult {
    if group.len() < 2 {
        return not_applicable(ClaimId::P4);
    }
    let mut worst = Worst::new();
    for (t, table) in ctx.invariant_tables().iter().enumerate() {
        let first = exact_loss(ctx.family, group[0], table);
        for d in &group[1..] {
            let l = exact_loss(ctx.family, d, table);
            worst.see((l - first).abs(), || vec![t, group[0].domain_id, d.domain_id]);
        }
    }
    worst.finish(ClaimId::P4, tol)
}

/// Exact loss of the causal-faithful chart: one logit vector per invariance
/// class, softmax per observation.
fn chart_loss(ctx: &Ctx, domain: &DomainSpec, logits: &[f64]) -> f64 {
    let s = ctx.family.spaces();
    let k = s.n_classes;
    let mut probs = Vec::with_capacity(s.n_obs * k);
    for &g in &ctx.classes {
        probs.extend(softmax(&logits[g * k..(g + 1) * k]));
    }
    exact_loss(ctx.family, domain, &internal_table(s.n_obs, k, probs))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp(v - m)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Strongly invariant models have equal loss gradients across CLD2 domains.
fn claim_p5(ctx: &Ctx, group: &[&DomainSpec]) -> ClaimResult {
    if group.len() < 2 {
        return not_applicable(ClaimId::P5);
    }
    let dim = ctx.n_classes_inv * ctx.family.spaces().n_classes;
    let mut worst = Worst::new();
    for point in 0..3u64 {
        let mut rng = ctx.stream.named("chart-point").at(point);
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let grads: Vec<Vec<f64>> = group
            .iter()
            .map(|d| {
                (0..dim)
                    .map(|i| {
                        let mut up = theta.clone();
                        let mut down = theta.clone();
                        up[i] += FD_STEP;
                        down[i] -= FD_STEP;
                        (chart_loss(ctx, d, &up) - chart_loss(ctx, d, &down)) / (2.0 * FD_STEP)
                    })
                    .collect()
            })
            .collect();
        for (j, g) in grads.iter().enumerate().skip(1) {
            for i in 0..dim {
                worst.see((g[i] - grads[0][i]).abs(), || vec![point as usize, group[j].domain_id, i]);
            }
        }
    }
    worst.finish(ClaimId::P5, GRADIENT_TOLERANCE)
}

fn feature_marginal(ctx: &Ctx, domain: &DomainSpec, map: &[usize], width: usize) -> Vec<f64> {
    let k = ctx.family.spaces().n_classes;
    let pxy = domain.p_xy(ctx.family);
    let mut out = vec![0.0; width];
    for (x, &h) in map.iter().enumerate() {
        out[h] += pxy[x * k..(x + 1) * k].iter().sum::<f64>();
    }
    out
}

/// Invariant features ⇒ equal feature distributions across CLD2 domains.
fn claim_p6(ctx: &Ctx, group: &[&DomainSpec], tol: f64) -> ClaimResult {
    if group.len() < 2 {
        return not_applicable(ClaimId::P6);
    }
    let width = ctx.n_classes_inv.max(2);
    let mut worst = Worst::new();
    for (m, map) in ctx.feature_maps().iter().enumerate() {
        let first = feature_marginal(ctx, group[0], map, width);
        for d in &group[1..] {
            let other = feature_marginal(ctx, d, map, width);
            worst.see(max_abs(&first, &other), || vec![m, group[0].domain_id, d.domain_id]);
        }
    }
    worst.finish(ClaimId::P6, tol)
}

/// `P^d(H | Y = y)` rows, `None` for classes with no mass.
fn feature_conditionals(ctx: &Ctx, domain: &DomainSpec, map: &[usize], width: usize) -> Vec<Option<Vec<f64>>> {
    let k = ctx.family.spaces().n_classes;
    let pxy = domain.p_xy(ctx.family);
    (0..k)
        .map(|y| {
            let mut row = vec![0.0; width];
            for (x, &h) in map.iter().enumerate() {
                row[h] += pxy[x * k + y];
            }
            let total: f64 = row.iter().sum();
            (total > 0.0).then(|| row.into_iter().map(|v| v / total).collect())
        })
        .collect()
}

/// Invariant features ⇒ equal class-conditional feature distributions and
/// equal class-prior-normalised marginals across CLD3 domains.
fn claim_p7(ctx: &Ctx, group: &[&DomainSpec], tol: f64) -> ClaimResult {
    if group.len() < 2 {
        return not_applicable(ClaimId::P7);
    }
    let k = ctx.family.spaces().n_classes;
    let width = ctx.n_classes_inv.max(2);
    let mut worst = Worst::new();
    for (m, map) in ctx.feature_maps().iter().enumerate() {
        let conds: Vec<Vec<Option<Vec<f64>>>> =
            group.iter().map(|d| feature_conditionals(ctx, d, map, width)).collect();
        for j in 1..group.len() {
            for y in 0..k {
                if let (Some(a), Some(b)) = (&conds[0][y], &conds[j][y]) {
                    worst.see(max_abs(a, b), || vec![m, group[j].domain_id, y]);
                }
            }
        }
        let normalised: Vec<Option<Vec<f64>>> = conds
            .iter()
            .map(|rows| {
                let mut out = vec![0.0; width];
                for row in rows {
                    for (o, v) in out.iter_mut().zip(row.as_ref()?) {
                        *o += v / k as f64;
                    }
                }
                Some(out)
            })
            .collect();
        for j in 1..group.len() {
            if let (Some(a), Some(b)) = (&normalised[0], &normalised[j]) {
                worst.see(max_abs(a, b), || vec![m, group[j].domain_id, usize::MAX]);
            }
        }
    }
    worst.finish(ClaimId::P7, tol)
}

/// Solves `a · x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Optimal head for one-hot features of the invariance classes, with the
/// first class's logit pinned at zero. Newton's method with backtracking on
/// the exact domain loss, run to gradient norm 1e-10.
fn optimal_head(ctx: &Ctx, domain: &DomainSpec, active: &[bool]) -> Option<Vec<f64>> {
    let k = ctx.family.spaces().n_classes;
    let free = k - 1;
    let blocks: Vec<usize> = (0..ctx.n_classes_inv).filter(|&g| active[g]).collect();
    let dim = blocks.len() * free;
    let pxy = domain.p_xy(ctx.family);
    // mass and label totals per active block
    let mut stats = vec![vec![0.0; k]; ctx.n_classes_inv];
    for (x, &g) in ctx.classes.iter().enumerate() {
        for y in 0..k {
            stats[g][y] += pxy[x * k + y];
        }
    }
    let loss_grad_hess = |w: &[f64]| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for (b, &g) in blocks.iter().enumerate() {
            let mut z = vec![0.0; k];
            z[1..].copy_from_slice(&w[b * free..(b + 1) * free]);
            let p = softmax(&z);
            let mass: f64 = stats[g].iter().sum();
            for y in 0..k {
                if stats[g][y] > 0.0 {
                    loss -= stats[g][y] * libm::log(p[y]);
                }
            }
            for i in 0..free {
                grad[b * free + i] = mass * p[i + 1] - stats[g][i + 1];
                for j in 0..free {
                    let delta = if i == j { p[i + 1] } else { 0.0 };
                    hess[(b * free + i) * dim + b * free + j] = mass * (delta - p[i + 1] * p[j + 1]);
                }
            }
        }
        (loss, grad, hess)
    };
    let mut w = vec![0.0; dim];
    for _ in 0..200 {
        let (loss, grad, hess) = loss_grad_hess(&w);
        let gnorm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        if gnorm < 1e-10 {
            return Some(w);
        }
        let step = solve(hess, grad.clone())?;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let (l_new, ..) = loss_grad_hess(&cand);
            // near the optimum loss changes drop below rounding; accept those steps
            if l_new <= loss + 4.0 * f64::EPSILON * loss.abs() || t < 1e-12 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    None
}

/// For a deterministic CLD2 family and a fixed causal-faithful feature map,
/// every domain's optimal linear head is the same.
fn claim_p8(ctx: &Ctx, group: &[&DomainSpec], tol: f64) -> ClaimResult {
    if group.len() < 2 || !ctx.family.is_deterministic() {
        return not_applicable(ClaimId::P8);
    }
    let k = ctx.family.spaces().n_classes;
    // blocks with mass in every domain and an interior label distribution
    let mut active = vec![true; ctx.n_classes_inv];
    for d in group {
        let pxy = d.p_xy(ctx.family);
        let mut stats = vec![vec![0.0; k]; ctx.n_classes_inv];
        for (x, &g) in ctx.classes.iter().enumerate() {
            for y in 0..k {
                stats[g][y] += pxy[x * k + y];
            }
        }
        for (g, row) in stats.iter().enumerate() {
            let mass: f64 = row.iter().sum();
            if mass == 0.0 {
                active[g] = false;
            } else if row.iter().any(|&v| v / mass < 1e-12) {
                // the minimiser sits at infinity
                return not_applicable(ClaimId::P8);
            }
        }
    }
    let heads: Option<Vec<Vec<f64>>> = group.iter().map(|d| optimal_head(ctx, d, &active)).collect();
    let Some(heads) = heads else {
        return ClaimResult { id: ClaimId::P8, status: ClaimStatus::Fail, deviation: f64::INFINITY, witness: None };
    };
    let mut worst = Worst::new();
    for j in 1..heads.len() {
        for i in 0..heads[0].len() {
            worst.see((heads[j][i] - heads[0][i]).abs(), || vec![group[j].domain_id, i]);
        }
    }
    // the head tolerance is looser than enumeration tolerance: Newton stops at 1e-10 gradient norm
    worst.finish(ClaimId::P8, tol.max(1e-6))
}

/// The unconstrained source Bayes predictor matches `P*(Y|x^c)` on the
/// source latent support and, under joint-support containment, is
/// target-optimal.
fn claim_t5(ctx: &Ctx, source: &DomainSpec, target: Option<&DomainSpec>, tol: f64) -> ClaimResult {
    let s = ctx.family.spaces();
    let p_cn = source.p_cn();
    // the identity presupposes that supported observations reveal their core value
    let mut owner: Vec<Option<usize>> = vec![None; s.n_obs];
    for c in 0..s.n_core {
        for n in 0..s.n_noncore {
            if p_cn[c * s.n_noncore + n] == 0.0 {
                continue;
            }
            for (x, &px) in ctx.family.p_x(c, n).iter().enumerate() {
                if px > 0.0 {
                    match owner[x] {
                        Some(prev) if prev != c => return not_applicable(ClaimId::T5),
                        _ => owner[x] = Some(c),
                    }
                }
            }
        }
    }
    let bayes = bayes_predictor(ctx.family, source);
    let mut worst = Worst::new();
    for c in 0..s.n_core {
        for n in 0..s.n_noncore {
            if p_cn[c * s.n_noncore + n] == 0.0 {
                continue;
            }
            for (x, &px) in ctx.family.p_x(c, n).iter().enumerate() {
                if px > 0.0 {
                    worst.see(max_abs(bayes.table.row(x), ctx.family.p_y(c)), || vec![c, n, x]);
                }
            }
        }
    }
    if let Some(t) = target {
        if support_condition(source, t).cond3prime {
            let bt = bayes_predictor(ctx.family, t);
            let gap = exact_loss(ctx.family, t, &bayes.table) - exact_loss(ctx.family, t, &bt.table);
            worst.see(gap.abs(), Vec::new);
        }
    }
    worst.finish(ClaimId::T5, tol)
}
