//! Contrastive-pair matching: probabilities, logits, features, and
//! logit-attribution matching (LAM).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffkit::{Graph, Matrix, Model, ModelVars, Var};
use crate::error::{Error, Result};
use crate::pairgen::ContrastivePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairKind {
    Prob,
    Logit,
    Feat,
}

/// Weighted distinct `(x, x̃)` pairs.
fn compress(pairs: impl Iterator<Item = (usize, usize, f64)>) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (a, b, w) in pairs {
        *acc.entry((a, b)).or_default() += w;
    }
    let mut xa = Vec::with_capacity(acc.len());
    let mut xb = Vec::with_capacity(acc.len());
    let mut w = Vec::with_capacity(acc.len());
    for ((a, b), v) in acc {
        xa.push(a);
        xb.push(b);
        w.push(v);
    }
    (xa, xb, w)
}

fn column(g: &mut Graph, w: &[f64]) -> Var {
    g.leaf(Matrix::from_vec(w.len(), 1, w.to_vec()))
}

/// Matched quantity (logits or features) for a batch of observations.
fn matched(model: &Model, g: &mut Graph, vars: &ModelVars, xs: &[usize], kind: PairKind) -> Var {
    let (_, h, z) = model.record(g, vars, xs);
    match kind {
        PairKind::Feat => h,
        PairKind::Logit => z,
        PairKind::Prob => g.log_softmax(z),
    }
}

/// `Σ_k w_k KL(p(x_k) ‖ p(x̃_k))`, optionally symmetrised.
fn kl_pairs(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    xa: &[usize],
    xb: &[usize],
    w: &[f64],
    symmetric: bool,
) -> Var {
    let la = matched(model, g, vars, xa, PairKind::Prob);
    let lb = matched(model, g, vars, xb, PairKind::Prob);
    let wcol = column(g, w);
    let one_way = |g: &mut Graph, lp: Var, lq: Var| {
        let p = g.exp(lp);
        let d = g.sub(lp, lq);
        let m = g.mul(p, d);
        let rows = g.row_sum(m);
        g.dot(rows, wcol)
    };
    let forward = one_way(g, la, lb);
    if !symmetric {
        return forward;
    }
    let back = one_way(g, lb, la);
    let s = g.add(forward, back);
    g.scale(s, 0.5)
}

/// `Σ_{a,b} Q_ab ⟨v_a, v_b⟩` for the matched values `v` of the distinct
/// observations in `support`.
fn quadratic_form(model: &Model, g: &mut Graph, vars: &ModelVars, support: &[usize], q: Matrix, kind: PairKind) -> Var {
    let v = matched(model, g, vars, support, kind);
    let q = g.leaf(q);
    let qv = g.matmul(q, v);
    g.dot(v, qv)
}

fn support_of(xs: impl Iterator<Item = usize>) -> (Vec<usize>, BTreeMap<usize, usize>) {
    let mut index = BTreeMap::new();
    for x in xs {
        let next = index.len();
        index.entry(x).or_insert(next);
    }
    let mut support = alloc::vec![0; index.len()];
    for (&x, &i) in &index {
        support[i] = x;
    }
    (support, index)
}

/// Mean over pairs of the matching divergence: KL for `Prob`, squared
/// Euclidean distance for `Logit` and `Feat`.
pub fn pair_regularizer(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    pairs: &[ContrastivePair],
    kind: PairKind,
    symmetric: bool,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::EmptyRequest("pairs"));
    }
    let w = 1.0 / pairs.len() as f64;
    let (xa, xb, wts) = compress(pairs.iter().map(|p| (p.x, p.x_tilde, w)));
    Ok(match kind {
        PairKind::Prob => kl_pairs(model, g, vars, &xa, &xb, &wts, symmetric),
        PairKind::Logit | PairKind::Feat => {
            // Σ_k w_k ‖v_a − v_b‖² = Σ v·(L v) with the weighted pair Laplacian L
            let (support, index) = support_of(xa.iter().chain(&xb).copied());
            let u = support.len();
            let mut lap = Matrix::zeros(u, u);
            for k in 0..xa.len() {
                let (i, j) = (index[&xa[k]], index[&xb[k]]);
                if i == j {
                    continue;
                }
                lap.data[i * u + i] += wts[k];
                lap.data[j * u + j] += wts[k];
                lap.data[i * u + j] -= wts[k];
                lap.data[j * u + i] -= wts[k];
            }
            quadratic_form(model, g, vars, &support, lap, kind)
        }
    })
}

/// Group form: mean over groups of the within-group sum of squared
/// deviations from the group mean (`Logit`, `Feat`); for `Prob`, the mean
/// KL over all unordered pairs of each group. A two-member group gives
/// exactly half the pair form.
pub fn group_regularizer(
    model: &Model,
    g: &mut Graph,
    vars: &ModelVars,
    groups: &[Vec<usize>],
    kind: PairKind,
    symmetric: bool,
) -> Result<Var> {
    if groups.is_empty() {
        return Err(Error::EmptyPureSet);
    }
    if groups.iter().any(|m| m.len() < 2) {
        return Err(Error::InvalidParameter { name: "groups", reason: "every group needs at least two members" });
    }
    let gw = 1.0 / groups.len() as f64;
    Ok(match kind {
        PairKind::Prob => {
            let all = groups.iter().flat_map(|m| {
                let pw = gw / (m.len() * (m.len() - 1) / 2) as f64;
                (0..m.len()).flat_map(move |i| (i + 1..m.len()).map(move |j| (m[i], m[j], pw)))
            });
            let (xa, xb, wts) = compress(all);
            kl_pairs(model, g, vars, &xa, &xb, &wts, symmetric)
        }
        PairKind::Logit | PairKind::Feat => {
            // Σ_i ‖v_i − v̄‖² = Σ_ab (n_a δ_ab − n_a n_b / m) ⟨v_a, v_b⟩ with member counts n
            let (support, index) = support_of(groups.iter().flatten().copied());
            let u = support.len();
            let mut q = Matrix::zeros(u, u);
            for members in groups {
                let m = members.len() as f64;
                let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
                for x in members {
                    *counts.entry(index[x]).or_default() += 1.0;
                }
                for (&a, &na) in &counts {
                    q.data[a * u + a] += gw * na;
                    for (&b, &nb) in &counts {
                        q.data[a * u + b] -= gw * na * nb / m;
                    }
                }
            }
            quadratic_form(model, g, vars, &support, q, kind)
        }
    })
}

/// `E[Σ_u w_{u,y}² (f^u(x) − f^u(x̃))²]` over labeled pairs; the bias unit
/// never differs within a pair and contributes nothing.
pub fn lam_regularizer(model: &Model, g: &mut Graph, vars: &ModelVars, pairs: &[ContrastivePair]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::EmptyRequest("pairs"));
    }
    let k = model.n_classes();
    let u = model.feature_dim();
    let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let w = 1.0 / pairs.len() as f64;
    for (i, p) in pairs.iter().enumerate() {
        let y = p.label.ok_or(Error::UnlabeledPair(i))?;
        if y >= k {
            return Err(Error::IndexOutOfRange { what: "class", index: y, bound: k });
        }
        *acc.entry((p.x, p.x_tilde, y)).or_default() += w;
    }
    let n = acc.len();
    let mut xa = Vec::with_capacity(n);
    let mut xb = Vec::with_capacity(n);
    let mut select = Matrix::zeros(n, k);
    let mut wts = Vec::with_capacity(n);
    for (r, (&(a, b, y), &v)) in acc.iter().enumerate() {
        xa.push(a);
        xb.push(b);
        select.set(r, y, 1.0);
        wts.push(v);
    }
    let ha = matched(model, g, vars, &xa, PairKind::Feat);
    let hb = matched(model, g, vars, &xb, PairKind::Feat);
    let d = g.sub(ha, hb);
    let d2 = g.square(d);
    let w2 = g.square(vars.head);
    let w2t = g.transpose(w2);
    let s = g.leaf(select);
    let per_row = g.matmul(s, w2t);
    let per_row = g.take_cols(per_row, 0, u);
    let terms = g.mul(per_row, d2);
    let rows = g.row_sum(terms);
    let wcol = column(g, &wts);
    Ok(g.dot(rows, wcol))
}
