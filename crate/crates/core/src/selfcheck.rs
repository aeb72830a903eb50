//! Built-in verification suite: analytic loss gradients against central
//! finite differences, plus reduction and invariance properties of the
//! losses. Used by the `selfcheck` command.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::losses::{
    emcl, emcl_direction_unchecked, tmcl_direction, tmcl_direction_unchecked, LossConfig, LossResult, PairSubset,
    PositiveSets,
};
use crate::numerics::{dot, finite_diff_gradient, l2_normalize_rows, relative_error, Matrix, DEFAULT_FD_EPS};
use crate::rng;

pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// `n` random unit rows of width `d`.
pub fn random_unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut *r)).collect();
    l2_normalize_rows(&Matrix::from_vec(n, d, data).expect("shape")).expect("nonzero rows")
}

/// A random gradient-check case.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub text: Matrix,
    pub modality: Matrix,
    pub image: Matrix,
    pub sequence: Matrix,
    pub pos: PositiveSets,
    pub pairs: PairSubset,
}

pub fn gradient_case(r: &mut ChaCha8Rng, n: usize, m: usize, duplicates: bool, d: usize) -> GradientCase {
    let groups: Vec<usize> = if duplicates && n > 1 {
        // guarantee at least one repeated group, randomize the rest
        let mut g: Vec<usize> = (0..n).map(|_| r.random_range(0..n.div_ceil(2))).collect();
        g[1] = g[0];
        g
    } else {
        (0..n).collect()
    };
    let mut img_rows: Vec<usize> = (0..n).collect();
    let mut seq_rows: Vec<usize> = (0..n).collect();
    img_rows.shuffle(r);
    seq_rows.shuffle(r);
    let pairs = img_rows.into_iter().zip(seq_rows).take(m).collect();
    GradientCase {
        text: random_unit_rows(r, n, d),
        modality: random_unit_rows(r, n, d),
        image: random_unit_rows(r, n, d),
        sequence: random_unit_rows(r, n, d),
        pos: PositiveSets::from_groups(&groups),
        pairs: PairSubset { pairs, batch_size: n },
    }
}

fn check_grad<F>(a: &Matrix, b: &Matrix, analytic: &LossResult, f: F) -> f64
where
    F: Fn(&Matrix, &Matrix) -> f64,
{
    let (n, d) = a.shape();
    let mut x = a.as_slice().to_vec();
    x.extend_from_slice(b.as_slice());
    let split = n * d;
    let numeric = finite_diff_gradient(
        |v| {
            let a = Matrix::from_vec(n, d, v[..split].to_vec()).expect("shape");
            let b = Matrix::from_vec(b.rows(), d, v[split..].to_vec()).expect("shape");
            f(&a, &b)
        },
        &x,
        DEFAULT_FD_EPS,
    );
    let mut grad = analytic.grads[0].as_slice().to_vec();
    grad.extend_from_slice(analytic.grads[1].as_slice());
    relative_error(&grad, &numeric, 1e-8)
}

/// Worst relative gradient error per loss for one case:
/// (TMCL text→modality, TMCL modality→text, symmetric TMCL, EMCL).
pub fn gradient_errors(case: &GradientCase, tau: f64) -> [f64; 4] {
    let cfg = LossConfig { tau, emcl_enabled: true };
    let (t, z, pos) = (&case.text, &case.modality, &case.pos);
    let fwd = tmcl_direction(t, z, pos, &cfg).expect("valid case");
    let e1 = check_grad(t, z, &fwd, |a, b| tmcl_direction_unchecked(a, b, pos, tau).value);
    let bwd = tmcl_direction(z, t, pos, &cfg).expect("valid case");
    let e2 = check_grad(z, t, &bwd, |a, b| tmcl_direction_unchecked(a, b, pos, tau).value);
    let sym = crate::losses::tmcl_symmetric(t, z, pos, &cfg).expect("valid case");
    let e3 = check_grad(t, z, &sym, |a, b| {
        tmcl_direction_unchecked(a, b, pos, tau).value + tmcl_direction_unchecked(b, a, pos, tau).value
    });
    let em = emcl(&case.image, &case.sequence, &case.pairs, &cfg).expect("valid case");
    let pairs = &case.pairs.pairs;
    let n = case.pairs.batch_size;
    let e4 = check_grad(&case.image, &case.sequence, &em, |a, b| {
        if pairs.is_empty() {
            return 0.0;
        }
        let swapped: Vec<(usize, usize)> = pairs.iter().map(|&(c, e)| (e, c)).collect();
        emcl_direction_unchecked(a, b, pairs, n, tau).value + emcl_direction_unchecked(b, a, &swapped, n, tau).value
    });
    [e1, e2, e3, e4]
}

/// Gradient checks over n ∈ {2,3,5}, m ∈ {0,1,n}, with and without
/// duplicate-text groups, `repeats` draws each.
pub fn gradient_checks(seed: u64, repeats: usize) -> Vec<CheckOutcome> {
    let mut r = rng::stream(seed, "selfcheck-gradients");
    let names = ["tmcl text->modality", "tmcl modality->text", "tmcl symmetric", "emcl symmetric"];
    let mut worst = [0.0f64; 4];
    let mut cases = 0;
    for n in [2, 3, 5] {
        for m in [0, 1, n] {
            for dup in [false, true] {
                for _ in 0..repeats {
                    let case = gradient_case(&mut r, n, m, dup, 4);
                    for (w, e) in worst.iter_mut().zip(gradient_errors(&case, 0.07)) {
                        *w = w.max(e);
                    }
                    cases += 1;
                }
            }
        }
    }
    names
        .iter()
        .zip(worst)
        .map(|(name, w)| {
            CheckOutcome::new(
                format!("gradient: {name}"),
                w < GRADIENT_TOLERANCE,
                format!("max relative error {w:.3e} over {cases} batches"),
            )
        })
        .collect()
}

/// Plain infoNCE with the diagonal as the only positive.
fn infonce(a: &Matrix, b: &Matrix, tau: f64) -> f64 {
    (0..a.rows())
        .map(|i| {
            let logits: Vec<f64> = b.iter_rows().map(|br| dot(a.row(i), br) / tau).collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mx + logits.iter().map(|z| (z - mx).exp()).sum::<f64>().ln() - logits[i]
        })
        .sum()
}

fn permute(m: &Matrix, perm: &[usize]) -> Matrix {
    m.select_rows(perm)
}

/// Reduction identities, closed forms and permutation invariance.
pub fn property_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut r = rng::stream(seed, "selfcheck-properties");
    let tau = 0.07;
    let cfg = LossConfig { tau, emcl_enabled: true };
    let mut out = Vec::new();

    let mut worst_t = 0.0f64;
    let mut worst_e = 0.0f64;
    let mut emcl_zero = true;
    let mut worst_perm = 0.0f64;
    for n in [2, 3, 5, 8] {
        let a = random_unit_rows(&mut r, n, 6);
        let b = random_unit_rows(&mut r, n, 6);
        let t = tmcl_direction(&a, &b, &PositiveSets::singletons(n), &cfg).expect("valid").value;
        worst_t = worst_t.max((t - infonce(&a, &b, tau)).abs());
        let diag: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        let e = crate::losses::emcl_direction(&a, &b, &diag, n, &cfg).expect("valid").value;
        worst_e = worst_e.max((e - infonce(&a, &b, tau)).abs());
        let z = emcl(&a, &b, &PairSubset::empty(n), &cfg).expect("valid");
        emcl_zero &= z.value == 0.0 && z.grads.iter().all(|g| g.as_slice().iter().all(|&v| v == 0.0));

        let case = gradient_case(&mut r, n, n / 2, true, 6);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let groups_perm: Vec<usize> = perm.iter().map(|&i| group_of(&case.pos, i)).collect();
        let pos_perm = PositiveSets::from_groups(&groups_perm);
        let pairs_perm = PairSubset {
            pairs: case.pairs.pairs.iter().map(|&(c, e)| (inv[c], inv[e])).collect(),
            batch_size: n,
        };
        let before = crate::losses::tmcl_symmetric(&case.text, &case.modality, &case.pos, &cfg).expect("valid").value;
        let after = crate::losses::tmcl_symmetric(&permute(&case.text, &perm), &permute(&case.modality, &perm), &pos_perm, &cfg)
            .expect("valid")
            .value;
        let e_before = emcl(&case.image, &case.sequence, &case.pairs, &cfg).expect("valid").value;
        let e_after = emcl(&permute(&case.image, &perm), &permute(&case.sequence, &perm), &pairs_perm, &cfg)
            .expect("valid")
            .value;
        worst_perm = worst_perm.max((before - after).abs()).max((e_before - e_after).abs());
    }
    out.push(CheckOutcome::new("identity: tmcl unique texts = infoNCE", worst_t < IDENTITY_TOLERANCE, format!("max |diff| {worst_t:.3e}")));
    out.push(CheckOutcome::new("identity: emcl m = n = infoNCE", worst_e < IDENTITY_TOLERANCE, format!("max |diff| {worst_e:.3e}")));
    out.push(CheckOutcome::new("identity: emcl m = 0 is exactly 0", emcl_zero, "value and gradients"));
    out.push(CheckOutcome::new("invariance: batch permutation", worst_perm < IDENTITY_TOLERANCE, format!("max |diff| {worst_perm:.3e}")));

    // closed forms
    let e2 = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).expect("shape");
    let v = tmcl_direction(&e2, &e2, &PositiveSets::singletons(2), &LossConfig { tau: 1.0, emcl_enabled: true })
        .expect("valid")
        .value;
    let want = 2.0 * (1.0 + (-1.0f64).exp()).ln();
    out.push(CheckOutcome::new("closed form: orthonormal n=2", (v - want).abs() < 1e-9, format!("{v} vs {want}")));
    let u4 = Matrix::from_rows(&[[1.0, 0.0]; 4]).expect("shape");
    let v = tmcl_direction(&u4, &u4, &PositiveSets::singletons(4), &cfg).expect("valid").value;
    let want = 4.0 * 4f64.ln();
    out.push(CheckOutcome::new("closed form: uniform n=4 tmcl", (v - want).abs() < 1e-9, format!("{v} vs {want}")));
    let v = crate::losses::emcl_direction(&u4, &u4, &[(0, 0), (1, 1)], 4, &cfg).expect("valid").value;
    let want = 2.0 * 4f64.ln();
    out.push(CheckOutcome::new("closed form: uniform n=4 m=2 emcl", (v - want).abs() < 1e-9, format!("{v} vs {want}")));
    out
}

fn group_of(pos: &PositiveSets, i: usize) -> usize {
    // smallest member of i's positive set identifies its group
    *pos.get(i).iter().min().expect("non-empty positive set")
}

/// Full suite.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut all = gradient_checks(seed, 2);
    all.extend(property_checks(seed));
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for c in run_all(0) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
