//! Text-modality and edge-modality contrastive losses with analytic
//! gradients.
//!
//! Both losses work on unit-norm embedding rows. Values are sums over
//! anchors; dividing by batch size is left to the trainer.
//!
//! TMCL (one direction, anchors `a`, targets `b`, positive sets `P`):
//!
//! ```text
//! L = Σ_i [ LSE_l(a_i·b_l / τ) − (1/|P(i)|) Σ_{p∈P(i)} a_i·b_p / τ ]
//! ```
//!
//! The denominator runs over every `l`, positives included. Supervised
//! contrastive variants that drop other positives from the denominator are
//! not implemented.
//!
//! EMCL (one direction, over the `m` paired rows of an `n`-row batch):
//!
//! ```text
//! L = Σ_u [ ln(n/m) + LSE_q(c_u·e_q / τ) − c_u·e_u / τ ]
//! ```
//!
//! The `n/m` factor shifts the value but leaves the gradient unchanged.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, norm, Matrix};

/// Allowed deviation of an input row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Per-anchor positive index sets. `P(i)` is sorted and contains `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveSets {
    sets: Vec<Vec<usize>>,
}

impl PositiveSets {
    /// Groups anchors by equal label: `P(i) = { l : group(l) == group(i) }`.
    pub fn from_groups<G: Eq + std::hash::Hash>(group_ids: &[G]) -> Self {
        let mut members: HashMap<&G, Vec<usize>> = HashMap::new();
        for (i, g) in group_ids.iter().enumerate() {
            members.entry(g).or_default().push(i);
        }
        let sets = group_ids.iter().map(|g| members[g].clone()).collect();
        Self { sets }
    }

    /// Every anchor is its own only positive (plain infoNCE).
    pub fn singletons(n: usize) -> Self {
        Self { sets: (0..n).map(|i| vec![i]).collect() }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    /// Number of distinct groups.
    pub fn group_count(&self) -> usize {
        self.sets.iter().enumerate().filter(|(i, s)| s[0] == *i).count()
    }
}

/// Builds positive sets from per-sample text group labels.
pub fn build_positive_sets<G: Eq + std::hash::Hash>(text_group_ids: &[G]) -> PositiveSets {
    PositiveSets::from_groups(text_group_ids)
}

/// The `m` cross-modal pairs of an `n`-sample batch. Each pair indexes a row
/// of the image-like and a row of the sequence-like embedding matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairSubset {
    pub pairs: Vec<(usize, usize)>,
    pub batch_size: usize,
}

impl PairSubset {
    pub fn new(pairs: Vec<(usize, usize)>, batch_size: usize) -> Result<Self> {
        let subset = Self { pairs, batch_size };
        subset.validate(batch_size, batch_size)?;
        Ok(subset)
    }

    pub fn empty(batch_size: usize) -> Self {
        Self { pairs: Vec::new(), batch_size }
    }

    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    fn validate(&self, image_rows: usize, sequence_rows: usize) -> Result<()> {
        if self.pairs.len() > self.batch_size {
            return Err(Error::InvalidConfig(format!(
                "{} pairs exceed batch size {}",
                self.pairs.len(),
                self.batch_size
            )));
        }
        let mut seen_c = vec![false; image_rows];
        let mut seen_e = vec![false; sequence_rows];
        for &(c, e) in &self.pairs {
            for (what, idx, seen) in [("image rows", c, &mut seen_c), ("sequence rows", e, &mut seen_e)] {
                if idx >= seen.len() || idx >= self.batch_size {
                    return Err(Error::IndexOutOfRange { what, index: idx, len: seen.len() });
                }
                if std::mem::replace(&mut seen[idx], true) {
                    return Err(Error::InvalidConfig(format!("{what} index {idx} paired twice")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    /// `false` reproduces the TMCL-only ablation.
    pub emcl_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { tau: 0.07, emcl_enabled: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Loss value plus one gradient per input matrix, in argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

fn check_unit_rows(m: &Matrix, what: &'static str) -> Result<()> {
    for (row, r) in m.iter_rows().enumerate() {
        let n = norm(r);
        if !((n - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::NormViolation { what, row, norm: n });
        }
    }
    Ok(())
}

/// Shared kernel: given per-anchor target weights (summing to 1), computes
/// `Σ_i [LSE_l(s_il/τ) − Σ_l w_il s_il/τ] + offset` and its gradient.
/// `anchor_rows[k]`/`target_rows[k]` select the participating rows.
fn weighted_infonce(
    anchors: &Matrix,
    targets: &Matrix,
    anchor_rows: &[usize],
    target_rows: &[usize],
    positives: impl Fn(usize) -> Vec<(usize, f64)>,
    per_anchor_offset: f64,
    tau: f64,
) -> LossResult {
    let d = anchors.cols();
    let mut grad_a = Matrix::zeros(anchors.rows(), d);
    let mut grad_b = Matrix::zeros(targets.rows(), d);
    let mut value = 0.0;
    let mut logits = vec![0.0; target_rows.len()];
    for (k, &ai) in anchor_rows.iter().enumerate() {
        let a = anchors.row(ai);
        for (l, &bj) in target_rows.iter().enumerate() {
            logits[l] = dot(a, targets.row(bj)) / tau;
        }
        let lse = log_sum_exp(&logits);
        let pos = positives(k);
        let pos_term: f64 = pos.iter().map(|&(l, w)| w * logits[l]).sum();
        value += lse - pos_term + per_anchor_offset;

        // dL/ds_kl = (softmax_kl − w_kl) / τ
        let mut coef: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        for &(l, w) in &pos {
            coef[l] -= w;
        }
        for (l, &bj) in target_rows.iter().enumerate() {
            let g = coef[l] / tau;
            if g == 0.0 {
                continue;
            }
            let b = targets.row(bj);
            for (ga, bv) in grad_a.row_mut(ai).iter_mut().zip(b) {
                *ga += g * bv;
            }
            for (gb, av) in grad_b.row_mut(bj).iter_mut().zip(a) {
                *gb += g * av;
            }
        }
    }
    LossResult { value, grads: vec![grad_a, grad_b] }
}

/// One TMCL direction. Gradients are `[d anchors, d targets]`.
pub fn tmcl_direction(
    anchors: &Matrix,
    targets: &Matrix,
    pos: &PositiveSets,
    cfg: &LossConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    if anchors.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!(
            "anchors {:?} vs targets {:?}",
            anchors.shape(),
            targets.shape()
        )));
    }
    if pos.len() != anchors.rows() {
        return Err(Error::LengthMismatch { left: pos.len(), right: anchors.rows() });
    }
    check_unit_rows(anchors, "anchors")?;
    check_unit_rows(targets, "targets")?;
    Ok(tmcl_direction_unchecked(anchors, targets, pos, cfg.tau))
}

/// [`tmcl_direction`] without validation, for evaluating the same formula
/// off the unit sphere (finite-difference probes).
pub fn tmcl_direction_unchecked(anchors: &Matrix, targets: &Matrix, pos: &PositiveSets, tau: f64) -> LossResult {
    let rows: Vec<usize> = (0..anchors.rows()).collect();
    weighted_infonce(
        anchors,
        targets,
        &rows,
        &rows,
        |i| {
            let p = pos.get(i);
            let w = 1.0 / p.len() as f64;
            p.iter().map(|&l| (l, w)).collect()
        },
        0.0,
        tau,
    )
}

/// Text→modality plus modality→text. Gradients are `[d text, d modality]`.
pub fn tmcl_symmetric(
    text_emb: &Matrix,
    modality_emb: &Matrix,
    pos: &PositiveSets,
    cfg: &LossConfig,
) -> Result<LossResult> {
    let t2z = tmcl_direction(text_emb, modality_emb, pos, cfg)?;
    let z2t = tmcl_direction(modality_emb, text_emb, pos, cfg)?;
    let [gt_a, gz_a] = <[Matrix; 2]>::try_from(t2z.grads).expect("two grads");
    let [gz_b, gt_b] = <[Matrix; 2]>::try_from(z2t.grads).expect("two grads");
    let mut gt = gt_a;
    gt.add_assign(&gt_b)?;
    let mut gz = gz_a;
    gz.add_assign(&gz_b)?;
    Ok(LossResult { value: t2z.value + z2t.value, grads: vec![gt, gz] })
}

/// One EMCL direction from `anchors` to `targets`. `pairs` holds
/// `(anchor row, target row)`.
pub fn emcl_direction(
    anchors: &Matrix,
    targets: &Matrix,
    pairs: &[(usize, usize)],
    batch_size: usize,
    cfg: &LossConfig,
) -> Result<LossResult> {
    cfg.validate()?;
    let m = pairs.len();
    let grads = vec![Matrix::zeros(anchors.rows(), anchors.cols()), Matrix::zeros(targets.rows(), targets.cols())];
    if m == 0 {
        return Ok(LossResult { value: 0.0, grads });
    }
    if anchors.cols() != targets.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{}-dim anchors vs {}-dim targets",
            anchors.cols(),
            targets.cols()
        )));
    }
    PairSubset { pairs: pairs.to_vec(), batch_size }.validate(anchors.rows(), targets.rows())?;
    check_unit_rows(anchors, "emcl anchors")?;
    check_unit_rows(targets, "emcl targets")?;
    Ok(emcl_direction_unchecked(anchors, targets, pairs, batch_size, cfg.tau))
}

/// [`emcl_direction`] without validation. `pairs` must be non-empty and in range.
pub fn emcl_direction_unchecked(
    anchors: &Matrix,
    targets: &Matrix,
    pairs: &[(usize, usize)],
    batch_size: usize,
    tau: f64,
) -> LossResult {
    let m = pairs.len();
    let anchor_rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let target_rows: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let offset = (batch_size as f64 / m as f64).ln();
    weighted_infonce(anchors, targets, &anchor_rows, &target_rows, |u| vec![(u, 1.0)], offset, tau)
}

/// Symmetric EMCL. Gradients are `[d image, d sequence]`.
pub fn emcl(zc: &Matrix, ze: &Matrix, pairs: &PairSubset, cfg: &LossConfig) -> Result<LossResult> {
    let c2e = emcl_direction(zc, ze, &pairs.pairs, pairs.batch_size, cfg)?;
    let swapped: Vec<(usize, usize)> = pairs.pairs.iter().map(|&(c, e)| (e, c)).collect();
    let e2c = emcl_direction(ze, zc, &swapped, pairs.batch_size, cfg)?;
    let [gc_a, ge_a] = <[Matrix; 2]>::try_from(c2e.grads).expect("two grads");
    let [ge_b, gc_b] = <[Matrix; 2]>::try_from(e2c.grads).expect("two grads");
    let mut gc = gc_a;
    gc.add_assign(&gc_b)?;
    let mut ge = ge_a;
    ge.add_assign(&ge_b)?;
    Ok(LossResult { value: c2e.value + e2c.value, grads: vec![gc, ge] })
}

/// Text and non-text embeddings for one bound modality. `text` row `i` is
/// the text paired with `modality` row `i`.
#[derive(Debug, Clone)]
pub struct ModalityView {
    pub text: Matrix,
    pub modality: Matrix,
    pub pos: PositiveSets,
}

/// Total loss with its components and per-matrix gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub tmcl_image: f64,
    pub tmcl_sequence: f64,
    pub emcl: f64,
    pub grad_image_text: Matrix,
    pub grad_image: Matrix,
    pub grad_sequence_text: Matrix,
    pub grad_sequence: Matrix,
}

impl TotalLoss {
    pub fn tmcl(&self) -> f64 {
        self.tmcl_image + self.tmcl_sequence
    }
}

fn tmcl_or_empty(view: &ModalityView, cfg: &LossConfig) -> Result<LossResult> {
    if view.modality.rows() == 0 {
        return Ok(LossResult {
            value: 0.0,
            grads: vec![view.text.clone(), view.modality.clone()],
        });
    }
    tmcl_symmetric(&view.text, &view.modality, &view.pos, cfg)
}

/// TMCL summed over both bound modalities, plus EMCL between the two
/// non-text modalities when enabled.
pub fn total_loss(
    image: &ModalityView,
    sequence: &ModalityView,
    pairs: &PairSubset,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    let ti = tmcl_or_empty(image, cfg)?;
    let ts = tmcl_or_empty(sequence, cfg)?;
    let [mut g_it, mut g_i] = <[Matrix; 2]>::try_from(ti.grads).expect("two grads");
    let [mut g_st, mut g_s] = <[Matrix; 2]>::try_from(ts.grads).expect("two grads");
    if image.modality.rows() == 0 {
        g_it.scale(0.0);
        g_i.scale(0.0);
    }
    if sequence.modality.rows() == 0 {
        g_st.scale(0.0);
        g_s.scale(0.0);
    }
    let mut emcl_value = 0.0;
    if cfg.emcl_enabled && pairs.m() > 0 {
        let e = emcl(&image.modality, &sequence.modality, pairs, cfg)?;
        emcl_value = e.value;
        g_i.add_assign(&e.grads[0])?;
        g_s.add_assign(&e.grads[1])?;
    }
    Ok(TotalLoss {
        value: ti.value + ts.value + emcl_value,
        tmcl_image: ti.value,
        tmcl_sequence: ts.value,
        emcl: emcl_value,
        grad_image_text: g_it,
        grad_image: g_i,
        grad_sequence_text: g_st,
        grad_sequence: g_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, l2_normalize_rows, relative_error, DEFAULT_FD_EPS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m<R: AsRef<[f64]>>(rows: &[R]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn cfg(tau: f64) -> LossConfig {
        LossConfig { tau, emcl_enabled: true }
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize_rows(&Matrix::from_vec(n, d, data).unwrap()).unwrap()
    }

    #[test]
    fn positive_set_examples() {
        let p = build_positive_sets(&["a", "b", "c"]);
        assert_eq!((p.get(0), p.get(1), p.get(2)), (&[0][..], &[1][..], &[2][..]));
        let p = build_positive_sets(&["a", "a", "b"]);
        assert_eq!((p.get(0), p.get(1), p.get(2)), (&[0, 1][..], &[0, 1][..], &[2][..]));
        let p = build_positive_sets(&["a", "a", "a"]);
        assert!((0..3).all(|i| p.get(i) == [0, 1, 2]));
        assert_eq!(p.group_count(), 1);
    }

    #[test]
    fn tmcl_closed_forms() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = tmcl_direction(&eye, &eye, &PositiveSets::singletons(2), &cfg(1.0)).unwrap();
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((r.value - expect).abs() < 1e-12);
        assert!((r.value - 0.62652).abs() < 1e-5);

        let same = m(&[&[0.6, 0.8]; 4]);
        let r = tmcl_direction(&same, &same, &PositiveSets::singletons(4), &cfg(0.07)).unwrap();
        assert!((r.value - 4.0 * 4f64.ln()).abs() < 1e-9);

        let dup = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let r = tmcl_direction(&dup, &dup, &build_positive_sets(&[0, 0]), &cfg(1.0)).unwrap();
        assert!((r.value - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tmcl_symmetric_closed_forms() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = tmcl_symmetric(&eye, &eye, &PositiveSets::singletons(2), &cfg(1.0)).unwrap();
        assert!((r.value - 4.0 * (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        let same = m(&[&[0.0, 1.0]; 4]);
        let r = tmcl_symmetric(&same, &same, &PositiveSets::singletons(4), &cfg(0.5)).unwrap();
        assert!((r.value - 8.0 * 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn tmcl_rejects_non_unit_rows() {
        let bad = m(&[&[1.0, 1.0]]);
        let err = tmcl_direction(&bad, &bad, &PositiveSets::singletons(1), &cfg(1.0)).unwrap_err();
        assert!(matches!(err, Error::NormViolation { row: 0, .. }));
    }

    #[test]
    fn emcl_closed_forms() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = emcl_direction(&eye, &eye, &[(0, 0), (1, 1)], 4, &cfg(1.0)).unwrap();
        let e = std::f64::consts::E;
        assert!((r.value - 2.0 * ((2.0 * (e + 1.0)).ln() - 1.0)).abs() < 1e-12);
        assert!((r.value - 2.01282).abs() < 1e-5);

        let same = m(&[&[1.0, 0.0]; 2]);
        let r = emcl_direction(&same, &same, &[(0, 0), (1, 1)], 4, &cfg(0.07)).unwrap();
        assert!((r.value - 2.0 * 4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn emcl_empty_subset_is_zero() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = emcl(&eye, &eye, &PairSubset::empty(2), &cfg(0.07)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grads.iter().all(|g| g.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn emcl_index_errors() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let bad = PairSubset { pairs: vec![(0, 2)], batch_size: 4 };
        assert!(matches!(emcl(&eye, &eye, &bad, &cfg(1.0)), Err(Error::IndexOutOfRange { .. })));
        let dup = PairSubset { pairs: vec![(0, 0), (0, 1)], batch_size: 4 };
        assert!(emcl(&eye, &eye, &dup, &cfg(1.0)).is_err());
    }

    #[test]
    fn total_loss_ablation_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let text = random_unit(&mut rng, 4, 5);
        let img = random_unit(&mut rng, 4, 5);
        let seq = random_unit(&mut rng, 4, 5);
        let pos = build_positive_sets(&[0, 1, 1, 2]);
        let iv = ModalityView { text: text.clone(), modality: img.clone(), pos: pos.clone() };
        let sv = ModalityView { text: text.clone(), modality: seq.clone(), pos: pos.clone() };
        let pairs = PairSubset::new(vec![(0, 1), (2, 3)], 4).unwrap();

        let bd = total_loss(&iv, &sv, &pairs, &cfg(0.07)).unwrap();
        let nm = total_loss(&iv, &sv, &pairs, &LossConfig { tau: 0.07, emcl_enabled: false }).unwrap();
        let hand = tmcl_symmetric(&text, &img, &pos, &cfg(0.07)).unwrap().value
            + tmcl_symmetric(&text, &seq, &pos, &cfg(0.07)).unwrap().value
            + emcl(&img, &seq, &pairs, &cfg(0.07)).unwrap().value;
        assert!((bd.value - hand).abs() < 1e-12);
        assert_eq!(nm.emcl, 0.0);
        assert!((bd.value - nm.value - bd.emcl).abs() < 1e-12);

        let empty = total_loss(&iv, &sv, &PairSubset::empty(4), &cfg(0.07)).unwrap();
        assert_eq!(empty.value, nm.value);
    }

    // Gradient checks against central differences live in the integration
    // suite; this one covers the symmetric TMCL path at unit level.
    #[test]
    fn tmcl_symmetric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, d) = (3, 4);
        let text = random_unit(&mut rng, n, d);
        let modal = random_unit(&mut rng, n, d);
        let pos = build_positive_sets(&[0, 0, 1]);
        let c = cfg(0.5);
        let r = tmcl_symmetric(&text, &modal, &pos, &c).unwrap();

        let eval = |t: &Matrix, z: &Matrix| {
            tmcl_direction_unchecked(t, z, &pos, c.tau).value + tmcl_direction_unchecked(z, t, &pos, c.tau).value
        };
        let fd = finite_diff_gradient(
            |x| eval(&Matrix::from_vec(n, d, x.to_vec()).unwrap(), &modal),
            text.as_slice(),
            DEFAULT_FD_EPS,
        );
        assert!(relative_error(r.grads[0].as_slice(), &fd, 1e-8) < 1e-5);
    }
}
