//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Oracles here are written independently of the library code paths they
//! check: finite differences, a plain infoNCE, brute-force rankings and
//! direct per-class recall.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tribind::data::{
    class_prompt_pool, generate_demographics, generate_ecg_report, generate_synthetic, label_text, make_prompt,
    DemographicFields, Dataset, ExclusionReason, LabelOutcome, LabelRuleSet, SyntheticConfig, ECG_PROMPT_TEMPLATE,
};
use tribind::downstream::{fit_fusion, fusion_samples, FusionConfig, FusionMode, OutcomeTarget};
use tribind::eval::{
    balanced_accuracy, chance_sigma, cross_modal_accuracy, cross_modal_retrieval, cross_modal_zero_shot,
    few_shot_probe, modality_to_text, recall_at_k, zero_shot_classify, CrossModalMode, ZeroShotSpec, DEFAULT_KS,
};
use tribind::losses::{
    emcl, emcl_direction, emcl_direction_unchecked, tmcl_direction, tmcl_direction_unchecked, tmcl_symmetric,
    total_loss, LossConfig, ModalityView, PairSubset, PositiveSets,
};
use tribind::model::{Modality, Model};
use tribind::numerics::Matrix;
use tribind::train::{train, TrainConfig, TrainOutputs};

const TAU: f64 = 0.07;

struct Board(Vec<(usize, &'static str, bool, String)>);

impl Board {
    fn record(&mut self, n: usize, name: &'static str, pass: bool, detail: String) {
        println!("criterion {n:>2} [{name}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.0.push((n, name, pass, detail));
    }
}

fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        rows.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
    }
    Matrix::from_rows(&rows).unwrap()
}

fn plain_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Central differences over the concatenation of two matrices.
fn fd_grad(a: &Matrix, b: &Matrix, f: impl Fn(&Matrix, &Matrix) -> f64) -> Vec<f64> {
    let eps = 1e-5;
    let (na, nb) = (a.as_slice().len(), b.as_slice().len());
    let mut out = Vec::with_capacity(na + nb);
    for i in 0..na + nb {
        let eval = |delta: f64| {
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            if i < na {
                a2.as_mut_slice()[i] += delta;
            } else {
                b2.as_mut_slice()[i - na] += delta;
            }
            f(&a2, &b2)
        };
        out.push((eval(eps) - eval(-eps)) / (2.0 * eps));
    }
    out
}

fn rel_err(analytic: &[Matrix], numeric: &[f64]) -> f64 {
    let a: Vec<f64> = analytic.iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let diff = a.iter().zip(numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(numeric).map(|v| v.abs()).fold(1e-8, f64::max);
    diff / scale
}

fn groups_for(r: &mut ChaCha8Rng, n: usize, dup: bool) -> Vec<usize> {
    if !dup {
        return (0..n).collect();
    }
    let mut g: Vec<usize> = (0..n).map(|_| r.random_range(0..n.div_ceil(2))).collect();
    g[n - 1] = g[0];
    g
}

fn random_pairs(r: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut b: Vec<usize> = (0..n).collect();
    a.shuffle(r);
    b.shuffle(r);
    a.into_iter().zip(b).take(m).collect()
}

fn criterion_1(board: &mut Board) {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(101);
    let cfg = LossConfig { tau: TAU, emcl_enabled: true };
    let mut worst = 0.0f64;
    let mut batches = 0;
    for n in [2, 3, 5] {
        for m in [0, 1, n] {
            for dup in [false, true] {
                for _ in 0..2 {
                    let (t, z) = (unit_rows(&mut r, n, 4), unit_rows(&mut r, n, 4));
                    let pos = PositiveSets::from_groups(&groups_for(&mut r, n, dup));
                    let fwd = tmcl_direction(&t, &z, &pos, &cfg).unwrap();
                    worst = worst.max(rel_err(&fwd.grads, &fd_grad(&t, &z, |a, b| tmcl_direction_unchecked(a, b, &pos, TAU).value)));
                    let bwd = tmcl_direction(&z, &t, &pos, &cfg).unwrap();
                    worst = worst.max(rel_err(&bwd.grads, &fd_grad(&z, &t, |a, b| tmcl_direction_unchecked(a, b, &pos, TAU).value)));
                    let sym = tmcl_symmetric(&t, &z, &pos, &cfg).unwrap();
                    worst = worst.max(rel_err(
                        &sym.grads,
                        &fd_grad(&t, &z, |a, b| {
                            tmcl_direction_unchecked(a, b, &pos, TAU).value + tmcl_direction_unchecked(b, a, &pos, TAU).value
                        }),
                    ));
                    let (zc, ze) = (unit_rows(&mut r, n, 4), unit_rows(&mut r, n, 4));
                    let pairs = random_pairs(&mut r, n, m);
                    let e = emcl(&zc, &ze, &PairSubset::new(pairs.clone(), n).unwrap(), &cfg).unwrap();
                    let back: Vec<(usize, usize)> = pairs.iter().map(|&(c, e)| (e, c)).collect();
                    worst = worst.max(rel_err(
                        &e.grads,
                        &fd_grad(&zc, &ze, |a, b| {
                            if pairs.is_empty() {
                                0.0
                            } else {
                                emcl_direction_unchecked(a, b, &pairs, n, TAU).value
                                    + emcl_direction_unchecked(b, a, &back, n, TAU).value
                            }
                        }),
                    ));
                    batches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    board.record(
        1,
        "gradient oracle",
        worst < 1e-5 && batches >= 20 && secs < 10.0,
        format!("max rel err {worst:.2e} over {batches} batches, {secs:.2}s"),
    );
}

/// Diagonal-positive infoNCE, written without the library's kernel.
fn infonce(a: &Matrix, b: &Matrix, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        let denom: f64 = (0..b.rows()).map(|j| (plain_dot(a.row(i), b.row(j)) / tau).exp()).sum();
        total -= ((plain_dot(a.row(i), b.row(i)) / tau).exp() / denom).ln();
    }
    total
}

fn criterion_2(board: &mut Board) {
    let mut r = ChaCha8Rng::seed_from_u64(202);
    let cfg = LossConfig { tau: TAU, emcl_enabled: true };
    let (mut wt, mut we) = (0.0f64, 0.0f64);
    let mut zero = true;
    for n in [1, 2, 3, 5, 8, 16] {
        for _ in 0..5 {
            let (a, b) = (unit_rows(&mut r, n, 6), unit_rows(&mut r, n, 6));
            let oracle = infonce(&a, &b, TAU);
            wt = wt.max((tmcl_direction(&a, &b, &PositiveSets::singletons(n), &cfg).unwrap().value - oracle).abs());
            let diag: Vec<_> = (0..n).map(|i| (i, i)).collect();
            we = we.max((emcl_direction(&a, &b, &diag, n, &cfg).unwrap().value - oracle).abs());
            let e0 = emcl(&a, &b, &PairSubset::empty(n), &cfg).unwrap();
            zero &= e0.value == 0.0 && emcl_direction(&a, &b, &[], n, &cfg).unwrap().value == 0.0;
        }
    }
    board.record(
        2,
        "reduction identities",
        wt < 1e-12 && we < 1e-12 && zero,
        format!("tmcl vs infoNCE {wt:.1e}, emcl(m=n) vs infoNCE {we:.1e}, emcl(m=0)==0: {zero}"),
    );
}

fn criterion_3(board: &mut Board) {
    let unit = LossConfig { tau: 1.0, emcl_enabled: true };
    let cfg = LossConfig { tau: TAU, emcl_enabled: true };
    let e = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let a = tmcl_direction(&e, &e, &PositiveSets::singletons(2), &unit).unwrap().value;
    let u = Matrix::from_rows(&[[0.0, 1.0]; 4]).unwrap();
    let b = tmcl_direction(&u, &u, &PositiveSets::singletons(4), &cfg).unwrap().value;
    let c = emcl_direction(&u, &u, &[(0, 0), (1, 1)], 4, &cfg).unwrap().value;
    let da = (a - 2.0 * (1.0 + (-1.0f64).exp()).ln()).abs();
    let db = (b - 4.0 * 4f64.ln()).abs();
    let dc = (c - 2.0 * 4f64.ln()).abs();
    board.record(
        3,
        "closed-form spot values",
        da < 1e-9 && db < 1e-9 && dc < 1e-9,
        format!("|err| {da:.1e}, {db:.1e}, {dc:.1e}"),
    );
}

fn criterion_4(board: &mut Board) {
    let mut r = ChaCha8Rng::seed_from_u64(404);
    let cfg = LossConfig { tau: TAU, emcl_enabled: true };
    let mut worst = 0.0f64;
    for n in [2, 3, 5, 9] {
        for _ in 0..4 {
            let (t, z, zc, ze) = (unit_rows(&mut r, n, 5), unit_rows(&mut r, n, 5), unit_rows(&mut r, n, 5), unit_rows(&mut r, n, 5));
            let groups = groups_for(&mut r, n, true);
            let m = r.random_range(0..=n);
            let pairs = random_pairs(&mut r, n, m);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let mut inv = vec![0; n];
            for (new, &old) in perm.iter().enumerate() {
                inv[old] = new;
            }
            let pos = PositiveSets::from_groups(&groups);
            let pos_p = PositiveSets::from_groups(&perm.iter().map(|&i| groups[i]).collect::<Vec<_>>());
            let pairs_p = PairSubset::new(pairs.iter().map(|&(c, e)| (inv[c], inv[e])).collect(), n).unwrap();
            let pairs = PairSubset::new(pairs, n).unwrap();
            let p = |m: &Matrix| m.select_rows(&perm);
            let diffs = [
                tmcl_direction(&t, &z, &pos, &cfg).unwrap().value - tmcl_direction(&p(&t), &p(&z), &pos_p, &cfg).unwrap().value,
                tmcl_symmetric(&t, &z, &pos, &cfg).unwrap().value - tmcl_symmetric(&p(&t), &p(&z), &pos_p, &cfg).unwrap().value,
                emcl(&zc, &ze, &pairs, &cfg).unwrap().value - emcl(&p(&zc), &p(&ze), &pairs_p, &cfg).unwrap().value,
                {
                    let view = |t: Matrix, z: Matrix, pos: PositiveSets| ModalityView { text: t, modality: z, pos };
                    let before = total_loss(&view(t.clone(), zc.clone(), pos.clone()), &view(t.clone(), ze.clone(), pos.clone()), &pairs, &cfg)
                        .unwrap()
                        .value;
                    let after = total_loss(&view(p(&t), p(&zc), pos_p.clone()), &view(p(&t), p(&ze), pos_p.clone()), &pairs_p, &cfg)
                        .unwrap()
                        .value;
                    before - after
                },
            ];
            worst = diffs.iter().fold(worst, |w, d| w.max(d.abs()));
        }
    }
    board.record(4, "permutation invariance", worst < 1e-12, format!("max |diff| {worst:.1e}"));
}

struct RunMetrics {
    cross_r1: f64,
    zero_shot: f64,
    m2t_rsum: f64,
}

fn split(ds: &Dataset, seed: u64) -> (Dataset, Dataset, Dataset) {
    let (a, b, c) = ds.split(0.7, 0.1, seed);
    (ds.subset(&a), ds.subset(&b), ds.subset(&c))
}

fn run_binding(seed: u64, emcl_enabled: bool) -> (RunMetrics, Model) {
    let ds = generate_synthetic(&SyntheticConfig { seed, ..Default::default() }).unwrap();
    let (tr, va, te) = split(&ds, seed);
    let cfg = TrainConfig { emcl_enabled, seed, ..Default::default() };
    let out = train(&tr, Some(&va), Model::for_dataset(&ds, seed).unwrap(), &cfg, TrainOutputs::default()).unwrap();
    let m = out.model;
    let (i2s, s2i) = cross_modal_retrieval(&m, &te, &DEFAULT_KS).unwrap();
    let zs = [Modality::Image, Modality::Sequence]
        .map(|q| cross_modal_accuracy(&m, &tr, &te, q, CrossModalMode::Prototype).unwrap());
    let rsum = modality_to_text(&m, &te, Modality::Image, &DEFAULT_KS).unwrap().rsum
        + modality_to_text(&m, &te, Modality::Sequence, &DEFAULT_KS).unwrap().rsum;
    let metrics = RunMetrics {
        cross_r1: (i2s.recall(1).unwrap() + s2i.recall(1).unwrap()) / 2.0,
        zero_shot: (zs[0] + zs[1]) / 2.0,
        m2t_rsum: rsum,
    };
    (metrics, m)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn criterion_5(board: &mut Board) -> Model {
    let start = Instant::now();
    let mut on = Vec::new();
    let mut off = Vec::new();
    let mut kept = None;
    for seed in 0..5 {
        let (a, model) = run_binding(seed, true);
        let (b, _) = run_binding(seed, false);
        println!(
            "    seed {seed}: cross R@1 {:.1} vs {:.1}; cross zero-shot {:.1} vs {:.1}; m2t RSUM {:.1} vs {:.1} (EMCL vs TMCL-only)",
            a.cross_r1, b.cross_r1, a.zero_shot, b.zero_shot, a.m2t_rsum, b.m2t_rsum
        );
        if seed == 0 {
            kept = Some(model);
        }
        on.push(a);
        off.push(b);
    }
    let med = |v: &[RunMetrics], f: fn(&RunMetrics) -> f64| median(v.iter().map(f).collect());
    let (r_on, r_off) = (med(&on, |m| m.cross_r1), med(&off, |m| m.cross_r1));
    let (z_on, z_off) = (med(&on, |m| m.zero_shot), med(&off, |m| m.zero_shot));
    let (s_on, s_off) = (med(&on, |m| m.m2t_rsum), med(&off, |m| m.m2t_rsum));
    let secs = start.elapsed().as_secs_f64();
    let pass = r_on >= r_off + 5.0 && z_on > z_off && (s_on - s_off).abs() <= 0.1 * s_off && secs < 600.0;
    board.record(
        5,
        "end-to-end binding effect",
        pass,
        format!(
            "median cross R@1 {r_on:.1} vs {r_off:.1}; cross zero-shot {z_on:.1} vs {z_off:.1}; m2t RSUM {s_on:.1} vs {s_off:.1}; {secs:.0}s"
        ),
    );
    kept.expect("seed 0 ran")
}

fn brute_recall(q: &Matrix, g: &Matrix, rel: &[Vec<usize>], k: usize) -> f64 {
    let mut hits = 0;
    for i in 0..q.rows() {
        let sims: Vec<f64> = (0..g.rows()).map(|j| plain_dot(q.row(i), g.row(j))).collect();
        let mut order: Vec<usize> = (0..g.rows()).collect();
        order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
        if order[..k.min(order.len())].iter().any(|j| rel[i].contains(j)) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / q.rows() as f64
}

fn brute_prototype(q: &Matrix, s: &Matrix, labels: &[usize], c: usize) -> Vec<usize> {
    let d = s.cols();
    let mut protos = vec![vec![0.0; d]; c];
    let mut counts = vec![0.0; c];
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..d {
            protos[l][j] += s.get(i, j);
        }
        counts[l] += 1.0;
    }
    for (p, n) in protos.iter_mut().zip(&counts) {
        p.iter_mut().for_each(|v| *v /= n);
        let norm = plain_dot(p, p).sqrt();
        p.iter_mut().for_each(|v| *v /= norm);
    }
    (0..q.rows())
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if 1.0 - plain_dot(q.row(i), &protos[k]) < 1.0 - plain_dot(q.row(i), &protos[best]) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn brute_balanced(preds: &[usize], labels: &[usize]) -> f64 {
    let mut per: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (p, l) in preds.iter().zip(labels) {
        let e = per.entry(*l).or_insert((0.0, 0.0));
        e.1 += 1.0;
        if p == l {
            e.0 += 1.0;
        }
    }
    let sum: f64 = per.values().map(|(h, t)| h / t).sum();
    100.0 * sum / per.len() as f64
}

fn criterion_6(board: &mut Board) {
    let mut r = ChaCha8Rng::seed_from_u64(606);
    let mut recall_ok = 0;
    for _ in 0..50 {
        let q = unit_rows(&mut r, 20, 6);
        let mut g = unit_rows(&mut r, 30, 6);
        // exact ties: duplicate some gallery rows and plant query copies
        for _ in 0..5 {
            let (a, b) = (r.random_range(0..30), r.random_range(0..30));
            let row = g.row(a).to_vec();
            g.row_mut(b).copy_from_slice(&row);
        }
        let rel: Vec<Vec<usize>> = (0..20)
            .map(|_| {
                let mut v: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(0..30)).collect();
                v.dedup();
                v
            })
            .collect();
        let all = [1, 5, 10, 30].iter().all(|&k| recall_at_k(&q, &g, &rel, k).unwrap() == brute_recall(&q, &g, &rel, k));
        recall_ok += all as usize;
    }

    let mut proto_ok = true;
    let hand_s = Matrix::from_rows(&[[1.0, 0.0], [0.6, 0.8], [0.0, 1.0], [-0.6, 0.8]]).unwrap();
    let hand_q = Matrix::from_rows(&[[0.8, 0.6], [-0.8, 0.6], [0.0, -1.0]]).unwrap();
    proto_ok &= cross_modal_zero_shot(&hand_q, &hand_s, &[0, 0, 1, 1], 2, CrossModalMode::Prototype).unwrap()
        == brute_prototype(&hand_q, &hand_s, &[0, 0, 1, 1], 2);
    let mut ba_ok = true;
    for _ in 0..50 {
        let c = r.random_range(2..6);
        let s = unit_rows(&mut r, 40, 5);
        let mut labels: Vec<usize> = (0..40).map(|i| i % c).collect();
        labels.shuffle(&mut r);
        let q = unit_rows(&mut r, 25, 5);
        proto_ok &= cross_modal_zero_shot(&q, &s, &labels, c, CrossModalMode::Prototype).unwrap()
            == brute_prototype(&q, &s, &labels, c);
        let truth: Vec<usize> = (0..25).map(|_| r.random_range(0..c)).collect();
        let preds: Vec<usize> = (0..25).map(|_| r.random_range(0..c)).collect();
        ba_ok &= balanced_accuracy(&preds, &truth).unwrap() == brute_balanced(&preds, &truth);
    }
    board.record(
        6,
        "evaluation oracles",
        recall_ok == 50 && proto_ok && ba_ok,
        format!("recall {recall_ok}/50 instances exact; prototype exact: {proto_ok}; balanced accuracy exact: {ba_ok}"),
    );
}

fn criterion_7(board: &mut Board, model: &Model) {
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let records: Vec<_> = ds.records.iter().collect();
    let (idx, emb) = model.embed_records(&records, Modality::Image).unwrap();
    let mut labels: Vec<usize> = idx.iter().map(|&i| ds.records[i].class_id).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(707));
    let classes = ds.meta.num_classes();
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [1, 2, 4, 8, 16] {
        let res = few_shot_probe(&emb, &labels, k, 300, 7).unwrap();
        let sigma = chance_sigma(&counts.iter().map(|&c| c - k).collect::<Vec<_>>());
        let chance = 100.0 / classes as f64;
        ok &= res.per_repeat.len() == 300 && (res.mean - chance).abs() <= 3.0 * sigma;
        detail.push(format!("K={k}: {:.1}±{:.1}", res.mean, 3.0 * sigma));
    }
    let spec = ZeroShotSpec {
        prompts: (0..classes).map(|c| class_prompt_pool(c, 20)).collect(),
        prompts_per_class_used: Some(10),
    };
    let resolved = spec.resolve(11).unwrap();
    let a = zero_shot_classify(&emb, &spec, model, 11).unwrap();
    let b = zero_shot_classify(&emb, &spec, model, 11).unwrap();
    let zs_ok = a == b && resolved.iter().all(|p| p.len() == 10) && a.len() == emb.rows();
    board.record(
        7,
        "protocol fidelity",
        ok && zs_ok,
        format!("shuffled-label few-shot {} (chance 25); 10-of-20 zero-shot deterministic: {zs_ok}", detail.join(", ")),
    );
}

fn criterion_8(board: &mut Board) {
    use ExclusionReason::*;
    let c = |i: usize| LabelOutcome::Class(i);
    let x = LabelOutcome::Excluded;
    let fixture: [(&str, LabelOutcome); 30] = [
        ("Normal ECG", c(0)),
        ("NORMAL EKG for age", c(0)),
        ("Tracing within normal limits", c(0)),
        ("No issues found on review", c(0)),
        ("Left ventricular hypertrophy", c(1)),
        ("left atrial enlargement present", c(1)),
        ("voltage criteria for LVH", c(1)),
        ("right ventricular overload pattern", c(1)),
        ("ST elevation in V2-V3", c(2)),
        ("nonspecific T abnormalities", c(2)),
        ("frequent PVC", c(2)),
        ("ventricular premature complex", c(2)),
        ("diffuse ST changes", c(2)),
        ("myocardial ischemia noted", c(3)),
        ("old inferior infarct", c(3)),
        ("anterior infarct, age undetermined", c(3)),
        ("Septal infarct", c(3)),
        ("first degree A-V block", c(4)),
        ("prolonged PR interval", c(4)),
        ("right bundle branch block", c(4)),
        ("left axis deviation", c(4)),
        ("intraventricular conduction delay", c(4)),
        ("normal ecg with hypertrophy", c(0)),
        ("LVH with ST changes and septal infarct", c(1)),
        ("poor quality tracing, possible hypertrophy", x(DisallowedContent)),
        ("Borderline ECG, probable septal infarct", x(DisallowedContent)),
        ("Pediatric normal ECG", x(DisallowedContent)),
        ("motion artifacts in limb leads", x(DisallowedContent)),
        ("sinus rhythm, rate 72", x(NoKeyword)),
        ("Heart rate regular", x(NoKeyword)),
    ];
    let rules = LabelRuleSet::default();
    let label_hits = fixture.iter().filter(|(t, want)| label_text(t, &rules) == *want).count();
    let texts = [
        (make_prompt(ECG_PROMPT_TEMPLATE, "atrial fibrillation").unwrap(), "This ECG shows atrial fibrillation."),
        (generate_ecg_report(&["r0", "r1", "r2"]).unwrap(), "ECG presents r0. Additional findings include the following: r1, r2."),
        (
            generate_demographics(&DemographicFields {
                gender: "F".into(),
                anchor_age: "63".into(),
                admission_type: "EW EMER.".into(),
                admission_location: "EMERGENCY ROOM".into(),
            })
            .unwrap(),
            "F patient, who is at the age of 63, was admitted as EW EMER.. Location: EMERGENCY ROOM.",
        ),
    ];
    let text_hits = texts.iter().filter(|(got, want)| got.as_bytes() == want.as_bytes()).count();
    board.record(
        8,
        "appendix procedures",
        label_hits == 30 && text_hits == 3,
        format!("labels {label_hits}/30, templates {text_hits}/3 byte-exact"),
    );
}

fn run_cli(args: &[&str], cwd: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_tribind"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_9(board: &mut Board) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut ok = run_cli(&["gen-data", "--out", "train.jsonl", "--records", "240", "--seed", "3"], p)
        && run_cli(&["gen-data", "--out", "val.jsonl", "--records", "60", "--seed", "4"], p);
    for run in ["a", "b"] {
        ok &= run_cli(&["train", "--data", "train.jsonl", "--val-data", "val.jsonl", "--out", run, "--epochs", "4", "--seed", "9"], p);
    }
    let mut same = 0;
    for f in ["last.json", "best.json", "train_log.jsonl"] {
        let a = std::fs::read(p.join("a").join(f)).unwrap_or_default();
        let b = std::fs::read(p.join("b").join(f)).unwrap_or_default();
        same += (!a.is_empty() && a == b) as usize;
    }
    board.record(9, "reproducibility", ok && same == 3, format!("{same}/3 artifacts bitwise identical across two CLI runs"));
}

fn criterion_10(board: &mut Board, model: &Model) {
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let (xs, ys) = fusion_samples(&ds, model, OutcomeTarget::Mortality).unwrap();
    let mut shuffled = ys.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1010));
    let d = model.embed_dim();
    let fit = |labels: &[bool], mode| fit_fusion(&xs, labels, d, d, &FusionConfig { mode, ..Default::default() }).unwrap();
    let text = fit(&ys, FusionMode::TextOnly);
    let mixed = fit(&ys, FusionMode::TextPlusEmbeddings);
    let st = fit(&shuffled, FusionMode::TextOnly);
    let sm = fit(&shuffled, FusionMode::TextPlusEmbeddings);
    let within = |o: &tribind::downstream::FusionOutcome| (o.heldout_balanced_accuracy - 50.0).abs() <= 3.0 * o.heldout_chance_sigma;
    let pass = mixed.heldout_balanced_accuracy >= text.heldout_balanced_accuracy + 10.0 && within(&st) && within(&sm);
    board.record(
        10,
        "downstream fusion",
        pass,
        format!(
            "text+emb {:.1} vs text-only {:.1}; shuffled {:.1} / {:.1} (50 ± {:.1})",
            mixed.heldout_balanced_accuracy,
            text.heldout_balanced_accuracy,
            sm.heldout_balanced_accuracy,
            st.heldout_balanced_accuracy,
            3.0 * st.heldout_chance_sigma
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut board = Board(Vec::new());
    criterion_1(&mut board);
    criterion_2(&mut board);
    criterion_3(&mut board);
    criterion_4(&mut board);
    let model = criterion_5(&mut board);
    criterion_6(&mut board);
    criterion_7(&mut board, &model);
    criterion_8(&mut board);
    criterion_9(&mut board);
    criterion_10(&mut board, &model);
    let failed: Vec<_> = board.0.iter().filter(|c| !c.2).map(|c| c.0).collect();
    println!("acceptance: {}/{} criteria pass", board.0.len() - failed.len(), board.0.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
