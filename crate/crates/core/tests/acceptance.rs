//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs sequentially so the timing limits are measured
//! without other tests competing for the CPU.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use iim::binarize::{
    binarize_backward, binarize_forward, compressed_sigmoid, compressed_sigmoid_backward,
    compressed_sigmoid_scalar, BinaryMap, ConfidenceMap, ThresholdField, ThresholdGrad,
};
use iim::evalx::{localization_scores, match_instances, GtPoint};
use iim::harness::checkpoint::{from_bytes, to_bytes};
use iim::harness::dataset::{synth_split, Split};
use iim::harness::infer::{evaluate_scenes, localize_detailed};
use iim::harness::model::{ModelState, Routing, ThresholdMode};
use iim::harness::scene::{scene_rng, synth_scene, Scene, SceneSpec};
use iim::harness::train::{train, TrainConfig};
use iim::instances::label_components;
use iim::labels::{iim_from_boxes, iim_from_points, Annotation, InstanceLabelMap};
use iim::numgrid::{
    avgpool_box, avgpool_box_backward, conv2d_backward, conv2d_with, gap, gap_backward, l1_loss,
    mse_loss, prelu, prelu_backward, resize_bilinear, resize_bilinear_backward, sigmoid,
    sigmoid_backward, FeatureStack, Grid, LayerParams, Pad,
};

// ---------------------------------------------------------------- helpers

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Central differences at step 1e-5.
fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    const H: f64 = 1e-5;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn stack(c: usize, h: usize, w: usize, v: &[f64]) -> FeatureStack {
    FeatureStack::new(c, h, w, v.to_vec()).unwrap()
}

fn grid(h: usize, w: usize, v: &[f64]) -> Grid {
    Grid::new(h, w, v.to_vec()).unwrap()
}

// ------------------------------------------------------ criterion 1

const FD_INSTANCES: usize = 20;
const FD_TOL: f64 = 1e-4;

/// Worst relative error per operation over the random instances.
fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut r = rng(101);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => worst.push((name, e)),
    };

    for _ in 0..FD_INSTANCES {
        // conv: input, weight and bias gradients
        let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
        let k = [1, 3][r.random_range(0..2)];
        let (h, w) = (r.random_range(4..=8), r.random_range(4..=8));
        let pad = if r.random_bool(0.5) { Pad::zero(k / 2) } else { Pad::replicate(k / 2) };
        let mut params = LayerParams::zeros("c", co, ci, k, k);
        params.weight = randn(&mut r, params.weight.len());
        params.bias = randn(&mut r, co);
        let x = randn(&mut r, ci * h * w);
        let out = conv2d_with(&stack(ci, h, w, &x), &params, pad).unwrap();
        let (oc, oh, ow) = out.shape();
        let u = randn(&mut r, oc * oh * ow);
        let g = conv2d_backward(&stack(ci, h, w, &x), &params, pad, &stack(oc, oh, ow, &u), true).unwrap();
        let fx = |v: &[f64]| dot(&u, conv2d_with(&stack(ci, h, w, v), &params, pad).unwrap().values());
        let mut e = rel_err(g.input.unwrap().values(), &numeric_grad(&fx, &x));
        let xs = stack(ci, h, w, &x);
        let fw = |v: &[f64]| {
            let mut p = params.clone();
            p.weight = v.to_vec();
            dot(&u, conv2d_with(&xs, &p, pad).unwrap().values())
        };
        e = e.max(rel_err(&g.params.weight, &numeric_grad(&fw, &params.weight)));
        let fb = |v: &[f64]| {
            let mut p = params.clone();
            p.bias = v.to_vec();
            dot(&u, conv2d_with(&xs, &p, pad).unwrap().values())
        };
        e = e.max(rel_err(&g.params.bias, &numeric_grad(&fb, &params.bias)));
        record("conv", e);

        // PReLU: input and slope, inputs kept away from the kink
        let n = r.random_range(8..=40);
        let x: Vec<f64> = randn(&mut r, n)
            .into_iter()
            .map(|v| if v.abs() < 1e-2 { v.signum() * 0.1 + v } else { v })
            .collect();
        let slope = r.random_range(-0.5..0.5);
        let u = randn(&mut r, n);
        let g = prelu_backward(&stack(1, 1, n, &x), slope, &stack(1, 1, n, &u)).unwrap();
        let fx = |v: &[f64]| dot(&u, prelu(&stack(1, 1, n, v), slope).values());
        let fs = |v: &[f64]| dot(&u, prelu(&stack(1, 1, n, &x), v[0]).values());
        record(
            "prelu",
            rel_err(g.input.values(), &numeric_grad(&fx, &x)).max(rel_err(&[g.slope], &numeric_grad(&fs, &[slope]))),
        );

        // box mean pooling with edge replication
        let k = [3, 5, 15][r.random_range(0..3)];
        let (c, h, w) = (r.random_range(1..=2), r.random_range(3..=16), r.random_range(3..=16));
        let x = randn(&mut r, c * h * w);
        let u = randn(&mut r, c * h * w);
        let g = avgpool_box_backward(&stack(c, h, w, &u), k).unwrap();
        let fx = |v: &[f64]| dot(&u, avgpool_box(&stack(c, h, w, v), k).unwrap().values());
        record("avgpool", rel_err(g.values(), &numeric_grad(&fx, &x)));

        // bilinear resize, down and up
        let (h, w) = (r.random_range(2..=12), r.random_range(2..=12));
        let (oh, ow) = (r.random_range(1..=16), r.random_range(1..=16));
        let x = randn(&mut r, h * w);
        let u = randn(&mut r, oh * ow);
        let g = resize_bilinear_backward(&stack(1, oh, ow, &u), h, w).unwrap();
        let fx = |v: &[f64]| dot(&u, resize_bilinear(&stack(1, h, w, v), oh, ow).unwrap().values());
        record("resize", rel_err(g.values(), &numeric_grad(&fx, &x)));

        // global average pooling
        let (c, h, w) = (r.random_range(1..=4), r.random_range(1..=8), r.random_range(1..=8));
        let x = randn(&mut r, c * h * w);
        let u = randn(&mut r, c);
        let g = gap_backward(&u, h, w);
        let fx = |v: &[f64]| dot(&u, &gap(&stack(c, h, w, v)));
        record("gap", rel_err(g.values(), &numeric_grad(&fx, &x)));

        // logistic sigmoid
        let n = r.random_range(4..=30);
        let x: Vec<f64> = randn(&mut r, n).into_iter().map(|v| 3.0 * v).collect();
        let u = randn(&mut r, n);
        let y = sigmoid(&stack(1, 1, n, &x));
        let g = sigmoid_backward(&y, &stack(1, 1, n, &u)).unwrap();
        let fx = |v: &[f64]| dot(&u, sigmoid(&stack(1, 1, n, v)).values());
        record("sigmoid", rel_err(g.values(), &numeric_grad(&fx, &x)));

        // compressed sigmoid
        let x: Vec<f64> = randn(&mut r, n).into_iter().map(|v| 3.0 * v).collect();
        let g = compressed_sigmoid_backward(&grid(1, n, &x), &grid(1, n, &u)).unwrap();
        let fx = |v: &[f64]| dot(&u, compressed_sigmoid(&grid(1, n, v)).values());
        record("compressed sigmoid", rel_err(g.values(), &numeric_grad(&fx, &x)));

        // losses; L1 away from ties
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let p = randn(&mut r, h * w);
        let t: Vec<f64> = randn(&mut r, h * w)
            .into_iter()
            .zip(&p)
            .map(|(v, &pv)| if (v - pv).abs() < 1e-2 { pv + 0.1 } else { v })
            .collect();
        let tg = grid(h, w, &t);
        let g = mse_loss(&grid(h, w, &p), &tg).unwrap().grad;
        let fx = |v: &[f64]| mse_loss(&grid(h, w, v), &tg).unwrap().value;
        record("mse", rel_err(g.values(), &numeric_grad(&fx, &p)));
        let g = l1_loss(&grid(h, w, &p), &tg).unwrap().grad;
        let fx = |v: &[f64]| l1_loss(&grid(h, w, v), &tg).unwrap().value;
        record("l1", rel_err(g.values(), &numeric_grad(&fx, &p)));
    }
    worst
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let worst = gradient_suite();
    let secs = t0.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let list: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(
        max < FD_TOL && secs < 10.0 && worst.len() == 9,
        format!(
            "{} ops x {FD_INSTANCES} instances, worst rel err {max:.2e} < {FD_TOL:.0e}, {secs:.2}s < 10s [{}]",
            worst.len(),
            list.join(", ")
        ),
    )
}

// ------------------------------------------------------ criterion 2

fn criterion_2() -> Verdict {
    let mut r = rng(202);
    let mut exact = true;
    for _ in 0..50 {
        let (h, w) = (r.random_range(1..=20), r.random_range(1..=20));
        let conf = ConfidenceMap::new(Grid::from_fn(h, w, |_, _| r.random::<f64>())).unwrap();
        let up = grid(h, w, &randn(&mut r, h * w));
        let pix = ThresholdField::Pixel(Grid::from_fn(h, w, |_, _| r.random::<f64>()));
        let (_, tape) = binarize_forward(&conf, &pix).unwrap();
        let g = binarize_backward(&tape, &up).unwrap();
        exact &= g.conf == up;
        match g.threshold {
            ThresholdGrad::Pixel(t) => exact &= t.values().iter().zip(up.values()).all(|(a, b)| *a == -*b),
            ThresholdGrad::Scalar(_) => exact = false,
        }
        let (_, tape) = binarize_forward(&conf, &ThresholdField::Scalar(r.random())).unwrap();
        let g = binarize_backward(&tape, &up).unwrap();
        exact &= g.conf == up;
        let total: f64 = up.values().iter().sum();
        match g.threshold {
            ThresholdGrad::Scalar(t) => exact &= (t + total).abs() <= 1e-12 * total.abs().max(1.0),
            ThresholdGrad::Pixel(_) => exact = false,
        }
    }

    const N: usize = 512;
    let conf = ConfidenceMap::new(Grid::from_fn(N, N, |_, _| r.random::<f64>())).unwrap();
    let mut worst_z: f64 = 0.0;
    for k in 1..=9 {
        let t = k as f64 / 10.0;
        let (bin, _) = binarize_forward(&conf, &ThresholdField::Scalar(t)).unwrap();
        let se = (t * (1.0 - t) / (N * N) as f64).sqrt();
        worst_z = worst_z.max((bin.grid().mean() - (1.0 - t)).abs() / se);
    }
    verdict(
        exact && worst_z < 3.0,
        format!("exact pixelwise contract on 100 maps: {exact}; 512x512 mean output vs 1-T: worst {worst_z:.2} SE < 3"),
    )
}

// ------------------------------------------------------ criterion 3

fn criterion_3() -> Verdict {
    let mut r = rng(303);
    let mut outside = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..1_000_000u32 {
        let x = match i % 4 {
            0 => 10.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r),
            1 => r.random_range(-1e3..1e3),
            2 => r.random_range(-1e300..1e300),
            _ => loop {
                let v = f64::from_bits(r.random());
                if v.is_finite() {
                    break v;
                }
            },
        };
        let y = compressed_sigmoid_scalar(x);
        lo = lo.min(y);
        hi = hi.max(y);
        if !(y > 0.2 && y < 0.7) {
            outside += 1;
        }
    }
    verdict(
        outside == 0,
        format!("10^6 finite inputs, {outside} outside (0.2, 0.7); observed range [{lo:.17}, {hi:.17}]"),
    )
}

// ------------------------------------------------------ criterion 4

fn flood(bin: &[bool], labels: &mut [u32], w: usize, h: usize, y: usize, x: usize, id: u32) {
    let i = y * w + x;
    if !bin[i] || labels[i] != 0 {
        return;
    }
    labels[i] = id;
    if x > 0 {
        flood(bin, labels, w, h, y, x - 1, id);
    }
    if x + 1 < w {
        flood(bin, labels, w, h, y, x + 1, id);
    }
    if y > 0 {
        flood(bin, labels, w, h, y - 1, x, id);
    }
    if y + 1 < h {
        flood(bin, labels, w, h, y + 1, x, id);
    }
}

fn flood_fill_labels(bin: &[bool], h: usize, w: usize) -> Vec<u32> {
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    for y in 0..h {
        for x in 0..w {
            if bin[y * w + x] && labels[y * w + x] == 0 {
                next += 1;
                flood(bin, &mut labels, w, h, y, x, next);
            }
        }
    }
    labels
}

/// Same partition up to a relabeling: a bijection between nonzero labels.
fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let (mut ab, mut ba) = (HashMap::new(), HashMap::new());
    a.iter().zip(b).all(|(&x, &y)| {
        if (x == 0) != (y == 0) {
            return false;
        }
        x == 0 || (*ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
    })
}

fn criterion_4() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(404);
    let mut agree = 0;
    let mut components = 0;
    for _ in 0..200 {
        let (h, w) = (r.random_range(1..=64), r.random_range(1..=64));
        let p = r.random_range(0.05..0.95);
        let bin: Vec<bool> = (0..h * w).map(|_| r.random_bool(p)).collect();
        let g = Grid::new(h, w, bin.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        let ccl = label_components(&BinaryMap::new(g).unwrap()).unwrap();
        let reference = flood_fill_labels(&bin, h, w);
        let n_ref = reference.iter().copied().max().unwrap_or(0) as usize;
        if same_partition(ccl.labels(), &reference) && ccl.count() == n_ref {
            agree += 1;
        }
        components += n_ref;
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        agree == 200 && secs < 5.0,
        format!("{agree}/200 maps partition-identical to flood fill ({components} components), {secs:.2}s < 5s"),
    )
}

// ------------------------------------------------------ criterion 5

fn max_matching(adm: &[Vec<bool>], pred: usize, used: &mut Vec<bool>) -> usize {
    if pred == adm.len() {
        return 0;
    }
    let mut best = max_matching(adm, pred + 1, used);
    for g in 0..used.len() {
        if adm[pred][g] && !used[g] {
            used[g] = true;
            best = best.max(1 + max_matching(adm, pred + 1, used));
            used[g] = false;
        }
    }
    best
}

fn criterion_5() -> Verdict {
    let mut r = rng(505);
    let mut agree = 0;
    for _ in 0..500 {
        let (np, ng) = (r.random_range(0..=6), r.random_range(0..=6));
        let preds: Vec<[f64; 2]> = (0..np).map(|_| [r.random_range(0.0..20.0), r.random_range(0.0..20.0)]).collect();
        let gts: Vec<GtPoint> = (0..ng)
            .map(|_| GtPoint {
                center: [r.random_range(0.0..20.0), r.random_range(0.0..20.0)],
                sigma: r.random_range(1.0..8.0),
            })
            .collect();
        let adm: Vec<Vec<bool>> = preds
            .iter()
            .map(|p| {
                gts.iter()
                    .map(|g| ((p[0] - g.center[0]).powi(2) + (p[1] - g.center[1]).powi(2)).sqrt() <= g.sigma)
                    .collect()
            })
            .collect();
        let best = max_matching(&adm, 0, &mut vec![false; ng]);
        let m = match_instances(&preds, &gts);
        if m.tp == best && m.fp == np - best && m.fn_ == ng - best {
            agree += 1;
        }
    }

    // four predictions, five heads: three hits, one stray, two misses
    let gts: Vec<GtPoint> = (0..5)
        .map(|i| GtPoint {
            center: [20.0 * i as f64, 0.0],
            sigma: 3.0,
        })
        .collect();
    let preds = [[1.0, 0.0], [20.0, 2.0], [41.0, -1.0], [70.0, 30.0]];
    let s = localization_scores([&match_instances(&preds, &gts)]);
    let hand = s.precision == 0.75 && s.recall == 0.6 && (s.f1 - 2.0 / 3.0).abs() < 1e-15;
    verdict(
        agree == 500 && hand,
        format!(
            "{agree}/500 match exhaustive maximum; hand example Pre {} Rec {} F1 {:.15}",
            s.precision, s.recall, s.f1
        ),
    )
}

// ------------------------------------------------------ criterion 6

fn check_instances(map: &InstanceLabelMap, centers: &[(usize, usize)]) -> bool {
    let comps = label_components(&map.to_binary()).unwrap().count();
    comps == centers.len()
        && map.count() == centers.len()
        && centers.iter().enumerate().all(|(k, &(x, y))| map.get(y, x) == k as u32 + 1)
}

fn criterion_6() -> Verdict {
    const S: usize = 64;
    let mut r = rng(606);
    let (mut ok_points, mut ok_boxes) = (0, 0);
    for i in 0..100 {
        let n = r.random_range(0..=30);
        // interior pixels at Chebyshev distance >= 2: never 4-adjacent as points,
        // never touching as single-pixel boxes
        let mut centers: Vec<(usize, usize)> = Vec::new();
        while centers.len() < n {
            let c = (r.random_range(1..S - 1), r.random_range(1..S - 1));
            if centers.iter().all(|&(x, y)| (x as i64 - c.0 as i64).abs().max((y as i64 - c.1 as i64).abs()) >= 2) {
                centers.push(c);
            }
        }
        let points: Vec<[f64; 2]> = centers.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
        let edge = (S - 1) as f64;
        let boxes: Vec<[f64; 4]> = centers
            .iter()
            .map(|&(x, y)| {
                let (x, y) = (x as f64, y as f64);
                let hw = r.random_range(0.5..10.0f64).min(x).min(edge - x);
                let hh = r.random_range(0.5..10.0f64).min(y).min(edge - y);
                [x - hw, y - hh, x + hw, y + hh]
            })
            .collect();
        let ann = Annotation {
            id: format!("a{i}"),
            points,
            boxes,
        };
        if check_instances(&iim_from_points(&ann, S, S).unwrap(), &centers) {
            ok_points += 1;
        }
        if check_instances(&iim_from_boxes(&ann, S, S).unwrap(), &centers) {
            ok_boxes += 1;
        }
    }
    verdict(
        ok_points == 100 && ok_boxes == 100,
        format!("points mode {ok_points}/100, boxes mode {ok_boxes}/100 (component count = annotation count, centers inside own instance)"),
    )
}

// ------------------------------------------------------ criteria 7 to 9

const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];
const ABLATION_BUDGET_SECS: f64 = 30.0 * 60.0;
const MARGIN: f64 = 0.02;
const LR_THRESHOLD_PBM: f64 = 1e-2;
const LR_THRESHOLD_IBM: f64 = 3e-2;

fn ablation_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 10,
        batch_size: 2,
        channels: 8,
        seed,
        ..TrainConfig::default()
    };
    cfg.optimizer.lr_threshold = LR_THRESHOLD_PBM;
    cfg
}

struct Scores {
    f1: f64,
    rec: f64,
}

struct SeedRun {
    fixed05: Scores,
    fixed08: Scores,
    ibm: Scores,
    pbm: Scores,
    pbm_te_only: Scores,
    pbm_model: ModelState,
    baseline: ModelState,
    test: Vec<Scene>,
    negatives: Vec<Scene>,
}

fn scores(scenes: &[Scene], model: &ModelState) -> Scores {
    let r = evaluate_scenes(scenes, model).unwrap().report;
    Scores { f1: r.f1m, rec: r.rec }
}

fn ablation_split(seed: u64, split: Split, n: usize) -> Vec<Scene> {
    let spec = SceneSpec {
        seed,
        ..SceneSpec::default()
    };
    synth_split(&spec, split, n).unwrap()
}

fn run_seed(seed: u64) -> SeedRun {
    let tr = ablation_split(seed, Split::Train, 200);
    let va = ablation_split(seed, Split::Val, 50);
    let te = ablation_split(seed, Split::Test, 50);
    let neg_spec = SceneSpec {
        seed,
        min_heads: 0,
        max_heads: 0,
        ..SceneSpec::default()
    };
    let negatives: Vec<Scene> = (0..20)
        .map(|i| synth_scene(&neg_spec, &format!("neg_{i:02}"), &mut scene_rng(seed, (7 << 32) | i)).unwrap())
        .collect();

    let cfg = ablation_config(seed);
    // The fixed-threshold baseline trains the predictor on the regression loss
    // alone; 0.5 and 0.8 are two read-outs of the same model.
    let base_cfg = TrainConfig { lambda: 0.0, ..cfg.clone() };
    let baseline = train(&tr, &va, &base_cfg, ThresholdMode::Fixed(0.5), Routing::TeOnly).unwrap().best;
    let ibm_cfg = {
        let mut c = cfg.clone();
        c.optimizer.lr_threshold = LR_THRESHOLD_IBM;
        c
    };
    let ibm = train(&tr, &va, &ibm_cfg, ThresholdMode::Ibm, Routing::TeAndCp).unwrap().best;
    let pbm = train(&tr, &va, &cfg, ThresholdMode::Pbm, Routing::TeAndCp).unwrap().best;
    let pbm_te = train(&tr, &va, &cfg, ThresholdMode::Pbm, Routing::TeOnly).unwrap().best;

    SeedRun {
        fixed05: scores(&te, &baseline),
        fixed08: scores(&te, &baseline.with_fixed_threshold(0.8).unwrap()),
        ibm: scores(&te, &ibm),
        pbm: scores(&te, &pbm),
        pbm_te_only: scores(&te, &pbm_te),
        pbm_model: pbm,
        baseline,
        test: te,
        negatives,
    }
}

fn mean(runs: &[SeedRun], f: impl Fn(&SeedRun) -> f64) -> f64 {
    runs.iter().map(f).sum::<f64>() / runs.len() as f64
}

fn criterion_7(runs: &[SeedRun], secs: f64) -> Verdict {
    for (seed, r) in ABLATION_SEEDS.iter().zip(runs) {
        println!(
            "    seed {seed}: F1 fixed0.5 {:.1} fixed0.8 {:.1} IBM {:.1} PBM {:.1} PBM(TE-only) {:.1} | Rec fixed0.5 {:.1} fixed0.8 {:.1}",
            100.0 * r.fixed05.f1,
            100.0 * r.fixed08.f1,
            100.0 * r.ibm.f1,
            100.0 * r.pbm.f1,
            100.0 * r.pbm_te_only.f1,
            100.0 * r.fixed05.rec,
            100.0 * r.fixed08.rec
        );
    }
    let rec05 = mean(runs, |r| r.fixed05.rec);
    let rec08 = mean(runs, |r| r.fixed08.rec);
    let f05 = mean(runs, |r| r.fixed05.f1);
    let d_pbm = mean(runs, |r| r.pbm.f1) - f05;
    let d_ibm = mean(runs, |r| r.ibm.f1) - f05;
    let d_route = mean(runs, |r| r.pbm.f1 - r.pbm_te_only.f1);
    let a = rec08 < rec05;
    let b = d_pbm >= MARGIN && d_ibm >= MARGIN;
    let c = d_route >= MARGIN;
    let t = secs <= ABLATION_BUDGET_SECS;
    let mark = |ok: bool| if ok { "ok" } else { "no" };
    verdict(
        a && b && c && t,
        format!(
            "(a) Rec 0.8 {:.1} < Rec 0.5 {:.1} [{}]; (b) PBM {:+.1}, IBM {:+.1} F1 over fixed 0.5, need >= +2 [{}]; \
             (c) TE-and-CP minus TE-only {:+.1}, need >= +2 [{}]; {:.0}s <= {:.0}s [{}]",
            100.0 * rec08,
            100.0 * rec05,
            mark(a),
            100.0 * d_pbm,
            100.0 * d_ibm,
            mark(b),
            100.0 * d_route,
            mark(c),
            secs,
            ABLATION_BUDGET_SECS,
            mark(t)
        ),
    )
}

fn criterion_8(runs: &[SeedRun]) -> Verdict {
    let run = &runs[0];
    let (mut lower, mut total) = (0, 0);
    for s in run.test.iter().filter(|s| s.annotation.count() > 0) {
        let l = localize_detailed(&s.image, &run.pbm_model, &s.annotation.id).unwrap();
        let ThresholdField::Pixel(t) = &l.threshold else {
            return verdict(false, "PBM model produced a scalar threshold");
        };
        let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for (&lab, &v) in s.gt.labels().iter().zip(t.values()) {
            if lab > 0 {
                fg += v;
                nf += 1;
            } else {
                bg += v;
                nb += 1;
            }
        }
        total += 1;
        if nb > 0 && fg / (nf as f64) < bg / (nb as f64) {
            lower += 1;
        }
    }
    let share = lower as f64 / total.max(1) as f64;
    verdict(
        share >= 0.9,
        format!(
            "seed {} PBM: foreground mean threshold below background on {lower}/{total} test images ({:.0}%, need >= 90%)",
            ABLATION_SEEDS[0],
            100.0 * share
        ),
    )
}

fn criterion_9(runs: &[SeedRun]) -> Verdict {
    let run = &runs[0];
    let pbm = evaluate_scenes(&run.negatives, &run.pbm_model).unwrap().report.mae;
    let base = evaluate_scenes(&run.negatives, &run.baseline).unwrap().report.mae;
    verdict(
        pbm < base,
        format!("20 negative samples, seed {}: MAE PBM {pbm:.2} < fixed 0.5 {base:.2}", ABLATION_SEEDS[0]),
    )
}

// ------------------------------------------------------ criterion 10

fn criterion_10() -> Verdict {
    let spec = SceneSpec {
        height: 64,
        width: 64,
        max_heads: 10,
        max_radius: 8.0,
        seed: 21,
        ..SceneSpec::default()
    };
    let tr = synth_split(&spec, Split::Train, 12).unwrap();
    let va = synth_split(&spec, Split::Val, 6).unwrap();
    let te = synth_split(&spec, Split::Test, 10).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train(&tr, &va, &cfg, ThresholdMode::Pbm, Routing::TeAndCp).unwrap();
    let b = train(&tr, &va, &cfg, ThresholdMode::Pbm, Routing::TeAndCp).unwrap();
    let ea = evaluate_scenes(&te, &a.best).unwrap();
    let eb = evaluate_scenes(&te, &b.best).unwrap();
    let same_run = a.log == b.log && a.best == b.best && ea.report == eb.report;

    let restored = from_bytes(&to_bytes(&a.best), std::path::Path::new("<memory>")).unwrap();
    let er = evaluate_scenes(&te, &restored).unwrap();
    let bits = |m: &ModelState| -> Vec<u64> {
        te.iter()
            .flat_map(|s| localize_detailed(&s.image, m, "x").unwrap().confidence.grid().values().to_vec())
            .map(f64::to_bits)
            .collect()
    };
    let round_trip = restored == a.best && er.report == ea.report && er.results == ea.results && bits(&restored) == bits(&a.best);
    verdict(
        same_run && round_trip,
        format!(
            "repeat run identical: {same_run}; checkpoint round trip bit-identical: {round_trip} (F1 {:.3}, MAE {:.2})",
            ea.report.f1m, ea.report.mae
        ),
    )
}

// ------------------------------------------------------ driver

fn report(n: usize, name: &str, v: Verdict, failures: &mut Vec<usize>) {
    println!("criterion {n:2} {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    if !v.pass {
        failures.push(n);
    }
}

fn main() {
    let mut failures = Vec::new();
    let fast: [(&str, fn() -> Verdict); 6] = [
        ("gradient suite", criterion_1),
        ("binarization backward contract", criterion_2),
        ("compressed sigmoid range", criterion_3),
        ("connected components vs flood fill", criterion_4),
        ("matching optimality", criterion_5),
        ("label generation non-overlap", criterion_6),
    ];
    for (i, (name, f)) in fast.iter().enumerate() {
        report(i + 1, name, f(), &mut failures);
    }

    let t0 = Instant::now();
    let runs: Vec<SeedRun> = ABLATION_SEEDS.iter().map(|&s| run_seed(s)).collect();
    let secs = t0.elapsed().as_secs_f64();
    report(7, "ablation trends", criterion_7(&runs, secs), &mut failures);
    report(8, "threshold antagonism", criterion_8(&runs), &mut failures);
    report(9, "negative-sample robustness", criterion_9(&runs), &mut failures);
    report(10, "determinism and checkpoint round trip", criterion_10(), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failures:?}");
        std::process::exit(1);
    }
}
