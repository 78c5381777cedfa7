//! Training: `MSE(I, G) + lambda * L1(O, G)`, where `O` is the binarized
//! confidence map. The L1 term reaches the threshold encoder with reversed
//! sign through the threshold path and, with [`Routing::TeAndCp`], the
//! predictor through the straight-through confidence path. The encoder input
//! is detached, so the encoder never pushes gradients into the predictor.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::infer::{evaluate_predictions, localize_detailed};
use super::model::{ModelState, Routing, ThresholdMode};
use super::predictor::{predictor_backward, predictor_forward};
use super::scene::{scene_rng, Scene};
use crate::binarize::{
    binarize_backward, binarize_forward, bm_apply, bm_backward, ThresholdField, ThresholdGrad,
};
use crate::error::{Error, Result};
use crate::labels::{iim_from_boxes, Annotation};
use crate::numgrid::{adam_step, l1_loss, mse_loss, resize_bilinear, Grid, LayerParams, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the L1 term on the binary map.
    pub lambda: f64,
    pub seed: u64,
    /// Width of the predictor's hidden layers.
    pub channels: usize,
    pub flip: bool,
    pub scale_jitter: bool,
    /// Leading epochs that train the predictor on the regression loss alone,
    /// with the threshold parameters frozen.
    pub warmup_epochs: usize,
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            lambda: 1.0,
            seed: 1,
            channels: 8,
            flip: true,
            scale_jitter: true,
            warmup_epochs: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.channels == 0 {
            return Err(Error::Config("epochs, batch_size and channels must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub l1: f64,
}

/// Gradients of one sample (or the mean over a batch).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub predictor: Vec<LayerParams>,
    pub encoder: Vec<LayerParams>,
    /// Gradient of the learnable scalar threshold (layer mode).
    pub layer: f64,
    /// The weighted L1 gradient as it arrives at the confidence map through
    /// the straight-through path, whether or not it is routed into the
    /// predictor.
    pub straight_through: Grid,
    pub loss: LossParts,
}

impl Gradients {
    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.predictor.iter_mut().zip(&other.predictor) {
            a.add_assign(b);
        }
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            a.add_assign(b);
        }
        self.layer += other.layer;
        self.loss.total += other.loss.total;
        self.loss.mse += other.loss.mse;
        self.loss.l1 += other.loss.l1;
    }

    fn scale(&mut self, k: f64) {
        self.predictor.iter_mut().for_each(|p| p.scale(k));
        self.encoder.iter_mut().for_each(|p| p.scale(k));
        self.layer *= k;
        self.loss.total *= k;
        self.loss.mse *= k;
        self.loss.l1 *= k;
    }
}

/// Forward and backward for one image against its binary target.
pub fn compute_gradients(model: &ModelState, image: &Grid, target: &Grid, lambda: f64) -> Result<Gradients> {
    let (conf, features, tape) = predictor_forward(image, &model.predictor)?;
    let mse = mse_loss(conf.grid(), target)?;
    let mut grad_conf = mse.grad;
    let mut encoder: Vec<LayerParams> = model.encoder.iter().map(LayerParams::zeros_like).collect();
    let mut layer = 0.0;
    let (h, w) = conf.shape();
    let mut straight_through = Grid::zeros(h, w);

    let l1 = match model.mode {
        ThresholdMode::Fixed(_) | ThresholdMode::Layer => {
            let t = match model.mode {
                ThresholdMode::Fixed(t) => t,
                _ => model.layer_threshold,
            };
            let (o, btape) = binarize_forward(&conf, &ThresholdField::Scalar(t))?;
            let l1 = l1_loss(o.grid(), target)?;
            if lambda > 0.0 {
                let bg = binarize_backward(&btape, &l1.grad.map(|g| lambda * g))?;
                if let (ThresholdMode::Layer, ThresholdGrad::Scalar(gt)) = (model.mode, &bg.threshold) {
                    layer = *gt;
                }
                straight_through = bg.conf;
            }
            l1.value
        }
        ThresholdMode::Ibm | ThresholdMode::Pbm => {
            let kind = model.mode.encoder_kind().expect("encoder mode");
            let (o, bm) = bm_apply(&conf, &features, kind, &model.encoder)?;
            let l1 = l1_loss(o.grid(), target)?;
            if lambda > 0.0 {
                let g = bm_backward(&bm, &model.encoder, &l1.grad.map(|g| lambda * g))?;
                encoder = g.encoder;
                straight_through = g.conf;
            }
            l1.value
        }
    };
    if lambda > 0.0 && model.routing == Routing::TeAndCp {
        for (a, b) in grad_conf.values_mut().iter_mut().zip(straight_through.values()) {
            *a += b;
        }
    }
    let predictor = predictor_backward(&tape, &model.predictor, &grad_conf)?;
    Ok(Gradients {
        predictor,
        encoder,
        layer,
        straight_through,
        loss: LossParts {
            total: mse.value + lambda * l1,
            mse: mse.value,
            l1,
        },
    })
}

/// One optimizer step: Adam at `lr_confidence` for the predictor and
/// `lr_threshold` for the encoder, plain descent at `lr_layer` for the scalar
/// threshold; all rates scaled by `decay^epoch`.
pub fn apply_gradients(model: &mut ModelState, grads: &Gradients, cfg: &OptimizerConfig) -> Result<()> {
    if !grads.layer.is_finite() {
        return Err(Error::NonFiniteGradient("layer.threshold".into()));
    }
    let step = model.step + 1;
    let scale = cfg.decay.powi(model.epoch as i32);
    adam_step(
        &mut model.predictor,
        &grads.predictor,
        &mut model.predictor_moments,
        cfg.lr_confidence * scale,
        cfg,
        step,
    )?;
    if !model.encoder.is_empty() {
        adam_step(
            &mut model.encoder,
            &grads.encoder,
            &mut model.encoder_moments,
            cfg.lr_threshold * scale,
            cfg,
            step,
        )?;
    }
    if model.mode == ThresholdMode::Layer {
        model.layer_threshold = (model.layer_threshold - cfg.lr_layer * scale * grads.layer).clamp(0.0, 1.0);
    }
    model.step = step;
    Ok(())
}

/// Mean gradients over a batch of `(image, target)` pairs, then one step.
/// During warm-up the L1 term is off, so threshold gradients are zero.
pub fn train_step(model: &mut ModelState, batch: &[(Grid, Grid)], cfg: &TrainConfig) -> Result<LossParts> {
    let lambda = if model.epoch < cfg.warmup_epochs { 0.0 } else { cfg.lambda };
    let mut acc: Option<Gradients> = None;
    let non_finite = Error::NonFiniteLoss {
        epoch: model.epoch,
        step: model.step as usize + 1,
    };
    for (image, target) in batch {
        let g = match compute_gradients(model, image, target, lambda) {
            Ok(g) if g.loss.total.is_finite() => g,
            Ok(_) | Err(Error::NonFiniteValue(_)) => return Err(non_finite),
            Err(e) => return Err(e),
        };
        match acc.as_mut() {
            Some(a) => a.add(&g),
            None => acc = Some(g),
        }
    }
    let mut g = acc.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    g.scale(1.0 / batch.len() as f64);
    apply_gradients(model, &g, &cfg.optimizer)?;
    Ok(g.loss)
}

fn flip_boxes(boxes: &mut [[f64; 4]], width: usize) {
    let last = (width - 1) as f64;
    for b in boxes {
        let (x1, x2) = (last - b[2], last - b[0]);
        b[0] = x1;
        b[2] = x2;
    }
}

/// Random horizontal flip and scale jitter in [0.8, 1.2]; the target is
/// regenerated from the transformed boxes. Falls back to the original sample
/// if the transformed boxes cannot be rasterized.
pub fn augment<R: Rng + ?Sized>(scene: &Scene, cfg: &TrainConfig, rng: &mut R) -> Result<(Grid, Grid)> {
    let s: f64 = rng.random_range(0.8..=1.2);
    let flip = rng.random_bool(0.5);
    let original = || (scene.image.clone(), scene.gt.to_binary().into_grid());
    let (h, w) = scene.image.shape();
    let mut image = scene.image.clone();
    let mut ann = Annotation {
        id: scene.annotation.id.clone(),
        points: Vec::new(),
        boxes: scene.annotation.boxes.clone(),
    };
    let (mut nh, mut nw) = (h, w);
    if cfg.scale_jitter {
        nh = ((h as f64 * s).round() as usize).max(8);
        nw = ((w as f64 * s).round() as usize).max(8);
        if (nh, nw) != (h, w) {
            image = resize_bilinear(&image.into_stack(), nh, nw)?.into_grid()?;
            let (sy, sx) = (nh as f64 / h as f64, nw as f64 / w as f64);
            for b in &mut ann.boxes {
                let tx = |x: f64| ((x + 0.5) * sx - 0.5).round().clamp(0.0, (nw - 1) as f64);
                let ty = |y: f64| ((y + 0.5) * sy - 0.5).round().clamp(0.0, (nh - 1) as f64);
                *b = [tx(b[0]), ty(b[1]), tx(b[2]), ty(b[3])];
            }
        }
    }
    if cfg.flip && flip {
        image = image.flip_horizontal();
        flip_boxes(&mut ann.boxes, nw);
    }
    if (nh, nw) == (h, w) && !(cfg.flip && flip) {
        return Ok(original());
    }
    ann.points = ann.box_centers();
    match iim_from_boxes(&ann, nh, nw) {
        Ok(gt) => Ok((image, gt.to_binary().into_grid())),
        Err(_) => Ok(original()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr_confidence: f64,
    pub lr_threshold: f64,
    pub loss: f64,
    pub mse: f64,
    pub l1: f64,
    pub val_f1: f64,
    pub val_pre: f64,
    pub val_rec: f64,
    pub val_mae: f64,
    /// Mean threshold over validation pixels.
    pub mean_threshold: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the best validation F1 (the last one without validation data).
    pub best: ModelState,
    pub last: ModelState,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

pub fn train(
    train_set: &[Scene],
    val_set: &[Scene],
    cfg: &TrainConfig,
    mode: ThresholdMode,
    routing: Routing,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = ModelState::new(mode, routing, cfg.channels, cfg.seed)?;
    train_from(model, train_set, val_set, cfg)
}

/// Continue training `model` from its recorded epoch up to `cfg.epochs`.
pub fn train_from(mut model: ModelState, train_set: &[Scene], val_set: &[Scene], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut log = Vec::new();
    for epoch in model.epoch..cfg.epochs {
        let mut rng = scene_rng(cfg.seed, 1000 + epoch as u64);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let scale = cfg.optimizer.decay.powi(epoch as i32);
        let mut sum = LossParts::default();
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| augment(&train_set[i], cfg, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let l = train_step(&mut model, &batch, cfg)?;
            sum.total += l.total;
            sum.mse += l.mse;
            sum.l1 += l.l1;
            steps += 1;
        }
        model.epoch = epoch + 1;

        let mut results = Vec::with_capacity(val_set.len());
        let mut thr_sum = 0.0;
        for s in val_set {
            let l = localize_detailed(&s.image, &model, &s.annotation.id)?;
            thr_sum += l.threshold.mean();
            results.push(l.result);
        }
        let anns: Vec<&Annotation> = val_set.iter().map(|s| &s.annotation).collect();
        let report = evaluate_predictions(&anns, results)?.report;
        let n = steps.max(1) as f64;
        log.push(EpochLog {
            epoch: epoch + 1,
            lr_confidence: cfg.optimizer.lr_confidence * scale,
            lr_threshold: cfg.optimizer.lr_threshold * scale,
            loss: sum.total / n,
            mse: sum.mse / n,
            l1: sum.l1 / n,
            val_f1: report.f1m,
            val_pre: report.pre,
            val_rec: report.rec,
            val_mae: report.mae,
            mean_threshold: if val_set.is_empty() { f64::NAN } else { thr_sum / val_set.len() as f64 },
        });
        if !val_set.is_empty() && best.as_ref().is_none_or(|(f, _, _)| report.f1m > *f) {
            best = Some((report.f1m, epoch + 1, model.clone()));
        }
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (model.epoch, model.clone()),
    };
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_epoch,
        log,
    })
}
