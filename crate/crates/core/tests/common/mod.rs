//! Central finite-difference checks shared by the gradient tests and the
//! acceptance suite. Everything runs in f64.

#![allow(dead_code)]

use crossmedia::media::Media;
use crossmedia::model::{BackboneConfig, Input, LayerSpec, Model, ParameterSet, TextLiftConfig};
use crossmedia::objective::{
    center_loss, classification_loss, ranking_loss, total_loss, BatchOutputs, CenterTable, ObjectiveConfig,
    QuadIndex, Reduction, TermMask,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative error, so coordinates whose true
/// gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct CheckStats {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a kink.
    pub skipped: usize,
}

impl CheckStats {
    pub fn record(&mut self, a: f64, n: f64) {
        self.max_rel = self.max_rel.max(rel_err(a, n));
        self.checked += 1;
    }

    pub fn merge(&mut self, o: CheckStats) {
        self.max_rel = self.max_rel.max(o.max_rel);
        self.checked += o.checked;
        self.skipped += o.skipped;
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel < TOLERANCE
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-a..a)).collect()
}

/// A small random backbone; the layer pattern cycles with the seed.
pub fn random_config(seed: u64) -> BackboneConfig {
    let mut r = rng(seed ^ 0xC0FF);
    let c1 = r.random_range(1..=3);
    let c2 = r.random_range(1..=3);
    let (size, layers) = match seed % 5 {
        0 => (4, vec![]),
        1 => (4, vec![LayerSpec::Conv { channels: c1 }, LayerSpec::Relu, LayerSpec::MaxPool]),
        2 => (
            8,
            vec![
                LayerSpec::Conv { channels: c1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Conv { channels: c2 },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
            ],
        ),
        3 => (
            4,
            vec![
                LayerSpec::Conv { channels: c1 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 5 },
                LayerSpec::Relu,
            ],
        ),
        _ => (
            4,
            vec![
                LayerSpec::Conv { channels: c1 },
                LayerSpec::MaxPool,
                LayerSpec::Relu,
                LayerSpec::Conv { channels: c2 },
            ],
        ),
    };
    let stride = r.random_range(1..=2);
    BackboneConfig {
        input_size: size,
        input_channels: r.random_range(1..=3),
        layers,
        feature_dim: r.random_range(2..=5),
        classes: r.random_range(2..=4),
        seed,
        text: TextLiftConfig {
            max_len: size * stride,
            embed_dim: r.random_range(2..=4),
            vocab_size: r.random_range(4..=7),
            hidden_channels: r.random_range(2..=3),
            stride,
        },
    }
}

/// Owned network input.
#[derive(Debug, Clone)]
pub enum Sample {
    Grid(Vec<f64>),
    Text(Vec<Option<usize>>),
}

impl Sample {
    pub fn input(&self) -> Input<'_, f64> {
        match self {
            Sample::Grid(g) => Input::Grid(g),
            Sample::Text(t) => Input::Text(t),
        }
    }
}

pub fn random_sample(cfg: &BackboneConfig, r: &mut ChaCha8Rng, text: bool) -> Sample {
    if text {
        Sample::Text(
            (0..cfg.text.max_len)
                .map(|_| {
                    let v = r.random_range(0..=cfg.text.vocab_size);
                    (v < cfg.text.vocab_size).then_some(v)
                })
                .collect(),
        )
    } else {
        Sample::Grid(uniform(r, cfg.input_size * cfg.input_size * cfg.input_channels, 1.0))
    }
}

/// Model with all parameters (biases included) drawn at random so that
/// bias gradients are exercised away from zero.
pub fn random_model(cfg: BackboneConfig, r: &mut ChaCha8Rng) -> Model<f64> {
    let mut m = Model::<f64>::new(cfg).unwrap();
    for b in m.params_mut().blocks_mut() {
        for v in &mut b.data {
            *v += r.random_range(-0.2..0.2);
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks `<g_f, feature> + <g_l, logits>` against parameters and, for grid
/// inputs, against the input.
pub fn backbone_check(seed: u64) -> CheckStats {
    let cfg = random_config(seed);
    let mut r = rng(seed);
    let mut model = random_model(cfg.clone(), &mut r);
    let sample = random_sample(&cfg, &mut r, seed % 2 == 1);
    let gf = uniform(&mut r, cfg.feature_dim, 1.0);
    let gl = uniform(&mut r, cfg.classes, 1.0);

    let objective = |m: &Model<f64>, s: &Sample| -> (f64, Vec<u32>) {
        let t = m.forward(s.input()).unwrap();
        (dot(&gf, t.feature()) + dot(&gl, t.logits()), t.activation_pattern())
    };
    let trace = model.forward(sample.input()).unwrap();
    let pattern = trace.activation_pattern();
    let mut grads = model.params().zeros_like();
    let grad_input = model.backward(&trace, &gf, &gl, &mut grads).unwrap();

    let mut stats = CheckStats::default();
    let flat = grads.flatten();
    let base = model.params().flatten();
    for (k, &a) in flat.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + STEP;
        model.params_mut().assign_flat(&p);
        let (lp, pp) = objective(&model, &sample);
        p[k] = base[k] - STEP;
        model.params_mut().assign_flat(&p);
        let (lm, pm) = objective(&model, &sample);
        if pp != pattern || pm != pattern {
            stats.skipped += 1;
            continue;
        }
        stats.record(a, (lp - lm) / (2.0 * STEP));
    }
    model.params_mut().assign_flat(&base);

    if let Sample::Grid(g) = &sample {
        for (k, &a) in grad_input.iter().enumerate() {
            let mut x = g.clone();
            x[k] = g[k] + STEP;
            let (lp, pp) = objective(&model, &Sample::Grid(x.clone()));
            x[k] = g[k] - STEP;
            let (lm, pm) = objective(&model, &Sample::Grid(x));
            if pp != pattern || pm != pattern {
                stats.skipped += 1;
                continue;
            }
            stats.record(a, (lp - lm) / (2.0 * STEP));
        }
    }
    stats
}

/// A random batch of `q` well-formed quadruplets with features and logits.
pub struct LossBatch {
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub media: Vec<Media>,
    pub labels: Vec<usize>,
    pub quads: Vec<QuadIndex>,
    pub centers: CenterTable,
}

pub fn random_batch(seed: u64, q: usize, dim: usize, classes: usize) -> LossBatch {
    let mut r = rng(seed);
    let mut b = LossBatch {
        features: vec![],
        logits: vec![],
        media: vec![],
        labels: vec![],
        quads: vec![],
        centers: CenterTable::from_rows(classes, dim, uniform(&mut r, classes * dim, 1.0)).unwrap(),
    };
    for n in 0..q {
        let mut labels: Vec<usize> = (0..classes).collect();
        for i in (1..labels.len()).rev() {
            labels.swap(i, r.random_range(0..=i));
        }
        let (p, k, l) = (labels[0], labels[1], labels[2]);
        let mut media = Media::ALL;
        for i in (1..4).rev() {
            media.swap(i, r.random_range(0..=i));
        }
        for (slot, y) in [p, p, k, l].into_iter().enumerate() {
            b.features.push(uniform(&mut r, dim, 1.0));
            b.logits.push(uniform(&mut r, classes, 2.0));
            b.media.push(media[slot]);
            b.labels.push(y);
        }
        b.quads.push([4 * n, 4 * n + 1, 4 * n + 2, 4 * n + 3]);
    }
    b
}

/// FD check of `f` with respect to every entry of `x`. `f` returns the loss
/// and a kink signature; coordinates whose signature changes are skipped.
pub fn check_rows(
    x: &[Vec<f64>],
    analytic: &[Vec<f64>],
    mut f: impl FnMut(&[Vec<f64>]) -> (f64, Vec<bool>),
) -> CheckStats {
    let (_, sig) = f(x);
    let mut stats = CheckStats::default();
    for i in 0..x.len() {
        for j in 0..x[i].len() {
            let mut p = x.to_vec();
            p[i][j] += STEP;
            let (lp, sp) = f(&p);
            p[i][j] -= 2.0 * STEP;
            let (lm, sm) = f(&p);
            if sp != sig || sm != sig {
                stats.skipped += 1;
                continue;
            }
            stats.record(analytic[i][j], (lp - lm) / (2.0 * STEP));
        }
    }
    stats
}

/// Signs of both hinge arguments of every quadruplet.
pub fn hinge_signature(features: &[Vec<f64>], quads: &[QuadIndex], cfg: &ObjectiveConfig) -> Vec<bool> {
    let d = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum() };
    quads
        .iter()
        .flat_map(|q| {
            let (xi, xj, xk, xl) = (&features[q[0]], &features[q[1]], &features[q[2]], &features[q[3]]);
            let dij = d(xi, xj);
            [dij - d(xi, xk) + cfg.alpha1 > 0.0, dij - d(xl, xk) + cfg.alpha2 > 0.0]
        })
        .collect()
}

pub fn classification_check(seed: u64) -> CheckStats {
    let b = random_batch(seed, 3, 4, 5);
    let (_, g) = classification_loss(&b.logits, &b.media, &b.labels).unwrap();
    check_rows(&b.logits, &g, |z| (classification_loss(z, &b.media, &b.labels).unwrap().0, vec![]))
}

pub fn center_check(seed: u64) -> CheckStats {
    let b = random_batch(seed, 3, 4, 5);
    let reduction = if seed % 2 == 0 { Reduction::Mean } else { Reduction::Sum };
    let (_, g) = center_loss(&b.features, &b.labels, &b.centers, reduction).unwrap();
    check_rows(&b.features, &g, |x| (center_loss(x, &b.labels, &b.centers, reduction).unwrap().0, vec![]))
}

pub fn ranking_check(seed: u64) -> CheckStats {
    let b = random_batch(seed, 4, 3, 4);
    let cfg = ObjectiveConfig::default();
    let (_, g) = ranking_loss(&b.features, &b.labels, &b.quads, &cfg).unwrap();
    check_rows(&b.features, &g, |x| {
        (
            ranking_loss(x, &b.labels, &b.quads, &cfg).unwrap().0,
            hinge_signature(x, &b.quads, &cfg),
        )
    })
}

/// The masked, weighted total with respect to both features and logits.
pub fn total_check(seed: u64) -> CheckStats {
    let b = random_batch(seed, 3, 3, 4);
    let mut cfg = ObjectiveConfig::default();
    let mut r = rng(seed ^ 7);
    cfg.weights.cls = r.random_range(0.2..2.0);
    cfg.weights.cen = r.random_range(0.2..2.0);
    cfg.weights.rank = r.random_range(0.2..2.0);
    let mask = [TermMask::CLS, TermMask::CLS_CEN, TermMask::ALL][(seed % 3) as usize];
    let eval = |f: &[Vec<f64>], z: &[Vec<f64>]| {
        let batch = BatchOutputs {
            features: f,
            logits: z,
            media: &b.media,
            labels: &b.labels,
            quads: &b.quads,
        };
        total_loss(&batch, &b.centers, &cfg, mask).unwrap()
    };
    let (_, g) = eval(&b.features, &b.logits);
    let mut stats = check_rows(&b.features, &g.features, |f| {
        (eval(f, &b.logits).0.total, hinge_signature(f, &b.quads, &cfg))
    });
    stats.merge(check_rows(&b.logits, &g.logits, |z| (eval(&b.features, z).0.total, vec![])));
    stats
}

/// Backbone composed with the total loss over a quadruplet batch, as the
/// trainer computes it, checked against every parameter.
pub fn end_to_end_check(seed: u64) -> CheckStats {
    let mut cfg = random_config(seed);
    cfg.classes = cfg.classes.max(3);
    let mut r = rng(seed ^ 0xE2E);
    let mut model = random_model(cfg.clone(), &mut r);
    let layout = random_batch(seed, 2, cfg.feature_dim, cfg.classes);
    let samples: Vec<Sample> = layout
        .media
        .iter()
        .map(|m| random_sample(&cfg, &mut r, *m == Media::Text))
        .collect();
    let obj = ObjectiveConfig::default();

    let eval = |m: &Model<f64>| {
        let traces: Vec<_> = samples.iter().map(|s| m.forward(s.input()).unwrap()).collect();
        let f: Vec<Vec<f64>> = traces.iter().map(|t| t.feature().to_vec()).collect();
        let z: Vec<Vec<f64>> = traces.iter().map(|t| t.logits().to_vec()).collect();
        let batch = BatchOutputs {
            features: &f,
            logits: &z,
            media: &layout.media,
            labels: &layout.labels,
            quads: &layout.quads,
        };
        let (loss, grads) = total_loss(&batch, &layout.centers, &obj, TermMask::ALL).unwrap();
        let mut sig: Vec<u32> = traces.iter().flat_map(|t| t.activation_pattern()).collect();
        sig.extend(hinge_signature(&f, &layout.quads, &obj).into_iter().map(u32::from));
        (loss.total, grads, traces, sig)
    };
    let (_, grads, traces, sig) = eval(&model);
    let mut analytic: ParameterSet<f64> = model.params().zeros_like();
    for (n, t) in traces.iter().enumerate() {
        model.backward(t, &grads.features[n], &grads.logits[n], &mut analytic).unwrap();
    }
    let flat = analytic.flatten();
    let base = model.params().flatten();
    let mut stats = CheckStats::default();
    for (k, &a) in flat.iter().enumerate() {
        let mut p = base.clone();
        p[k] = base[k] + STEP;
        model.params_mut().assign_flat(&p);
        let (lp, _, _, sp) = eval(&model);
        p[k] = base[k] - STEP;
        model.params_mut().assign_flat(&p);
        let (lm, _, _, sm) = eval(&model);
        if sp != sig || sm != sig {
            stats.skipped += 1;
            continue;
        }
        stats.record(a, (lp - lm) / (2.0 * STEP));
    }
    model.params_mut().assign_flat(&base);
    stats
}
