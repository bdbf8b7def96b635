//! Training objective: per-media classification, center and quadruplet
//! ranking constraints, with analytic gradients with respect to features
//! and logits. All arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::Media;

/// How per-sample center and ranking terms are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cls: f64,
    pub cen: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            cen: 1.0,
            rank: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Margin of the anchor-negative hinge.
    pub alpha1: f64,
    /// Margin of the negative-negative hinge.
    pub alpha2: f64,
    pub weights: LossWeights,
    /// Momentum `m` in `c <- (1 - m) c + m mean(batch)`.
    pub center_momentum: f64,
    pub reduction: Reduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            alpha1: 1.0,
            alpha2: 0.5,
            weights: LossWeights::default(),
            center_momentum: 0.5,
            reduction: Reduction::Mean,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > self.alpha2 && self.alpha2 > 0.0) {
            return Err(Error::Config(format!(
                "margins must satisfy alpha1 > alpha2 > 0 (got {} and {})",
                self.alpha1, self.alpha2
            )));
        }
        let w = self.weights;
        if [w.cls, w.cen, w.rank].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.center_momentum) {
            return Err(Error::Config("center momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Which loss terms are active in a training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermMask {
    pub cls: bool,
    pub cen: bool,
    pub rank: bool,
}

impl TermMask {
    pub const CLS: TermMask = TermMask {
        cls: true,
        cen: false,
        rank: false,
    };
    pub const CLS_CEN: TermMask = TermMask {
        cls: true,
        cen: true,
        rank: false,
    };
    pub const ALL: TermMask = TermMask {
        cls: true,
        cen: true,
        rank: true,
    };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.cls {
            parts.push("cls");
        }
        if self.cen {
            parts.push("cen");
        }
        if self.rank {
            parts.push("rank");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// Weighted loss terms of one batch; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_cen: f64,
    pub l_rank: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_cls, self.l_cen, self.l_rank, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One center per subcategory.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterTable {
    classes: usize,
    dim: usize,
    centers: Vec<f64>,
}

impl CenterTable {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        CenterTable {
            classes,
            dim,
            centers: vec![0.0; classes * dim],
        }
    }

    pub fn from_rows(classes: usize, dim: usize, centers: Vec<f64>) -> Result<Self> {
        if centers.len() != classes * dim {
            return Err(Error::Shape("center table size mismatch".into()));
        }
        Ok(CenterTable {
            classes,
            dim,
            centers,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self, label: usize) -> &[f64] {
        &self.centers[label * self.dim..(label + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.centers
    }

    /// Moves the center of every label present in the batch toward the mean
    /// of that label's features. Absent labels are left untouched.
    pub fn update(&mut self, features: &[Vec<f64>], labels: &[usize], momentum: f64) -> Result<()> {
        let mut sums = vec![0.0; self.centers.len()];
        let mut counts = vec![0usize; self.classes];
        for (x, &y) in features.iter().zip(labels) {
            self.check(y, x.len())?;
            counts[y] += 1;
            for (s, v) in sums[y * self.dim..(y + 1) * self.dim].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (y, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let row = &mut self.centers[y * self.dim..(y + 1) * self.dim];
            for (c, s) in row.iter_mut().zip(&sums[y * self.dim..(y + 1) * self.dim]) {
                *c = (1.0 - momentum) * *c + momentum * (s / n as f64);
            }
        }
        Ok(())
    }

    fn check(&self, label: usize, dim: usize) -> Result<()> {
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        if dim != self.dim {
            return Err(Error::Shape(format!("feature of dim {dim}, centers have {}", self.dim)));
        }
        Ok(())
    }
}

fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Sum over media types of the mean cross-entropy within each media group.
/// Media absent from the batch contribute nothing.
pub fn classification_loss(logits: &[Vec<f64>], media: &[Media], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut counts = [0usize; 4];
    for (z, (&m, &y)) in logits.iter().zip(media.iter().zip(labels)) {
        if y >= z.len() {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: z.len(),
            });
        }
        counts[m.index()] += 1;
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, (&m, &y)) in logits.iter().zip(media.iter().zip(labels)) {
        let n = counts[m.index()] as f64;
        let (l, mut g) = cross_entropy(z, y);
        total += l / n;
        g.iter_mut().for_each(|v| *v /= n);
        grads.push(g);
    }
    Ok((total, grads))
}

/// `0.5 * ||x_k - c_{y_k}||^2` combined over the batch; centers receive no
/// gradient.
pub fn center_loss(
    features: &[Vec<f64>],
    labels: &[usize],
    centers: &CenterTable,
    reduction: Reduction,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / features.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(features.len());
    for (x, &y) in features.iter().zip(labels) {
        centers.check(y, x.len())?;
        let c = centers.center(y);
        let diff: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        total += 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        grads.push(diff.into_iter().map(|d| d * scale).collect());
    }
    Ok((total * scale, grads))
}

/// Batch positions of one quadruplet: `(i, j)` share a subcategory, `k` and
/// `l` come from two further, distinct subcategories.
pub type QuadIndex = [usize; 4];

/// Checks index bounds, distinctness and the three-subcategory structure.
pub fn validate_quad(q: &QuadIndex, labels: &[usize]) -> Result<()> {
    let n = labels.len();
    if q.iter().any(|&i| i >= n) {
        return Err(Error::MalformedQuadruplet(format!("index out of range in {q:?}")));
    }
    for a in 0..4 {
        for b in 0..a {
            if q[a] == q[b] {
                return Err(Error::MalformedQuadruplet(format!("repeated sample in {q:?}")));
            }
        }
    }
    let [yi, yj, yk, yl] = q.map(|i| labels[i]);
    if yi != yj || yk == yi || yl == yi || yk == yl {
        return Err(Error::MalformedQuadruplet(format!(
            "labels {:?} do not form pair + two distinct negatives",
            [yi, yj, yk, yl]
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Arguments of the two hinges before clamping.
fn hinge_arguments(xi: &[f64], xj: &[f64], xk: &[f64], xl: &[f64], cfg: &ObjectiveConfig) -> (f64, f64) {
    let dij = sq_dist(xi, xj);
    (dij - sq_dist(xi, xk) + cfg.alpha1, dij - sq_dist(xl, xk) + cfg.alpha2)
}

/// `(d_ij^2 - d_ik^2 + alpha1)_+ + (d_ij^2 - d_lk^2 + alpha2)_+` per
/// quadruplet, with `d` the Euclidean distance on raw features. The gradient
/// of an inactive or exactly-zero hinge is 0.
pub fn ranking_loss(
    features: &[Vec<f64>],
    labels: &[usize],
    quads: &[QuadIndex],
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let dim = features.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; dim]; features.len()];
    if quads.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / quads.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0;
    for q in quads {
        validate_quad(q, labels)?;
        let [i, j, k, l] = *q;
        let (xi, xj, xk, xl) = (&features[i], &features[j], &features[k], &features[l]);
        let (h1, h2) = hinge_arguments(xi, xj, xk, xl, cfg);
        // d/dx of |a - b|^2 is 2(a - b).
        let mut push = |target: usize, a: &[f64], b: &[f64], sign: f64| {
            let coef = 2.0 * sign * scale;
            let g = &mut grads[target];
            for d in 0..dim {
                g[d] += coef * (a[d] - b[d]);
            }
        };
        if h1 > 0.0 {
            total += h1;
            push(i, xi, xj, 1.0);
            push(j, xj, xi, 1.0);
            push(i, xi, xk, -1.0);
            push(k, xk, xi, -1.0);
        }
        if h2 > 0.0 {
            total += h2;
            push(i, xi, xj, 1.0);
            push(j, xj, xi, 1.0);
            push(l, xl, xk, -1.0);
            push(k, xk, xl, -1.0);
        }
    }
    Ok((total * scale, grads))
}

/// Everything the objective needs from one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct BatchOutputs<'a> {
    pub features: &'a [Vec<f64>],
    pub logits: &'a [Vec<f64>],
    pub media: &'a [Media],
    pub labels: &'a [usize],
    pub quads: &'a [QuadIndex],
}

/// Gradients of the total loss.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

/// Weighted, masked sum of the three constraints.
pub fn total_loss(
    batch: &BatchOutputs<'_>,
    centers: &CenterTable,
    cfg: &ObjectiveConfig,
    mask: TermMask,
) -> Result<(LossBreakdown, LossGradients)> {
    let n = batch.features.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.logits.len() != n || batch.media.len() != n || batch.labels.len() != n {
        return Err(Error::Shape("batch arrays have different lengths".into()));
    }
    let dim = batch.features[0].len();
    let classes = batch.logits[0].len();
    let mut gf = vec![vec![0.0; dim]; n];
    let mut gl = vec![vec![0.0; classes]; n];
    let mut out = LossBreakdown::default();
    let w = cfg.weights;

    let accumulate = |dst: &mut Vec<Vec<f64>>, src: Vec<Vec<f64>>, weight: f64| {
        for (d, s) in dst.iter_mut().zip(src) {
            for (a, b) in d.iter_mut().zip(s) {
                *a += weight * b;
            }
        }
    };

    if mask.cls && w.cls != 0.0 {
        let (l, g) = classification_loss(batch.logits, batch.media, batch.labels)?;
        out.l_cls = w.cls * l;
        accumulate(&mut gl, g, w.cls);
    }
    if mask.cen && w.cen != 0.0 {
        let (l, g) = center_loss(batch.features, batch.labels, centers, cfg.reduction)?;
        out.l_cen = w.cen * l;
        accumulate(&mut gf, g, w.cen);
    }
    if mask.rank && w.rank != 0.0 {
        let (l, g) = ranking_loss(batch.features, batch.labels, batch.quads, cfg)?;
        out.l_rank = w.rank * l;
        accumulate(&mut gf, g, w.rank);
    }
    out.total = out.l_cls + out.l_cen + out.l_rank;
    Ok((
        out,
        LossGradients {
            features: gf,
            logits: gl,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const QUAD_MEDIA: [Media; 4] = [Media::Image, Media::Text, Media::Video, Media::Audio];

    fn cfg() -> ObjectiveConfig {
        ObjectiveConfig::default()
    }

    fn random_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = vec![vec![0.0; 200]];
        let (l, _) = classification_loss(&logits, &[Media::Image], &[17]).unwrap();
        assert!((l - 200f64.ln()).abs() < 1e-12);
        assert!((l - 5.2983).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logits_saturate() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let logits = vec![vec![0.0, margin, 0.0]];
            let (l, _) = classification_loss(&logits, &[Media::Text], &[1]).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-25);
    }

    #[test]
    fn classification_averages_within_media() {
        // Two image samples and one text sample: images get weight 1/2 each.
        let logits = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]];
        let media = [Media::Image, Media::Image, Media::Text];
        let labels = [0, 0, 1];
        let (l, _) = classification_loss(&logits, &media, &labels).unwrap();
        let ce = |z: &[f64], y: usize| (z[0].exp() + z[1].exp()).ln() - z[y];
        let expected = 0.5 * (ce(&logits[0], 0) + ce(&logits[1], 0)) + ce(&logits[2], 1);
        assert!((l - expected).abs() < 1e-12);
        assert!(matches!(
            classification_loss(&logits, &media, &[0, 0, 2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn center_loss_examples() {
        let mut centers = CenterTable::zeros(2, 2);
        let (l, _) = center_loss(&[vec![1.0, 0.0]], &[0], &centers, Reduction::Mean).unwrap();
        assert_eq!(l, 0.5);
        centers.update(&[vec![3.0, -1.0]], &[1], 1.0).unwrap();
        let (l, g) = center_loss(&[vec![3.0, -1.0]], &[1], &centers, Reduction::Mean).unwrap();
        assert_eq!(l, 0.0);
        assert!(g[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_updates() {
        let mut t = CenterTable::zeros(3, 2);
        t.update(&[vec![2.0, 2.0], vec![2.0, 2.0]], &[0, 0], 0.5).unwrap();
        assert_eq!(t.center(0), &[1.0, 1.0]);
        let before = t.center(2).to_vec();
        t.update(&[vec![1.0, 5.0], vec![3.0, 7.0]], &[1, 1], 1.0).unwrap();
        assert_eq!(t.center(1), &[2.0, 6.0]);
        assert_eq!(t.center(2), before.as_slice());
        assert!(t.update(&[vec![0.0, 0.0]], &[3], 0.5).is_err());
    }

    #[test]
    fn ranking_examples() {
        let same = vec![vec![0.3, -0.7]; 4];
        let labels = [0, 0, 1, 2];
        let (l, g) = ranking_loss(&same, &labels, &[[0, 1, 2, 3]], &cfg()).unwrap();
        assert_eq!(l, 1.5);
        assert!(g.iter().flatten().all(|&v| v == 0.0));

        // d_ij = 0, d_ik^2 = 4, d_lk^2 = 4: both hinges inactive.
        let feats = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0], vec![2.0, 2.0]];
        let (l, _) = ranking_loss(&feats, &labels, &[[0, 1, 2, 3]], &cfg()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn malformed_quadruplets_rejected() {
        let f = vec![vec![0.0]; 4];
        for (labels, q) in [
            ([0, 1, 2, 3], [0, 1, 2, 3]),
            ([0, 0, 1, 1], [0, 1, 2, 3]),
            ([0, 0, 0, 2], [0, 1, 2, 3]),
            ([0, 0, 1, 2], [0, 0, 2, 3]),
            ([0, 0, 1, 2], [0, 1, 2, 4]),
        ] {
            assert!(matches!(
                ranking_loss(&f, &labels, &[q], &cfg()),
                Err(Error::MalformedQuadruplet(_))
            ));
        }
    }

    /// Straight-line evaluation of the three terms for cross-checking.
    fn brute_force_terms(
        features: &[Vec<f64>],
        logits: &[Vec<f64>],
        media: &[Media],
        labels: &[usize],
        quads: &[QuadIndex],
        centers: &CenterTable,
    ) -> (f64, f64, f64) {
        let mut cls = 0.0;
        for m in Media::ALL {
            let idx: Vec<usize> = (0..media.len()).filter(|&k| media[k] == m).collect();
            if idx.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for &k in &idx {
                let p: Vec<f64> = logits[k].iter().map(|z| z.exp()).collect();
                s += -(p[labels[k]] / p.iter().sum::<f64>()).ln();
            }
            cls += s / idx.len() as f64;
        }
        let mut cen = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let c = centers.center(y);
            cen += 0.5 * x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        cen /= features.len() as f64;
        let d2 = |a: usize, b: usize| -> f64 {
            features[a].iter().zip(&features[b]).map(|(x, y)| (x - y).powi(2)).sum()
        };
        let mut rank = 0.0;
        for &[i, j, k, l] in quads {
            rank += (d2(i, j) - d2(i, k) + 1.0).max(0.0) + (d2(i, j) - d2(l, k) + 0.5).max(0.0);
        }
        rank /= quads.len() as f64;
        (cls, cen, rank)
    }

    fn random_batch(seed: u64, quads: usize, dim: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Media>, Vec<usize>, Vec<QuadIndex>, CenterTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut media = Vec::new();
        let mut labels = Vec::new();
        let mut qs = Vec::new();
        for q in 0..quads {
            let pos = rng.random_range(0..classes);
            let mut negs = (0..classes).filter(|&c| c != pos).collect::<Vec<_>>();
            let k = negs.remove(rng.random_range(0..negs.len()));
            let l = negs.remove(rng.random_range(0..negs.len()));
            labels.extend([pos, pos, k, l]);
            media.extend(QUAD_MEDIA);
            qs.push([4 * q, 4 * q + 1, 4 * q + 2, 4 * q + 3]);
        }
        let n = labels.len();
        let features = random_vecs(&mut rng, n, dim);
        let logits = random_vecs(&mut rng, n, classes)
            .into_iter()
            .map(|v| v.into_iter().map(|x| 3.0 * x).collect())
            .collect();
        let centers = CenterTable::from_rows(classes, dim, random_vecs(&mut rng, classes, dim).concat()).unwrap();
        (features, logits, media, labels, qs, centers)
    }

    #[test]
    fn matches_brute_force_on_random_batches() {
        for seed in 0..10 {
            let (f, z, m, y, q, c) = random_batch(seed, 3, 5, 6);
            let batch = BatchOutputs {
                features: &f,
                logits: &z,
                media: &m,
                labels: &y,
                quads: &q,
            };
            let (b, _) = total_loss(&batch, &c, &cfg(), TermMask::ALL).unwrap();
            let (cls, cen, rank) = brute_force_terms(&f, &z, &m, &y, &q, &c);
            assert!((b.l_cls - cls).abs() < 1e-9);
            assert!((b.l_cen - cen).abs() < 1e-9);
            assert!((b.l_rank - rank).abs() < 1e-9);
            assert!((b.total - (b.l_cls + b.l_cen + b.l_rank)).abs() < 1e-9);
        }
    }

    #[test]
    fn masking_and_composition() {
        let (f, z, m, y, q, c) = random_batch(4, 2, 4, 5);
        let batch = BatchOutputs {
            features: &f,
            logits: &z,
            media: &m,
            labels: &y,
            quads: &q,
        };
        let mut only_cls = cfg();
        only_cls.weights = LossWeights {
            cls: 1.0,
            cen: 0.0,
            rank: 0.0,
        };
        let (b, g) = total_loss(&batch, &c, &only_cls, TermMask::ALL).unwrap();
        assert_eq!(b.total, b.l_cls);
        assert!(g.features.iter().flatten().all(|&v| v == 0.0));
        let (b2, _) = total_loss(&batch, &c, &cfg(), TermMask::CLS).unwrap();
        assert_eq!(b2.l_cen, 0.0);
        assert_eq!(b2.l_rank, 0.0);
        assert_eq!(b.l_cls, b2.l_cls);

        // Identical features and confidently correct logits.
        let same = vec![vec![0.2, 0.1, -0.4, 0.9]; f.len()];
        let big: Vec<Vec<f64>> = y
            .iter()
            .map(|&lab| (0..5).map(|k| if k == lab { 80.0 } else { 0.0 }).collect())
            .collect();
        let batch = BatchOutputs {
            features: &same,
            logits: &big,
            ..batch
        };
        let (b, _) = total_loss(&batch, &c, &cfg(), TermMask::ALL).unwrap();
        assert!((b.total - (b.l_cen + 1.5)).abs() < 1e-9);
        assert!(total_loss(
            &BatchOutputs {
                features: &[],
                logits: &[],
                media: &[],
                labels: &[],
                quads: &[]
            },
            &c,
            &cfg(),
            TermMask::ALL
        )
        .is_err());
    }

    #[test]
    fn margins_validated() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.alpha2 = 1.0;
        assert!(c.validate().is_err());
        c.alpha2 = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn center_descent_reaches_zero() {
        let (mut f, _, _, y, _, c) = random_batch(9, 2, 3, 4);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let (l, g) = center_loss(&f, &y, &c, Reduction::Mean).unwrap();
            assert!(l <= prev);
            prev = l;
            let n = f.len() as f64;
            for (x, gx) in f.iter_mut().zip(&g) {
                for (a, b) in x.iter_mut().zip(gx) {
                    *a -= 0.5 * n * b;
                }
            }
        }
        assert!(prev < 1e-12);
    }

    proptest! {
        #[test]
        fn ranking_is_translation_invariant(seed in 0u64..1000, shift in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let (f, _, _, y, q, _) = random_batch(seed, 2, 3, 5);
            let moved: Vec<Vec<f64>> = f.iter().map(|x| x.iter().zip(&shift).map(|(a, s)| a + s).collect()).collect();
            let (a, _) = ranking_loss(&f, &y, &q, &cfg()).unwrap();
            let (b, _) = ranking_loss(&moved, &y, &q, &cfg()).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn pair_swap_symmetry(seed in 0u64..1000) {
            // Exchanging x_i and x_j leaves d_ij and hence the alpha2 hinge
            // fixed. The alpha1 hinge pairs x_k with x_i only, so the whole
            // loss is swap-invariant once x_k is equidistant from both.
            let (mut f, _, _, y, q, _) = random_batch(seed, 1, 3, 5);
            let [i, j, k, l] = q[0];
            let (_, h2) = hinge_arguments(&f[i], &f[j], &f[k], &f[l], &cfg());
            let (_, h2s) = hinge_arguments(&f[j], &f[i], &f[k], &f[l], &cfg());
            prop_assert!((h2 - h2s).abs() < 1e-12);

            f[k] = f[i].iter().zip(&f[j]).map(|(a, b)| 0.5 * (a + b)).collect();
            let (a, _) = ranking_loss(&f, &y, &q, &cfg()).unwrap();
            f.swap(i, j);
            let (b, _) = ranking_loss(&f, &y, &q, &cfg()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
