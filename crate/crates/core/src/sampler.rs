//! Quadruplet batching: four instances, one per media type, drawn from
//! exactly three subcategories with the same-subcategory pair in slots
//! `(i, j)`.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodedInput, EncodedItem};
use crate::error::{Error, Result};
use crate::media::Media;
use crate::objective::QuadIndex;

/// One network input drawn from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub item: usize,
    /// Frame index for videos, 0 otherwise.
    pub frame: usize,
    /// Cyclic text shift, 0 for no augmentation.
    pub shift: usize,
}

/// Slots `[i, j, k, l]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadruplet {
    pub slots: [SampleRef; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    /// `4 * quadruplets_per_batch` images, no quadruplet structure.
    ImagesOnly,
    Quadruplets,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub samples: Vec<SampleRef>,
    /// Positions into `samples`; quadruplet `q` occupies `4q..4q + 4`.
    pub quads: Vec<QuadIndex>,
}

#[derive(Debug, Clone)]
struct ItemInfo {
    media: Media,
    label: usize,
    units: usize,
    text_len: usize,
}

/// Read-only `(media, label) -> items` lookup.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    classes: usize,
    items: Vec<ItemInfo>,
    buckets: Vec<Vec<Vec<usize>>>,
    labels: Vec<usize>,
}

impl DatasetIndex {
    pub fn new(items: &[EncodedItem], classes: usize) -> Result<Self> {
        let mut buckets = vec![vec![Vec::new(); classes]; 4];
        let mut info = Vec::with_capacity(items.len());
        for (n, it) in items.iter().enumerate() {
            if it.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: it.label,
                    classes,
                });
            }
            let units = it.unit_count();
            if units == 0 {
                return Err(Error::InvalidInstance {
                    id: it.id.clone(),
                    reason: "no encoded frames".into(),
                });
            }
            let text_len = match &it.input {
                EncodedInput::Text(t) => t.len(),
                _ => 0,
            };
            buckets[it.media.index()][it.label].push(n);
            info.push(ItemInfo {
                media: it.media,
                label: it.label,
                units,
                text_len,
            });
        }
        let labels = (0..classes)
            .filter(|&y| (0..4).any(|m| !buckets[m][y].is_empty()))
            .collect();
        Ok(DatasetIndex {
            classes,
            items: info,
            buckets,
            labels,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn bucket(&self, media: Media, label: usize) -> &[usize] {
        &self.buckets[media.index()][label]
    }

    pub fn media_of(&self, item: usize) -> Media {
        self.items[item].media
    }

    pub fn label_of(&self, item: usize) -> usize {
        self.items[item].label
    }

    /// Necessary conditions for quadruplet sampling.
    pub fn check_feasible(&self) -> Result<()> {
        if self.labels.len() < 3 {
            return Err(Error::Infeasible(format!(
                "need at least 3 subcategories, dataset has {}",
                self.labels.len()
            )));
        }
        for m in Media::ALL {
            if self.buckets[m.index()].iter().all(Vec::is_empty) {
                return Err(Error::Infeasible(format!("no {m} instances")));
            }
        }
        Ok(())
    }

    /// Checks the media bijection and the pair + two-negatives label
    /// structure of a quadruplet.
    pub fn validate(&self, q: &Quadruplet) -> Result<()> {
        for s in &q.slots {
            let info = self
                .items
                .get(s.item)
                .ok_or_else(|| Error::MalformedQuadruplet(format!("item {} out of range", s.item)))?;
            if s.frame >= info.units {
                return Err(Error::MalformedQuadruplet(format!("frame {} out of range", s.frame)));
            }
        }
        let mut seen = [false; 4];
        for s in &q.slots {
            let m = self.items[s.item].media.index();
            if seen[m] {
                return Err(Error::MalformedQuadruplet("media type repeated".into()));
            }
            seen[m] = true;
        }
        let [yi, yj, yk, yl] = q.slots.map(|s| self.items[s.item].label);
        if yi != yj || yk == yi || yl == yi || yk == yl {
            return Err(Error::MalformedQuadruplet(format!(
                "labels {:?} are not a pair plus two distinct negatives",
                [yi, yj, yk, yl]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub max_retries: usize,
    /// Apply a random cyclic position shift to sampled texts.
    pub text_shift: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_retries: 1000,
            text_shift: true,
        }
    }
}

/// Serializable generator position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct QuadrupletSampler {
    index: DatasetIndex,
    config: SamplerConfig,
    rng: ChaCha8Rng,
}

impl QuadrupletSampler {
    pub fn new(index: DatasetIndex, config: SamplerConfig, seed: u64) -> Self {
        QuadrupletSampler {
            index,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    pub fn set_rng_state(&mut self, state: &RngState) {
        self.rng = state.restore();
    }

    fn pick(&mut self, item: usize) -> SampleRef {
        let info = &self.index.items[item];
        let frame = if info.units > 1 {
            self.rng.random_range(0..info.units)
        } else {
            0
        };
        let shift = if self.config.text_shift && info.text_len > 1 {
            self.rng.random_range(0..info.text_len)
        } else {
            0
        };
        SampleRef { item, frame, shift }
    }

    /// Positive subcategory, then the pair's media, the remaining media,
    /// two negative subcategories, then uniform instances per bucket.
    pub fn sample_quadruplet(&mut self) -> Result<Quadruplet> {
        self.index.check_feasible()?;
        let labels = self.index.labels.clone();
        for _ in 0..self.config.max_retries.max(1) {
            let pos = *labels.choose(&mut self.rng).unwrap();
            let mut media = Media::ALL.to_vec();
            let mi = media.remove(self.rng.random_range(0..4));
            let mj = media.remove(self.rng.random_range(0..3));
            let mk = media.remove(self.rng.random_range(0..2));
            let ml = media[0];
            let mut negs: Vec<usize> = labels.iter().copied().filter(|&y| y != pos).collect();
            let yk = negs.remove(self.rng.random_range(0..negs.len()));
            let yl = negs.remove(self.rng.random_range(0..negs.len()));

            let wanted = [(mi, pos), (mj, pos), (mk, yk), (ml, yl)];
            if wanted.iter().any(|&(m, y)| self.index.bucket(m, y).is_empty()) {
                continue;
            }
            let mut slots = [SampleRef {
                item: 0,
                frame: 0,
                shift: 0,
            }; 4];
            for (slot, (m, y)) in slots.iter_mut().zip(wanted) {
                let item = *self.index.buckets[m.index()][y].choose(&mut self.rng).unwrap();
                *slot = self.pick(item);
            }
            return Ok(Quadruplet { slots });
        }
        Err(Error::Infeasible(format!(
            "no valid quadruplet found in {} attempts",
            self.config.max_retries
        )))
    }

    /// `n` images drawn uniformly with replacement.
    pub fn sample_images(&mut self, n: usize) -> Result<Vec<SampleRef>> {
        let images: Vec<usize> = self.index.buckets[Media::Image.index()].concat();
        if images.is_empty() {
            return Err(Error::Infeasible("no image instances".into()));
        }
        Ok((0..n)
            .map(|_| {
                let item = *images.choose(&mut self.rng).unwrap();
                self.pick(item)
            })
            .collect())
    }

    pub fn next_batch(&mut self, kind: BatchKind, quadruplets: usize) -> Result<Batch> {
        if quadruplets == 0 {
            return Err(Error::EmptyBatch);
        }
        match kind {
            BatchKind::ImagesOnly => Ok(Batch {
                samples: self.sample_images(4 * quadruplets)?,
                quads: Vec::new(),
            }),
            BatchKind::Quadruplets => {
                let mut samples = Vec::with_capacity(4 * quadruplets);
                let mut quads = Vec::with_capacity(quadruplets);
                for q in 0..quadruplets {
                    let quad = self.sample_quadruplet()?;
                    samples.extend(quad.slots);
                    quads.push([4 * q, 4 * q + 1, 4 * q + 2, 4 * q + 3]);
                }
                Ok(Batch { samples, quads })
            }
        }
    }

    /// `steps` consecutive batches.
    pub fn epoch_batches(
        &mut self,
        steps: usize,
        kind: BatchKind,
        quadruplets: usize,
    ) -> impl Iterator<Item = Result<Batch>> + '_ {
        (0..steps).map(move |_| self.next_batch(kind, quadruplets))
    }
}
