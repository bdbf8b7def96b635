//! Resumable training-state files.
//!
//! ```text
//! magic "XMTS" | version u32 | run hash u64 | epoch u64 | step u64
//! model checkpoint | centers: classes u32, dim u32, f64 data
//! velocity blocks | rng: seed [u8; 32], stream u64, word position u128
//! ```

use std::io::{Read, Write};

use super::{TrainState, Trainer};
use crate::encoding::EncodedItem;
use crate::error::{Error, Result};
use crate::model::checkpoint::{
    load_model, read_array, read_bytes, read_u32, read_u64, read_params, save_model, write_params, write_u32, write_u64,
};
use crate::objective::{CenterTable, ObjectiveConfig};
use crate::sampler::RngState;
use crate::train::TrainConfig;

const MAGIC: &[u8; 4] = b"XMTS";
const VERSION: u32 = 1;

impl<'a> Trainer<'a> {
    /// Writes everything needed to continue this run bit-identically.
    pub fn save_state<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = &self.state;
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u64(w, self.config.resume_hash(&self.objective))?;
        write_u64(w, s.epoch as u64)?;
        write_u64(w, s.step as u64)?;
        let extra = serde_json::json!({ "epoch": s.epoch, "step": s.step });
        save_model(w, &s.model, &extra)?;
        write_u32(w, s.centers.classes() as u32)?;
        write_u32(w, s.centers.dim() as u32)?;
        let mut buf = Vec::with_capacity(s.centers.as_slice().len() * 8);
        for v in s.centers.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        write_params(w, &s.velocity)?;
        let rng = self.sampler.rng_state();
        w.write_all(&rng.seed)?;
        write_u64(w, rng.stream)?;
        w.write_all(&rng.word_pos.to_le_bytes())?;
        Ok(())
    }

    /// Rebuilds a trainer from a state file written with the same
    /// training and objective configuration.
    pub fn resume<R: Read>(
        config: TrainConfig,
        objective: ObjectiveConfig,
        items: &'a [EncodedItem],
        r: &mut R,
    ) -> Result<Self> {
        if &read_array::<_, 4>(r)? != MAGIC {
            return Err(Error::Format("not a training state file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported state version {version}")));
        }
        if read_u64(r)? != config.resume_hash(&objective) {
            return Err(Error::Config(
                "training configuration differs from the one that wrote this state".into(),
            ));
        }
        let epoch = read_u64(r)? as usize;
        let step = read_u64(r)? as usize;
        let (model, _) = load_model(r)?;
        let classes = read_u32(r)? as usize;
        let dim = read_u32(r)? as usize;
        let centers = read_bytes(r, classes * dim * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let centers = CenterTable::from_rows(classes, dim, centers)?;
        let velocity = read_params(r)?;
        if !velocity.same_layout(model.params()) {
            return Err(Error::Format("optimizer state does not match the model".into()));
        }
        let rng = RngState {
            seed: read_array(r)?,
            stream: read_u64(r)?,
            word_pos: u128::from_le_bytes(read_array(r)?),
        };
        if classes != model.config().classes || dim != model.config().feature_dim {
            return Err(Error::Format("center table does not match the model".into()));
        }
        let mut trainer = Trainer::new(config, objective, model, items)?;
        trainer.sampler.set_rng_state(&rng);
        trainer.state = TrainState {
            centers,
            velocity,
            epoch,
            step,
            ..trainer.state
        };
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{small_config, tiny_model, toy_items};
    use super::*;

    #[test]
    fn interrupted_run_matches_uninterrupted() {
        let items = toy_items(3);
        let mut cfg = small_config();
        cfg.sampler.text_shift = true;
        let obj = ObjectiveConfig::default();

        let mut full = Trainer::new(cfg.clone(), obj, tiny_model(3), &items).unwrap();
        let full_log = full.run().unwrap();

        let mut first = Trainer::new(cfg.clone(), obj, tiny_model(3), &items).unwrap();
        let mut log = first.run_until(2, |_, _| Ok(())).unwrap();
        let mut buf = Vec::new();
        first.save_state(&mut buf).unwrap();
        drop(first);
        let mut second = Trainer::resume(cfg, obj, &items, &mut buf.as_slice()).unwrap();
        log.extend(second.run().unwrap());

        assert_eq!(log, full_log);
        assert_eq!(second.state().digest(), full.state().digest());
    }

    #[test]
    fn resume_rejects_changed_config_and_garbage() {
        let items = toy_items(3);
        let cfg = small_config();
        let obj = ObjectiveConfig::default();
        let t = Trainer::new(cfg.clone(), obj, tiny_model(3), &items).unwrap();
        let mut buf = Vec::new();
        t.save_state(&mut buf).unwrap();
        let mut other = cfg.clone();
        other.learning_rate = 0.1;
        assert!(matches!(
            Trainer::resume(other, obj, &items, &mut buf.as_slice()),
            Err(Error::Config(_))
        ));
        let mut cadence = cfg.clone();
        cadence.checkpoint_every = 5;
        assert!(Trainer::resume(cadence, obj, &items, &mut buf.as_slice()).is_ok());
        assert!(Trainer::resume(cfg.clone(), obj, &items, &mut &buf[..buf.len() - 3]).is_err());
        assert!(Trainer::resume(cfg, obj, &items, &mut &b"XMCKjunk"[..]).is_err());
    }
}
