//! Self-contained training snapshots: both networks, both optimizer states,
//! the current boundary labels, and the loop counters. Everything a resumed
//! run needs to continue bit-exactly lives here; the data files themselves
//! are referenced by the caller, not the checkpoint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::TrainError;
use crate::corpus::BoundaryLabels;
use crate::diffnet::checkpoint as wire;
use crate::diffnet::{AdamState, Network};
use crate::model::{Generator, Segmenter};

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub step: u64,
    /// Bumped once per relabeling pass.
    pub labels_version: u64,
    /// Divergence guard: total loss of the first update (NaN until then)
    /// and how many consecutive updates exceeded 10× that baseline.
    pub guard_baseline: f64,
    pub guard_count: u64,
    pub generator: Generator,
    pub segmenter: Segmenter,
    pub gen_opt: AdamState,
    pub seg_opt: AdamState,
    /// Current teacher boundary labels, one per speech utterance.
    pub labels: Vec<BoundaryLabels>,
}

impl Checkpoint {
    /// Install relabeled boundaries for subsequent training.
    pub fn replace_labels(&mut self, labels: Vec<BoundaryLabels>) {
        self.labels = labels;
        self.labels_version += 1;
    }

    pub fn save_to(&self, w: &mut impl Write) -> Result<(), TrainError> {
        wire::write_header(w)?;
        wire::write_u64(w, self.config_hash)?;
        wire::write_u64(w, self.step)?;
        wire::write_u64(w, self.labels_version)?;
        wire::write_f64(w, self.guard_baseline)?;
        wire::write_u64(w, self.guard_count)?;
        for net in [self.generator.network(), self.segmenter.network()] {
            wire::write_spec(w, net.spec())?;
            wire::write_params(w, net.params())?;
        }
        wire::write_adam(w, &self.gen_opt)?;
        wire::write_adam(w, &self.seg_opt)?;
        wire::write_u32(w, self.labels.len() as u32)?;
        for labels in &self.labels {
            wire::write_u32(w, labels.len() as u32)?;
            for &flag in labels.flags() {
                w.write_all(&[u8::from(flag)])?;
            }
            for &c in labels.confidence() {
                wire::write_f64(w, c)?;
            }
        }
        Ok(())
    }

    pub fn load_from(r: &mut impl Read) -> Result<Self, TrainError> {
        wire::read_header(r)?;
        let config_hash = wire::read_u64(r)?;
        let step = wire::read_u64(r)?;
        let labels_version = wire::read_u64(r)?;
        let guard_baseline = wire::read_f64(r)?;
        let guard_count = wire::read_u64(r)?;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let spec = wire::read_spec(r)?;
            let params = wire::read_params(r)?;
            // Seed is irrelevant: every weight is overwritten by the load.
            let mut net = Network::new(spec, 0);
            net.load_params(params)?;
            nets.push(net);
        }
        let segmenter = Segmenter::from_network(nets.pop().expect("two networks"))?;
        let generator = Generator::from_network(nets.pop().expect("one network"))?;
        let gen_opt = wire::read_adam(r)?;
        let seg_opt = wire::read_adam(r)?;
        for (state, net, name) in [
            (&gen_opt, generator.network(), "generator"),
            (&seg_opt, segmenter.network(), "segmenter"),
        ] {
            if state.m.len() != net.params().len() {
                return Err(TrainError::BadCheckpoint(format!(
                    "{name} optimizer tracks {} tensors, network has {}",
                    state.m.len(),
                    net.params().len()
                )));
            }
        }
        let n = wire::read_u32(r)? as usize;
        if n > (1 << 24) {
            return Err(TrainError::BadCheckpoint(format!(
                "implausible label count {n}"
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let len = wire::read_u32(r)? as usize;
            if len > (1 << 24) {
                return Err(TrainError::BadCheckpoint(format!(
                    "implausible utterance length {len}"
                )));
            }
            let mut flags = vec![0u8; len];
            r.read_exact(&mut flags)?;
            let mut confidence = Vec::with_capacity(len);
            for _ in 0..len {
                confidence.push(wire::read_f64(r)?);
            }
            labels.push(
                BoundaryLabels::new(flags.into_iter().map(|f| f != 0).collect(), confidence)
                    .map_err(|e| TrainError::BadCheckpoint(e.to_string()))?,
            );
        }
        Ok(Self {
            config_hash,
            step,
            labels_version,
            guard_baseline,
            guard_count,
            generator,
            segmenter,
            gen_opt,
            seg_opt,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::load_from(&mut BufReader::new(File::open(path)?))
    }
}
