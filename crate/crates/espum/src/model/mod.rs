//! The trainable pipeline: unit-to-phoneme generator, boundary segmenter,
//! soft monotonic aligner, and segment pooling.
//!
//! Dataflow per utterance: the generator turns one-hot unit frames into
//! per-frame phoneme distributions; the segmenter predicts per-frame boundary
//! probabilities; the aligner converts those into an L × T matrix that pools
//! frame rows into segment rows, which the matching losses consume.

mod align;

pub use align::{
    binarize_boundaries, hard_pool, pool_segments, pool_segments_backward, soft_alignment,
    soft_alignment_backward, AlignmentMatrix,
};

use crate::corpus::UnitSequence;
use crate::diffnet::{DiffnetError, LayerSpec, Network, NetworkSpec, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] DiffnetError),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Unit-to-phoneme generator G: one convolution (kernel 4, stride 1, same
/// padding) from the unit inventory to the phoneme vocab, then row softmax.
#[derive(Debug, Clone)]
pub struct Generator {
    net: Network,
}

impl Generator {
    pub const DEFAULT_KERNEL: usize = 4;

    pub fn new(unit_inventory: usize, vocab_size: usize, seed: u64) -> Result<Self, DiffnetError> {
        Self::with_kernel(unit_inventory, vocab_size, Self::DEFAULT_KERNEL, seed)
    }

    pub fn with_kernel(
        unit_inventory: usize,
        vocab_size: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self, DiffnetError> {
        let spec = NetworkSpec::new(vec![
            LayerSpec::Conv1d {
                in_ch: unit_inventory,
                out_ch: vocab_size,
                kernel,
                stride: 1,
            },
            LayerSpec::SoftmaxRows,
        ])?;
        Ok(Self {
            net: Network::new(spec, seed),
        })
    }

    /// Wrap an existing network (e.g. from a checkpoint). The last layer must
    /// be a row softmax so outputs are distributions.
    pub fn from_network(net: Network) -> Result<Self, DiffnetError> {
        if net.spec().layers().last() != Some(&LayerSpec::SoftmaxRows) {
            return Err(DiffnetError::InvalidSpec(
                "generator must end in a row softmax".into(),
            ));
        }
        Ok(Self { net })
    }

    pub fn unit_inventory(&self) -> usize {
        self.net.spec().input_channels().expect("generator has a conv")
    }

    pub fn vocab_size(&self) -> usize {
        self.net.spec().output_channels().expect("generator has a conv")
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Phoneme-probability rows for a unit sequence (one-hot embedded
    /// internally). Output is T × |Vocab| with rows summing to 1.
    pub fn forward(&self, units: &UnitSequence) -> Result<(Tensor, Tape), ModelError> {
        let input = Tensor::one_hot(units.units(), self.unit_inventory())?;
        Ok(self.net.forward(&input)?)
    }

    /// Forward on already-embedded frame rows (T × U).
    pub fn forward_rows(&self, rows: &Tensor) -> Result<(Tensor, Tape), ModelError> {
        Ok(self.net.forward(rows)?)
    }
}

/// Boundary segmenter: a CNN stack ending in a sigmoid head that scores each
/// frame with the probability that a new segment starts there.
#[derive(Debug, Clone)]
pub struct Segmenter {
    net: Network,
}

/// Shape knobs for the default segmenter stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmenterShape {
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for SegmenterShape {
    fn default() -> Self {
        Self {
            layers: 7,
            channels: 16,
            kernel: 3,
        }
    }
}

impl Segmenter {
    /// `layers` convolutions with ReLU between them and a sigmoid on the
    /// final single-channel output.
    pub fn new(
        unit_inventory: usize,
        shape: SegmenterShape,
        seed: u64,
    ) -> Result<Self, DiffnetError> {
        if shape.layers == 0 {
            return Err(DiffnetError::InvalidSpec("segmenter needs ≥ 1 layer".into()));
        }
        let mut layers = Vec::new();
        let mut in_ch = unit_inventory;
        for i in 0..shape.layers {
            let last = i + 1 == shape.layers;
            let out_ch = if last { 1 } else { shape.channels };
            layers.push(LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel: shape.kernel,
                stride: 1,
            });
            layers.push(if last { LayerSpec::Sigmoid } else { LayerSpec::Relu });
            in_ch = out_ch;
        }
        Ok(Self {
            net: Network::new(NetworkSpec::new(layers)?, seed),
        })
    }

    pub fn from_network(net: Network) -> Result<Self, DiffnetError> {
        if net.spec().output_channels() != Some(1)
            || net.spec().layers().last() != Some(&LayerSpec::Sigmoid)
        {
            return Err(DiffnetError::InvalidSpec(
                "segmenter must end in a single-channel sigmoid".into(),
            ));
        }
        Ok(Self { net })
    }

    pub fn unit_inventory(&self) -> usize {
        self.net.spec().input_channels().expect("segmenter has a conv")
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Per-frame boundary probabilities in (0,1), one per frame. The frame-0
    /// value is conventionally ignored downstream.
    pub fn forward(&self, units: &UnitSequence) -> Result<(Vec<f64>, Tape), ModelError> {
        let input = Tensor::one_hot(units.units(), self.unit_inventory())?;
        let (out, tape) = self.net.forward(&input)?;
        Ok((out.values().to_vec(), tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(net: &mut Network) {
        for p in net.params_mut() {
            p.tensor.fill(0.0);
        }
    }

    #[test]
    fn generator_rows_are_distributions() {
        let g = Generator::new(5, 3, 42).unwrap();
        let units = UnitSequence::new(vec![0, 4, 2, 1, 3, 3]).unwrap();
        let (y, _) = g.forward(&units).unwrap();
        assert_eq!(y.shape(), &[6, 3]);
        for t in 0..y.rows() {
            let sum: f64 = y.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(y.row(t).iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn zero_generator_is_uniform() {
        let mut g = Generator::new(4, 5, 0).unwrap();
        zero_params(g.network_mut());
        let units = UnitSequence::new(vec![1, 2, 3]).unwrap();
        let (y, _) = g.forward(&units).unwrap();
        for t in 0..3 {
            for &p in y.row(t) {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn generator_rejects_out_of_range_unit() {
        let g = Generator::new(3, 2, 0).unwrap();
        let units = UnitSequence::new(vec![0, 3]).unwrap();
        assert!(g.forward(&units).is_err());
    }

    #[test]
    fn generator_receptive_field_is_kernel_bounded() {
        // Kernel 4: an input change at frame t may move outputs only within
        // [t-3, t+3].
        let g = Generator::new(3, 4, 9).unwrap();
        let t_len = 12;
        let base = UnitSequence::new(vec![0; t_len]).unwrap();
        let (y0, _) = g.forward(&base).unwrap();
        for t in 0..t_len {
            let mut changed = vec![0; t_len];
            changed[t] = 1;
            let (y1, _) = g.forward(&UnitSequence::new(changed).unwrap()).unwrap();
            for f in 0..t_len {
                let differs = y0.row(f).iter().zip(y1.row(f)).any(|(a, b)| a != b);
                let dist = f.abs_diff(t);
                if differs {
                    assert!(dist <= 3, "frame {f} changed by a unit flip at {t}");
                }
            }
        }
    }

    #[test]
    fn zero_segmenter_outputs_half() {
        let mut s = Segmenter::new(4, SegmenterShape::default(), 0).unwrap();
        zero_params(s.network_mut());
        let units = UnitSequence::new(vec![0, 1, 2, 3]).unwrap();
        let (b, _) = s.forward(&units).unwrap();
        assert_eq!(b, vec![0.5; 4]);
    }

    #[test]
    fn segmenter_outputs_in_open_unit_interval() {
        let s = Segmenter::new(4, SegmenterShape::default(), 3).unwrap();
        let units = UnitSequence::new(vec![3, 1, 0, 2, 2, 1, 0]).unwrap();
        let (b, _) = s.forward(&units).unwrap();
        assert_eq!(b.len(), 7);
        assert!(b.iter().all(|&p| p > 0.0 && p < 1.0));
        let (b2, _) = s.forward(&units).unwrap();
        assert_eq!(b, b2);
    }

    #[test]
    fn segmenter_stack_has_requested_depth() {
        let s = Segmenter::new(4, SegmenterShape { layers: 7, channels: 8, kernel: 3 }, 0).unwrap();
        let convs = s
            .network()
            .spec()
            .layers()
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv1d { .. }))
            .count();
        assert_eq!(convs, 7);
        assert_eq!(s.network().spec().layers().last(), Some(&LayerSpec::Sigmoid));
    }
}
