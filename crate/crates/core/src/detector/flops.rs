//! Deterministic per-image FLOP count.
//!
//! Convention: a convolution costs `2·Cin·kH·kW` per output element (one
//! multiply and one add per tap), plus 1 when it has a bias. Batchnorm costs 5
//! per element, the activation 1 per element.

use super::model::{Layer, Model};
use crate::ops::conv_out_dim;

pub const BATCHNORM_FLOPS_PER_ELEMENT: u64 = 5;
pub const ACTIVATION_FLOPS_PER_ELEMENT: u64 = 1;

pub fn conv_flops(c_in: usize, kh: usize, kw: usize, output_elements: usize, bias: bool) -> u64 {
    output_elements as u64 * (2 * (c_in * kh * kw) as u64 + bias as u64)
}

/// FLOPs of one forward pass on a single image.
pub fn count_flops(model: &Model) -> u64 {
    let mut size = model.detector_config().input_size;
    let mut total = 0u64;
    for layer in model.layers() {
        match *layer {
            Layer::ConvBnAct {
                kernel,
                stride,
                padding,
                ..
            } => {
                let shape = model.params()[kernel].tensor.shape();
                let (c_out, c_in, k) = (shape[0], shape[1], shape[2]);
                size = conv_out_dim(size, k, stride, padding).expect("validated at build");
                let elems = c_out * size * size;
                total += conv_flops(c_in, k, k, elems, false);
                total += (BATCHNORM_FLOPS_PER_ELEMENT + ACTIVATION_FLOPS_PER_ELEMENT) * elems as u64;
            }
            Layer::Head { kernel, .. } => {
                let shape = model.params()[kernel].tensor.shape();
                total += conv_flops(shape[1], 1, 1, shape[0] * size * size, true);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{DetectorConfig, HybridBlockConfig, StemLayer};

    #[test]
    fn single_pointwise_conv_with_bias() {
        assert_eq!(conv_flops(1, 1, 1, 1, true), 3);
    }

    #[test]
    fn doubling_resolution_quadruples_flops() {
        let small = DetectorConfig::desk(1, false);
        let mut big = small.clone();
        big.input_size *= 2;
        big.grid_size *= 2;
        let a = Model::build(small, None, 0).unwrap().flops();
        let b = Model::build(big, None, 0).unwrap().flops();
        assert_eq!(b, 4 * a);
    }

    #[test]
    fn hand_count_tiny_model() {
        // 4×4 input, stem: 3→2 channels stride 2 → 2×2, grid 2, head 6 channels.
        let cfg = DetectorConfig {
            grid_size: 2,
            boxes_per_cell: 1,
            num_classes: 1,
            input_size: 4,
            with_hybrid: false,
            stem: vec![StemLayer { out_channels: 2, stride: 2 }],
            slope: 0.1,
        };
        let m = Model::build(cfg, None, 0).unwrap();
        let stem = 2 * 2 * 2 * (2 * 3 * 9) + 2 * 2 * 2 * 6;
        let head = 6 * 2 * 2 * (2 * 2 + 1);
        assert_eq!(m.flops(), (stem + head) as u64);
        let _ = HybridBlockConfig::default();
    }
}
