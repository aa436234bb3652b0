use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{conv_out_dim, DEFAULT_LEAKY_SLOPE};

pub const HYBRID_LAYERS: usize = 3;
pub const MAX_HYBRID_CHANNELS: usize = 256;
pub const STEM_KERNEL: usize = 3;
pub const STEM_PADDING: usize = 1;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridLayer {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub padding: usize,
}

impl HybridLayer {
    /// Stride-1 layer with "same" padding.
    pub fn same(out_channels: usize, kernel_size: usize) -> Self {
        Self {
            out_channels,
            kernel_size,
            padding: kernel_size / 2,
        }
    }
}

/// The conv→batchnorm→activation pre-block: exactly three layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridBlockConfig {
    pub layers: Vec<HybridLayer>,
    pub slope: f64,
}

impl Default for HybridBlockConfig {
    fn default() -> Self {
        Self::with_channels([4, 8, 8])
    }
}

impl HybridBlockConfig {
    pub fn with_channels(channels: [usize; HYBRID_LAYERS]) -> Self {
        Self {
            layers: channels.iter().map(|&c| HybridLayer::same(c, 3)).collect(),
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != HYBRID_LAYERS {
            return Err(Error::Config(format!(
                "hybrid block needs exactly {HYBRID_LAYERS} layers, got {}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.out_channels == 0 || l.out_channels > MAX_HYBRID_CHANNELS {
                return Err(Error::Config(format!(
                    "hybrid layer {i}: out_channels must be in 1..={MAX_HYBRID_CHANNELS}, got {}",
                    l.out_channels
                )));
            }
            if l.kernel_size == 0 || l.kernel_size % 2 == 0 {
                return Err(Error::Config(format!(
                    "hybrid layer {i}: kernel_size must be positive and odd, got {}",
                    l.kernel_size
                )));
            }
        }
        validate_slope(self.slope)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }
}

fn validate_slope(slope: f64) -> Result<()> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Config(format!(
            "activation slope must lie in (0,1), got {slope}"
        )));
    }
    Ok(())
}

/// One 3×3 stem conv (padding 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemLayer {
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub grid_size: usize,
    pub boxes_per_cell: usize,
    pub num_classes: usize,
    pub input_size: usize,
    pub with_hybrid: bool,
    pub stem: Vec<StemLayer>,
    pub slope: f64,
}

impl DetectorConfig {
    /// Desk-scale default: 64×64 input, 4×4 grid, one box per cell.
    pub fn desk(num_classes: usize, with_hybrid: bool) -> Self {
        Self {
            grid_size: 4,
            boxes_per_cell: 1,
            num_classes,
            input_size: 64,
            with_hybrid,
            stem: vec![
                StemLayer { out_channels: 16, stride: 2 },
                StemLayer { out_channels: 32, stride: 2 },
                StemLayer { out_channels: 32, stride: 2 },
                StemLayer { out_channels: 64, stride: 2 },
            ],
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Channels of the raw prediction map: `B·5 + num_classes`.
    pub fn head_channels(&self) -> usize {
        self.boxes_per_cell * 5 + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_size", self.grid_size),
            ("boxes_per_cell", self.boxes_per_cell),
            ("num_classes", self.num_classes),
            ("input_size", self.input_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        validate_slope(self.slope)?;
        let mut reduction = 1usize;
        for (i, l) in self.stem.iter().enumerate() {
            if l.out_channels == 0 || l.stride == 0 {
                return Err(Error::Config(format!(
                    "stem layer {i}: out_channels and stride must be positive"
                )));
            }
            reduction *= l.stride;
        }
        if self.input_size % reduction != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by the stem reduction factor {reduction}",
                self.input_size
            )));
        }
        Ok(())
    }
}

/// Spatial size after the hybrid block and stem, or a config error.
pub(crate) fn trace_spatial(
    det: &DetectorConfig,
    hybrid: Option<&HybridBlockConfig>,
) -> Result<usize> {
    let mut size = det.input_size;
    if let Some(h) = hybrid {
        for (i, l) in h.layers.iter().enumerate() {
            size = conv_out_dim(size, l.kernel_size, 1, l.padding).ok_or_else(|| {
                Error::Config(format!("hybrid layer {i} kernel exceeds its padded input"))
            })?;
        }
        // a block that narrows or shrinks the stem input could make the stem cheaper than plain
        if h.out_channels() < IMAGE_CHANNELS || size < det.input_size {
            return Err(Error::Config(format!(
                "hybrid block must output at least {IMAGE_CHANNELS} channels at ≥ the input size, got {} channels at {size}×{size}",
                h.out_channels()
            )));
        }
    }
    for (i, l) in det.stem.iter().enumerate() {
        size = conv_out_dim(size, STEM_KERNEL, l.stride, STEM_PADDING).ok_or_else(|| {
            Error::Config(format!("stem layer {i} kernel exceeds its padded input"))
        })?;
    }
    if size != det.grid_size {
        return Err(Error::Config(format!(
            "stem reduces {0}×{0} input to {size}×{size}, expected the {1}×{1} grid",
            det.input_size, det.grid_size
        )));
    }
    Ok(size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_valid() {
        let d = DetectorConfig::desk(1, true);
        d.validate().unwrap();
        assert_eq!(trace_spatial(&d, Some(&HybridBlockConfig::default())).unwrap(), 4);
        assert_eq!(d.head_channels(), 6);
    }

    #[test]
    fn rejects_bad_hybrid() {
        let mut h = HybridBlockConfig::default();
        h.layers.pop();
        assert!(h.validate().is_err());
        let mut h = HybridBlockConfig::default();
        h.layers[1].out_channels = 300;
        assert!(h.validate().is_err());
        let mut h = HybridBlockConfig::default();
        h.layers[2].kernel_size = 4;
        assert!(h.validate().is_err());
    }

    #[test]
    fn rejects_narrowing_or_shrinking_block() {
        let d = DetectorConfig::desk(1, true);
        let narrow = HybridBlockConfig::with_channels([8, 8, 2]);
        assert!(matches!(trace_spatial(&d, Some(&narrow)), Err(Error::Config(_))));
        let mut shrink = HybridBlockConfig::default();
        shrink.layers[0].padding = 0;
        assert!(matches!(trace_spatial(&d, Some(&shrink)), Err(Error::Config(_))));
        let mut grow = HybridBlockConfig::default();
        grow.layers[0].padding = 2;
        assert!(trace_spatial(&d, Some(&grow)).is_err());
        trace_spatial(&d, Some(&HybridBlockConfig::with_channels([1, 1, 3]))).unwrap();
    }

    #[test]
    fn rejects_stem_that_misses_grid() {
        let mut d = DetectorConfig::desk(1, false);
        d.grid_size = 8;
        assert!(matches!(trace_spatial(&d, None), Err(Error::Config(_))));
        d.stem.pop();
        assert_eq!(trace_spatial(&d, None).unwrap(), 8);
    }
}
