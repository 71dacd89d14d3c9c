use serde::{Deserialize, Serialize};

use super::{NnError, Shape};

/// Nonlinearity applied to a convolution or dense output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    MaxPool,
    Dropout,
    Flatten,
    Dense,
    Softmax,
}

/// One stage of a network.
///
/// Kernels and strides are `(spatial, time)`. `Softmax` owns an affine
/// projection to `classes` logits followed by the softmax itself, and must
/// be the final stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { in_maps: usize, out_maps: usize, kernel: (usize, usize), stride: (usize, usize), activation: Activation },
    MaxPool { kernel: (usize, usize), stride: (usize, usize) },
    Dropout { rate: f64 },
    Flatten { features: usize },
    Dense { in_features: usize, units: usize, activation: Activation },
    Softmax { in_features: usize, classes: usize },
}

/// `floor((n - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn valid_len(n: usize, k: usize, s: usize) -> Option<usize> {
    if k == 0 || s == 0 || k > n {
        None
    } else {
        Some((n - k) / s + 1)
    }
}

impl LayerSpec {
    pub fn conv(in_maps: usize, out_maps: usize, kernel: (usize, usize)) -> Self {
        LayerSpec::Conv { in_maps, out_maps, kernel, stride: (1, 1), activation: Activation::Elu }
    }

    pub fn pool(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        LayerSpec::MaxPool { kernel, stride }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv { .. } => LayerKind::Conv,
            LayerSpec::MaxPool { .. } => LayerKind::MaxPool,
            LayerSpec::Dropout { .. } => LayerKind::Dropout,
            LayerSpec::Flatten { .. } => LayerKind::Flatten,
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Softmax { .. } => LayerKind::Softmax,
        }
    }

    /// Weight and bias shapes, if the layer is parameterised.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv { in_maps, out_maps, kernel, .. } => Some((vec![out_maps, in_maps, kernel.0, kernel.1], out_maps)),
            LayerSpec::Dense { in_features, units, .. } => Some((vec![units, in_features], units)),
            LayerSpec::Softmax { in_features, classes } => Some((vec![classes, in_features], classes)),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_maps, kernel, .. } => in_maps * kernel.0 * kernel.1,
            LayerSpec::Dense { in_features, .. } | LayerSpec::Softmax { in_features, .. } => in_features,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().map_or(0, |(w, b)| w.iter().product::<usize>() + b)
    }

    /// Checks static parameters (positive kernels, rate in `[0, 1)`).
    pub fn validate(&self, stage: usize) -> Result<(), NnError> {
        let bad = |what: &str| Err(NnError::InvalidLayer { stage, reason: what.to_string() });
        match *self {
            LayerSpec::Conv { in_maps, out_maps, kernel, stride, .. } => {
                if in_maps == 0 || out_maps == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return bad("convolution sizes must be positive");
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return bad("pooling sizes must be positive");
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad("dropout rate must lie in [0, 1)");
                }
            }
            LayerSpec::Flatten { features } => {
                if features == 0 {
                    return bad("flatten width must be positive");
                }
            }
            LayerSpec::Dense { in_features, units, .. } => {
                if in_features == 0 || units == 0 {
                    return bad("dense sizes must be positive");
                }
            }
            LayerSpec::Softmax { in_features, classes } => {
                if in_features == 0 || classes < 2 {
                    return bad("softmax needs inputs and at least two classes");
                }
            }
        }
        Ok(())
    }

    /// Output shape for `input`; `stage` is 1-based and only used in errors.
    pub fn output_shape(&self, input: Shape, stage: usize) -> Result<Shape, NnError> {
        let mismatch = |expected: String| NnError::ShapeMismatch { stage, expected, found: input.to_string() };
        match (*self, input) {
            (LayerSpec::Conv { in_maps, out_maps, kernel, stride, .. }, Shape::Maps([b, c, h, w])) => {
                if c != in_maps {
                    return Err(mismatch(format!("{in_maps} input maps")));
                }
                let too_large = || NnError::KernelTooLarge { stage, kernel, input: (h, w) };
                let ho = valid_len(h, kernel.0, stride.0).ok_or_else(too_large)?;
                let wo = valid_len(w, kernel.1, stride.1).ok_or_else(too_large)?;
                Ok(Shape::Maps([b, out_maps, ho, wo]))
            }
            (LayerSpec::MaxPool { kernel, stride }, Shape::Maps([b, c, h, w])) => {
                let too_large = || NnError::KernelTooLarge { stage, kernel, input: (h, w) };
                let ho = valid_len(h, kernel.0, stride.0).ok_or_else(too_large)?;
                let wo = valid_len(w, kernel.1, stride.1).ok_or_else(too_large)?;
                Ok(Shape::Maps([b, c, ho, wo]))
            }
            (LayerSpec::Dropout { .. }, s) => Ok(s),
            (LayerSpec::Flatten { features }, s) => {
                let n = s.numel_per_sample();
                if n != features {
                    return Err(mismatch(format!("{features} features")));
                }
                Ok(Shape::Flat([s.batch(), n]))
            }
            (LayerSpec::Dense { in_features, units, .. }, Shape::Flat([b, n])) => {
                if n != in_features {
                    return Err(mismatch(format!("{in_features} features")));
                }
                Ok(Shape::Flat([b, units]))
            }
            (LayerSpec::Softmax { in_features, classes }, Shape::Flat([b, n])) => {
                if n != in_features {
                    return Err(mismatch(format!("{in_features} features")));
                }
                Ok(Shape::Flat([b, classes]))
            }
            (LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }, Shape::Flat(_)) => Err(mismatch("feature maps".into())),
            (LayerSpec::Dense { .. } | LayerSpec::Softmax { .. }, Shape::Maps(_)) => {
                Err(mismatch("flattened features".into()))
            }
        }
    }
}
