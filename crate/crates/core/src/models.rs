//! The proposed convolutional decoder.

use crate::nn::{Activation, LayerSpec, Model, ModelSpec, NnError, Shape};
use crate::Scalar;

pub const N_CLASSES: usize = 4;
/// Time length after the first temporal convolution.
pub const FIRST_CONV_OUT_LEN: usize = 1192;
pub const FIRST_TEMPORAL_KERNEL: usize = 60;
pub const DROPOUT_RATE: f64 = 0.5;
pub const FLATTEN_FEATURES: usize = 960;

/// Input time length the network accepts.
pub const fn required_input_len() -> usize {
    FIRST_CONV_OUT_LEN + FIRST_TEMPORAL_KERNEL - 1
}

/// Layer list for a montage of `n_channels` electrodes.
pub fn proposed_spec(n_channels: usize) -> Result<ModelSpec, NnError> {
    if n_channels == 0 {
        return Err(NnError::InvalidLayer { stage: 2, reason: "spatial kernel needs at least one channel".into() });
    }
    let layers = vec![
        LayerSpec::conv(1, 20, (1, FIRST_TEMPORAL_KERNEL)),
        LayerSpec::conv(20, 20, (n_channels, 1)),
        LayerSpec::conv(20, 40, (1, 30)),
        LayerSpec::conv(40, 80, (1, 15)),
        LayerSpec::Dropout { rate: DROPOUT_RATE },
        LayerSpec::pool((1, 7), (1, 7)),
        LayerSpec::conv(80, 160, (1, 15)),
        LayerSpec::pool((1, 5), (1, 5)),
        LayerSpec::conv(160, 320, (1, 15)),
        LayerSpec::pool((1, 5), (1, 5)),
        LayerSpec::Flatten { features: FLATTEN_FEATURES },
        LayerSpec::Softmax { in_features: FLATTEN_FEATURES, classes: N_CLASSES },
    ];
    Ok(ModelSpec { input: [1, n_channels, required_input_len()], n_classes: N_CLASSES, layers })
}

/// Builds the network with deterministic initial weights.
pub fn build_proposed_net<T: Scalar>(n_channels: usize, seed: u64) -> Result<Model<T>, NnError> {
    Model::new(proposed_spec(n_channels)?, seed)
}

/// Expected per-stage output shapes for a batch.
pub fn reference_shapes(n_channels: usize, batch: usize) -> Vec<Shape> {
    let m = |f, s, t| Shape::Maps([batch, f, s, t]);
    vec![
        m(20, n_channels, 1192),
        m(20, 1, 1192),
        m(40, 1, 1163),
        m(80, 1, 1149),
        m(80, 1, 1149),
        m(80, 1, 164),
        m(160, 1, 150),
        m(160, 1, 30),
        m(320, 1, 16),
        m(320, 1, 3),
        Shape::Flat([batch, 960]),
        Shape::Flat([batch, N_CLASSES]),
    ]
}

/// Every time length whose shape trace reaches the classifier intact.
pub fn admissible_time_lengths(spec: &ModelSpec) -> Vec<usize> {
    (1..=4 * spec.input[2])
        .filter(|&t| spec.shape_trace(Shape::Maps([1, spec.input[0], spec.input[1], t])).is_ok())
        .collect()
}

/// Reduced network with every layer kind, used for gradient checks.
pub fn reduced_spec(n_channels: usize, n_samples: usize) -> Result<ModelSpec, NnError> {
    let mut layers = vec![
        LayerSpec::conv(1, 4, (1, 10)),
        LayerSpec::conv(4, 4, (n_channels, 1)),
        LayerSpec::conv(4, 4, (1, 5)),
        LayerSpec::conv(4, 4, (1, 5)),
        LayerSpec::Dropout { rate: DROPOUT_RATE },
        LayerSpec::pool((1, 3), (1, 3)),
        LayerSpec::conv(4, 4, (1, 5)),
        LayerSpec::pool((1, 2), (1, 2)),
        LayerSpec::conv(4, 4, (1, 3)),
        LayerSpec::pool((1, 2), (1, 2)),
    ];
    let probe = ModelSpec { input: [1, n_channels, n_samples], n_classes: N_CLASSES, layers: layers.clone() };
    let last = *probe.shape_trace(probe.input_shape(1))?.last().expect("non-empty");
    let features = last.numel_per_sample();
    layers.push(LayerSpec::Flatten { features });
    layers.push(LayerSpec::Dense { in_features: features, units: 8, activation: Activation::Elu });
    layers.push(LayerSpec::Softmax { in_features: 8, classes: N_CLASSES });
    let spec = ModelSpec { layers, ..probe };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_matches_reference_for_64_channels() {
        let spec = proposed_spec(64).unwrap();
        assert_eq!(spec.shape_trace(spec.input_shape(1)).unwrap(), reference_shapes(64, 1));
        assert_eq!(spec.shape_trace(spec.input_shape(1)).unwrap()[9].to_string(), "(1, 320, 1, 3)");
    }

    #[test]
    fn required_length() {
        assert_eq!(required_input_len(), 1251);
    }

    #[test]
    fn zero_channels_rejected() {
        assert!(proposed_spec(0).is_err());
    }

    #[test]
    fn thousand_samples_fail_at_flatten() {
        let spec = proposed_spec(64).unwrap();
        let err = spec.shape_trace(Shape::Maps([1, 1, 64, 1000])).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { stage: 11, .. }), "{err:?}");
    }

    #[test]
    fn reduced_spec_has_every_layer_kind() {
        use crate::nn::LayerKind::*;
        let spec = reduced_spec(8, 200).unwrap();
        let kinds: Vec<_> = spec.layers.iter().map(|l| l.kind()).collect();
        for k in [Conv, MaxPool, Dropout, Flatten, Dense, Softmax] {
            assert!(kinds.contains(&k));
        }
    }
}
