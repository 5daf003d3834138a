//! Labeled samples built from a trace.

use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{build_model_input, FeatureConfig, InputEncoder, ModelInput};
use crate::labeling::{collect_future_deltas, deltas_to_bitmap, DeltaBitmap, LabelConfig};
use crate::trace::{AddressConfig, MemoryAccess};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Trace index of the triggering access.
    pub trigger: u64,
    pub input: ModelInput,
    pub label: DeltaBitmap,
    /// The look-forward window ran past the end of its split.
    pub truncated: bool,
}

/// Samples for every trigger in `range` that has a full history window.
///
/// History may reach back before `range.start`; labels never look past
/// `range.end`.
pub fn build_samples(
    trace: &[MemoryAccess],
    range: Range<usize>,
    encoder: &mut InputEncoder,
    features: &FeatureConfig,
    labels: &LabelConfig,
    addr: &AddressConfig,
) -> Result<Vec<Sample>> {
    let need = features.history + encoder.extra_history();
    let end = range.end.min(trace.len());
    let start = range.start.max(need - 1);
    let mut out = Vec::with_capacity(end.saturating_sub(start));
    let mut window = Vec::with_capacity(need);
    for t in start..end {
        window.clear();
        window.extend(trace[t + 1 - need..=t].iter().rev().copied());
        let input = build_model_input(&window, encoder, features, addr)?;
        let (deltas, truncated) = collect_future_deltas(trace, t, end, labels, addr);
        let label = deltas_to_bitmap(&deltas, labels)?;
        out.push(Sample {
            trigger: t as u64,
            input,
            label,
            truncated,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{InputMode, OverflowPolicy};
    use crate::labeling::bitmap_to_deltas;
    use crate::trace::{generate_trace, Pattern, PatternSpec};

    #[test]
    fn stride_samples_carry_analytic_labels() {
        let addr = AddressConfig::default();
        let spec = PatternSpec::new(Pattern::Stride {
            stride: 3,
            start_block: 1 << 20,
            period: None,
        });
        let trace = generate_trace(&spec, 400, 1, &addr).unwrap();
        let feats = FeatureConfig::default();
        let labels = LabelConfig::default();
        let mut enc = InputEncoder::new(InputMode::Segments { bits: 6 }, 0, OverflowPolicy::Error);
        let samples = build_samples(&trace, 0..400, &mut enc, &feats, &labels, &addr).unwrap();
        assert_eq!(samples.len(), 400 - 8);
        assert_eq!(samples[0].trigger, 8);
        let expect: Vec<i64> = (1..=42).map(|k| 3 * k).collect();
        let first = bitmap_to_deltas(&samples[0].label, &labels);
        assert_eq!(first.into_iter().collect::<Vec<_>>(), expect);
        assert!(!samples[0].truncated);
        assert!(samples.last().unwrap().truncated);
        assert_eq!(samples.last().unwrap().label.count_ones(), 0);
    }
}
