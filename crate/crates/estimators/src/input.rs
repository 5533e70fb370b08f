use std::f32::consts::PI;

use sqzt_core::homodyne::QuadratureScan;

use crate::config::CnnConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Writes one sample into slot `b` of a `[C][B][L]` input batch. Values are
/// scaled by `input_scale`; phases, when used, are mapped to
/// `θ/π − 1 ∈ [−1, 1)`.
pub fn fill_slot<T: Scalar>(config: &CnnConfig, buf: &mut [T], batch: usize, b: usize, values: &[f32], phases: &[f32]) {
    let l = config.input_len;
    let dst = &mut buf[b * l..][..l];
    for (d, &v) in dst.iter_mut().zip(values) {
        *d = T::of(v as f64 * config.input_scale);
    }
    if config.two_channel {
        let dst = &mut buf[(batch + b) * l..][..l];
        for (d, &p) in dst.iter_mut().zip(phases) {
            *d = T::of((p / PI - 1.0) as f64);
        }
    }
}

/// Network input for a single scan, sorted by phase.
pub fn scan_input<T: Scalar>(config: &CnnConfig, scan: &QuadratureScan) -> Result<Vec<T>> {
    if scan.len() != config.input_len {
        return Err(Error::Shape {
            expected: config.input_len,
            got: scan.len(),
        });
    }
    let scan = if scan.is_sorted() { scan.clone() } else { scan.sorted() };
    let values: Vec<f32> = scan.values().iter().map(|&v| v as f32).collect();
    let phases: Vec<f32> = scan.phases().iter().map(|&p| p as f32).collect();
    let mut buf = vec![T::zero(); config.input_channels() * config.input_len];
    fill_slot(config, &mut buf, 1, 0, &values, &phases);
    Ok(buf)
}
