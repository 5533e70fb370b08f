use sqzt_core::fock::{density_from_cholesky, CholeskyFactor, FockDensityMatrix, SqueezedThermalParams};
use sqzt_core::homodyne::QuadratureScan;

use crate::config::HeadKind;
use crate::error::{Error, Result};
use crate::input::fill_slot;
use crate::network::{Cache, Model};

const PREDICT_BATCH: usize = 64;

fn outputs(model: &Model<f32>, scans: &[QuadratureScan]) -> Result<Vec<Vec<f64>>> {
    let cfg = model.config();
    let k = model.output_len();
    let mut out = Vec::with_capacity(scans.len());
    let mut cache = Cache::default();
    for chunk in scans.chunks(PREDICT_BATCH) {
        let b = chunk.len();
        let mut input = vec![0f32; b * model.input_len()];
        for (slot, scan) in chunk.iter().enumerate() {
            if scan.len() != cfg.input_len {
                return Err(Error::Shape {
                    expected: cfg.input_len,
                    got: scan.len(),
                });
            }
            let sorted;
            let scan = if scan.is_sorted() {
                scan
            } else {
                sorted = scan.sorted();
                &sorted
            };
            let values: Vec<f32> = scan.values().iter().map(|&v| v as f32).collect();
            let phases: Vec<f32> = scan.phases().iter().map(|&p| p as f32).collect();
            fill_slot(cfg, &mut input, b, slot, &values, &phases);
        }
        model.forward_cached(&input, b, &mut cache)?;
        out.extend(cache.output().chunks_exact(k).map(|o| o.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

fn require_head(model: &Model<f32>, want: &str) -> Result<()> {
    let ok = match model.config().head.kind {
        HeadKind::Characteristic => want == "characteristic",
        HeadKind::Reconstruction { .. } => want == "reconstruction",
    };
    if ok {
        Ok(())
    } else {
        Err(Error::HeadMismatch(format!(
            "{want} prediction from a {:?} head",
            model.config().head.kind
        )))
    }
}

/// Decodes `r = r_max·clamp(o₀, 0, 1)`, `θ_s = atan2(o₂, o₁)`,
/// `n_th = n_max·clamp(o₃, 0, 1)`.
pub fn predict_params(model: &Model<f32>, scan: &QuadratureScan) -> Result<SqueezedThermalParams> {
    Ok(predict_params_batch(model, std::slice::from_ref(scan))?.remove(0))
}

pub fn predict_params_batch(model: &Model<f32>, scans: &[QuadratureScan]) -> Result<Vec<SqueezedThermalParams>> {
    require_head(model, "characteristic")?;
    outputs(model, scans)?
        .iter()
        .map(|o| Ok(model.ranges.decode_params(o)?))
        .collect()
}

/// Unpacks the output as a Cholesky factor and returns `L L† / Tr(L L†)`.
/// An all-zero output gives `I / m`.
pub fn predict_density(model: &Model<f32>, scan: &QuadratureScan) -> Result<FockDensityMatrix> {
    Ok(predict_densities(model, std::slice::from_ref(scan))?.remove(0))
}

pub fn predict_densities(model: &Model<f32>, scans: &[QuadratureScan]) -> Result<Vec<FockDensityMatrix>> {
    require_head(model, "reconstruction")?;
    let HeadKind::Reconstruction { m } = model.config().head.kind else {
        unreachable!("checked above")
    };
    outputs(model, scans)?
        .iter()
        .map(|o| {
            let l = if o.iter().all(|&v| v == 0.0) {
                // a zero factor has no direction; read it as the maximally mixed state
                let mut eye = vec![0.0; o.len()];
                eye[..m].fill(1.0);
                CholeskyFactor::unpack_lenient(m, &eye)?
            } else {
                CholeskyFactor::unpack_lenient(m, o)?
            };
            Ok(density_from_cholesky(&l)?)
        })
        .collect()
}
