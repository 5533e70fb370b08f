//! Exact symmetries of a phase-sorted scan, applied on the fly during
//! training.
//!
//! Rolling the sequence by `s` samples and measuring phases from the phase
//! `δ` of sample `s` shows the state rotated by `δ`: `ρ_jk → ρ_jk e^{-i(j-k)δ}`,
//! so `θ_s → θ_s − 2δ`. Reading the phases backwards conjugates the state
//! (`θ_s → −θ_s`), and negating the quadratures applies parity
//! (`ρ_jk → (−1)^{j+k} ρ_jk`).

use std::f64::consts::TAU;

use rand::Rng;
use sqzt_core::homodyne::LabelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    /// Index of the sample that becomes phase 0.
    pub shift: usize,
    pub reflect: bool,
    pub negate: bool,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        shift: 0,
        reflect: false,
        negate: false,
    };

    /// Uniform over all three symmetries; only the sign flip when `rotate` is
    /// false.
    pub fn draw<R: Rng>(rng: &mut R, len: usize, rotate: bool) -> Self {
        let negate = rng.random();
        if rotate {
            Self {
                shift: rng.random_range(0..len),
                reflect: rng.random(),
                negate,
            }
        } else {
            Self { negate, ..Self::IDENTITY }
        }
    }

    /// Writes the transformed scan into `values`/`phases` and returns the
    /// rotation angle `δ`. `phases` is left empty when `src_phases` is.
    pub fn apply_scan(&self, src_values: &[f32], src_phases: &[f32], values: &mut Vec<f32>, phases: &mut Vec<f32>) -> f64 {
        let l = src_values.len();
        let delta = if src_phases.is_empty() { 0.0 } else { src_phases[self.shift] as f64 };
        let source = |k: usize| {
            let k = if self.reflect { (l - k) % l } else { k };
            (k + self.shift) % l
        };
        let sign = if self.negate { -1.0 } else { 1.0 };
        values.clear();
        values.extend((0..l).map(|k| sign * src_values[source(k)]));
        phases.clear();
        if !src_phases.is_empty() {
            phases.extend((0..l).map(|k| {
                let p = (src_phases[source(k)] as f64 - delta).rem_euclid(TAU);
                let p = if self.reflect { (TAU - p) % TAU } else { p };
                p as f32
            }));
        }
        delta
    }

    /// Labels of the transformed state, in place.
    pub fn apply_labels(&self, kind: LabelKind, m: usize, delta: f64, labels: &mut [f32]) {
        match kind {
            LabelKind::Params => {
                let (c, s) = (labels[1] as f64, labels[2] as f64);
                let (s2, c2) = (2.0 * delta).sin_cos();
                labels[1] = (c * c2 + s * s2) as f32;
                let sin = s * c2 - c * s2;
                labels[2] = if self.reflect { -sin } else { sin } as f32;
            }
            LabelKind::Cholesky => {
                let mut at = m;
                for j in 1..m {
                    for k in 0..j {
                        let d = (j - k) as f64;
                        let (re, im) = (labels[at] as f64, labels[at + 1] as f64);
                        let (sn, cs) = (d * delta).sin_cos();
                        let (mut re, mut im) = (re * cs + im * sn, im * cs - re * sn);
                        if self.reflect {
                            im = -im;
                        }
                        if self.negate && (j + k) % 2 == 1 {
                            re = -re;
                            im = -im;
                        }
                        labels[at] = re as f32;
                        labels[at + 1] = im as f32;
                        at += 2;
                    }
                }
            }
        }
    }
}
