use std::time::Instant;

use sqzt_core::baselines::{fit_variance_model, mle_reconstruct, MleConfig};
use sqzt_core::fock::{fidelity, squeezed_thermal_state, wrap_angle, SqueezedThermalParams};
use sqzt_core::homodyne::{binned_variances, sample_scan, PhaseMode};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn angle_error(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(std::f64::consts::TAU - d)
}

#[test]
fn mle_recovers_squeezed_thermal_state() {
    let p = SqueezedThermalParams::new(0.5, 0.7, 0.1).unwrap();
    let scan = sample_scan(&p, 4096, PhaseMode::UniformRandomSorted, 2024).unwrap();
    let start = Instant::now();
    let out = mle_reconstruct(&scan, &MleConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let truth = squeezed_thermal_state(&p, 15, 60).unwrap();
    let f = fidelity(&out.rho, &truth).unwrap();
    println!("fidelity {f:.5}, {} iterations, converged {}, {elapsed:?}", out.iterations, out.converged);
    assert!(f >= 0.98, "{f}");
    for w in out.log_likelihood.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
}

#[test]
fn covariance_fit_monte_carlo() {
    let p = SqueezedThermalParams::new(0.8, 1.2, 0.3).unwrap();
    let (mut er, mut et, mut en) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..20 {
        let scan = sample_scan(&p, 4096, PhaseMode::UniformRandomSorted, seed).unwrap();
        let fit = fit_variance_model(&binned_variances(&scan, 24).unwrap()).unwrap();
        let q = fit.params.expect("physical fit");
        er.push((q.r() - p.r()).abs());
        et.push(angle_error(q.theta_s(), p.theta_s()));
        en.push((q.n_th() - p.n_th()).abs());
    }
    let (mr, mt, mn) = (median(er), median(et), median(en));
    println!("median errors r {mr:.4} θ {mt:.4} n {mn:.4}");
    assert!(mr <= 0.05 && mt <= 0.05 && mn <= 0.05);
}
