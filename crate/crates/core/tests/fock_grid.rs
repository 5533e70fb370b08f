use std::f64::consts::PI;
use std::time::Instant;

use sqzt_core::fock::{
    adaptive_state, quadrature_variance, quadrature_variance_of, SqueezedThermalParams,
};

#[test]
fn builder_matches_closed_form_variance_on_grid() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &r in &[0.0, 0.3, 0.6, 1.0, 1.4] {
        for &theta_s in &[0.0, PI / 2.0, PI, 3.0 * PI / 2.0] {
            for &n_th in &[0.0, 0.2, 0.5, 1.0] {
                let p = SqueezedThermalParams::new(r, theta_s, n_th).unwrap();
                // m=35 where the photon tail allows it, larger otherwise
                let (rho, m, _) = adaptive_state(&p, 1.0 - 1e-8, 35, 1200).unwrap();
                for k in 0..8 {
                    let th = k as f64 * PI / 4.0;
                    let err = (quadrature_variance_of(&rho, th) - quadrature_variance(&p, th)).abs();
                    worst = worst.max(err);
                    assert!(err <= 1e-3, "({r}, {theta_s}, {n_th}) m={m} θ={th}: {err}");
                }
            }
        }
    }
    println!("max variance error {worst:.3e} in {:?}", start.elapsed());
}
