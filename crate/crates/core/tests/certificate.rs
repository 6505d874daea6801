//! Analytic certificate of the Laplace mechanism's privacy bound: for
//! normalized inputs differing in one coordinate by at most Δf = 1, the
//! log density ratio at any output never exceeds ε.

use privrep_core::dp::{dp_ratio_certificate, perturb, PrivacyParams};
use privrep_core::rng::RngStream;

#[test]
fn certificate_holds_for_randomized_adjacent_pairs() {
    let mut rng = RngStream::new(404, 0);
    for eps in [0.05, 1.0, 5.0] {
        let params = PrivacyParams::new(eps, 0.0).unwrap();
        for _ in 0..1000 {
            let k = 2 + rng.below(15) as usize;
            let mut x: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            let mut x_adj = x.clone();
            let coord = rng.below(k as u64) as usize;
            x[coord] = rng.uniform();
            x_adj[coord] = rng.uniform();

            // outputs sampled from the mechanism itself at both inputs,
            // plus adversarially far grid points
            let mut outputs: Vec<Vec<f64>> = Vec::new();
            outputs.push(perturb(&x, &params, &mut rng).unwrap());
            outputs.push(perturb(&x_adj, &params, &mut rng).unwrap());
            outputs.push(vec![50.0; k]);
            outputs.push(vec![-50.0; k]);
            outputs.push((0..k).map(|_| rng.uniform() * 8.0 - 4.0).collect());

            for o in &outputs {
                let ratio = dp_ratio_certificate(&x, &x_adj, o, &params);
                assert!(
                    ratio <= eps + 1e-12,
                    "log ratio {ratio} exceeds eps {eps} at k={k}"
                );
            }
        }
    }
}

#[test]
fn certificate_supremum_approaches_l1_over_scale() {
    // sup over outputs of the log ratio equals ||x - x'||_1 / b; a grid
    // search over one-sided outputs must approach (and attain) it
    let mut rng = RngStream::new(405, 0);
    let params = PrivacyParams::new(0.5, 0.0).unwrap(); // b = 2
    for _ in 0..50 {
        let k = 2 + rng.below(6) as usize;
        let x: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
        // adjacent pair moved in one coordinate, always downward so the
        // far-positive output achieves the supremum exactly
        let coord = rng.below(k as u64) as usize;
        let mut x_adj = x.clone();
        x_adj[coord] = x[coord] * rng.uniform();
        let c: f64 = x
            .iter()
            .zip(&x_adj)
            .map(|(a, b)| (a - b).abs())
            .sum();

        let mut sup = f64::NEG_INFINITY;
        for step in 0..40 {
            let level = -10.0 + step as f64 * 0.5;
            let o = vec![level; k];
            sup = sup.max(dp_ratio_certificate(&x, &x_adj, &o, &params));
        }
        let bound = c / params.scale;
        assert!(sup <= bound + 1e-12);
        assert!(
            (sup - bound).abs() < 1e-9,
            "grid supremum {sup} does not reach {bound}"
        );
    }
}
