mod support;

use support::{check_ops, check_unet, TOLERANCE};

#[test]
fn operators_match_finite_differences() {
    for seed in 0..20 {
        let r = check_ops(seed);
        assert!(r.passed(), "seed {seed}: worst relative error {:.3e} at {}", r.worst, r.worst_at);
        assert!(r.kinks * 20 < r.checked, "seed {seed}: {} kink crossings", r.kinks);
    }
}

#[test]
fn toy_unet_matches_finite_differences() {
    for seed in 0..20 {
        let r = check_unet(seed);
        assert!(
            r.worst <= TOLERANCE,
            "seed {seed}: worst relative error {:.3e} at {}",
            r.worst,
            r.worst_at
        );
        assert!(r.kinks * 20 < r.checked, "seed {seed}: {} kink crossings", r.kinks);
    }
}

