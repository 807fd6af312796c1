mod common;

use common::gradcheck::{check_scene, KINDS};

#[test]
fn backward_matches_finite_differences() {
    for seed in 1000..1040 {
        let r = check_scene(seed);
        assert!(r.checked > 0);
        for (kind, err) in KINDS.iter().zip(r.worst) {
            assert!(err < 1e-4, "scene {seed}, {kind}: relative error {err:.3e}");
        }
    }
}
