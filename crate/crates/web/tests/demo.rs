use refsr_web::*;

#[test]
fn b0_slice_has_wall_and_empty_background() {
    let s = phantom_slice_native(3, 0.0, None).unwrap();
    assert_eq!(s.len(), SIZE * SIZE);
    assert_eq!(s[0], 0.0);
    assert!(s.iter().cloned().fold(0.0, f32::max) > 0.5);
    assert!(phantom_slice_native(3, 0.0, Some(10_000)).is_err());
}

#[test]
fn degradation_scores_are_plausible() {
    let c = degrade_compare_native(3, 0.02, 4, 0).unwrap();
    assert!(c.psnr_db() > 15.0 && c.psnr_db() < 40.0, "{}", c.psnr_db());
    assert!(c.ssim() > 0.0 && c.ssim() < 1.0);
    let mild = degrade_compare_native(3, 0.02, 2, 0).unwrap();
    assert!(mild.psnr_db() > c.psnr_db());
    assert!(degrade_compare_native(3, 0.0, 3, 0).is_err());
}

#[test]
fn noiseless_helix_map_follows_the_ramp() {
    let m = helix_map_native(5, 0.0).unwrap();
    assert_eq!(m.len(), SIZE * SIZE + 1);
    assert!(m[SIZE * SIZE] < 1.0, "mean error {}", m[SIZE * SIZE]);
    let wall: Vec<f32> = m[..SIZE * SIZE].iter().cloned().filter(|v| v.is_finite()).collect();
    assert!(wall.iter().any(|&v| v > 50.0) && wall.iter().any(|&v| v < -50.0));
}
