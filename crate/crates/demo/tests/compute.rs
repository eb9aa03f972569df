use gpf_demo::compute::{focal_curves, kernel_curve, uncertainty_field, FIELD_EXAMPLES};

#[test]
fn kernel_curve_converges_with_more_features() {
    let err = |l| {
        let rows = kernel_curve(l, 3, 4.0, 41).unwrap();
        rows.chunks(3).map(|r| (r[1] - r[2]).abs()).sum::<f64>() / 41.0
    };
    let rows = kernel_curve(64, 3, 4.0, 41).unwrap();
    assert_eq!(rows.len(), 41 * 3);
    assert_eq!(rows[1], 1.0);
    assert!(err(8192) < err(16));
    assert!(err(8192) < 0.05);
    assert!(kernel_curve(64, 3, 0.0, 41).is_err());
}

#[test]
fn focal_curves_shape_and_cross_entropy_case() {
    let rows = focal_curves(&[0.0, 2.0], 11).unwrap();
    assert_eq!(rows.len(), 2 * 11 * 3);
    // gamma = 0 at p = 0.5: loss ln 2, gradient -(1 - p).
    let mid = &rows[5 * 3..6 * 3];
    assert!((mid[1] - 2f64.ln()).abs() < 1e-12);
    assert!((mid[2] + 0.5).abs() < 1e-12);
    // focal loss never exceeds cross-entropy
    for i in 0..11 {
        assert!(rows[(11 + i) * 3 + 1] <= rows[i * 3 + 1]);
    }
}

#[test]
fn field_is_uncertain_far_from_data() {
    let f = uncertainty_field(6.0, 1, 21, 12.0).unwrap();
    assert_eq!(f.prob.len(), 21 * 21);
    assert_eq!(f.points.len(), FIELD_EXAMPLES * 3);
    assert!(f.prob.iter().all(|p| (0.0..=1.0).contains(p)));
    let corner = f.variance[0];
    let centre_left = f.variance[10 * 21 + 7];
    assert!(
        corner > 2.0 * centre_left,
        "corner {corner} vs near data {centre_left}"
    );
    assert!(uncertainty_field(6.0, 1, 1, 12.0).is_err());
}
