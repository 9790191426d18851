mod support;

#[test]
fn primitives_match_finite_differences() {
    let (err, name) = support::primitive_gradient_error(5);
    assert!(err < 1e-4, "{name}: {err}");
}
