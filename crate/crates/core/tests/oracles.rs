mod common;

#[test]
fn soft_and_composed_loss_closed_forms() {
    common::assert_all(&common::loss_checks().unwrap());
}

#[test]
fn resamplers_and_pyramids() {
    common::assert_all(&common::resampler_checks().unwrap());
}

#[test]
fn flop_ratios() {
    common::assert_all(&common::flops_checks().unwrap());
}

#[test]
fn metrics_and_bootstrap() {
    common::assert_all(&common::metrics_checks().unwrap());
}
