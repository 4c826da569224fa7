use dcnn_web::{demo_config, synth_image, Session, IMAGE_SIDE};

#[test]
fn demo_config_is_valid() {
    let trace = demo_config().shape_trace().unwrap();
    assert_eq!(trace.last().unwrap().dims, vec![2]);
}

#[test]
fn synth_image_has_a_disk_only_when_asked() {
    let with = synth_image(3, IMAGE_SIDE, true).unwrap();
    let without = synth_image(3, IMAGE_SIDE, false).unwrap();
    assert_eq!(with.len(), IMAGE_SIDE * IMAGE_SIDE);
    assert!(with.iter().filter(|&&v| v == 0.9).count() > 40);
    assert!(with.iter().chain(&without).all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(with, synth_image(3, IMAGE_SIDE, true).unwrap());
    assert!(synth_image(3, 5, true).is_err());
}

#[test]
fn feature_maps_have_first_layer_shape() {
    let s = Session::new(1, 40).unwrap();
    let img = synth_image(2, IMAGE_SIDE, true).unwrap();
    let maps = s.feature_maps(&img).unwrap();
    assert_eq!(maps.activations.dims(), &[4, 20, 20]);
    assert_eq!(maps.pooled.dims(), &[4, 10, 10]);
    assert!(maps.activations.data().iter().all(|&v| v >= 0.0));
    assert!(s.feature_maps(&img[1..]).is_err());
}

#[test]
fn in_page_training_learns_and_metrics_follow_the_threshold() {
    let mut s = Session::new(5, 200).unwrap();
    let before = s.validation_loss().unwrap();
    let losses = s.train(300, 0.01).unwrap();
    assert_eq!(losses.len(), 300);
    assert_eq!(s.iterations(), 300);
    assert!(s.validation_loss().unwrap() < before);

    let report = s.metrics(0.5).unwrap();
    assert!(report.accuracy > 0.9, "{}", report.to_json());
    let lenient = s.metrics(0.0).unwrap();
    assert_eq!(lenient.confusion.fn_, 0);
    assert_eq!(lenient.sensitivity, 1.0);

    let p = s.predict(&synth_image(9, IMAGE_SIDE, true).unwrap()).unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn sessions_are_reproducible() {
    let mut a = Session::new(8, 60).unwrap();
    let mut b = Session::new(8, 60).unwrap();
    assert_eq!(a.train(20, 0.01).unwrap(), b.train(20, 0.01).unwrap());
    assert_eq!(a.train(20, 0.01).unwrap(), b.train(20, 0.01).unwrap());
    assert!(a.network().params_bitwise_eq(b.network()));
}
