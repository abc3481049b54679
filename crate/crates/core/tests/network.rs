mod common;

use std::fs;

use common::*;
use lipcert::bounds::lower_bound_sampled;
use lipcert::linops::{DenseOperator, LinearMap, LinearOperator, TensorShape};
use lipcert::network::{
    f32_bytes, layer_domain, load_model, lower_bound_network, propagate, recenter, save_model,
    AffineLayer, Layer, LayerMethod, MaxPool2d, Method, NetworkModel,
};
use lipcert::{BoundConfig, Error, Orthant};

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

fn small_net(seed: u64) -> NetworkModel {
    let mut r = stream(seed);
    let conv = random_conv(&mut r, (1, 6, 6, 2, 3, 1, 0));
    let b = round_f32(&gaussian_vec(&mut r, 2));
    let conv = Layer::conv(conv, &b).unwrap();
    let d1 = random_dense(&mut r, 5, 8);
    let d2 = random_dense(&mut r, 3, 5);
    NetworkModel::new(
        "small",
        TensorShape::new(vec![1, 6, 6]).unwrap(),
        vec![
            conv,
            Layer::MaxPool2d(MaxPool2d { window: (2, 2), stride: (2, 2) }),
            Layer::Flatten,
            Layer::dense(d1, gaussian_vec(&mut r, 5), true).unwrap(),
            Layer::dense(d2, gaussian_vec(&mut r, 3), false).unwrap(),
        ],
    )
    .unwrap()
}

fn f32_model(m: &NetworkModel) -> NetworkModel {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(m, &path).unwrap();
    load_model(&path).unwrap()
}

#[test]
fn fixtures_load_with_expected_shapes() {
    let m = load_model(fixture("mnist-net.json")).unwrap();
    let labels: Vec<String> = m.layers.iter().map(Layer::label).collect();
    assert_eq!(
        labels,
        ["conv5-6", "maxpool2", "conv5-16", "maxpool2", "FC-120", "FC-84", "FC-10"]
    );
    let shapes = m.shapes().unwrap();
    assert_eq!(shapes.last().unwrap().dims(), &[10]);
    assert_eq!(shapes[4].dims(), &[16, 4, 4]);
    for name in ["identity.json", "diag21.json", "random3.json", "conv-relu.json"] {
        load_model(fixture(name)).unwrap();
    }
}

#[test]
fn save_load_roundtrip() {
    let m = small_net(1);
    let back = f32_model(&m);
    assert_eq!(back.name, "small");
    assert_eq!(back.layers.len(), m.layers.len());
    let again = f32_model(&back);
    assert_eq!(again, back);
    for (a, b) in m.layers.iter().zip(&back.layers) {
        assert_eq!(a.kind(), b.kind());
        if let (Layer::Affine { bias: ba, .. }, Layer::Affine { bias: bb, .. }) = (a, b) {
            assert_eq!(&round_f32(ba), bb);
        }
    }
}

#[test]
fn forward_matches_direct_evaluation() {
    let m = load_model(fixture("conv-relu.json")).unwrap();
    let Layer::Affine { op: LinearOperator::Conv2d(conv), bias, relu: true } = &m.layers[0] else {
        panic!("fixture is a single conv layer");
    };
    let rows = conv_matrix_direct(conv);
    let mut r = stream(2);
    let x = gaussian_vec(&mut r, conv.cols());
    let want: Vec<f64> = matvec(&rows, &x)
        .iter()
        .zip(bias)
        .map(|(y, b)| (y + b).max(0.0))
        .collect();
    let got = m.forward(&x).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!(close(*a, *b, 1e-12));
    }
}

#[test]
fn load_errors_name_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&small_net(3), &path).unwrap();

    // flip one weight byte of layer 3: checksum mismatch
    let w = dir.path().join("m/3.weights.bin");
    let mut bytes = fs::read(&w).unwrap();
    bytes[0] ^= 1;
    fs::write(&w, &bytes).unwrap();
    match load_model(&path) {
        Err(Error::Load { layer: Some(3), reason, .. }) => assert!(reason.contains("checksum"), "{reason}"),
        other => panic!("{other:?}"),
    }

    // truncated bias file
    save_model(&small_net(3), &path).unwrap();
    let b = dir.path().join("m/0.bias.bin");
    fs::write(&b, [0u8; 5]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Load { layer: Some(0), .. })));

    // missing weights file
    save_model(&small_net(3), &path).unwrap();
    fs::remove_file(dir.path().join("m/4.weights.bin")).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Load { layer: Some(4), .. })));

    // wrong element count without a checksum
    let text = fs::read_to_string(&path).unwrap();
    save_model(&small_net(3), &path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["layers"][3].as_object_mut().unwrap().remove("sha256");
    fs::write(&path, v.to_string()).unwrap();
    fs::write(dir.path().join("m/3.weights.bin"), f32_bytes(&[1.0; 7])).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Load { layer: Some(3), .. })));

    // in_features disagreeing with the incoming shape
    v["layers"][3]["in_features"] = 9.into();
    fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Load { layer: Some(3), .. })));

    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(load_model(&path), Err(Error::Load { layer: None, .. })));
    fs::write(&path, r#"{"name":"x","input_shape":[2],"layers":[{"kind":"softmax"}]}"#).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Load { layer: None, .. })));
    assert!(load_model(dir.path().join("absent.json")).is_err());
}

#[test]
fn trace_chains_radii_and_orders_methods() {
    let m = f32_model(&small_net(4));
    let mut r = stream(5);
    let x0: Vec<f64> = gaussian_vec(&mut r, 36);
    let cfg = BoundConfig::default();
    for eps in [1e-3, 0.1, 10.0] {
        let traces: Vec<_> = Method::ALL
            .iter()
            .map(|&meth| propagate(&m, &x0, eps, meth, &cfg).unwrap())
            .collect();
        for t in &traces {
            let mut e = eps;
            let mut p = 1.0;
            for rec in &t.layers {
                assert!(close(rec.epsilon_in, e, 1e-12));
                e *= rec.l_upper;
                p *= rec.l_upper;
            }
            assert!(close(t.product_bound, p, 1e-12));
            assert_eq!(t.layers[1].method, LayerMethod::MaxpoolGlobal);
            assert_eq!(t.layers[2].method, LayerMethod::Identity);
            assert_eq!(t.layers[4].method, LayerMethod::Spectral);
        }
        let [naive, rbar, nested] = [&traces[0], &traces[1], &traces[2]];
        assert!(naive.product_bound >= rbar.product_bound * (1.0 - 1e-6));
        assert!(rbar.product_bound >= nested.product_bound * (1.0 - 1e-6));
        let lower = lower_bound_network(&m, &x0, eps, 2000, 9).unwrap();
        assert!(lower <= nested.product_bound * (1.0 + 1e-9), "{lower} > {}", nested.product_bound);
    }
}

#[test]
fn every_layer_bound_covers_its_sampled_ratio() {
    let m = load_model(fixture("random3.json")).unwrap();
    let mut r = stream(6);
    for eps in [0.01, 0.5, 5.0] {
        let x0 = gaussian_vec(&mut r, 8);
        let t = propagate(&m, &x0, eps, Method::Nested, &BoundConfig::default()).unwrap();
        for rec in &t.layers {
            let layer = &m.layers[rec.index];
            let AffineLayer { op, bias } = recenter(layer, &rec.nominal_in).unwrap();
            if layer.ends_in_relu() {
                let low = lower_bound_sampled(&op, &bias, &rec.domain, 3000, 7).unwrap();
                assert!(low <= rec.l_upper * (1.0 + 1e-9));
            }
        }
    }
}

#[test]
fn positive_nominal_coordinates_stay_unconstrained() {
    // Layer 0 leaves the first activation at 1 and the second at 0. Layer 1
    // fires only when the first activation drops by more than 0.5, which a
    // sign constraint on every coordinate would rule out.
    let m = NetworkModel::new(
        "drop",
        TensorShape::flat(2).unwrap(),
        vec![
            Layer::dense(DenseOperator::identity(2), vec![1.0, 0.0], true).unwrap(),
            Layer::dense(DenseOperator::from_rows(&[vec![-1.0, 0.0]]).unwrap(), vec![0.5], true)
                .unwrap(),
        ],
    )
    .unwrap();
    let x0 = [0.0, 0.0];
    let acts = m.activations(&x0).unwrap();
    let dom = layer_domain(&m, 1, &acts[1], 1.0).unwrap();
    assert_eq!(dom.orthant, Orthant::Partial(vec![false, true]));
    let t = propagate(&m, &x0, 1.0, Method::Nested, &BoundConfig::default()).unwrap();
    let lower = lower_bound_network(&m, &x0, 1.0, 4000, 3).unwrap();
    assert!(lower > 0.1);
    assert!(lower <= t.product_bound);
}

#[test]
fn identity_fixture_propagates_exactly() {
    let m = load_model(fixture("identity.json")).unwrap();
    let cfg = BoundConfig::default().with_slack(0.0);
    for meth in Method::ALL {
        let t = propagate(&m, &[0.0, 0.0], 3.0, meth, &cfg).unwrap();
        assert!(close(t.product_bound, 1.0, 1e-12));
    }
}
