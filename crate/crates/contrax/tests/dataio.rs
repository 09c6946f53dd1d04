use contrax::dataio::*;
use contrax::IoError;
use contrax_core::certkit::spectral_radius;
use contrax_core::ren::direct_parameterize_ren;
use contrax_core::{eqnet, lti, sample, simfit, Activation, Dynamics, Mat, ModelDims, TimeSeriesDataset, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn certified_ren(seed: u64) -> ModelRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sample::ren_params(&mut rng, ModelDims { n: 2, m: 1, p: 2, q: 3 }, 1e-2, Activation::Tanh);
    let mut rec = ModelRecord::new(Model::Ren(direct_parameterize_ren(&p).unwrap()));
    rec.certificate = Some(Certificate { margin: 0.0, gamma: None });
    rec.metadata.insert("note".into(), "fixture".into());
    rec
}

#[test]
fn handwritten_csv() {
    let text = "t,u_1,y_1,y_2\n0,1.5,2,3\n1,-1,0.25,1e-3\n2,0,0,0\n";
    let d = parse_timeseries(text.as_bytes()).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.input_dim(), 1);
    assert_eq!(d.output_dim(), 2);
    assert_eq!(d.y[1][1], 1e-3);
}

#[test]
fn missing_cell_names_the_row() {
    let err = parse_timeseries("t,u_1,y_1\n0,1,2\n1,,3\n".as_bytes()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("row 2"), "{msg}");
    let err = parse_timeseries("t,u_1,y_1\n0,1,2\n1,3\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("row 2"));
}

#[test]
fn malformed_inputs() {
    for bad in [
        "time,u_1,y_1\n0,1,2\n",
        "t,u_2,y_1\n0,1,2\n",
        "t,u_1\n0,1\n",
        "t,u_1,y_1\n1,1,2\n",
        "t,u_1,y_1\n0,1,nan\n",
        "t,u_1,y_1\n0,1,inf\n",
        "t,u_1,y_1\n",
    ] {
        assert!(parse_timeseries(bad.as_bytes()).is_err(), "{bad:?} accepted");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn timeseries_round_trip(seed: u64, t in 1usize..40, m in 0usize..3, p in 1usize..3, scale in -300i32..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 10f64.powi(scale);
        let u = (0..t).map(|_| sample::normal_vector(&mut rng, m, s)).collect();
        let y = (0..t).map(|_| sample::normal_vector(&mut rng, p, 1.0)).collect();
        let d = TimeSeriesDataset::new(u, y, None).unwrap();
        let mut buf = Vec::new();
        write_timeseries(&mut buf, &d).unwrap();
        let back = parse_timeseries(buf.as_slice()).unwrap();
        prop_assert_eq!(back, d);
    }
}

#[test]
fn certified_ren_round_trip() {
    let rec = certified_ren(1);
    let text = model_to_json(&rec).unwrap();
    let back = model_from_json(&text).unwrap();
    assert_eq!(back, rec);
    assert_eq!(model_to_json(&back).unwrap(), text);
    assert!(run_checks(&back.model, 0.0, None).unwrap().iter().all(|c| c.feasible));
}

#[test]
fn tampered_metric_is_rejected() {
    let rec = certified_ren(2);
    let mut file: ModelFile = serde_json::from_str(&model_to_json(&rec).unwrap()).unwrap();
    let p = file.matrices.get_mut("P").unwrap();
    p.data[0] = -p.data[0];
    let err = model_from_json(&serde_json::to_string(&file).unwrap()).unwrap_err();
    assert!(matches!(err, IoError::Certificate(_)), "{err}");
}

#[test]
fn schema_errors() {
    let text = model_to_json(&certified_ren(3)).unwrap();
    let bad_family = text.replace("\"family\": \"ren\"", "\"family\": \"transformer\"");
    assert!(matches!(model_from_json(&bad_family), Err(IoError::Schema(_))));
    let bad_version = text.replace("\"schema_version\": \"1\"", "\"schema_version\": \"2\"");
    assert!(matches!(model_from_json(&bad_version), Err(IoError::Schema(_))));
    let bad_dims = text.replace("\"n\": 2", "\"n\": 3");
    assert!(matches!(model_from_json(&bad_dims), Err(IoError::Schema(_))));

    let mut file: ModelFile = serde_json::from_str(&text).unwrap();
    file.matrices.insert("Z".into(), MatrixRecord { rows: 1, cols: 1, data: vec![0.0] });
    assert!(model_from_json(&serde_json::to_string(&file).unwrap()).is_err());
    let mut file: ModelFile = serde_json::from_str(&text).unwrap();
    file.matrices.get_mut("E").unwrap().data.pop();
    assert!(model_from_json(&serde_json::to_string(&file).unwrap()).is_err());
}

#[test]
fn every_family_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = sample::lti_factor(&mut rng, 2, 1e-2).unwrap();
    let imp = lti::direct_parameterize_lti(&f, Mat::zeros(2, 1), Mat::identity(1, 2), Mat::zeros(1, 1)).unwrap();
    let exp = lti::to_explicit(&imp).unwrap();
    let lben = eqnet::direct_parameterize_lben(&sample::lben_params(&mut rng, 3, 2, 1, 1e-3, Activation::Relu), 2.0).unwrap();
    let rnn = contrax_core::rnn::from_implicit_lti(&imp, 2, Activation::Tanh);
    let models = [
        (Model::ExplicitLti { lti: exp.clone(), p: None }, None),
        (Model::ExplicitLti { lti: exp, p: Some(imp.p.clone()) }, None),
        (Model::ImplicitLti(imp), None),
        (Model::RobustRnn(rnn), None),
        (Model::Eqnet(lben), Some(2.0)),
    ];
    for (model, gamma) in models {
        let mut rec = ModelRecord::new(model);
        rec.certificate = Some(Certificate { margin: 0.0, gamma });
        if let Model::Eqnet(m) = &mut rec.model {
            m.gamma = gamma;
        }
        let back = model_from_json(&model_to_json(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }
}

#[test]
fn synthetic_is_reproducible() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::StableLti,
        n: 3,
        m: 2,
        p: 1,
        horizon: 50,
        input: InputKind::Multisine,
        noise_std: 0.0,
        seed: 17,
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    let other = generate_synthetic(&SyntheticSpec { seed: 18, ..spec.clone() }).unwrap();
    assert_ne!(a.dataset, other.dataset);
    let noisy = generate_synthetic(&SyntheticSpec { kind: SyntheticKind::LtiPlusStaticNonlinearity, noise_std: 0.1, ..spec }).unwrap();
    assert!(noisy.output_tanh);
}

#[test]
fn synthetic_systems_are_stable() {
    for seed in 0..100 {
        let spec = SyntheticSpec {
            kind: SyntheticKind::StableLti,
            n: 1 + (seed as usize % 4),
            m: 1,
            p: 1,
            horizon: 5,
            input: InputKind::WhiteNoise,
            noise_std: 0.0,
            seed,
        };
        let s = generate_synthetic(&spec).unwrap();
        let a = lti::to_explicit(&s.system).unwrap().a;
        assert!(spectral_radius(&a).unwrap() < 1.0, "seed {seed}");
    }
}

#[test]
fn single_sample_dataset_downstream() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::StableLti,
        n: 2,
        m: 1,
        p: 1,
        horizon: 1,
        input: InputKind::WhiteNoise,
        noise_std: 0.0,
        seed: 4,
    };
    let d = generate_synthetic(&spec).unwrap().dataset;
    assert_eq!(d.len(), 1);
    let cfg = simfit::FitConfig { iterations: 3, ..Default::default() };
    let res = simfit::fit(simfit::Family::StableLti, ModelDims { n: 1, m: 1, p: 1, q: 0 }, &d, &cfg).unwrap();
    assert_eq!(res.trace.len(), 4);
    assert!(generate_synthetic(&SyntheticSpec { horizon: 0, ..spec }).is_err());
}

fn weights_json(layers: &[(Mat, Vec<f64>)], act: &str) -> String {
    let layers: Vec<LayerRecord> = layers
        .iter()
        .map(|(w, b)| LayerRecord { weight: MatrixRecord::from_mat(w), bias: b.clone() })
        .collect();
    serde_json::to_string(&WeightsFile { activation: act.into(), layers }).unwrap()
}

#[test]
fn single_hidden_layer_has_no_coupling() {
    let w0 = Mat::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 0.2, 0.0, 2.0]);
    let w1 = Mat::from_row_slice(1, 3, &[1.0, 1.0, -1.0]);
    let spec = parse_weights(&weights_json(&[(w0, vec![0.1, 0.0, -0.2]), (w1, vec![0.3])], "relu")).unwrap();
    let net = eqnet::from_feedforward(&spec).unwrap();
    assert_eq!(net.d11, Mat::zeros(3, 3));
}

#[test]
fn two_hidden_layers_forward_parity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layers = vec![
        (sample::normal_matrix(&mut rng, 4, 3, 1.0), vec![0.1, -0.2, 0.0, 0.3]),
        (sample::normal_matrix(&mut rng, 5, 4, 1.0), vec![0.0; 5]),
        (sample::normal_matrix(&mut rng, 2, 5, 1.0), vec![1.0, -1.0]),
    ];
    let spec = parse_weights(&weights_json(&layers, "tanh")).unwrap();
    let net = eqnet::from_feedforward(&spec).unwrap();
    let opts = contrax_core::SolverOptions::default();
    for _ in 0..20 {
        let u = sample::normal_vector(&mut rng, 3, 1.0);
        let direct = spec.evaluate(&u).unwrap();
        let y = Model::Eqnet(net.clone()).simulate(&[u], &Vector::zeros(0), &opts).unwrap().outputs[0].clone();
        assert!((y - direct).amax() <= 10.0 * opts.tol);
    }
}

#[test]
fn broken_layer_chain_is_rejected() {
    let layers = vec![(Mat::zeros(4, 3), vec![0.0; 4]), (Mat::zeros(2, 5), vec![0.0; 2])];
    assert!(parse_weights(&weights_json(&layers, "relu")).is_err());
    let layers = vec![(Mat::zeros(4, 3), vec![0.0; 3]), (Mat::zeros(2, 4), vec![0.0; 2])];
    assert!(parse_weights(&weights_json(&layers, "relu")).is_err());
    assert!(parse_weights(&weights_json(&[(Mat::zeros(2, 2), vec![0.0; 2])], "relu")).is_err());
    assert!(parse_weights(&weights_json(&layers, "swish")).is_err());
}

#[test]
fn number_formatting_round_trips() {
    for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e300, f64::MIN_POSITIVE, 5e-324, 123456789.0] {
        assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
    }
}
