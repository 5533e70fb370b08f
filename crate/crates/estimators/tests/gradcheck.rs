use sqzt_estimators::{gradient_check, mse_loss, Cache, CnnConfig, HeadKind, Model};

#[test]
fn characteristic_gradients_match_differences() {
    let rep = gradient_check(&CnnConfig::tiny(HeadKind::Characteristic), 11, 300).unwrap();
    println!("characteristic: {rep:?}");
    assert!(rep.checked >= 200);
    assert!(rep.max_rel_error <= 1e-6, "{}", rep.max_rel_error);
}

#[test]
fn reconstruction_gradients_match_differences() {
    let rep = gradient_check(&CnnConfig::tiny(HeadKind::Reconstruction { m: 3 }), 12, 300).unwrap();
    println!("reconstruction: {rep:?}");
    assert!(rep.checked >= 200);
    assert!(rep.max_rel_error <= 1e-6, "{}", rep.max_rel_error);
}

#[test]
fn plain_blocks_gradients_match_differences() {
    let mut cfg = CnnConfig::tiny(HeadKind::Characteristic);
    cfg.dense = false;
    cfg.two_channel = true;
    let rep = gradient_check(&cfg, 13, 250).unwrap();
    assert!(rep.max_rel_error <= 1e-6, "{}", rep.max_rel_error);
}

fn grads(model: &Model<f64>, input: &[f64], target: &[f64], batch: usize, weight: f64) -> Vec<f64> {
    let mut cache = Cache::default();
    model.forward_cached(input, batch, &mut cache).unwrap();
    let (_, d) = mse_loss(cache.output(), target, weight);
    let mut g = vec![0.0; model.param_count()];
    model.backward(&mut cache, &d, &mut g);
    g
}

#[test]
fn zero_input_zero_head_gives_zero_bias_gradient() {
    let mut model = Model::<f64>::new(CnnConfig::tiny(HeadKind::Characteristic), 4).unwrap();
    model.zero_output_layer();
    let batch = 4;
    let input = vec![0.0; batch * model.input_len()];
    let target = vec![0.0; batch * model.output_len()];
    let g = grads(&model, &input, &target, batch, 1.0);
    let bias = model.tensors().into_iter().last().unwrap();
    assert_eq!(bias.name, "head.fc2.bias");
    assert!(g[bias.offset..bias.offset + bias.len].iter().all(|&v| v == 0.0));
}

#[test]
fn doubling_loss_weight_doubles_gradients() {
    let model = Model::<f64>::new(CnnConfig::tiny(HeadKind::Reconstruction { m: 2 }), 5).unwrap();
    let batch = 2;
    let input: Vec<f64> = (0..batch * model.input_len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let target: Vec<f64> = (0..batch * model.output_len()).map(|i| (i as f64 * 0.71).cos()).collect();
    let g1 = grads(&model, &input, &target, batch, 1.0);
    let g2 = grads(&model, &input, &target, batch, 2.0);
    assert!(g1.iter().any(|&v| v != 0.0));
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(2.0 * a, *b);
    }
}
