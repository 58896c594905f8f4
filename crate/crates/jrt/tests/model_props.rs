//! Whole-model structural properties: permutation equivariance, the
//! deep-supervision recomputation identity, full-scale shapes, and
//! gradient spot checks through composite blocks.

use jrt::fusion::joint_local_update;
use jrt::heads::{decode_and_score, decode_joints, LossBreakdown};
use jrt::model::{RelTargetSpace, SceneInputs};
use jrt::params::ParamTree;
use jrt::scene::{augment, synth_scene, Augment, MotionKind};
use jrt::{Graph, Init, Model, ModelDims, SplitSpec, Tensor, TensorId};

fn full_dims() -> ModelDims {
    ModelDims {
        layers: 4,
        d: 128,
        d_h: 8,
        d_k: 128,
        d_prime: 128,
        d_ff: 256,
        n_max: 8,
        joints: 13,
        t_h: 16,
        t_f: 14,
    }
}

#[test]
fn full_config_state_and_output_shapes() {
    let dims = full_dims();
    let model = Model::<f64>::new(dims, 1, Init::Training).unwrap();
    let scene = synth_scene(2, 2, 13, 30, 15.0, MotionKind::TwoPersonApproach);
    let inputs = SceneInputs::build(
        &scene,
        SplitSpec { t_h: 16, t_f: 14 },
        RelTargetSpace::Exp,
    )
    .unwrap();
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, &inputs).unwrap();
    // Final fused features: [26][128] and [26*26][128].
    let (f_j, f_r) = *fwd.states.last().unwrap();
    assert_eq!(g.shape(f_j), &[26, 128]);
    assert_eq!(g.shape(f_r), &[26 * 26, 128]);
    assert_eq!(g.shape(fwd.recon_x), &[26, 48]);
    assert_eq!(g.shape(fwd.pred_y), &[26, 42]);
    assert_eq!(g.shape(fwd.recon_d), &[676, 16]);
    assert_eq!(g.shape(fwd.pred_d), &[676, 14]);
    assert_eq!(fwd.states.len(), 5);
    for attn in &fwd.attention {
        assert_eq!(g.shape(*attn), &[8, 26, 26]);
    }
}

#[test]
fn attention_rows_sum_to_one_in_full_model() {
    let dims = ModelDims::tiny();
    let model = Model::<f64>::new(dims, 3, Init::RandomAll { std: 0.3 }).unwrap();
    let scene = synth_scene(4, 2, 3, 6, 15.0, MotionKind::Circular);
    let inputs =
        SceneInputs::build(&scene, SplitSpec { t_h: 4, t_f: 2 }, RelTargetSpace::Exp).unwrap();
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, &inputs).unwrap();
    let nj = inputs.nj();
    for attn in &fwd.attention {
        let a = g.value(*attn);
        for h in 0..dims.d_h {
            for i in 0..nj {
                let sum: f64 = (0..nj).map(|j| a.at3(h, i, j)).sum();
                assert!((sum - 1.0).abs() <= 1e-6);
            }
        }
    }
}

/// Permute rows of already-built model inputs by the global-joint map
/// sigma (joint rows by sigma, pair rows by (sigma, sigma)).
fn permute_inputs(inputs: &SceneInputs<f64>, sigma: &dyn Fn(usize) -> usize) -> SceneInputs<f64> {
    let nj = inputs.nj();
    let permute_rows = |t: &Tensor<f64>, map: &dyn Fn(usize) -> usize| {
        let w = t.numel() / t.shape()[0];
        Tensor::from_fn(t.shape().to_vec(), |i| {
            let (r, c) = (i / w, i % w);
            t.data()[map(r) * w + c]
        })
    };
    // Row r of the permuted tensor holds old row inv_sigma(r); equivalently
    // new[sigma(g)] = old[g], so build with map = sigma^{-1}.
    let mut inv = vec![0usize; nj];
    for g in 0..nj {
        inv[sigma(g)] = g;
    }
    let joint_map = |r: usize| inv[r];
    let pair_map = |r: usize| inv[r / nj] * nj + inv[r % nj];
    SceneInputs {
        persons: inputs.persons,
        joints: inputs.joints,
        joint_rows: permute_rows(&inputs.joint_rows, &joint_map),
        relation_rows: permute_rows(&inputs.relation_rows, &pair_map),
        gt_x: permute_rows(&inputs.gt_x, &joint_map),
        gt_y: permute_rows(&inputs.gt_y, &joint_map),
        gt_dx: permute_rows(&inputs.gt_dx, &pair_map),
        gt_dy: permute_rows(&inputs.gt_dy, &pair_map),
        offset: inputs.offset,
    }
}

/// Permuting persons (inputs + person embeddings together) permutes joint
/// rows by sigma, relation rows by (sigma, sigma), and predictions by
/// sigma.
#[test]
fn full_model_is_permutation_equivariant() {
    let dims = ModelDims {
        n_max: 3,
        ..ModelDims::tiny()
    };
    let (n, j) = (3, dims.joints);
    let nj = n * j;
    let model = Model::<f64>::new(dims, 5, Init::RandomAll { std: 0.25 }).unwrap();
    let scene = synth_scene(6, n, j, dims.t_h + dims.t_f, 15.0, MotionKind::TwoPersonApproach);
    let split = SplitSpec { t_h: dims.t_h, t_f: dims.t_f };

    let perm = vec![2usize, 0, 1]; // new person i is old person perm[i]
    let mut inv = vec![0usize; n];
    for (new_n, &old_n) in perm.iter().enumerate() {
        inv[old_n] = new_n;
    }
    let sigma = move |g: usize| inv[g / j] * j + (g % j);

    // Permute the person embedding rows to match: the embedding used for
    // new person i must be the one old person perm[i] had.
    let mut model_p = model.clone();
    let src = model.params.pos.person.clone();
    for (new_n, &old_n) in perm.iter().enumerate() {
        for c in 0..dims.d {
            model_p.params.pos.person.data_mut()[new_n * dims.d + c] =
                src.data()[old_n * dims.d + c];
        }
    }

    let run = |m: &Model<f64>, inputs: &SceneInputs<f64>| {
        let mut g = Graph::new();
        let ids = m.register(&mut g);
        let fwd = m.forward(&mut g, &ids, inputs).unwrap();
        let (f_j, f_r) = *fwd.states.last().unwrap();
        (
            g.value(f_j).clone(),
            g.value(f_r).clone(),
            g.value(fwd.pred_y).clone(),
            g.value(fwd.recon_x).clone(),
        )
    };

    let inputs = SceneInputs::build(&scene, split, RelTargetSpace::Exp).unwrap();
    let inputs_p = permute_inputs(&inputs, &sigma);
    let (fj_a, fr_a, pred_a, recon_a) = run(&model, &inputs);
    let (fj_b, fr_b, pred_b, recon_b) = run(&model_p, &inputs_p);

    let mut max_dev: f64 = 0.0;
    for g_old in 0..nj {
        for c in 0..dims.d {
            max_dev = max_dev.max((fj_b.at2(sigma(g_old), c) - fj_a.at2(g_old, c)).abs());
        }
        for c in 0..dims.t_f * 3 {
            max_dev = max_dev.max((pred_b.at2(sigma(g_old), c) - pred_a.at2(g_old, c)).abs());
        }
        for c in 0..dims.t_h * 3 {
            max_dev = max_dev.max((recon_b.at2(sigma(g_old), c) - recon_a.at2(g_old, c)).abs());
        }
    }
    for a in 0..nj {
        for b in 0..nj {
            for c in 0..dims.d {
                let lhs = fr_b.at2(sigma(a) * nj + sigma(b), c);
                let rhs = fr_a.at2(a * nj + b, c);
                max_dev = max_dev.max((lhs - rhs).abs());
            }
        }
    }
    assert!(max_dev <= 1e-9, "max deviation {max_dev}");
}

/// In-graph deep supervision equals an offline recomputation that decodes
/// each stored state in a fresh graph.
#[test]
fn deep_supervision_matches_offline_recomputation() {
    let dims = ModelDims::tiny();
    let model = Model::<f64>::new(dims, 7, Init::RandomAll { std: 0.3 }).unwrap();
    let scene = synth_scene(8, 2, 3, 6, 15.0, MotionKind::ConstantVelocity);
    let inputs =
        SceneInputs::build(&scene, SplitSpec { t_h: 4, t_f: 2 }, RelTargetSpace::Exp).unwrap();
    let (lambda_j, lambda_r) = (10.0, 10.0);

    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, &inputs).unwrap();
    let loss = model.loss(&mut g, &ids, &fwd, lambda_j, lambda_r).unwrap();
    let in_graph = g.value(loss.deep_sup).item().unwrap();

    // Offline: decode each stored layer-input state independently.
    let mut offline = 0.0;
    for &(f_j, f_r) in fwd.states.iter().take(dims.layers) {
        let f_j_val = g.value(f_j).clone();
        let f_r_val = g.value(f_r).clone();
        let mut g2 = Graph::new();
        let ids2 = model.register(&mut g2);
        let fj2 = g2.input(f_j_val);
        let fr2 = g2.input(f_r_val);
        let targets2 = jrt::heads::TargetIds {
            gt_x: g2.input(inputs.gt_x.clone()),
            gt_y: g2.input(inputs.gt_y.clone()),
            gt_dx: g2.input(inputs.gt_dx.clone()),
            gt_dy: g2.input(inputs.gt_dy.clone()),
        };
        let terms = decode_and_score(
            &mut g2, &ids2.joint_dec, &ids2.rel_dec, fj2, fr2, &targets2, &dims,
        )
        .unwrap();
        let val = |id: TensorId| g2.value(id).item().unwrap();
        offline += (val(terms.joint_recon) + lambda_j * val(terms.joint_pred))
            + (val(terms.rel_recon) + lambda_r * val(terms.rel_pred));
    }
    assert!(
        (in_graph - offline).abs() <= 1e-12,
        "in-graph {in_graph} vs offline {offline}"
    );

    // And the breakdown satisfies the exact total identity.
    let b = loss.breakdown(&g);
    assert!(b.identity_holds(lambda_j, lambda_r));
    let _ = LossBreakdown::<f64>::total_of(
        b.joint_recon,
        b.joint_pred,
        b.rel_recon,
        b.rel_pred,
        b.deep_sup,
        lambda_j,
        lambda_r,
    );
}

/// Gradient of the joint local update w.r.t. its input, by central
/// differences on a 3x4 feature block.
#[test]
fn joint_local_update_input_gradient_matches_fd() {
    let dims = ModelDims {
        d: 4,
        d_k: 4,
        d_h: 2,
        d_ff: 8,
        ..ModelDims::tiny()
    };
    let model = Model::<f64>::new(dims, 9, Init::RandomAll { std: 0.4 }).unwrap();
    let mut rng = jrt::rng::Rng::new(11);
    let x_val = Tensor::from_fn(vec![3, 4], |_| rng.normal());
    let attn_val = Tensor::from_fn(vec![3, 4], |_| rng.normal());

    let eval = |x: &Tensor<f64>, want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut g = Graph::new();
        let ids = model.register(&mut g);
        let x_id = if want_grad { g.param(x) } else { g.input(x.clone()) };
        let attn = g.input(attn_val.clone());
        let out = joint_local_update(&mut g, &ids.fusion[0], x_id, attn).unwrap();
        let mut w = jrt::rng::Rng::new(99);
        let weights = g.input(Tensor::from_fn(vec![3, 4], |_| w.normal()));
        let prod = g.mul(out, weights).unwrap();
        let loss = g.sum_all(prod).unwrap();
        let v = g.value(loss).item().unwrap();
        if want_grad {
            g.backward(loss).unwrap();
            let grad = g.grad(x_id).unwrap().to_vec();
            (v, Some(grad))
        } else {
            (v, None)
        }
    };

    let (_, grad) = eval(&x_val, true);
    let grad = grad.unwrap();
    for e in 0..x_val.numel() {
        let base = x_val.data()[e];
        let h = 1e-6 * base.abs().max(1.0);
        let mut up = x_val.clone();
        up.data_mut()[e] = base + h;
        let mut down = x_val.clone();
        down.data_mut()[e] = base - h;
        let fd = (eval(&up, false).0 - eval(&down, false).0) / (2.0 * h);
        let rel = (grad[e] - fd).abs() / grad[e].abs().max(fd.abs()).max(1e-8);
        assert!(rel <= 1e-6, "elem {e}: ad {} fd {fd} rel {rel}", grad[e]);
    }
}

/// Gradient through the 3-layer joint decoder, by central differences.
#[test]
fn joint_decoder_gradients_match_fd() {
    let dims = ModelDims::tiny();
    let model = Model::<f64>::new(dims, 13, Init::RandomAll { std: 0.35 }).unwrap();
    let mut rng = jrt::rng::Rng::new(15);
    let f_val = Tensor::from_fn(vec![4, dims.d], |_| rng.normal());

    let eval = |f: &Tensor<f64>, want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut g = Graph::new();
        let ids = model.register(&mut g);
        let f_id = if want_grad { g.param(f) } else { g.input(f.clone()) };
        let (recon, pred) = decode_joints(&mut g, &ids.joint_dec, f_id, &dims).unwrap();
        let joined = g.concat_last(&[recon, pred]).unwrap();
        let mut w = jrt::rng::Rng::new(98);
        let weights =
            g.input(Tensor::from_fn(g.value(joined).shape().to_vec(), |_| w.normal()));
        let prod = g.mul(joined, weights).unwrap();
        let loss = g.sum_all(prod).unwrap();
        let v = g.value(loss).item().unwrap();
        if want_grad {
            g.backward(loss).unwrap();
            let grad = g.grad(f_id).unwrap().to_vec();
            (v, Some(grad))
        } else {
            (v, None)
        }
    };

    let (_, grad) = eval(&f_val, true);
    let grad = grad.unwrap();
    for e in (0..f_val.numel()).step_by(3) {
        let base = f_val.data()[e];
        let h = 1e-6 * base.abs().max(1.0);
        let mut up = f_val.clone();
        up.data_mut()[e] = base + h;
        let mut down = f_val.clone();
        down.data_mut()[e] = base - h;
        let fd = (eval(&up, false).0 - eval(&down, false).0) / (2.0 * h);
        let rel = (grad[e] - fd).abs() / grad[e].abs().max(fd.abs()).max(1e-8);
        assert!(rel <= 1e-6, "elem {e}: ad {} fd {fd} rel {rel}", grad[e]);
    }
}

/// The prediction carries the normalization offset; adding it back
/// restores world coordinates.
#[test]
fn prediction_denormalizes_with_stored_offset() {
    let dims = ModelDims::tiny();
    let model = Model::<f64>::new(dims, 17, Init::Training).unwrap();
    let scene = synth_scene(18, 2, 3, 6, 15.0, MotionKind::ConstantVelocity);
    let inputs =
        SceneInputs::build(&scene, SplitSpec { t_h: 4, t_f: 2 }, RelTargetSpace::Exp).unwrap();
    let mut g = Graph::new();
    let ids = model.register(&mut g);
    let fwd = model.forward(&mut g, &ids, &inputs).unwrap();
    let pred = model.prediction(&g, &fwd, inputs.offset);
    let world = pred.pred_y_world();
    for (i, (w, n)) in world.iter().zip(pred.pred_y.data()).enumerate() {
        assert_eq!(*w, n + inputs.offset[i % 3]);
    }
}

/// Velocity channels of the assembled joint inputs are zero for a static
/// scene and constant for constant-velocity motion.
#[test]
fn scene_inputs_velocity_channels() {
    let dims = ModelDims::tiny();
    let split = SplitSpec { t_h: dims.t_h, t_f: dims.t_f };
    let static_scene = synth_scene(20, 2, 3, 6, 15.0, MotionKind::Static);
    let inputs = SceneInputs::<f64>::build(&static_scene, split, RelTargetSpace::Exp).unwrap();
    let w = 6 * dims.t_h;
    for g in 0..inputs.nj() {
        for t in 0..dims.t_h {
            for c in 0..3 {
                assert_eq!(inputs.joint_rows.data()[g * w + t * 6 + 3 + c], 0.0);
            }
        }
    }
}
