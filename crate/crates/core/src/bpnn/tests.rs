use super::*;
use crate::autodiff::max_gradient_error;
use crate::bp::{bethe_free_energy, bp_iteration, compute_beliefs, init_messages, max_abs_diff, run_bp, Schedule};
use crate::exact::brute_force_ln_z;
use crate::factor_graph::{apply_isomorphism, random_isomorphism};
use crate::generators::{random_factor_graph, random_tree, RandomGraphSpec};

fn loopy(seed: u64) -> FactorGraph {
    random_factor_graph(RandomGraphSpec::new(5), 4, 3, seed).unwrap()
}

fn bp_trace(g: &FactorGraph, alpha: f64, iters: usize) -> Vec<MessageState> {
    let cfg = BpConfig { damping: alpha, ..BpConfig::default() };
    let mut m = init_messages(g);
    (0..iters)
        .map(|_| {
            m = bp_iteration(g, &m, &cfg);
            m.clone()
        })
        .collect()
}

fn max_state_diff(a: &MessageState, b: &MessageState) -> f64 {
    max_abs_diff(&a.var_to_fac, &b.var_to_fac).max(max_abs_diff(&a.fac_to_var, &b.fac_to_var))
}

fn random_residual(seed: u64) -> BpnnModel {
    let mut m = BpnnModel::new(ModelConfig::tied(LayerConfig::residual(3, 0.5), 3, 3)).unwrap();
    m.perturb_weights(seed, 0.1);
    m
}

#[test]
fn scalar_mode_reproduces_bp_trace() {
    for alpha in [0.0, 0.25, 0.5, 0.9] {
        for seed in 0..5 {
            let g = loopy(seed);
            let model = BpnnModel::new(ModelConfig::tied(LayerConfig::scalar(alpha), 3, 3)).unwrap();
            let pg = model.prepare(&g).unwrap();
            let ours = model.message_trajectory(&pg, Some(25)).unwrap();
            let reference = bp_trace(&g, alpha, 25);
            for (k, (a, b)) in ours.iter().zip(&reference).enumerate() {
                let d = max_state_diff(a, b);
                assert!(d <= 1e-12, "alpha {alpha} seed {seed} iter {k}: {d}");
            }
        }
    }
}

#[test]
fn identity_init_matches_damped_bp() {
    for seed in 0..5 {
        let g = loopy(seed);
        let model = BpnnModel::new(ModelConfig::stack(LayerConfig::residual(3, 0.5), 5, 3, 3, true)).unwrap();
        let bp = bp_trace(&g, 0.5, 5);
        let want = bethe_free_energy(&g, &compute_beliefs(&g, &bp[4])).ln_z_estimate;
        let got = model.predict(&g).unwrap();
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn identity_message_mlps_match_bp() {
    for lne in [[true, false, false, false], [false, true, false, false], [false, false, true, true], [true; 4]] {
        let g = loopy(3);
        let model = BpnnModel::new(ModelConfig::stack(LayerConfig::message_mlp(3, 0.5, lne), 4, 3, 3, false)).unwrap();
        let pg = model.prepare(&g).unwrap();
        let ours = model.message_trajectory(&pg, None).unwrap();
        let reference = bp_trace(&g, 0.5, 4);
        for (a, b) in ours.iter().zip(&reference) {
            assert!(max_state_diff(a, b) < 1e-9, "{lne:?}");
        }
    }
}

#[test]
fn operator_examples() {
    let g = loopy(0);
    let residual = random_residual(1);
    let pg = residual.prepare(&g).unwrap();
    let zeros: Vec<Vec<f64>> = pg.index.edge_cards.iter().map(|&c| vec![0.0; c]).collect();
    assert_eq!(residual.h_operator(&pg, 0, &zeros).unwrap(), zeros);

    let scalar = BpnnModel::new(ModelConfig::tied(LayerConfig::scalar(0.5), 3, 3)).unwrap();
    let mut diffs = zeros.clone();
    let e = pg.index.edge_cards.iter().position(|&c| c == 2).unwrap();
    diffs[e] = vec![2.0, -2.0];
    assert_eq!(scalar.h_operator(&pg, 0, &diffs).unwrap()[e], vec![1.0, -1.0]);
    assert!(scalar.h_operator(&pg, 0, &diffs[1..]).is_err());
}

#[test]
fn residual_operator_acts_per_edge() {
    // moving a difference vector to another edge of the same cardinality
    // moves its image with it
    let g = loopy(2);
    let model = random_residual(4);
    let pg = model.prepare(&g).unwrap();
    let cards = &pg.index.edge_cards;
    let (e1, e2) = {
        let e1 = 0;
        let e2 = (1..cards.len()).find(|&e| cards[e] == cards[e1]).unwrap();
        (e1, e2)
    };
    let mut diffs: Vec<Vec<f64>> = cards.iter().map(|&c| (0..c).map(|s| 0.3 * s as f64 - 0.2).collect()).collect();
    diffs[e1] = (0..cards[e1]).map(|s| 1.0 - s as f64).collect();
    let out = model.h_operator(&pg, 0, &diffs).unwrap();
    diffs.swap(e1, e2);
    let swapped = model.h_operator(&pg, 0, &diffs).unwrap();
    assert_eq!(out[e1], swapped[e2]);
    assert_eq!(out[e2], swapped[e1]);
}

#[test]
fn bp_fixed_points_stay_fixed() {
    for seed in 0..5 {
        let g = loopy(seed);
        let cfg = BpConfig { tol: 1e-11, max_iters: 2000, ..BpConfig::default() };
        let res = run_bp(&g, &cfg);
        assert!(res.converged);
        let model = random_residual(seed);
        let pg = model.prepare(&g).unwrap();
        let next = bpnn_d_iteration(&model, &pg, 0, &res.messages).unwrap();
        assert!(max_state_diff(&next, &res.messages) <= 1e-7);
    }
}

#[test]
fn bpnn_d_fixed_points_are_bp_fixed_points() {
    for seed in 0..5 {
        let g = loopy(seed);
        let model = random_residual(seed + 10);
        let cfg = BpConfig { max_iters: 1000, ..BpConfig::default() };
        let res = run_bpnn_d_to_convergence(&model, &g, &cfg).unwrap();
        if !res.converged {
            continue;
        }
        let undamped = BpConfig { damping: 0.0, ..BpConfig::default() };
        let step = bp_iteration(&g, &res.messages, &undamped);
        assert!(step.fac_to_var_delta(&res.messages) <= 10.0 * cfg.tol, "seed {seed}");
    }
}

#[test]
fn converged_bpnn_d_is_exact_on_trees() {
    for seed in 0..20 {
        let g = random_tree(RandomGraphSpec::new(2 + seed as usize % 10), seed).unwrap();
        let model = random_residual(seed);
        let res = run_bpnn_d_to_convergence(&model, &g, &BpConfig { tol: 1e-10, max_iters: 1000, ..BpConfig::default() }).unwrap();
        assert!(res.converged);
        let est = bethe_free_energy(&g, &compute_beliefs(&g, &res.messages)).ln_z_estimate;
        assert!((est - brute_force_ln_z(&g).unwrap().ln_z).abs() < 1e-6, "seed {seed}");
    }
}

#[test]
fn scalar_convergence_mode_matches_run_bp() {
    let g = random_tree(RandomGraphSpec::new(7), 3).unwrap();
    let model = BpnnModel::new(ModelConfig::tied(LayerConfig::scalar(0.0), 3, 3)).unwrap();
    let cfg = BpConfig { damping: 0.0, schedule: Schedule::Parallel, ..BpConfig::default() };
    let a = run_bpnn_d_to_convergence(&model, &g, &cfg).unwrap();
    let b = run_bp(&g, &cfg);
    assert_eq!(a.iterations_run, b.iterations_run);
    for (x, y) in a.delta_trace.iter().zip(&b.delta_trace) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn all_layer_kinds() -> Vec<LayerConfig> {
    vec![
        LayerConfig::scalar(0.3),
        LayerConfig::residual(3, 0.5),
        LayerConfig::message_mlp(3, 0.2, [true; 4]),
        LayerConfig::message_mlp(3, 0.0, [true, true, false, false]),
    ]
}

#[test]
fn layers_are_equivariant_and_head_invariant() {
    for (n, layer) in all_layer_kinds().into_iter().enumerate() {
        for seed in 0..4 {
            let g = loopy(seed);
            let mut model = BpnnModel::new(ModelConfig::stack(layer.clone(), 3, 3, 3, true)).unwrap();
            model.init_random(seed + 7);
            let iso = random_isomorphism(&g, seed + 50);
            let h = apply_isomorphism(&g, &iso).unwrap();
            let (pg, ph) = (model.prepare(&g).unwrap(), model.prepare(&h).unwrap());
            let (mg, mh) = (model.message_trajectory(&pg, None).unwrap(), model.message_trajectory(&ph, None).unwrap());
            let emap = iso.edge_map(&g, &h);
            for (a, b) in mg.iter().zip(&mh) {
                for (e, &f) in emap.iter().enumerate() {
                    for (x, y) in a.fac_to_var[e].iter().zip(&b.fac_to_var[f]) {
                        assert!((x - y).abs() < 1e-9, "layer kind {n} seed {seed}");
                    }
                    for (x, y) in a.var_to_fac[e].iter().zip(&b.var_to_fac[f]) {
                        assert!((x - y).abs() < 1e-9, "layer kind {n} seed {seed}");
                    }
                }
            }
            let (yg, yh) = (model.predict(&g).unwrap(), model.predict(&h).unwrap());
            assert!((yg - yh).abs() < 1e-8, "layer kind {n} seed {seed}: {yg} vs {yh}");
        }
    }
}

#[test]
fn non_invariant_head_sees_scope_order() {
    // one asymmetric pairwise factor, read with its scope swapped
    let g = random_factor_graph(RandomGraphSpec { max_cardinality: 2, ..RandomGraphSpec::new(2) }, 1, 2, 9).unwrap();
    let mut iso = crate::factor_graph::Isomorphism::identity(&g);
    let a = g.num_factors() - 1;
    iso.local_perms[a] = vec![1, 0];
    let h = apply_isomorphism(&g, &iso).unwrap();
    let mut cfg = ModelConfig::stack(LayerConfig::scalar(0.0), 2, 2, 2, true);
    let mut model = BpnnModel::new(cfg.clone()).unwrap();
    model.init_random(5);
    assert!((model.predict(&g).unwrap() - model.predict(&h).unwrap()).abs() < 1e-10);
    if let HeadConfig::BpnnB { invariant, .. } = &mut cfg.head {
        *invariant = false;
    }
    let mut ni = BpnnModel::new(cfg).unwrap();
    ni.init_random(5);
    assert!((ni.predict(&g).unwrap() - ni.predict(&h).unwrap()).abs() > 1e-6);
}

#[test]
fn identity_head_returns_final_bethe() {
    let g = loopy(6);
    let model = BpnnModel::new(ModelConfig::stack(LayerConfig::scalar(0.5), 3, 3, 3, true)).unwrap();
    let pg = model.prepare(&g).unwrap();
    let traj = model.trajectory(&pg).unwrap();
    let want = bethe_free_energy(&g, traj.last().unwrap()).ln_z_estimate;
    assert!((model.head_estimate(&pg, &traj).unwrap() - want).abs() < 1e-9);
    assert!(model.head_estimate(&pg, &traj[1..]).is_err());
}

#[test]
fn arity_above_head_limit_is_rejected() {
    let g = random_factor_graph(RandomGraphSpec::new(4), 3, 3, 1).unwrap();
    let model = BpnnModel::new(ModelConfig::stack(LayerConfig::scalar(0.5), 2, 3, 2, true)).unwrap();
    assert!(model.prepare(&g).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = ModelConfig::tied(LayerConfig::scalar(0.5), 3, 3);
    cfg.layers.push(LayerConfig::scalar(0.2));
    assert!(BpnnModel::new(cfg).is_err());
    assert!(BpnnModel::new(ModelConfig::tied(LayerConfig::scalar(1.0), 3, 3)).is_err());
    let mut cfg = ModelConfig::stack(LayerConfig::scalar(0.5), 2, 3, 3, true);
    cfg.weight_tied = true;
    assert!(BpnnModel::new(cfg).is_err());
}

#[test]
fn bias_dead_zone_freezes_messages() {
    // negative hidden biases make H̄ flat around zero, so H is the identity
    // there and BPNN-D stops updating
    let mut model = BpnnModel::new(ModelConfig::tied(LayerConfig::residual(3, 0.5), 3, 3)).unwrap();
    let ids: Vec<usize> = (0..model.params.len()).filter(|&i| model.params.names()[i].ends_with(".b0")).collect();
    for i in ids {
        model.params.values_mut()[i].fill(-0.5);
    }
    let g = loopy(0);
    let pg = model.prepare(&g).unwrap();
    let small: Vec<Vec<f64>> = pg.index.edge_cards.iter().map(|&c| (0..c).map(|s| 0.01 * s as f64).collect()).collect();
    assert_eq!(model.h_operator(&pg, 0, &small).unwrap(), small);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut model = BpnnModel::new(ModelConfig::stack(LayerConfig::residual(3, 0.5), 2, 3, 3, true)).unwrap();
    model.init_random(3);
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.params, model.params);
    let g = loopy(1);
    assert_eq!(loaded.predict(&g).unwrap(), model.predict(&g).unwrap());
    std::fs::write(dir.path().join("model.bin"), [0u8; 7]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn identity_model_gradient_is_finite() {
    let g = loopy(0);
    let model = BpnnModel::new(ModelConfig::stack(LayerConfig::residual(3, 0.5), 2, 3, 3, true)).unwrap();
    let pg = model.prepare(&g).unwrap();
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let out = model.forward(&mut tape, &p, &pg, None).unwrap();
    let grads = p.grads(&tape.backward(out.ln_z).unwrap());
    assert!(grads.iter().all(|g| g.iter().all(|x| x.is_finite())));
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let g = random_factor_graph(RandomGraphSpec::new(3), 2, 3, 4).unwrap();
    for layer in [LayerConfig::residual(3, 0.5), LayerConfig::message_mlp(3, 0.3, [true; 4])] {
        let mut model = BpnnModel::new(ModelConfig::stack(layer, 2, 3, 3, true)).unwrap();
        model.perturb(11, 0.2);
        let pg = model.prepare(&g).unwrap();
        let err = max_gradient_error(model.params.values(), 1e-5, |tape, vars| {
            let bound = crate::autodiff::BoundParams::from_vars(vars.to_vec());
            Ok(model.forward(tape, &bound, &pg, None)?.ln_z)
        })
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }
}

