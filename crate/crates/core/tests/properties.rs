//! Randomized checks of library-wide invariants.

use proptest::prelude::*;

use bpnn_core::autodiff::Tape;
use bpnn_core::bp::{bethe_free_energy, bp_iteration, compute_beliefs, init_messages, logsumexp, run_bp, BpConfig, MessageState};
use bpnn_core::bpnn::{bpnn_d_iteration, run_bpnn_d_to_convergence, BpnnModel, LayerConfig, ModelConfig};
use bpnn_core::exact::{brute_force_ln_z, brute_force_model_count, exact_ln_z, min_degree_order, variable_elimination_ln_z};
use bpnn_core::factor_graph::{apply_isomorphism, random_isomorphism};
use bpnn_core::generators::{
    cnf_to_factor_graph, fix_variable, random_factor_graph, random_k_cnf, random_tree, sample_ising, IsingSpec, RandomGraphSpec,
};
use bpnn_core::training::{train, LabeledInstance, TrainConfig};
use bpnn_core::{FactorDecl, FactorGraph, VariableDecl};

fn loopy(n: usize, factors: usize, seed: u64) -> FactorGraph {
    random_factor_graph(RandomGraphSpec::new(n), factors, 3.min(n), seed).unwrap()
}

fn union(a: &FactorGraph, b: &FactorGraph) -> FactorGraph {
    let off = a.num_variables();
    let vars = a
        .variables()
        .iter()
        .copied()
        .chain(b.variables().iter().map(|v| VariableDecl::new(v.id + off, v.cardinality)))
        .collect();
    let factors = a
        .factors()
        .iter()
        .cloned()
        .chain(b.factors().iter().enumerate().map(|(i, f)| {
            FactorDecl::from_potentials(a.num_factors() + i, f.scope.iter().map(|v| v + off).collect(), f.potentials().clone())
        }))
        .collect();
    FactorGraph::new(vars, factors).unwrap()
}

fn all_normalized(m: &MessageState) -> bool {
    m.var_to_fac.iter().chain(&m.fac_to_var).all(|v| logsumexp(v).unwrap().abs() < 1e-9)
}

fn state_diff(a: &MessageState, b: &MessageState) -> f64 {
    a.var_to_fac
        .iter()
        .chain(&a.fac_to_var)
        .zip(b.var_to_fac.iter().chain(&b.fac_to_var))
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn residual_model(seed: u64) -> BpnnModel {
    let mut m = BpnnModel::new(ModelConfig::tied(LayerConfig::residual(3, 0.5), 3, 3)).unwrap();
    m.perturb_weights(seed, 0.1);
    m
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn isomorphism_round_trip_is_exact(n in 2usize..7, f in 1usize..6, seed in any::<u64>(), iso_seed in any::<u64>()) {
        let g = loopy(n, f, seed);
        let iso = random_isomorphism(&g, iso_seed);
        let h = apply_isomorphism(&g, &iso).unwrap();
        prop_assert_eq!(apply_isomorphism(&h, &iso.inverse()).unwrap(), g);
    }

    #[test]
    fn degrees_sum_to_arities(n in 2usize..8, f in 0usize..8, seed in any::<u64>()) {
        let g = loopy(n, f, seed);
        let degrees: usize = (0..g.num_variables()).map(|v| g.degree(v)).sum();
        let arities: usize = g.factors().iter().map(|f| f.arity()).sum();
        prop_assert_eq!(degrees, arities);
    }

    #[test]
    fn log_potentials_are_finite(seed in any::<u64>(), n in 3usize..9, c in 3usize..14) {
        let cnf = random_k_cnf(n, c, 3, seed).unwrap();
        let g = cnf_to_factor_graph(&cnf, 5).unwrap();
        prop_assert!(g.factors().iter().all(|f| f.log_potential().iter().all(|x| x.is_finite())));
    }

    #[test]
    fn oracles_agree(n in 2usize..7, f in 0usize..6, seed in any::<u64>()) {
        let g = loopy(n, f, seed);
        let bf = brute_force_ln_z(&g).unwrap().ln_z;
        let ve = variable_elimination_ln_z(&g, &min_degree_order(&g)).unwrap().ln_z;
        let rev: Vec<usize> = (0..g.num_variables()).rev().collect();
        prop_assert!((bf - ve).abs() < 1e-9);
        prop_assert!((bf - variable_elimination_ln_z(&g, &rev).unwrap().ln_z).abs() < 1e-9);
    }

    #[test]
    fn components_add(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (a, b) = (loopy(4, 3, s1), loopy(3, 2, s2));
        let u = union(&a, &b);
        let want = exact_ln_z(&a).unwrap().ln_z + exact_ln_z(&b).unwrap().ln_z;
        prop_assert!((brute_force_ln_z(&u).unwrap().ln_z - want).abs() < 1e-9);
        prop_assert!((exact_ln_z(&u).unwrap().ln_z - want).abs() < 1e-9);
    }

    #[test]
    fn partition_function_is_relabeling_invariant(seed in any::<u64>(), iso_seed in any::<u64>()) {
        let g = loopy(5, 4, seed);
        let h = apply_isomorphism(&g, &random_isomorphism(&g, iso_seed)).unwrap();
        prop_assert!((exact_ln_z(&g).unwrap().ln_z - exact_ln_z(&h).unwrap().ln_z).abs() < 1e-9);
    }

    #[test]
    fn every_bp_update_is_normalized(seed in any::<u64>(), alpha in 0.0f64..0.95) {
        let g = loopy(5, 5, seed);
        let cfg = BpConfig { damping: alpha, ..BpConfig::default() };
        let mut m = init_messages(&g);
        for _ in 0..10 {
            m = bp_iteration(&g, &m, &cfg);
            prop_assert!(all_normalized(&m));
        }
        let b = compute_beliefs(&g, &m);
        prop_assert!(b.variable_beliefs.iter().all(|v| logsumexp(v).unwrap().abs() < 1e-9));
        prop_assert!(b.factor_beliefs.iter().all(|t| logsumexp(t.as_slice().unwrap()).unwrap().abs() < 1e-9));
    }

    #[test]
    fn bp_is_exact_on_trees(n in 1usize..13, seed in any::<u64>()) {
        let g = random_tree(RandomGraphSpec::new(n), seed).unwrap();
        let cfg = BpConfig { damping: 0.0, ..BpConfig::default() };
        let res = run_bp(&g, &cfg);
        prop_assert!(res.converged);
        prop_assert!(res.iterations_run <= g.tree_height().unwrap() + 1);
        let est = bethe_free_energy(&g, &compute_beliefs(&g, &res.messages)).ln_z_estimate;
        prop_assert!((est - brute_force_ln_z(&g).unwrap().ln_z).abs() < 1e-6);
    }

    #[test]
    fn converged_bp_is_a_fixed_point(seed in any::<u64>()) {
        let g = loopy(5, 4, seed);
        let cfg = BpConfig::default();
        let res = run_bp(&g, &cfg);
        prop_assume!(res.converged);
        prop_assert!(bp_iteration(&g, &res.messages, &cfg).fac_to_var_delta(&res.messages) <= cfg.tol);
    }

    #[test]
    fn bp_messages_follow_relabeling(seed in any::<u64>(), iso_seed in any::<u64>()) {
        let g = loopy(5, 4, seed);
        let iso = random_isomorphism(&g, iso_seed);
        let h = apply_isomorphism(&g, &iso).unwrap();
        let cfg = BpConfig { max_iters: 15, ..BpConfig::default() };
        let (rg, rh) = (run_bp(&g, &cfg), run_bp(&h, &cfg));
        for (e, f) in iso.edge_map(&g, &h).into_iter().enumerate() {
            for (x, y) in rg.messages.fac_to_var[e].iter().zip(&rh.messages.fac_to_var[f]) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
        let tg = bethe_free_energy(&g, &compute_beliefs(&g, &rg.messages));
        let th = bethe_free_energy(&h, &compute_beliefs(&h, &rh.messages));
        prop_assert!((tg.f_bethe - th.f_bethe).abs() < 1e-9);
        prop_assert!((tg.u_bethe - th.u_bethe).abs() < 1e-9);
    }

    #[test]
    fn backward_is_deterministic(seed in any::<u64>()) {
        let g = loopy(4, 3, seed);
        let mut model = BpnnModel::new(ModelConfig::stack(LayerConfig::residual(3, 0.5), 2, 3, 3, true)).unwrap();
        model.perturb(seed, 0.1);
        let pg = model.prepare(&g).unwrap();
        let grads = || {
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape, true);
            let out = model.forward(&mut tape, &p, &pg, None).unwrap();
            p.grads(&tape.backward(out.ln_z).unwrap())
        };
        prop_assert_eq!(grads(), grads());
    }

    #[test]
    fn cnf_partition_is_model_count(n in 1usize..13, c in 0usize..40, seed in any::<u64>()) {
        let cnf = random_k_cnf(n, c, 3.min(n), seed).unwrap();
        let g = cnf_to_factor_graph(&cnf, 5).unwrap();
        let count = brute_force_model_count(&cnf).unwrap();
        let z = brute_force_ln_z(&g).unwrap();
        prop_assert_eq!(count.is_zero, z.is_zero);
        if !count.is_zero {
            prop_assert!((count.ln_z - z.ln_z).abs() < 1e-9);
        }
    }

    #[test]
    fn fixing_partitions_sum_to_z(seed in any::<u64>(), var in 0usize..5) {
        let g = loopy(5, 4, seed);
        let parts: Vec<f64> = (0..g.cardinality(var)).map(|x| brute_force_ln_z(&fix_variable(&g, var, x).unwrap()).unwrap().ln_z).collect();
        prop_assert!((logsumexp(&parts).unwrap() - brute_force_ln_z(&g).unwrap().ln_z).abs() < 1e-9);
    }

    #[test]
    fn generators_are_seed_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(loopy(6, 5, seed), loopy(6, 5, seed));
        let spec = IsingSpec { n: 3, f_max: 0.1, c_max: 5.0, seed };
        prop_assert_eq!(sample_ising(&spec).unwrap(), sample_ising(&spec).unwrap());
        let (a, b) = (random_k_cnf(8, 20, 3, seed).unwrap(), random_k_cnf(8, 20, 3, seed).unwrap());
        prop_assert_eq!(a.clauses(), b.clauses());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn scalar_bpnn_d_is_damped_bp(seed in any::<u64>(), alpha in prop::sample::select(vec![0.0, 0.25, 0.5, 0.9])) {
        let g = loopy(5, 4, seed);
        let model = BpnnModel::new(ModelConfig::tied(LayerConfig::scalar(alpha), 3, 3)).unwrap();
        let pg = model.prepare(&g).unwrap();
        let cfg = BpConfig { damping: alpha, ..BpConfig::default() };
        let mut m = init_messages(&g);
        for k in model.message_trajectory(&pg, Some(25)).unwrap() {
            m = bp_iteration(&g, &m, &cfg);
            prop_assert!(state_diff(&k, &m) <= 1e-12);
        }
    }

    #[test]
    fn bp_fixed_points_survive_residual_layers(seed in any::<u64>(), op_seed in any::<u64>()) {
        let g = loopy(5, 4, seed);
        let res = run_bp(&g, &BpConfig { tol: 1e-11, max_iters: 3000, ..BpConfig::default() });
        prop_assume!(res.converged);
        let model = residual_model(op_seed);
        let pg = model.prepare(&g).unwrap();
        prop_assert!(state_diff(&bpnn_d_iteration(&model, &pg, 0, &res.messages).unwrap(), &res.messages) <= 1e-7);
    }

    #[test]
    fn converged_residual_layers_are_bp_fixed_points(seed in any::<u64>(), op_seed in any::<u64>()) {
        let g = loopy(5, 4, seed);
        let cfg = BpConfig { max_iters: 1000, ..BpConfig::default() };
        let res = run_bpnn_d_to_convergence(&residual_model(op_seed), &g, &cfg).unwrap();
        prop_assume!(res.converged);
        let step = bp_iteration(&g, &res.messages, &BpConfig { damping: 0.0, ..BpConfig::default() });
        prop_assert!(step.fac_to_var_delta(&res.messages) <= 10.0 * cfg.tol);
    }

    #[test]
    fn residual_bpnn_d_is_exact_on_trees(n in 1usize..13, seed in any::<u64>(), op_seed in any::<u64>()) {
        let g = random_tree(RandomGraphSpec::new(n), seed).unwrap();
        let res = run_bpnn_d_to_convergence(&residual_model(op_seed), &g, &BpConfig { tol: 1e-10, max_iters: 2000, ..BpConfig::default() }).unwrap();
        prop_assert!(res.converged);
        let est = bethe_free_energy(&g, &compute_beliefs(&g, &res.messages)).ln_z_estimate;
        prop_assert!((est - brute_force_ln_z(&g).unwrap().ln_z).abs() < 1e-6);
    }

    #[test]
    fn residual_bpnn_d_lower_bounds_attractive_ising(seed in any::<u64>(), op_seed in any::<u64>()) {
        let g = sample_ising(&IsingSpec { n: 3, f_max: 0.1, c_max: 5.0, seed }).unwrap();
        let res = run_bpnn_d_to_convergence(&residual_model(op_seed), &g, &BpConfig { max_iters: 2000, ..BpConfig::default() }).unwrap();
        prop_assume!(res.converged);
        let est = bethe_free_energy(&g, &compute_beliefs(&g, &res.messages)).ln_z_estimate;
        prop_assert!(est <= brute_force_ln_z(&g).unwrap().ln_z + 1e-6);
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>()) {
        let data: Vec<LabeledInstance> = (0..3)
            .map(|i| {
                let g = loopy(4, 3, seed.wrapping_add(i));
                let z = exact_ln_z(&g).unwrap().ln_z;
                LabeledInstance::new(g, z, "random").unwrap()
            })
            .collect();
        let cfg = TrainConfig { epochs: 4, lr: 5e-3, seed, ..TrainConfig::default() };
        let run = || {
            let mut m = BpnnModel::new(ModelConfig::stack(LayerConfig::residual(3, 0.5), 2, 3, 3, true)).unwrap();
            let r = train(&mut m, &data, &cfg).unwrap();
            (r.loss_history, m.params)
        };
        prop_assert_eq!(run(), run());
    }
}
