//! Audits at step sizes `η_local = 1/(K λ_max(H(0)))`, large enough to
//! converge in hundreds of rounds. The prescribed rates of the convergence
//! theorem are far smaller and take millions of rounds at this size.

use fl_ntk_core::dataset::{generate, partition_iid, ClientPartition, Dataset, DistributionSpec};
use fl_ntk_core::kernel::{gram_pair, spectrum, Spectrum};
use fl_ntk_core::model::{init, ModelParams};
use fl_ntk_core::numerics::{streams, RngStream};
use fl_ntk_core::theory::{
    all_hold, audit_contraction, contraction_factor, local_deviation_bounds, movement_bounds, rounds_to_eps,
    seed_majority,
};
use fl_ntk_core::trainer::{train_from, RecordLevel, TrainConfig};

struct Setup {
    ds: Dataset,
    params: ModelParams,
    s0: Spectrum,
}

fn setup(seed: u64, n: usize, d: usize, m: usize) -> Setup {
    let ds = generate(&DistributionSpec::uniform_sphere(), n, d, &RngStream::new(seed, streams::DATA)).unwrap();
    let params = init(m, d, 1.0, &RngStream::new(seed, streams::INIT)).unwrap();
    let s0 = spectrum(&gram_pair(&ds, params.weights(), params.weights()).unwrap()).unwrap();
    Setup { ds, params, s0 }
}

fn config(seed: u64, clients: usize, k: usize, m: usize, eta: f64, rounds: usize) -> TrainConfig {
    TrainConfig {
        clients,
        local_steps: k,
        rounds,
        eta_local: eta,
        eta_global: 1.0,
        width: m,
        sigma: 1.0,
        seed,
        record_level: RecordLevel::Bounds,
        target_eps: None,
    }
}

#[test]
fn contraction_movement_and_deviation_hold() {
    let (n, d, m, clients, k) = (16, 8, 4096, 4, 4);
    let mut passes = Vec::new();
    for seed in 0..5 {
        let s = setup(seed, n, d, m);
        let part = partition_iid(n, clients, &RngStream::new(seed, streams::PARTITION)).unwrap();
        let eta = 1.0 / (k as f64 * s.s0.lambda_max);
        let factor = contraction_factor(s.s0.lambda_min, eta, 1.0, k, clients).unwrap().factor;
        let rounds = rounds_to_eps(factor, 1e-2).unwrap() as usize;
        let trace = train_from(&config(seed, clients, k, m, eta, rounds), &s.ds, &part, s.params).unwrap();
        let reached = trace.final_residual_sq() <= 1e-2 * trace.initial_residual_sq();
        let contraction = audit_contraction(&trace, factor).unwrap().pass_fraction >= 0.9;
        let movement = all_hold(&movement_bounds(&trace, n, s.s0.lambda_min).unwrap());
        let deviation = all_hold(&local_deviation_bounds(&trace, n).unwrap());
        passes.push(reached && contraction && movement && deviation);
    }
    assert!(seed_majority(&passes), "{passes:?}");
}

#[test]
fn fewer_clients_converge_in_fewer_rounds() {
    let (n, d, m, k) = (32, 8, 2048, 2);
    let mut medians = Vec::new();
    for clients in [2, 4, 8] {
        let mut rounds = Vec::new();
        for seed in 0..5 {
            let s = setup(seed, n, d, m);
            let part: ClientPartition = partition_iid(n, clients, &RngStream::new(seed, streams::PARTITION)).unwrap();
            let eta = 1.0 / (k as f64 * s.s0.lambda_max);
            let mut cfg = config(seed, clients, k, m, eta, 5000);
            cfg.record_level = RecordLevel::LossOnly;
            cfg.target_eps = Some(1e-2);
            let trace = train_from(&cfg, &s.ds, &part, s.params).unwrap();
            rounds.push(trace.rounds_to_reach(1e-2).expect("converges within the cap"));
        }
        rounds.sort();
        medians.push(rounds[2]);
    }
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}
