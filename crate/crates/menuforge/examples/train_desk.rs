//! Trains a desk-scale menu network and prints the evaluation log.
//!
//! Usage: `cargo run --example train_desk -- [key=value ...]`
//! Keys: n, m, iters, batch, k, width, depth, every (schedule cadence),
//! eval_every, eval_samples, threshold, seed, out (checkpoint path),
//! lr, slack, inc_init, inc_every, inc_step, soft_every, soft_cap,
//! decay_factor, decay_every, rev_tol, viol_tol.

use menuforge::nn::save_checkpoint;
use menuforge::{train, Distribution, EvalRecord, TrainConfig, ValuationKind};

fn main() {
    let mut n = 2usize;
    let mut m = 2usize;
    let mut out: Option<String> = None;
    let mut cfg = TrainConfig {
        batch_size: 2048,
        k: 24,
        hidden: vec![64, 64],
        lambda_softmax_every: 500,
        lambda_incomp_every: 500,
        eval_every: 200,
        eval_samples: 20_000,
        max_iters: 4000,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut width = 64usize;
    let mut depth = 2usize;
    for arg in std::env::args().skip(1) {
        let (key, val) = arg
            .split_once('=')
            .unwrap_or_else(|| panic!("expected key=value, got {arg}"));
        match key {
            "n" => n = val.parse().unwrap(),
            "m" => m = val.parse().unwrap(),
            "iters" => cfg.max_iters = val.parse().unwrap(),
            "batch" => cfg.batch_size = val.parse().unwrap(),
            "k" => cfg.k = val.parse().unwrap(),
            "width" => width = val.parse().unwrap(),
            "depth" => depth = val.parse().unwrap(),
            "every" => {
                cfg.lambda_softmax_every = val.parse().unwrap();
                cfg.lambda_incomp_every = cfg.lambda_softmax_every;
            }
            "eval_every" => cfg.eval_every = val.parse().unwrap(),
            "eval_samples" => cfg.eval_samples = val.parse().unwrap(),
            "threshold" => cfg.violation_threshold = val.parse().unwrap(),
            "seed" => cfg.seed = val.parse().unwrap(),
            "lr" => cfg.lr = val.parse().unwrap(),
            "slack" => cfg.allocation_slack = val.parse().unwrap(),
            "inc_init" => cfg.lambda_incomp_init = val.parse().unwrap(),
            "inc_every" => cfg.lambda_incomp_every = val.parse().unwrap(),
            "inc_step" => cfg.lambda_incomp_min_step = val.parse().unwrap(),
            "soft_every" => cfg.lambda_softmax_every = val.parse().unwrap(),
            "soft_cap" => cfg.lambda_softmax_cap = val.parse().unwrap(),
            "decay_factor" => cfg.lr_decay_factor = val.parse().unwrap(),
            "decay_every" => cfg.lr_decay_every = val.parse().unwrap(),
            "rev_tol" => cfg.revenue_convergence_tol = val.parse().unwrap(),
            "viol_tol" => cfg.violation_convergence_tol = val.parse().unwrap(),
            "out" => out = Some(val.to_string()),
            other => panic!("unknown key {other}"),
        }
    }
    cfg.hidden = vec![width; depth];

    let started = std::time::Instant::now();
    let result = train::<f64>(&cfg, Distribution::UniformUnit, n, m, ValuationKind::Additive)
        .expect("training failed");
    println!("{}", EvalRecord::csv_header());
    for rec in &result.evals {
        println!("{}", rec.csv_row());
    }
    let best = &result.best;
    println!(
        "best: iter={} revenue={:.5} violation={:.5} meets_threshold={} L_a={:.3e} L_p={:.3e} elapsed={:.1}s",
        best.iteration,
        best.revenue,
        best.violation,
        best.meets_threshold,
        best.cert.l_a,
        best.cert.l_p,
        started.elapsed().as_secs_f64()
    );
    if let Some(path) = out {
        std::fs::write(&path, save_checkpoint(&best.net, &best.cert)).expect("write checkpoint");
        println!("checkpoint written to {path}");
    }
}
