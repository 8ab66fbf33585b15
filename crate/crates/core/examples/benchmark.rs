//! Synthesize the benchmark, train one model and print evaluation metrics.
//!
//! Usage: `cargo run --release -p cradle-core --example benchmark -- [seed] [epochs] [variant]`

use std::time::Instant;

use cradle_core::data::split_random;
use cradle_core::eval::{evaluate, EvalOptions, TruthSource};
use cradle_core::model::{ModelConfig, Variant};
use cradle_core::qc::{qc_evaluate, QcConfig};
use cradle_core::synth::{synth_generate, synth_qc_consistency, SynthConfig};
use cradle_core::train::{TrainConfig, Trainer};

fn main() -> cradle_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let variant: Variant = args.get(3).map_or(Ok(Variant::Full), |s| s.parse())?;

    let synth = SynthConfig { seed, ..SynthConfig::benchmark() };
    let t0 = Instant::now();
    let (data, truth) = synth_generate(&synth)?;
    let qc = QcConfig::default();
    let confusion = synth_qc_consistency(&data, &truth, &qc)?;
    println!(
        "synth {:.2}s  qc recall {:.3}  false positives {:.3}",
        t0.elapsed().as_secs_f64(),
        confusion.recall(),
        confusion.false_positive_rate()
    );
    let labels = qc_evaluate(&data.expr, &data.doublets, &qc)?.labels;
    let split = split_random(data.n_cells(), (0.8, 0.1, 0.1), seed)?;
    let model = ModelConfig { variant, ..ModelConfig::benchmark() };
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::benchmark() };
    let t1 = Instant::now();
    let mut trainer = Trainer::new(&data, &split, &labels, model, cfg)?;
    trainer.run(|t| {
        let r = t.history.records.last().expect("record");
        if r.epoch == 1 || r.epoch % 25 == 0 {
            println!(
                "epoch {:4} j1 {:9.3} j2 {:8.4} recon {:9.3} kl_zb {:6.3} kl_m {:7.3} val {:9.3}  {:.1}s",
                r.epoch, r.j1, r.j2, r.recon, r.kl_zb, r.kl_m, r.val_j1, t1.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let opts = EvalOptions { jaccard_k: 10, seed, ..EvalOptions::default() };
    let report = evaluate(&trainer.params, &data, &split, TruthSource::Synthetic(&truth), &qc, &opts)?;
    for s in &report.treatments {
        println!("{:14} rho {:6.3} r2 {:7.3} jac {:5.3} |ate| {:.3}", s.treatment, s.ate_pearson, s.ate_r2, s.jaccard, s.true_ate_norm);
    }
    println!("mean rho {:.3} r2 {:.3} jaccard {:.3}", report.mean.ate_pearson, report.mean.ate_r2, report.mean.jaccard);
    for q in &report.qcpr {
        println!("qcpr n_mads {} clean {:.3} artifact {:.3}", q.n_mads, q.clean, q.artifact);
    }
    println!("mask probs:\n{:?}", trainer.params.mask_probs().data().iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("true masks: {:?}", truth.masks);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
