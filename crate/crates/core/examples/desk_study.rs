//! Generates a desk dataset, trains both surrogates and compares inversion error.
//!
//! Usage: `cargo run --release --example desk_study -- [epochs] [enc widths] [dec widths] [kl weight] [step]`

use std::time::Instant;

use riverbed::diagnostics::{inversion_rmses, reconstruction_rmse, ObservationPlan};
use riverbed::generate::{generate_dataset, GenerationSpec};
use riverbed::inversion::InversionOptions;
use riverbed::rom::pca::{train_pca_rom, PcaArchitecture};
use riverbed::rom::sve::{train_sve, SveArchitecture};
use riverbed::rom::TrainHyper;
use riverbed::Execution;

fn main() -> riverbed::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let enc: Vec<usize> = args.get(2).map(|s| s.split(',').map(|x| x.parse().unwrap()).collect()).unwrap_or(vec![256, 64]);
    let dec: Vec<usize> = args.get(3).map(|s| s.split(',').map(|x| x.parse().unwrap()).collect()).unwrap_or(vec![64, 256]);
    let kl: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let step: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let exec = Execution::Parallel;
    let spec = GenerationSpec::default();
    let t = Instant::now();
    let (train, rep) = generate_dataset(&spec, 500, 1, exec)?;
    let (test, _) = generate_dataset(&spec, 20, 2, exec)?;
    println!("generate {:.1}s rejections {}", t.elapsed().as_secs_f64(), rep.rejections);

    let hyper = TrainHyper { epochs, batch_size: 32, step_size: step, seed: 0 };
    let t = Instant::now();
    let sve = train_sve(&train, &SveArchitecture { encoder_widths: enc, decoder_widths: dec, kl_weight: kl, ..Default::default() }, &hyper, exec)?;
    println!("sve train {:.1}s best epoch {} val {:?}", t.elapsed().as_secs_f64(), sve.curve.best_epoch, sve.curve.validation.iter().step_by((epochs / 10).max(1)).collect::<Vec<_>>());
    let t = Instant::now();
    let pca = train_pca_rom(&train, &PcaArchitecture::default(), &hyper, exec)?;
    println!("pca train {:.1}s", t.elapsed().as_secs_f64());

    let idx: Vec<usize> = (0..test.len()).collect();
    let opts = InversionOptions { uq_samples: 100, ..Default::default() };
    for (name, m) in [("sve", &sve as &dyn riverbed::rom::LatentRom), ("pca", &pca)] {
        let t = Instant::now();
        let h = reconstruction_rmse(m, &test, &idx, exec)?;
        let r = inversion_rmses(m, &test, &idx, &ObservationPlan::default(), &opts, exec)?;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        println!("{name}: heads {h:?} inversion mean {mean:.4} ({:.1}s)", t.elapsed().as_secs_f64());
    }
    Ok(())
}
