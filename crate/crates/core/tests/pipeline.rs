use riverbed::forward::observe;
use riverbed::generate::{generate_dataset, GenerationSpec};
use riverbed::inversion::{invert_many, InversionOptions};
use riverbed::io::{load_dataset, save_dataset};
use riverbed::prior::PriorSpec;
use riverbed::rom::pca::{train_pca_rom, PcaArchitecture};
use riverbed::rom::persist::{load_rom, save_rom, AnyRom};
use riverbed::rom::sve::{train_sve, SveArchitecture};
use riverbed::rom::{LatentRom, TrainHyper};
use riverbed::{equispaced_mask, ChannelGeometry, Dataset, Execution};

fn spec() -> GenerationSpec {
    GenerationSpec {
        geometry: ChannelGeometry::new(7, 15, 50.0, 10.0).unwrap(),
        prior: PriorSpec { n_modes: 16, ..PriorSpec::default() },
        ..GenerationSpec::default()
    }
}

fn arch() -> SveArchitecture {
    SveArchitecture { latent_dim: 4, encoder_widths: vec![24], decoder_widths: vec![24], ..Default::default() }
}

fn hyper() -> TrainHyper {
    TrainHyper { epochs: 3, batch_size: 8, ..TrainHyper::default() }
}

fn estimates(model: &dyn LatentRom, ds: &Dataset, exec: Execution) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mask = equispaced_mask(&ds.geometry, 20).unwrap();
    let sets: Vec<_> = ds.records[..4]
        .iter()
        .enumerate()
        .map(|(i, r)| observe(&r.flow, &r.bc, &mask, 0.05, i as u64).unwrap())
        .collect();
    let opts = InversionOptions { max_iterations: 4, uq_samples: 16, execution: exec, ..InversionOptions::default() };
    invert_many(model, &sets, &opts)
        .unwrap()
        .into_iter()
        .map(|e| (e.z_map, e.bathymetry_std.as_slice().to_vec()))
        .collect()
}

#[test]
fn parallel_and_sequential_pipelines_agree_bitwise() {
    let (par, _) = generate_dataset(&spec(), 40, 3, Execution::Parallel).unwrap();
    let (seq, _) = generate_dataset(&spec(), 40, 3, Execution::Sequential).unwrap();
    assert_eq!(par, seq);

    let sve_par = train_sve(&par, &arch(), &hyper(), Execution::Parallel).unwrap();
    let sve_seq = train_sve(&par, &arch(), &hyper(), Execution::Sequential).unwrap();
    assert_eq!(sve_par, sve_seq);

    let pca_arch = PcaArchitecture { latent_dim: 4, hidden_widths: vec![16], ..PcaArchitecture::default() };
    let pca_par = train_pca_rom(&par, &pca_arch, &hyper(), Execution::Parallel).unwrap();
    let pca_seq = train_pca_rom(&par, &pca_arch, &hyper(), Execution::Sequential).unwrap();
    assert_eq!(pca_par, pca_seq);

    for model in [&sve_par as &dyn LatentRom, &pca_par] {
        assert_eq!(estimates(model, &par, Execution::Parallel), estimates(model, &par, Execution::Sequential));
    }
}

#[test]
fn saved_artifacts_reload_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = generate_dataset(&spec(), 24, 9, Execution::Parallel).unwrap();
    save_dataset(&ds, dir.path().join("d.vgd")).unwrap();
    let reloaded = load_dataset(dir.path().join("d.vgd")).unwrap();
    assert_eq!(ds, reloaded);

    let model = AnyRom::Sve(train_sve(&ds, &arch(), &hyper(), Execution::Parallel).unwrap());
    save_rom(&model, dir.path().join("m.vgm")).unwrap();
    let back = load_rom(dir.path().join("m.vgm")).unwrap();
    assert_eq!(model, back);
    assert_eq!(
        estimates(&model, &reloaded, Execution::Parallel),
        estimates(&back, &reloaded, Execution::Parallel)
    );
}
