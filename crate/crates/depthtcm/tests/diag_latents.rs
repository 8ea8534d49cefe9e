//! Temporary diagnostic: latent magnitudes at init.

use depthtcm::codec::train::{build_corpus, sample_from_map};
use depthtcm::codec::{CodecConfig, CodecModel};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn diag_latent_scales() {
    let corpus = build_corpus(4, 64, 64, 0, 8.0, (4, 4, 4)).unwrap();
    let mut model =
        CodecModel::new(CodecConfig::default(), &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
    for (i, s) in corpus.iter().enumerate() {
        let y = model.analysis_forward(&s.x, false);
        let z = model.hyper_analysis_forward(&y, false);
        let stats = |a: &ndarray::Array3<f64>| {
            let n = a.len() as f64;
            let mean = a.sum() / n;
            let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let maxabs = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let live = a.iter().filter(|v| v.abs() >= 0.5).count();
            (mean, var.sqrt(), maxabs, live, a.len())
        };
        let (ym, ys, ymax, ylive, yn) = stats(&y);
        let (zm, zs, zmax, zlive, zn) = stats(&z);
        println!(
            "map {i}: y mean {ym:+.4} std {ys:.4} max|y| {ymax:.4} live {ylive}/{yn}   z mean {zm:+.4} std {zs:.4} max|z| {zmax:.4} live {zlive}/{zn}"
        );
        let _ = sample_from_map; // keep import used
    }
}
